#include "kunlun/autodiff.hpp"

namespace kunlun {

std::size_t param_count(const ParamStore& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::append(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.own = std::move(value);
  return append(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.own = std::move(value);
  n.requires_grad = record_;
  return append(std::move(n));
}

bool Tape::has_param(const std::string& name) const { return param_ids_.count(name) > 0; }

Var Tape::param(const std::string& name) {
  if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var(this, it->second);
  if (params_ == nullptr) throw ValidationError("tape has no parameter store (looking up '" + name + "')");
  auto it = params_->find(name);
  if (it == params_->end()) throw ValidationError("unknown parameter '" + name + "'");
  Node n;
  n.borrowed = &it->second;
  n.requires_grad = record_;
  Var v = append(std::move(n));
  param_ids_.emplace(name, v.id());
  param_order_.emplace_back(name, v.id());
  return v;
}

Var Tape::push(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return push(op, std::move(value), std::vector<Var>(inputs), std::move(fn));
}

Var Tape::push(const char* op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  if (!value.all_finite()) throw NumericalError(std::string("non-finite value produced by ") + op);
  Node n;
  n.own = std::move(value);
  if (record_) {
    for (const Var& v : inputs) {
      if (v.tape() != this) throw ValidationError(std::string(op) + ": input recorded on a different tape");
      if (nodes_[v.id()].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  return append(std::move(n));
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.borrowed ? *n.borrowed : n.own;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(value(id).shape(), 0.0);
  return n.grad;
}

GradStore Tape::backward(Var loss) {
  if (!record_) throw ValidationError("backward on a non-recording tape");
  if (loss.tape() != this) throw ValidationError("backward: loss recorded on a different tape");
  if (loss.value().size() != 1) throw ValidationError("backward: loss must be a scalar, got " + loss.value().shape_str());
  for (auto& n : nodes_) n.grad = Tensor();
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, i);
  }
  GradStore grads;
  for (const auto& [name, id] : param_order_) {
    const Node& n = nodes_[id];
    grads[name] = n.grad.empty() ? Tensor(value(id).shape(), 0.0) : n.grad;
  }
  if (params_ != nullptr)
    for (const auto& [name, t] : *params_)
      if (!grads.count(name)) grads[name] = Tensor(t.shape(), 0.0);
  return grads;
}

}  // namespace kunlun
