#pragma once

#include "kunlun/tensor.hpp"

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace kunlun {

/// Learnable parameters by registry name. Ordered so iteration (and
/// therefore serialization and updates) is deterministic.
using ParamStore = std::map<std::string, Tensor>;
using GradStore = std::map<std::string, Tensor>;

std::size_t param_count(const ParamStore& params);

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using BackwardFn = std::function<void(Tape&, std::size_t self)>;

/// Define-by-run reverse-mode record. Nodes are appended in evaluation order,
/// so reverse insertion order is a valid topological order for backward.
///
/// Parameters are borrowed from the ParamStore (not copied); the store must
/// outlive the tape and stay unmodified while the tape is alive.
class Tape {
 public:
  explicit Tape(const ParamStore* params = nullptr, bool record = true) : params_(params), record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf that receives a gradient (used by tests and finite-difference checks).
  Var variable(Tensor value);
  /// Registered parameter; memoized per name.
  Var param(const std::string& name);
  bool has_param(const std::string& name) const;

  /// Appends an op result. `inputs` decide whether the node needs a gradient;
  /// `fn` is dropped when no input does or the tape is not recording.
  Var push(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var push(const char* op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient accumulator for an input, zero-initialized on first use.
  Tensor& grad_buffer(std::size_t id);
  /// Gradient flowing into a node during backward (empty if none reached it).
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  /// Runs reverse accumulation from a 1 x 1 loss. The result has an entry for
  /// every parameter touched on this tape plus (when a store is attached)
  /// zero entries for every store parameter the loss did not reach.
  GradStore backward(Var loss);

 private:
  struct Node {
    Tensor own;
    const Tensor* borrowed = nullptr;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var append(Node node);

  std::deque<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_ids_;
  std::vector<std::pair<std::string, std::size_t>> param_order_;
  const ParamStore* params_;
  bool record_;
};

}  // namespace kunlun
