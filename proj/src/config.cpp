#include "kunlun/config.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace kunlun {

using nlohmann::json;

std::size_t ModelConfig::combined_tokens() const {
  std::size_t n = x_tokens();
  for (std::size_t e = 0; e < events.size(); ++e) n += event_split(e).total();
  return n;
}

std::vector<std::size_t> ModelConfig::event_sources(std::size_t e) const {
  std::vector<std::size_t> out;
  for (const auto& name : events[e].sources) {
    auto it = std::find_if(schema.events.begin(), schema.events.end(),
                           [&](const EventStreamSchema& s) { return s.name == name; });
    if (it == schema.events.end())
      throw ValidationError("event '" + events[e].name + "' reads unknown stream '" + name + "'");
    out.push_back(static_cast<std::size_t>(it - schema.events.begin()));
  }
  return out;
}

std::size_t ModelConfig::event_max_len(std::size_t e) const {
  std::size_t T = 0;
  for (std::size_t k : event_sources(e)) T = std::max(T, schema.events[k].max_len);
  return T;
}

SummarySplit ModelConfig::event_split(std::size_t e) const {
  return events[e].split.value_or(SummarySplit::from_budget(events[e].tokens));
}

GdpaConfig ModelConfig::event_gdpa(std::size_t e) const {
  const auto& ev = events[e];
  GdpaConfig g;
  g.heads = ev.heads;
  g.n_kv = ev.n_kv;
  g.tau = ev.tau.value_or(static_cast<double>(event_max_len(e)));
  g.activations = ev.activations;
  return g;
}

HspConfig ModelConfig::event_hsp(std::size_t e) const {
  const auto& ev = events[e];
  return {ev.heads, ev.seeds, ev.rank, event_split(e), variant.pma};
}

ExpertPartition ModelConfig::partition() const {
  if (expert_ranges.empty()) return ExpertPartition::even(combined_tokens(), experts);
  return ExpertPartition{expert_ranges};
}

void ModelConfig::validate() const {
  schema.validate();
  if (d < 1) throw ValidationError("d must be >= 1");
  if (layers < 1) throw ValidationError("layers must be >= 1");
  if (n_sum < 1 || n_sum > x_tokens())
    throw ValidationError("n_sum must be in [1, n+1] = [1, " + std::to_string(x_tokens()) + "]");
  if (fusion_layers < 1) throw ValidationError("fusion_layers must be >= 1");
  if (deep_hidden < 1 || pffn_hidden < 1) throw ValidationError("hidden widths must be >= 1");
  if (events.empty() && !schema.events.empty()) throw ValidationError("config has event streams but no events");
  std::set<std::string> names;
  for (std::size_t e = 0; e < events.size(); ++e) {
    const auto& ev = events[e];
    if (ev.name.empty() || !names.insert(ev.name).second)
      throw ValidationError("event names must be non-empty and unique ('" + ev.name + "')");
    if (ev.sources.empty()) throw ValidationError("event '" + ev.name + "' has no sources");
    event_sources(e);
    if (ev.d < 1 || ev.heads < 1 || ev.d % ev.heads != 0)
      throw ValidationError("event '" + ev.name + "': d " + std::to_string(ev.d) + " must be divisible by heads " +
                            std::to_string(ev.heads));
    if (ev.tokens < 1) throw ValidationError("event '" + ev.name + "' needs tokens >= 1");
    if (event_split(e).total() != ev.tokens)
      throw ValidationError("event '" + ev.name + "': summary split must add up to " + std::to_string(ev.tokens));
    if (event_layers(e) > layers)
      throw ValidationError("event '" + ev.name + "' layers exceed the global depth " + std::to_string(layers));
    if (ev.tau && !(*ev.tau > 0)) throw ValidationError("event '" + ev.name + "' tau must be > 0");
    if (rote.placement != RotePlacement::kOff && ev.d % 2 != 0)
      throw ValidationError("event '" + ev.name + "' needs an even d for rotary embeddings");
    event_gdpa(e).validate(ev.d);
    event_hsp(e).validate(ev.d);
  }
  if (!(rote.tau_scale > 0) || !(rote.base > 1)) throw ValidationError("rote needs tau_scale > 0 and base > 1");
  if (variant.tile.rows < 1 || variant.tile.kv < 1) throw ValidationError("GDPA tile sizes must be >= 1");
  if (expert_ranges.empty()) {
    if (experts < 1 || experts > combined_tokens())
      throw ValidationError("experts must be in [1, " + std::to_string(combined_tokens()) + "]");
  } else {
    partition().validate(combined_tokens());
  }
  if (train.batch < 1) throw ValidationError("train.batch must be >= 1");
  if (train.eval_stride < 2) throw ValidationError("train.eval_stride must be >= 2");
  if (train.record_every < 1) throw ValidationError("train.record_every must be >= 1");
  if (!(train.lr >= 0) || !(train.eps > 0) || !(train.beta1 >= 0 && train.beta1 < 1) ||
      !(train.beta2 >= 0 && train.beta2 < 1))
    throw ValidationError("invalid optimizer settings");
}

namespace {

void allow_keys(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* a : keys) ok = ok || k == a;
    if (!ok) throw ValidationError("unknown key '" + k + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(where + "." + key + ": " + e.what());
  }
}

template <typename T>
void read_opt(const json& j, const char* key, std::optional<T>& out, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  T v{};
  read(j, key, v, where);
  out = v;
}

template <typename E>
E pick(const std::string& value, std::initializer_list<std::pair<const char*, E>> options, const std::string& where) {
  for (const auto& [name, v] : options)
    if (value == name) return v;
  throw ValidationError(where + ": unrecognized value '" + value + "'");
}

FeatureSchema schema_from_json(const json& j) {
  allow_keys(j, {"dense", "sparse_vocab", "events"}, "schema");
  FeatureSchema s;
  read(j, "dense", s.dense, "schema");
  read(j, "sparse_vocab", s.sparse_vocab, "schema");
  if (j.contains("events")) {
    for (const auto& ej : j.at("events")) {
      allow_keys(ej, {"name", "item_vocab", "max_len"}, "schema.events[]");
      EventStreamSchema es;
      read(ej, "name", es.name, "schema.events[]");
      read(ej, "item_vocab", es.item_vocab, "schema.events[]");
      read(ej, "max_len", es.max_len, "schema.events[]");
      s.events.push_back(es);
    }
  }
  return s;
}

EventConfig event_from_json(const json& j) {
  const std::string w = "events[]";
  allow_keys(j,
             {"name", "sources", "d", "heads", "tokens", "layers", "window", "causal", "split", "seeds", "rank",
              "n_kv", "tau", "activations"},
             w);
  EventConfig ev;
  read(j, "name", ev.name, w);
  ev.sources = {ev.name};
  read(j, "sources", ev.sources, w);
  read(j, "d", ev.d, w);
  read(j, "heads", ev.heads, w);
  read(j, "tokens", ev.tokens, w);
  read_opt(j, "layers", ev.layers, w);
  read(j, "window", ev.window, w);
  read(j, "causal", ev.causal, w);
  if (j.contains("split") && !j.at("split").is_null()) {
    std::vector<std::size_t> v;
    read(j, "split", v, w);
    if (v.size() != 3) throw ValidationError("events[].split must be [cls, hsp, recent]");
    ev.split = SummarySplit{v[0], v[1], v[2]};
  }
  read(j, "seeds", ev.seeds, w);
  read(j, "rank", ev.rank, w);
  read(j, "n_kv", ev.n_kv, w);
  read_opt(j, "tau", ev.tau, w);
  if (j.contains("activations")) {
    std::vector<std::string> names;
    read(j, "activations", names, w);
    ev.activations.clear();
    for (const auto& n : names) ev.activations.push_back(parse_activation(n));
  }
  return ev;
}

}  // namespace

ModelConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  allow_keys(j,
             {"schema", "d", "layers", "n_sum", "compskip", "weight_gen", "events", "experts", "expert_ranges",
              "deep_hidden", "head_hidden", "pffn_hidden", "fusion_layers", "rote", "variant", "seed", "train"},
             "config");
  ModelConfig c;
  if (!j.contains("schema")) throw ValidationError("config needs a 'schema'");
  c.schema = schema_from_json(j.at("schema"));
  read(j, "d", c.d, "config");
  read(j, "layers", c.layers, "config");
  read(j, "n_sum", c.n_sum, "config");
  read(j, "compskip", c.compskip, "config");
  if (j.contains("weight_gen")) {
    std::string v;
    read(j, "weight_gen", v, "config");
    c.weight_gen = pick<WeightGenTiming>(
        v, {{"same_layer", WeightGenTiming::kSameLayer}, {"previous_layer", WeightGenTiming::kPreviousLayer}},
        "config.weight_gen");
  }
  if (j.contains("events"))
    for (const auto& ej : j.at("events")) c.events.push_back(event_from_json(ej));
  read(j, "experts", c.experts, "config");
  read(j, "expert_ranges", c.expert_ranges, "config");
  if (!c.expert_ranges.empty() && !j.contains("experts")) c.experts = c.expert_ranges.size();
  read(j, "deep_hidden", c.deep_hidden, "config");
  read(j, "head_hidden", c.head_hidden, "config");
  read(j, "pffn_hidden", c.pffn_hidden, "config");
  read(j, "fusion_layers", c.fusion_layers, "config");
  if (j.contains("rote")) {
    const json& r = j.at("rote");
    allow_keys(r, {"placement", "base", "tau_scale", "gaps"}, "rote");
    std::string placement = "after_fusion", gaps = "previous";
    read(r, "placement", placement, "rote");
    read(r, "gaps", gaps, "rote");
    read(r, "base", c.rote.base, "rote");
    read(r, "tau_scale", c.rote.tau_scale, "rote");
    c.rote.placement = pick<RotePlacement>(placement,
                                           {{"after_fusion", RotePlacement::kAfterFusion},
                                            {"before_fusion", RotePlacement::kBeforeFusion},
                                            {"off", RotePlacement::kOff}},
                                           "rote.placement");
    c.rote.gaps = pick<GapConvention>(
        gaps, {{"previous", GapConvention::kGapToPrevious}, {"candidate", GapConvention::kToCandidate}}, "rote.gaps");
  }
  if (j.contains("variant")) {
    const json& v = j.at("variant");
    allow_keys(v, {"pffn", "pma", "full_attention", "kernel", "tile"}, "variant");
    read(v, "pffn", c.variant.pffn, "variant");
    read(v, "pma", c.variant.pma, "variant");
    read(v, "full_attention", c.variant.full_attention, "variant");
    std::string kernel = "blockwise";
    read(v, "kernel", kernel, "variant");
    c.variant.kernel =
        pick<GdpaKernel>(kernel, {{"naive", GdpaKernel::kNaive}, {"blockwise", GdpaKernel::kBlockwise}}, "variant.kernel");
    if (v.contains("tile")) {
      std::vector<std::size_t> t;
      read(v, "tile", t, "variant");
      if (t.size() != 2) throw ValidationError("variant.tile must be [rows, kv]");
      c.variant.tile = {t[0], t[1]};
    }
  }
  read(j, "seed", c.seed, "config");
  if (j.contains("train")) {
    const json& t = j.at("train");
    allow_keys(t, {"lr", "beta1", "beta2", "eps", "batch", "eval_stride", "record_every", "max_samples", "linear_decay"}, "train");
    read(t, "lr", c.train.lr, "train");
    read(t, "beta1", c.train.beta1, "train");
    read(t, "beta2", c.train.beta2, "train");
    read(t, "eps", c.train.eps, "train");
    read(t, "batch", c.train.batch, "train");
    read(t, "eval_stride", c.train.eval_stride, "train");
    read(t, "record_every", c.train.record_every, "train");
    read(t, "max_samples", c.train.max_samples, "train");
    read(t, "linear_decay", c.train.linear_decay, "train");
  }
  c.validate();
  return c;
}

ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

std::string config_to_json(const ModelConfig& c, int indent) {
  json j;
  json schema = {{"dense", c.schema.dense}, {"sparse_vocab", c.schema.sparse_vocab}, {"events", json::array()}};
  for (const auto& e : c.schema.events)
    schema["events"].push_back({{"name", e.name}, {"item_vocab", e.item_vocab}, {"max_len", e.max_len}});
  j["schema"] = schema;
  j["d"] = c.d;
  j["layers"] = c.layers;
  j["n_sum"] = c.n_sum;
  j["compskip"] = c.compskip;
  j["weight_gen"] = c.weight_gen == WeightGenTiming::kSameLayer ? "same_layer" : "previous_layer";
  j["events"] = json::array();
  for (const auto& ev : c.events) {
    json e = {{"name", ev.name},   {"sources", ev.sources}, {"d", ev.d},         {"heads", ev.heads},
              {"tokens", ev.tokens}, {"window", ev.window}, {"causal", ev.causal}, {"seeds", ev.seeds},
              {"rank", ev.rank},   {"n_kv", ev.n_kv}};
    if (ev.layers) e["layers"] = *ev.layers;
    if (ev.split) e["split"] = {ev.split->cls, ev.split->hsp, ev.split->recent};
    if (ev.tau) e["tau"] = *ev.tau;
    e["activations"] = json::array();
    for (Activation a : ev.activations) e["activations"].push_back(to_string(a));
    j["events"].push_back(e);
  }
  j["experts"] = c.experts;
  if (!c.expert_ranges.empty()) j["expert_ranges"] = c.expert_ranges;
  j["deep_hidden"] = c.deep_hidden;
  j["head_hidden"] = c.head_hidden;
  j["pffn_hidden"] = c.pffn_hidden;
  j["fusion_layers"] = c.fusion_layers;
  const char* placement = c.rote.placement == RotePlacement::kAfterFusion    ? "after_fusion"
                          : c.rote.placement == RotePlacement::kBeforeFusion ? "before_fusion"
                                                                             : "off";
  j["rote"] = {{"placement", placement},
               {"base", c.rote.base},
               {"tau_scale", c.rote.tau_scale},
               {"gaps", c.rote.gaps == GapConvention::kGapToPrevious ? "previous" : "candidate"}};
  j["variant"] = {{"pffn", c.variant.pffn},
                  {"pma", c.variant.pma},
                  {"full_attention", c.variant.full_attention},
                  {"kernel", c.variant.kernel == GdpaKernel::kNaive ? "naive" : "blockwise"},
                  {"tile", {c.variant.tile.rows, c.variant.tile.kv}}};
  j["seed"] = c.seed;
  j["train"] = {{"lr", c.train.lr},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"eps", c.train.eps},
                {"batch", c.train.batch},
                {"eval_stride", c.train.eval_stride},
                {"record_every", c.train.record_every},
                {"max_samples", c.train.max_samples},
                {"linear_decay", c.train.linear_decay}};
  return j.dump(indent);
}

}  // namespace kunlun
