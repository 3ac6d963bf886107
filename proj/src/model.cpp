#include "kunlun/model.hpp"

#include <cmath>

namespace kunlun {

std::vector<LayerSkipFlags> compskip_config(std::size_t layers, bool enabled) {
  if (layers == 0) throw ValidationError("compskip_config needs at least one layer");
  std::vector<LayerSkipFlags> out(layers);
  if (!enabled) return out;
  for (std::size_t l = 0; l < layers; ++l)
    out[l] = l % 2 == 0 ? LayerSkipFlags{true, false, false} : LayerSkipFlags{false, true, true};
  return out;
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  for (std::size_t e = 0; e < cfg_.events.size(); ++e) {
    if (cfg_.layers > 0 && cfg_.event_layers(e) == 0)
      throw ValidationError("event '" + cfg_.events[e].name + "' needs at least one layer");
    sources_.push_back(cfg_.event_sources(e));
  }
  if (cfg_.layers > 0) schedule_ = compskip_config(cfg_.layers, cfg_.compskip);
  partition_ = cfg_.partition();
}

std::string Model::event_prefix(std::size_t layer, std::size_t e) const {
  return "layer" + std::to_string(layer) + "." + cfg_.events[e].name;
}

ParamStore Model::init_params(std::uint64_t seed) const {
  ParamStore p;
  const auto rng = [seed](const std::string& group) { return Rng::stream(seed, group); };
  const std::size_t d = cfg_.d, n1 = cfg_.x_tokens();
  const double emb = 1.0 / std::sqrt(static_cast<double>(d));
  p["embed.dense"] = rng("embed.dense").normal_tensor(
      d, cfg_.schema.dense, cfg_.schema.dense ? 1.0 / std::sqrt(static_cast<double>(cfg_.schema.dense)) : 0);
  for (std::size_t i = 0; i < cfg_.schema.sparse_count(); ++i) {
    const std::string name = "embed.sparse." + std::to_string(i);
    p[name] = rng(name).normal_tensor(cfg_.schema.sparse_vocab[i], d, emb);
  }
  for (std::size_t e = 0; e < cfg_.events.size(); ++e) {
    const auto& ev = cfg_.events[e];
    for (std::size_t j = 0; j < sources_[e].size(); ++j) {
      const std::string name = "event." + ev.name + ".item." + std::to_string(j);
      p[name] = rng(name).normal_tensor(cfg_.schema.events[sources_[e][j]].item_vocab, ev.d,
                                        1.0 / std::sqrt(static_cast<double>(ev.d)));
    }
    const std::string fusion = "event." + ev.name + ".fusion";
    Rng r = rng(fusion);
    init_fusion(p, fusion, sources_[e].size(), ev.d, cfg_.fusion_layers, r);
  }
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const LayerSkipFlags f = schedule_[l];
    bool any_pffn = false;
    for (std::size_t e = 0; e < cfg_.events.size(); ++e) {
      if (l >= cfg_.event_layers(e)) continue;
      const auto& ev = cfg_.events[e];
      const std::string pre = event_prefix(l, e);
      if (!f.skip_pffn) {
        any_pffn = true;
        Rng r = rng(pre + ".personalize");
        if (cfg_.variant.pffn) {
          init_pffn(p, pre + ".pffn", cfg_.n_sum, d, ev.d, cfg_.pffn_hidden, r);
        } else {
          init_weight_gen(p, pre + ".wg", cfg_.n_sum, d, ev.d, ev.n_kv, r);
          init_gdpa(p, pre + ".gdpa", ev.d, r, 0.5);
        }
      }
      if (!f.skip_hsp) {
        Rng r = rng(pre + ".summary");
        init_summary(p, pre, ev.d, cfg_.event_hsp(e), r);
        if (ev.d != d) p[pre + ".adapter"] = r.normal_tensor(d, ev.d, 1.0 / std::sqrt(static_cast<double>(ev.d)));
      }
      if (!f.skip_attention) {
        Rng r = rng(pre + ".attn");
        init_mha(p, pre + ".attn", ev.d, r, 0.5);
      }
    }
    const std::string layer = "layer" + std::to_string(l);
    if (any_pffn) {
      Rng r = rng(layer + ".summarize");
      init_summarize(p, layer + ".summarize", cfg_.n_sum, n1, r);
    }
    Rng r = rng(layer + ".gi");
    init_global_interaction(p, layer + ".gi", n1, partition_, d, cfg_.deep_hidden, r);
  }
  Rng r = rng("head");
  init_mlp(p, "head", {n1 * d, cfg_.head_width(), 1}, r, 0.1);
  return p;
}

Var Model::embed_event(Tape& tape, std::size_t e, const Sample& sample) const {
  const auto& ev = cfg_.events[e];
  const auto& src = sources_[e];
  const bool rotate = cfg_.rote.placement != RotePlacement::kOff;
  const RoteConfig rc = RoteConfig::geometric(ev.d, cfg_.rote.base, cfg_.rote.tau_scale);
  std::vector<Var> seqs;
  std::size_t T = 0;
  for (std::size_t j = 0; j < src.size(); ++j) {
    const EventSequence& es = sample.events[src[j]];
    const std::size_t Tk = es.items.size();
    T = std::max(T, Tk);
    Var table = tape.param("event." + ev.name + ".item." + std::to_string(j));
    Var s = Tk == 0 ? zeros(tape, 0, ev.d) : gather_rows(table, es.items);
    if (rotate && cfg_.rote.placement == RotePlacement::kBeforeFusion && Tk > 0) {
      const std::size_t max_len = cfg_.schema.events[src[j]].max_len;
      std::vector<double> pos(Tk);
      for (std::size_t i = 0; i < Tk; ++i) pos[i] = static_cast<double>(max_len - Tk + i);
      s = rote_rows(s, pos, rote_gaps(es.timestamps, sample.request_time, cfg_.rote.gaps), rc);
    }
    seqs.push_back(s);
  }
  Var fused = fuse_sequences(tape, seqs, "event." + ev.name + ".fusion", cfg_.fusion_layers);
  if (!rotate || cfg_.rote.placement != RotePlacement::kAfterFusion || T == 0) return fused;
  // Right-aligned fused rows take the timestamp of the first stream that has
  // a real event at that position.
  std::vector<double> ts(T), pos(T);
  const std::size_t max_len = cfg_.event_max_len(e);
  for (std::size_t i = 0; i < T; ++i) {
    pos[i] = static_cast<double>(max_len - T + i);
    for (std::size_t j = 0; j < src.size(); ++j) {
      const auto& stamps = sample.events[src[j]].timestamps;
      if (i + stamps.size() >= T) {
        ts[i] = stamps[i + stamps.size() - T];
        break;
      }
    }
  }
  return rote_rows(fused, pos, rote_gaps(ts, sample.request_time, cfg_.rote.gaps), rc);
}

LayerState Model::embed(Tape& tape, const Sample& sample) const {
  validate_sample(cfg_.schema, sample);
  LayerState st;
  std::vector<Var> sparse;
  for (std::size_t i = 0; i < cfg_.schema.sparse_count(); ++i)
    sparse.push_back(embed_sparse(tape.param("embed.sparse." + std::to_string(i)), sample.sparse[i]));
  st.x = assemble_nonseq(embed_dense(tape.param("embed.dense"), sample.dense), sparse);
  st.x_prev = st.x;
  for (std::size_t e = 0; e < cfg_.events.size(); ++e) st.events.push_back({embed_event(tape, e, sample), Var()});
  return st;
}

Var Model::summarize_event(Tape& tape, std::size_t layer, std::size_t e, Var seq) const {
  const std::string pre = event_prefix(layer, e);
  Var h = hsp_summarize(tape, pre, seq, cfg_.event_hsp(e)).stacked();
  if (cfg_.events[e].d != cfg_.d) h = matmul_nt(h, tape.param(pre + ".adapter"));
  return h;
}

Var Model::personalize(Tape& tape, std::size_t layer, std::size_t e, Var seq, Var x_sum) const {
  const std::string pre = event_prefix(layer, e);
  if (cfg_.variant.pffn) return pffn_original(tape, pre + ".pffn", x_sum, seq);
  const GdpaConfig g = cfg_.event_gdpa(e);
  GeneratedKv kv = generate_kv(tape, pre + ".wg", x_sum, g.n_kv, seq.cols());
  if (cfg_.variant.kernel == GdpaKernel::kBlockwise)
    return gdpa_apply_blockwise(tape, pre + ".gdpa", seq, kv, g, cfg_.variant.tile, seq.rows());
  return gdpa_apply(tape, pre + ".gdpa", seq, kv, g, seq.rows());
}

LayerState Model::layer_forward(Tape& tape, std::size_t layer, const LayerState& in, const LayerSkipFlags& f,
                                ForwardStats* stats) const {
  const std::size_t E = cfg_.events.size();
  if (in.events.size() != E) throw ShapeError("layer state has the wrong number of events");
  LayerState out;
  out.x_prev = in.x;
  out.events = in.events;
  std::vector<bool> active(E);
  bool any_active = false;
  for (std::size_t e = 0; e < E; ++e) {
    active[e] = layer < cfg_.event_layers(e);
    any_active = any_active || active[e];
  }

  Var x_sum;
  if (!f.skip_pffn && any_active) {
    Var source = cfg_.weight_gen == WeightGenTiming::kSameLayer ? in.x : in.x_prev;
    x_sum = summarize_nonseq(source, tape.param("layer" + std::to_string(layer) + ".summarize"));
  }

  std::vector<Var> summaries;
  bool fresh = false;
  for (std::size_t e = 0; e < E; ++e) {
    if (active[e] && !f.skip_hsp) {
      out.events[e].summary = summarize_event(tape, layer, e, in.events[e].seq);
      fresh = true;
    } else if (!in.events[e].summary.valid()) {
      throw ValidationError("layer " + std::to_string(layer) + ": event '" + cfg_.events[e].name +
                            "' reuses a summary that was never computed");
    }
    summaries.push_back(out.events[e].summary);
  }
  out.x = global_interaction(tape, "layer" + std::to_string(layer) + ".gi", in.x, summaries, partition_);

  for (std::size_t e = 0; e < E; ++e) {
    if (!active[e]) continue;
    Var s = in.events[e].seq;
    if (!f.skip_pffn) s = personalize(tape, layer, e, s, x_sum);
    if (!f.skip_attention) {
      const auto& ev = cfg_.events[e];
      MhaParams attn = bind_mha(tape, event_prefix(layer, e) + ".attn", ev.heads);
      s = cfg_.variant.full_attention ? mha_full(s, attn) : mha_window(s, attn, {ev.window, ev.causal});
    }
    out.events[e].seq = s;
  }
  if (stats) {
    stats->interaction += 1;
    stats->summaries += fresh ? 1 : 0;
    stats->pffn += (!f.skip_pffn && any_active) ? 1 : 0;
    stats->attention += (!f.skip_attention && any_active) ? 1 : 0;
  }
  return out;
}

Var Model::head(Tape& tape, Var x) const {
  Var flat = reshape(x, 1, x.rows() * x.cols());
  return apply_mlp(tape, "head", flat, 2, Activation::kSilu);
}

Var Model::forward_logit(Tape& tape, const Sample& sample, ForwardStats* stats) const {
  LayerState st = embed(tape, sample);
  for (std::size_t l = 0; l < cfg_.layers; ++l) st = layer_forward(tape, l, st, schedule_[l], stats);
  return head(tape, st.x);
}

Var Model::batch_loss(Tape& tape, std::span<const Sample> samples) const {
  if (samples.empty()) throw ValidationError("batch is empty");
  for (const Sample& s : samples) validate_sample(cfg_.schema, s);
  std::vector<Var> losses;
  for (const Sample& s : samples) losses.push_back(bce_with_logits(forward_logit(tape, s), s.label));
  Var total = losses.size() == 1 ? losses.front() : sum(concat_rows(losses));
  return scale(total, 1.0 / static_cast<double>(samples.size()));
}

std::vector<double> Model::predict(const ParamStore& params, std::span<const Sample> samples) const {
  for (const Sample& s : samples) validate_sample(cfg_.schema, s);
  std::vector<double> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) {
    Tape tape(&params, false);
    const double z = forward_logit(tape, s).value().item();
    out.push_back(z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)));
  }
  return out;
}

std::uint64_t count_params(const ParamStore& params, const std::string& prefix) {
  std::uint64_t n = 0;
  for (const auto& [name, t] : params)
    if (name.compare(0, prefix.size(), prefix) == 0) n += t.size();
  return n;
}

}  // namespace kunlun
