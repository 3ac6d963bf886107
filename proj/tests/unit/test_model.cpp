#include "kunlun/gradcheck.hpp"
#include "kunlun/metrics.hpp"
#include "kunlun/model.hpp"
#include "fixtures.hpp"

#include <doctest.h>

#include <cmath>

using namespace kunlun;
using testing::small_config;
using testing::small_data;
using testing::small_spec;

namespace {

bool has_prefix(const ParamStore& p, const std::string& prefix) { return count_params(p, prefix) > 0; }

}  // namespace

TEST_CASE("compskip alternates attention and summarization") {
  for (std::size_t L = 1; L <= 8; ++L) {
    const auto flags = compskip_config(L);
    REQUIRE(flags.size() == L);
    std::size_t hsp = 0, attn = 0;
    for (std::size_t l = 0; l < L; ++l) {
      const LayerSkipFlags expect = l % 2 == 0 ? LayerSkipFlags{true, false, false} : LayerSkipFlags{false, true, true};
      CHECK(flags[l] == expect);
      hsp += !flags[l].skip_hsp;
      attn += !flags[l].skip_attention;
    }
    CHECK(hsp == (L + 1) / 2);
    CHECK(attn == L / 2);
    for (const auto& f : compskip_config(L, false)) CHECK(f == LayerSkipFlags{});
  }
  CHECK_THROWS_AS(compskip_config(0), ValidationError);
}

TEST_CASE("parameters exist only for components the schedule runs") {
  const Model model(small_config(3));
  const ParamStore p = model.init_params();
  CHECK(has_prefix(p, "layer0.click.wg"));
  CHECK(has_prefix(p, "layer0.click.hsp"));
  CHECK_FALSE(has_prefix(p, "layer0.click.attn"));
  CHECK_FALSE(has_prefix(p, "layer1.click.wg"));
  CHECK_FALSE(has_prefix(p, "layer1.click.hsp"));
  CHECK(has_prefix(p, "layer1.click.attn"));
  CHECK(has_prefix(p, "layer1.gi"));
  CHECK_FALSE(has_prefix(p, "layer1.summarize"));
  // The narrower event is projected into the model width.
  CHECK(p.at("layer0.view.adapter").rows() == 4);
  CHECK_FALSE(p.count("layer0.click.adapter"));
  CHECK(has_prefix(p, "head"));

  // Every parameter is reached by the loss.
  const Dataset data = small_data(8);
  Tape tape(&p);
  const GradStore g = tape.backward(model.batch_loss(tape, data.samples));
  for (const auto& [name, t] : p) CHECK_MESSAGE(tape.has_param(name), name);
}

TEST_CASE("forward stats agree with the analytic ledger") {
  for (std::size_t L : {1, 2, 3, 4}) {
    const ModelConfig cfg = small_config(L);
    const Model model(cfg);
    const ParamStore p = model.init_params();
    const Dataset data = gen_data(small_spec(50));
    Tape tape(&p, false);
    ForwardStats stats;
    model.forward_logit(tape, data.samples[0], &stats);
    const FlopsLedger led = flops_estimate(cfg);
    CHECK(stats.summaries == led.evaluations("cls_pooling"));
    CHECK(stats.summaries == (L + 1) / 2);
    CHECK(stats.attention == led.evaluations("attention"));
    CHECK(stats.attention == L / 2);
    CHECK(stats.pffn == led.evaluations("gdpa"));
    CHECK(stats.interaction == led.evaluations("interaction"));
  }
}

TEST_CASE("disabling compskip runs every component in every layer and costs more") {
  ModelConfig cfg = small_config(4);
  cfg.compskip = false;
  const Model model(cfg);
  const Dataset data = gen_data(small_spec(50));
  const ParamStore p = model.init_params();
  Tape tape(&p, false);
  ForwardStats stats;
  model.forward_logit(tape, data.samples[0], &stats);
  CHECK(stats.summaries == 4);
  CHECK(stats.attention == 4);
  CHECK(flops_estimate(cfg).total() > flops_estimate(small_config(4)).total());
  CHECK(compskip_reduction(small_config(4)) > 0);
}

TEST_CASE("reusing a summary requires one computed earlier") {
  const Model model(small_config(2));
  const ParamStore p = model.init_params();
  const Dataset data = gen_data(small_spec(50));
  Tape tape(&p);
  const LayerState st = model.embed(tape, data.samples[0]);
  CHECK_THROWS_AS(model.layer_forward(tape, 1, st, model.schedule()[1]), ValidationError);
  const LayerState l0 = model.layer_forward(tape, 0, st, model.schedule()[0]);
  CHECK(l0.events[0].summary.valid());
  const LayerState l1 = model.layer_forward(tape, 1, l0, model.schedule()[1]);
  CHECK(l1.events[0].summary.id() == l0.events[0].summary.id());
  CHECK(l1.x_prev.id() == l0.x.id());
}

TEST_CASE("model output is deterministic and sample-local") {
  const Model model(small_config(2));
  const ParamStore p = model.init_params(5);
  const Dataset data = small_data(6);
  const std::vector<double> a = model.predict(p, data.samples);
  const std::vector<double> b = model.predict(p, data.samples);
  CHECK(a == b);
  for (double x : a) CHECK((x > 0 && x < 1));
  // Batch composition does not change a sample's prediction.
  const std::vector<double> one = model.predict(p, std::span(data.samples).subspan(3, 1));
  CHECK(one[0] == a[3]);
  // Batch loss is the mean of per-sample cross-entropies.
  Tape tape(&p, false);
  double mean = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    mean -= data.samples[i].label ? std::log(a[i]) : std::log1p(-a[i]);
  mean /= double(a.size());
  CHECK(model.batch_loss(tape, data.samples).value().item() == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("model variants run end to end") {
  const Dataset data = small_data(4);
  auto run = [&](ModelConfig cfg) {
    const Model model(cfg);
    const ParamStore p = model.init_params();
    Tape tape(&p);
    const GradStore g = tape.backward(model.batch_loss(tape, data.samples));
    return g.size();
  };
  ModelConfig c = small_config(2);
  c.variant.pffn = true;
  c.variant.pma = true;
  c.variant.full_attention = true;
  c.variant.kernel = GdpaKernel::kNaive;
  CHECK(run(c) > 0);
  c = small_config(3);
  c.weight_gen = WeightGenTiming::kPreviousLayer;
  c.rote.placement = RotePlacement::kBeforeFusion;
  c.rote.gaps = GapConvention::kToCandidate;
  c.events[1].layers = 1;
  c.expert_ranges = {{0, 3}, {3, 9}, {9, c.combined_tokens()}};
  c.experts = 3;
  CHECK(run(c) > 0);
  c.rote.placement = RotePlacement::kOff;
  CHECK(run(c) > 0);
}

TEST_CASE("multi-stream events fuse their sources") {
  ModelConfig c = small_config(2);
  c.events.pop_back();
  c.events[0].sources = {"click", "view"};
  const Model model(c);
  const ParamStore p = model.init_params();
  CHECK(p.at("event.click.fusion.l0.w").cols() == 8);
  const Dataset data = small_data(3);
  const auto preds = model.predict(p, data.samples);
  CHECK(preds.size() == 3);
}

TEST_CASE("blockwise and naive kernels give the same model output") {
  ModelConfig c = small_config(2);
  const Dataset data = small_data(5);
  c.variant.kernel = GdpaKernel::kNaive;
  const Model naive(c);
  c.variant.kernel = GdpaKernel::kBlockwise;
  c.variant.tile = {2, 1};
  const Model tiled(c);
  const ParamStore p = naive.init_params();
  const auto a = naive.predict(p, data.samples), b = tiled.predict(p, data.samples);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
}

TEST_CASE("malformed samples are rejected before compute") {
  const Model model(small_config(1));
  const ParamStore p = model.init_params();
  Dataset data = gen_data(small_spec(50));
  data.samples[1].sparse[0] = 999;
  CHECK_THROWS_AS(model.predict(p, data.samples), ValidationError);
  Tape tape(&p);
  CHECK_THROWS_AS(model.batch_loss(tape, {}), ValidationError);
}

TEST_CASE("library gradient check covers the whole model") {
  const GradcheckReport r = gradcheck_module("model", 1);
  CHECK(r.max_rel_err() < 1e-4);
  CHECK(r.rel_err.size() > 20);
  CHECK_THROWS_AS(gradcheck_module("nope", 1), ValidationError);
}
