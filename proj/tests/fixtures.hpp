#pragma once

#include "kunlun/data.hpp"
#include "kunlun/model.hpp"

namespace testing {

// Small generator setup whose samples fit small_config().
inline kunlun::SyntheticSpec small_spec(std::size_t samples = 64) {
  kunlun::SyntheticSpec s;
  s.samples = samples;
  s.users = 20;
  s.items = 30;
  s.latent_dim = 4;
  s.dense = 2;
  s.context_vocab = {4, 3};
  s.streams = {{"click", 6, 0, 2.0, 600}, {"view", 5, 1, 0.5, 60}};
  s.pool = 4;
  s.prior_ctr = 0.2;
  return s;
}

// The first n samples of a larger draw; tiny draws can miss the allowed click-rate band.
inline kunlun::Dataset small_data(std::size_t n) {
  kunlun::Dataset d = kunlun::gen_data(small_spec(64));
  d.samples.resize(n);
  return d;
}

inline kunlun::ModelConfig small_config(std::size_t layers = 2) {
  kunlun::ModelConfig c;
  c.schema = small_spec().schema();
  c.d = 4;
  c.layers = layers;
  c.n_sum = 2;
  kunlun::EventConfig click;
  click.name = "click";
  click.sources = {"click"};
  click.d = 4;
  click.heads = 2;
  click.tokens = 4;
  click.window = 1;
  click.seeds = 5;
  click.n_kv = 3;
  kunlun::EventConfig view = click;
  view.name = "view";
  view.sources = {"view"};
  view.d = 2;
  view.heads = 1;
  view.tokens = 3;
  c.events = {click, view};
  c.experts = 2;
  c.deep_hidden = 6;
  c.pffn_hidden = 5;
  c.train.batch = 8;
  c.train.record_every = 2;
  return c;
}

}  // namespace testing
