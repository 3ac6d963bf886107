#include "kunlun/data.hpp"

#include "bytes.hpp"
#include "kunlun/layers.hpp"
#include "kunlun/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace kunlun {

namespace detail {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("write to '" + path + "' failed");
}

}  // namespace detail

FeatureSchema SyntheticSpec::schema() const {
  FeatureSchema s;
  s.dense = dense;
  s.sparse_vocab = {users, items};
  s.sparse_vocab.insert(s.sparse_vocab.end(), context_vocab.begin(), context_vocab.end());
  for (const auto& st : streams) s.events.push_back({st.name, items, st.max_len});
  return s;
}

void SyntheticSpec::validate() const {
  if (samples < 1) throw ValidationError("spec needs samples >= 1");
  if (users < 1 || items < 1) throw ValidationError("spec has an empty user or item vocabulary");
  for (auto v : context_vocab)
    if (v < 1) throw ValidationError("spec has an empty context vocabulary");
  if (latent_dim < 1) throw ValidationError("spec needs latent_dim >= 1");
  if (pool < 1) throw ValidationError("spec needs pool >= 1");
  for (const auto& st : streams) {
    if (st.max_len < 1 || st.min_len > st.max_len)
      throw ValidationError("stream '" + st.name + "' needs 0 <= min_len <= max_len, max_len >= 1");
    if (!(st.mean_gap_s > 0)) throw ValidationError("stream '" + st.name + "' needs mean_gap_s > 0");
  }
  if (!(prior_ctr > 0 && prior_ctr < 1)) throw ValidationError("prior_ctr must be in (0, 1)");
  if (!(temperature > 0)) throw ValidationError("temperature must be > 0");
  if (!(recency_half_life > 0)) throw ValidationError("recency_half_life must be > 0");
  schema().validate();
}

SyntheticSpec spec_from_json(const std::string& text) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("spec is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("spec must be a JSON object");
  SyntheticSpec s;
  for (const auto& [k, v] : j.items()) {
    try {
      if (k == "seed") s.seed = v.get<std::uint64_t>();
      else if (k == "samples") s.samples = v.get<std::size_t>();
      else if (k == "users") s.users = v.get<std::uint32_t>();
      else if (k == "items") s.items = v.get<std::uint32_t>();
      else if (k == "latent_dim") s.latent_dim = v.get<std::size_t>();
      else if (k == "dense") s.dense = v.get<std::size_t>();
      else if (k == "context_vocab") s.context_vocab = v.get<std::vector<std::uint32_t>>();
      else if (k == "pool") s.pool = v.get<std::size_t>();
      else if (k == "recency_half_life") s.recency_half_life = v.get<double>();
      else if (k == "prior_ctr") s.prior_ctr = v.get<double>();
      else if (k == "temperature") s.temperature = v.get<double>();
      else if (k == "alpha") s.alpha = v.get<double>();
      else if (k == "beta") s.beta = v.get<double>();
      else if (k == "gamma") s.gamma = v.get<double>();
      else if (k == "streams") {
        s.streams.clear();
        for (const auto& sj : v) {
          SyntheticStream st;
          for (const auto& [sk, sv] : sj.items()) {
            if (sk == "name") st.name = sv.get<std::string>();
            else if (sk == "max_len") st.max_len = sv.get<std::size_t>();
            else if (sk == "min_len") st.min_len = sv.get<std::size_t>();
            else if (sk == "alignment") st.alignment = sv.get<double>();
            else if (sk == "mean_gap_s") st.mean_gap_s = sv.get<double>();
            else throw ValidationError("unknown key '" + sk + "' in spec.streams[]");
          }
          s.streams.push_back(st);
        }
      } else {
        throw ValidationError("unknown key '" + k + "' in spec");
      }
    } catch (const json::exception& e) {
      throw ValidationError("spec." + k + ": " + e.what());
    }
  }
  s.validate();
  return s;
}

SyntheticSpec load_spec(const std::string& path) { return spec_from_json(detail::read_file(path)); }

namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

}  // namespace

Dataset gen_data(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t k = spec.latent_dim;
  const double lat_std = std::pow(static_cast<double>(k), -0.25);
  const Tensor user_lat = rng.normal_tensor(spec.users, k, lat_std);
  const Tensor item_lat = rng.normal_tensor(spec.items, k, lat_std);
  std::vector<Tensor> ctx_bias;
  for (auto v : spec.context_vocab) ctx_bias.push_back(rng.normal_tensor(1, v, 0.3));
  // Context feature 0 interacts with a coarse bucket of the candidate item.
  const std::size_t buckets = 16;
  const Tensor cross = spec.context_vocab.empty() ? Tensor::matrix(1, buckets)
                                                  : rng.normal_tensor(spec.context_vocab[0], buckets, 0.7);
  const Tensor dense_w = rng.normal_tensor(1, spec.dense, spec.dense ? 1.0 / std::sqrt(double(spec.dense)) : 0.0);
  const double base = std::log(spec.prior_ctr / (1 - spec.prior_ctr));

  Dataset data;
  data.schema = spec.schema();
  data.samples.reserve(spec.samples);
  std::vector<double> scores(spec.pool);
  std::vector<std::uint32_t> pool(spec.pool);
  std::vector<double> signals;
  signals.reserve(spec.samples);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    Sample s;
    const auto user = static_cast<std::uint32_t>(rng.index(spec.users));
    const auto cand = static_cast<std::uint32_t>(rng.index(spec.items));
    s.sparse = {user, cand};
    for (auto v : spec.context_vocab) s.sparse.push_back(static_cast<std::uint32_t>(rng.index(v)));
    for (std::size_t j = 0; j < spec.dense; ++j) s.dense.push_back(rng.normal());
    s.request_time = 1.0e9 + 30.0 * static_cast<double>(i);
    const double* u = user_lat.data() + user * k;
    for (const auto& st : spec.streams) {
      EventSequence es;
      const std::size_t len = st.min_len + rng.index(st.max_len - st.min_len + 1);
      for (std::size_t t = 0; t < len; ++t) {
        double mx = -INFINITY;
        for (std::size_t p = 0; p < spec.pool; ++p) {
          pool[p] = static_cast<std::uint32_t>(rng.index(spec.items));
          scores[p] = st.alignment * dot(u, item_lat.data() + pool[p] * k, k);
          mx = std::max(mx, scores[p]);
        }
        double z = 0;
        for (double& sc : scores) z += (sc = std::exp(sc - mx));
        double r = rng.uniform() * z;
        std::size_t pick = 0;
        while (pick + 1 < spec.pool && (r -= scores[pick]) > 0) ++pick;
        es.items.push_back(pool[pick]);
      }
      es.timestamps.resize(len);
      double t = s.request_time;
      for (std::size_t q = len; q-- > 0;) es.timestamps[q] = (t -= rng.exponential(st.mean_gap_s));
      s.events.push_back(std::move(es));
    }

    const double* v = item_lat.data() + cand * k;
    double seq = 0;
    if (!s.events.empty() && !s.events[0].items.empty()) {
      const auto& items = s.events[0].items;
      double wsum = 0;
      for (std::size_t q = 0; q < items.size(); ++q) {
        const double w = std::exp2(-static_cast<double>(items.size() - 1 - q) / spec.recency_half_life);
        seq += w * dot(u, item_lat.data() + items[q] * k, k);
        wsum += w;
      }
      seq /= wsum;
    }
    double ctx = 0;
    for (std::size_t c = 0; c < spec.context_vocab.size(); ++c) ctx += ctx_bias[c][s.sparse[2 + c]];
    const double crossv = spec.context_vocab.empty() ? 0.0 : cross(s.sparse[2], cand % buckets);
    const double signal = spec.alpha * seq + spec.beta * (dot(u, v, k) + crossv) +
                          spec.gamma * dot(dense_w.data(), s.dense.data(), spec.dense) + ctx;
    signals.push_back(signal);
    data.samples.push_back(std::move(s));
  }
  // Centre the signal so prior_ctr sets the base rate.
  double mean = 0;
  for (double z : signals) mean += z / static_cast<double>(signals.size());
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    Sample& s = data.samples[i];
    s.true_prob = sigmoid(base + (signals[i] - mean) / spec.temperature);
    s.label = rng.bernoulli(s.true_prob) ? 1 : 0;
  }
  double clicks = 0;
  for (const auto& s : data.samples) clicks += s.label;
  const double ctr = clicks / static_cast<double>(data.samples.size());
  if (!(ctr > 0.02 && ctr < 0.5))
    throw ValidationError("generated click rate " + std::to_string(ctr) + " is outside (0.02, 0.5)");
  return data;
}

double ne_floor(const Dataset& data) {
  std::vector<double> y, p;
  for (const auto& s : data.samples) {
    y.push_back(s.label);
    p.push_back(s.true_prob);
  }
  return normalized_entropy(y, p).ne;
}

namespace {
constexpr std::string_view kDataMagic = "KLDATA01";
constexpr std::uint32_t kDataVersion = 1;
}  // namespace

std::string encode_dataset(const Dataset& data) {
  const FeatureSchema& sc = data.schema;
  detail::ByteWriter w;
  w.raw(kDataMagic);
  w.u32(kDataVersion);
  w.u32(static_cast<std::uint32_t>(sc.dense));
  w.u32(static_cast<std::uint32_t>(sc.sparse_count()));
  w.u32(static_cast<std::uint32_t>(sc.events.size()));
  for (auto v : sc.sparse_vocab) w.u32(v);
  for (const auto& e : sc.events) {
    w.str(e.name);
    w.u32(e.item_vocab);
    w.u32(static_cast<std::uint32_t>(e.max_len));
  }
  w.u64(data.samples.size());
  for (const auto& s : data.samples) {
    validate_sample(sc, s);
    detail::ByteWriter r;
    r.u8(s.label);
    r.f64(s.true_prob);
    r.f64(s.request_time);
    for (double x : s.dense) r.f64(x);
    for (auto id : s.sparse) r.u32(id);
    for (const auto& es : s.events) {
      r.u32(static_cast<std::uint32_t>(es.items.size()));
      for (auto id : es.items) r.u32(id);
      for (double t : es.timestamps) r.f64(t);
    }
    w.u32(static_cast<std::uint32_t>(r.bytes().size()));
    w.raw(r.bytes());
  }
  return std::move(w.bytes());
}

Dataset decode_dataset(std::string_view bytes) {
  detail::ByteReader r(bytes, "data file");
  if (r.raw(kDataMagic.size()) != kDataMagic) throw ValidationError("data file: bad magic");
  if (r.u32() != kDataVersion) throw ValidationError("data file: unsupported version");
  Dataset d;
  d.schema.dense = r.u32();
  const std::uint32_t n = r.u32(), K = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) d.schema.sparse_vocab.push_back(r.u32());
  for (std::uint32_t i = 0; i < K; ++i) {
    EventStreamSchema e;
    e.name = r.str();
    e.item_vocab = r.u32();
    e.max_len = r.u32();
    d.schema.events.push_back(e);
  }
  d.schema.validate();
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32();
    detail::ByteReader p(r.raw(len), "data record");
    Sample s;
    s.label = p.u8();
    s.true_prob = p.f64();
    s.request_time = p.f64();
    for (std::size_t j = 0; j < d.schema.dense; ++j) s.dense.push_back(p.f64());
    for (std::uint32_t j = 0; j < n; ++j) s.sparse.push_back(p.u32());
    for (std::uint32_t j = 0; j < K; ++j) {
      EventSequence es;
      const std::uint32_t T = p.u32();
      if (T > d.schema.events[j].max_len) throw ValidationError("data record: sequence longer than max_len");
      for (std::uint32_t t = 0; t < T; ++t) es.items.push_back(p.u32());
      for (std::uint32_t t = 0; t < T; ++t) es.timestamps.push_back(p.f64());
      s.events.push_back(std::move(es));
    }
    if (!p.done()) throw ValidationError("data record: trailing bytes");
    validate_sample(d.schema, s);
    d.samples.push_back(std::move(s));
  }
  if (!r.done()) throw ValidationError("data file: trailing bytes");
  return d;
}

void write_dataset(const std::string& path, const Dataset& data) { detail::write_file(path, encode_dataset(data)); }

Dataset read_dataset(const std::string& path) { return decode_dataset(detail::read_file(path)); }

void split_stream(const std::vector<Sample>& all, std::size_t stride, std::vector<Sample>& train,
                  std::vector<Sample>& eval) {
  if (stride < 2) throw ValidationError("eval stride must be >= 2");
  train.clear();
  eval.clear();
  for (std::size_t i = 0; i < all.size(); ++i) (i % stride == stride - 1 ? eval : train).push_back(all[i]);
}

}  // namespace kunlun
