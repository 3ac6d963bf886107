#include "kunlun/checkpoint.hpp"

#include "bytes.hpp"

namespace kunlun {

namespace {
constexpr std::string_view kMagic = "KLCKPT01";
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::string encode_checkpoint(const ModelConfig& config, const ParamStore& params) {
  detail::ByteWriter w;
  w.raw(kMagic);
  w.u32(kVersion);
  const std::string cfg = config_to_json(config, -1);
  w.u64(cfg.size());
  w.raw(cfg);
  w.u64(params.size());
  for (const auto& [name, t] : params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) w.u64(e);
    for (std::size_t i = 0; i < t.size(); ++i) w.f64(t[i]);
  }
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  if (r.raw(kMagic.size()) != kMagic) throw ValidationError("checkpoint: bad magic");
  if (r.u32() != kVersion) throw ValidationError("checkpoint: unsupported version");
  Checkpoint ck;
  ck.config = config_from_json(std::string(r.raw(r.u64())));
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape(rank);
    std::size_t size = 1;
    for (auto& e : shape) size *= (e = r.u64());
    if (size > r.remaining() / 8) throw ValidationError("checkpoint: truncated tensor '" + name + "'");
    Tensor t(shape);
    for (std::size_t j = 0; j < size; ++j) t[j] = r.f64();
    if (!ck.params.emplace(std::move(name), std::move(t)).second)
      throw ValidationError("checkpoint: duplicate tensor name");
  }
  if (!r.done()) throw ValidationError("checkpoint: trailing bytes");
  return ck;
}

void save_checkpoint(const std::string& path, const ModelConfig& config, const ParamStore& params) {
  detail::write_file(path, encode_checkpoint(config, params));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(detail::read_file(path)); }

}  // namespace kunlun
