#pragma once

#include "kunlun/config.hpp"

#include <string>
#include <string_view>

namespace kunlun {

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
};

/// Magic, config JSON, then every parameter by name with its shape and
/// little-endian f64 values. See README for the byte layout.
std::string encode_checkpoint(const ModelConfig& config, const ParamStore& params);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::string& path, const ModelConfig& config, const ParamStore& params);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace kunlun
