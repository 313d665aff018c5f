#pragma once

// Model files: a text container holding a magic/version line, a JSON payload
// with every matrix stored as hex-float strings (so values round-trip exactly)
// and a trailing CRC-32 line over everything before it.
//
//   SORSCN-MODEL 2
//   {"input_dim":..., "blocks":[...], "readout":{...}, ...}
//   crc32 1a2b3c4d
//
// Version 1 files carry no block ids, history or fingerprint; they are
// migrated on load with sequential ids and an empty history.

#include "sorscn/reservoir.hpp"

#include <json.hpp>

#include <string>

namespace sorscn::io {

inline constexpr int kModelFormatVersion = 2;

struct ModelMeta {
  std::string fingerprint;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();  // variant, interval, normalizer, config
};

struct LoadedModel {
  EnsembleModel<double> model;
  ModelMeta meta;
  int version{kModelFormatVersion};
};

std::string encode_model(const EnsembleModel<double>& model, const ModelMeta& meta = {},
                         int version = kModelFormatVersion);
LoadedModel decode_model(const std::string& bytes);

void save_model(const EnsembleModel<double>& model, const std::string& path, const ModelMeta& meta = {});
LoadedModel load_model(const std::string& path);

}  // namespace sorscn::io
