#pragma once

// Checkpoints are a flat little-endian f64 blob (<prefix>.bin) plus a JSON
// manifest (<prefix>.json) listing name, shape and byte offset per parameter
// in registration order.

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <nlohmann/json.hpp>

#include "rosa/ad/tensor.hpp"
#include "rosa/core/binary_io.hpp"

namespace rosa::ad {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

inline nlohmann::json checkpoint_manifest(const ParameterList& params) {
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& p : params) {
    entries.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}});
    offset += p.tensor.numel() * sizeof(double);
  }
  return {{"format", "rosa-checkpoint"}, {"version", 1}, {"dtype", "f64le"}, {"total_bytes", offset},
          {"parameters", entries}};
}

inline std::vector<unsigned char> checkpoint_bytes(const ParameterList& params) {
  io::ByteWriter w;
  for (const auto& p : params) w.put_array<double>(p.tensor.data());
  return std::move(w.buffer());
}

inline void save_checkpoint(const std::filesystem::path& prefix, const ParameterList& params) {
  const auto bytes = checkpoint_bytes(params);
  std::ofstream bin(prefix.string() + ".bin", std::ios::binary);
  bin.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  std::ofstream man(prefix.string() + ".json");
  man << checkpoint_manifest(params).dump(2) << '\n';
  if (!bin || !man) throw CheckpointError("save_checkpoint: cannot write " + prefix.string());
}

/// Loads values into `params`, matched by name; every parameter must be present with its shape.
inline void load_checkpoint(const std::filesystem::path& prefix, ParameterList& params) {
  std::ifstream man(prefix.string() + ".json");
  std::ifstream bin(prefix.string() + ".bin", std::ios::binary);
  if (!man || !bin) throw CheckpointError("load_checkpoint: missing files for " + prefix.string());
  const auto manifest = nlohmann::json::parse(man);
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  for (auto& p : params) {
    bool found = false;
    for (const auto& e : manifest.at("parameters")) {
      if (e.at("name") != p.name) continue;
      if (e.at("shape").get<Shape>() != p.tensor.shape()) {
        throw CheckpointError("load_checkpoint: shape mismatch for " + p.name);
      }
      const auto offset = e.at("offset").get<std::size_t>();
      if (offset + p.tensor.numel() * sizeof(double) > blob.size()) {
        throw CheckpointError("load_checkpoint: truncated blob for " + p.name);
      }
      io::ByteReader r(std::span<const unsigned char>(blob).subspan(offset));
      r.get_array<double>(p.tensor.mutable_data());
      found = true;
      break;
    }
    if (!found) throw CheckpointError("load_checkpoint: no entry for " + p.name);
  }
}

}  // namespace rosa::ad
