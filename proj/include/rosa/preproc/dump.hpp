#pragma once

// Flat little-endian f64 tensor [3, bins, frames] plus a JSON descriptor.

#include <filesystem>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "rosa/core/binary_io.hpp"
#include "rosa/preproc/spectrogram.hpp"

namespace rosa::preproc {

inline void dump_stack(const std::filesystem::path& prefix, const SpectrogramStack& s) {
  io::ByteWriter w;
  w.put_array<double>(s.values);
  std::ofstream bin(prefix.string() + ".bin", std::ios::binary);
  bin.write(reinterpret_cast<const char*>(w.buffer().data()), static_cast<std::streamsize>(w.buffer().size()));
  const nlohmann::json desc{{"shape", {kChannels, s.bins, s.frames}},
                            {"channels", {"movement_power", "breathing_power", "breathing_doppler_hz"}},
                            {"dtype", "f64le"},
                            {"frame_hop_s", s.frame_hop},
                            {"frame_len_s", s.frame_len},
                            {"power_frame_len_s", s.power_frame_len},
                            {"slow_rate_hz", s.slow_rate},
                            {"range_bins", {s.bin_lo, s.bin_hi}},
                            {"doppler_unreliable", s.doppler_unreliable}};
  std::ofstream js(prefix.string() + ".json");
  js << desc.dump(2) << '\n';
  if (!bin || !js) throw Error("dump_stack: cannot write " + prefix.string());
}

inline SpectrogramStack load_stack(const std::filesystem::path& prefix) {
  std::ifstream js(prefix.string() + ".json");
  std::ifstream bin(prefix.string() + ".bin", std::ios::binary);
  if (!js || !bin) throw Error("load_stack: missing files for " + prefix.string());
  const auto desc = nlohmann::json::parse(js);
  SpectrogramStack s;
  s.bins = desc.at("shape")[1];
  s.frames = desc.at("shape")[2];
  s.frame_hop = desc.at("frame_hop_s");
  s.frame_len = desc.at("frame_len_s");
  s.power_frame_len = desc.at("power_frame_len_s");
  s.slow_rate = desc.at("slow_rate_hz");
  s.bin_lo = desc.at("range_bins")[0];
  s.bin_hi = desc.at("range_bins")[1];
  s.doppler_unreliable = desc.at("doppler_unreliable");
  const std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  s.values.resize(kChannels * s.bins * s.frames);
  io::ByteReader r(blob);
  if (!r.get_array<double>(s.values) || r.remaining() != 0) throw Error("load_stack: size mismatch in " + prefix.string());
  return s;
}

}  // namespace rosa::preproc
