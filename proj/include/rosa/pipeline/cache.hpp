#pragma once

// Content-addressed artifact store. A key is the FNV-1a hash of the canonical JSON
// of everything an artifact depends on, including the keys of its inputs, so a
// change anywhere upstream moves every downstream key.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace rosa::pipeline {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Key of a JSON description; nlohmann objects keep keys sorted, so dump() is canonical.
inline std::string content_key(const nlohmann::json& j) { return hex64(fnv1a64(j.dump())); }

class ArtifactCache {
 public:
  ArtifactCache() = default;
  ArtifactCache(std::filesystem::path dir, bool enabled) : dir_(std::move(dir)), enabled_(enabled) {
    if (enabled_) std::filesystem::create_directories(dir_);
  }

  bool enabled() const { return enabled_; }
  /// Path prefix for an artifact; callers add their own extensions.
  std::filesystem::path prefix(std::string_view kind, const std::string& key) const {
    return dir_ / (std::string(kind) + "-" + key);
  }
  /// An artifact is complete once its marker exists; writers create it last.
  bool has(std::string_view kind, const std::string& key) const {
    return enabled_ && std::filesystem::exists(marker(kind, key));
  }
  void commit(std::string_view kind, const std::string& key) const {
    if (!enabled_) return;
    std::FILE* f = std::fopen(marker(kind, key).c_str(), "wb");
    if (f) std::fclose(f);
  }

 private:
  std::filesystem::path marker(std::string_view kind, const std::string& key) const {
    return prefix(kind, key).string() + ".done";
  }

  std::filesystem::path dir_;
  bool enabled_ = false;
};

}  // namespace rosa::pipeline
