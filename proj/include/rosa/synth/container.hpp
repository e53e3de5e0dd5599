#pragma once

// One subject per file:
//   "ROSAC1" | u32 version | f64 f0, B, K, T_r, F | u32 n | f64 c, lambda0
//   | u64 chirps | f32 (re, im) x n x chirps, chirp-major
//   | u64 spo2 count | u8 spo2[]
//   | u64 text length | text block (id, duration, range, events, hypnogram)
//   | u32 CRC-32 of every preceding byte
// all little-endian. A JSON sidecar (<file>.json) mirrors the labels.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "rosa/core/binary_io.hpp"
#include "rosa/synth/generate.hpp"

namespace rosa::synth {

inline constexpr char kCohortMagic[6] = {'R', 'O', 'S', 'A', 'C', '1'};
inline constexpr std::uint32_t kCohortVersion = 1;
inline constexpr const char* kCohortExtension = ".rosac";

enum class CohortErrorCode { Io, BadMagic, VersionMismatch, Truncated, Checksum, Malformed };

class CohortError : public Error {
 public:
  CohortError(CohortErrorCode code, const std::string& what) : Error(what), code_(code) {}
  CohortErrorCode code() const { return code_; }

 private:
  CohortErrorCode code_;
};

namespace detail {

inline std::string fmt_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string label_text(const SubjectRecord& r) {
  std::ostringstream os;
  os << "id " << r.id << '\n';
  os << "duration " << fmt_g17(r.duration) << '\n';
  os << "bed_range " << fmt_g17(r.bed_range) << '\n';
  os << "events " << r.truth_events.size() << '\n';
  for (const auto& e : r.truth_events) os << to_string(e.kind) << ' ' << fmt_g17(e.t_start) << ' ' << fmt_g17(e.t_end) << '\n';
  os << "epoch_len " << fmt_g17(r.truth_hypnogram.epoch_len) << '\n';
  os << "hypnogram " << r.truth_hypnogram.size() << '\n';
  for (std::size_t i = 0; i < r.truth_hypnogram.size(); ++i) os << (i ? " " : "") << to_string(r.truth_hypnogram.stages[i]);
  os << '\n';
  return os.str();
}

inline void parse_label_text(const std::string& text, SubjectRecord& r) {
  std::istringstream is(text);
  auto expect = [&](const char* key) {
    std::string k;
    if (!(is >> k) || k != key) throw CohortError(CohortErrorCode::Malformed, std::string("label block: expected ") + key);
  };
  expect("id");
  is.get();
  std::getline(is, r.id);
  expect("duration");
  is >> r.duration;
  expect("bed_range");
  is >> r.bed_range;
  expect("events");
  std::size_t n = 0;
  is >> n;
  r.truth_events.clear();
  for (std::size_t i = 0; i < n; ++i) {
    std::string kind;
    AnnotatedEvent e;
    is >> kind >> e.t_start >> e.t_end;
    if (!is) throw CohortError(CohortErrorCode::Malformed, "label block: bad event line");
    e.kind = parse_event_kind(kind);
    r.truth_events.push_back(e);
  }
  expect("epoch_len");
  is >> r.truth_hypnogram.epoch_len;
  expect("hypnogram");
  is >> n;
  r.truth_hypnogram.stages.clear();
  for (std::size_t i = 0; i < n; ++i) {
    std::string s;
    is >> s;
    r.truth_hypnogram.stages.push_back(parse_stage(s));
  }
  if (!is) throw CohortError(CohortErrorCode::Malformed, "label block: truncated");
}

/// Streams bytes to a file while accumulating the CRC.
class CrcFileWriter {
 public:
  explicit CrcFileWriter(const std::filesystem::path& p) : out_(p, std::ios::binary) {
    if (!out_) throw CohortError(CohortErrorCode::Io, "cannot open " + p.string() + " for writing");
  }
  void write(const unsigned char* data, std::size_t n) {
    crc_ = ::crc32(crc_, data, static_cast<uInt>(n));
    out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
  }
  void write(const std::vector<unsigned char>& b) { write(b.data(), b.size()); }
  void finish() {
    io::ByteWriter w;
    w.put<std::uint32_t>(static_cast<std::uint32_t>(crc_));
    out_.write(reinterpret_cast<const char*>(w.buffer().data()), 4);
    out_.close();
    if (!out_) throw CohortError(CohortErrorCode::Io, "write failed");
  }

 private:
  std::ofstream out_;
  uLong crc_ = ::crc32(0L, Z_NULL, 0);
};

}  // namespace detail

inline nlohmann::json record_sidecar(const SubjectRecord& r) {
  nlohmann::json ev = nlohmann::json::array();
  for (const auto& e : r.truth_events) ev.push_back({{"kind", to_string(e.kind)}, {"t_start", e.t_start}, {"t_end", e.t_end}});
  std::vector<std::string> hyp;
  for (auto s : r.truth_hypnogram.stages) hyp.emplace_back(to_string(s));
  const auto& c = r.config;
  return {{"format", "ROSAC1"},
          {"version", kCohortVersion},
          {"id", r.id},
          {"duration_s", r.duration},
          {"bed_range_m", r.bed_range},
          {"radar", {{"f0", c.f0}, {"B", c.B}, {"K", c.K}, {"T_r", c.T_r}, {"F", c.F}, {"n", c.n}, {"c", c.c}, {"lambda0", c.lambda0}}},
          {"chirps", r.beat.chirps},
          {"spo2_samples", r.spo2.size()},
          {"events", ev},
          {"epoch_len_s", r.truth_hypnogram.epoch_len},
          {"hypnogram", hyp}};
}

inline void save_subject(const std::filesystem::path& path, const SubjectRecord& r) {
  detail::CrcFileWriter out(path);
  io::ByteWriter head;
  head.put_bytes(std::string_view(kCohortMagic, 6));
  head.put<std::uint32_t>(kCohortVersion);
  const auto& c = r.config;
  for (double v : {c.f0, c.B, c.K, c.T_r, c.F}) head.put<double>(v);
  head.put<std::uint32_t>(c.n);
  head.put<double>(c.c);
  head.put<double>(c.lambda0);
  head.put<std::uint64_t>(r.beat.chirps);
  out.write(head.buffer());

  // Samples in bounded chunks to keep peak memory flat on long recordings.
  const std::size_t chunk = 1 << 16;
  for (std::size_t i = 0; i < r.beat.samples.size(); i += chunk) {
    const std::size_t m = std::min(chunk, r.beat.samples.size() - i);
    io::ByteWriter w;
    w.put_array<float>(std::span<const float>(reinterpret_cast<const float*>(r.beat.samples.data() + i), 2 * m));
    out.write(w.buffer());
  }
  io::ByteWriter tail;
  tail.put<std::uint64_t>(r.spo2.size());
  tail.put_array<std::uint8_t>(r.spo2.values);
  const auto text = detail::label_text(r);
  tail.put<std::uint64_t>(text.size());
  tail.put_bytes(text);
  out.write(tail.buffer());
  out.finish();

  std::ofstream side(path.string() + ".json");
  side << record_sidecar(r).dump(2) << '\n';
}

inline SubjectRecord load_subject(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CohortError(CohortErrorCode::Io, "cannot open " + path.string());
  const std::vector<unsigned char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  auto truncated = [&] { return CohortError(CohortErrorCode::Truncated, where + "truncated file"); };

  io::ByteReader r(blob);
  std::string magic;
  if (!r.get_bytes(6, magic)) throw truncated();
  if (magic != std::string_view(kCohortMagic, 6)) throw CohortError(CohortErrorCode::BadMagic, where + "not a cohort file");
  std::uint32_t version = 0;
  if (!r.get(version)) throw truncated();
  if (version != kCohortVersion) {
    throw CohortError(CohortErrorCode::VersionMismatch,
                      where + "container version " + std::to_string(version) + ", expected " + std::to_string(kCohortVersion));
  }
  SubjectRecord rec;
  auto& c = rec.config;
  std::uint64_t chirps = 0;
  if (!(r.get(c.f0) && r.get(c.B) && r.get(c.K) && r.get(c.T_r) && r.get(c.F) && r.get(c.n) && r.get(c.c) &&
        r.get(c.lambda0) && r.get(chirps))) {
    throw truncated();
  }
  if (c.n == 0 || chirps > r.remaining() / (8 * static_cast<std::uint64_t>(c.n))) throw truncated();
  rec.beat.n = c.n;
  rec.beat.chirps = chirps;
  rec.beat.samples.resize(c.n * chirps);
  if (!r.get_array<float>(std::span<float>(reinterpret_cast<float*>(rec.beat.samples.data()), 2 * rec.beat.samples.size()))) {
    throw truncated();
  }
  std::uint64_t ns = 0;
  if (!r.get(ns) || ns > r.remaining()) throw truncated();
  rec.spo2.values.resize(ns);
  r.get_array<std::uint8_t>(rec.spo2.values);
  std::uint64_t nt = 0;
  std::string text;
  if (!r.get(nt) || nt > r.remaining() || !r.get_bytes(nt, text)) throw truncated();
  std::uint32_t stored = 0;
  const std::size_t body = r.position();
  if (!r.get(stored)) throw truncated();
  const auto crc = ::crc32(::crc32(0L, Z_NULL, 0), blob.data(), static_cast<uInt>(body));
  if (crc != stored) throw CohortError(CohortErrorCode::Checksum, where + "CRC-32 mismatch");
  if (r.remaining() != 0) throw CohortError(CohortErrorCode::Malformed, where + "trailing bytes after checksum");
  detail::parse_label_text(text, rec);
  return rec;
}

/// Writes <dir>/<id>.rosac (+ sidecar) per record.
inline void save_cohort(const std::filesystem::path& dir, const std::vector<SubjectRecord>& records) {
  std::filesystem::create_directories(dir);
  for (const auto& r : records) save_subject(dir / (r.id + kCohortExtension), r);
}

/// Loads every .rosac file in `dir`, ordered by file name.
inline std::vector<SubjectRecord> load_cohort(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == kCohortExtension) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<SubjectRecord> out;
  for (const auto& f : files) out.push_back(load_subject(f));
  return out;
}

inline bool same_contents(const SubjectRecord& a, const SubjectRecord& b) {
  return a.id == b.id && a.config == b.config && a.bed_range == b.bed_range && a.duration == b.duration &&
         a.beat == b.beat && a.spo2 == b.spo2 && a.truth_events == b.truth_events && a.truth_hypnogram == b.truth_hypnogram;
}

}  // namespace rosa::synth
