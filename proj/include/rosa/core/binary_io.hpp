#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace rosa::io {

namespace detail {
template <typename T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}
}  // namespace detail

/// Appends little-endian encodings to a byte buffer.
class ByteWriter {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    v = detail::byteswap_if_big(v);
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put_array(std::span<const T> values) {
    if constexpr (std::endian::native == std::endian::little) {
      const auto* p = reinterpret_cast<const unsigned char*>(values.data());
      buf_.insert(buf_.end(), p, p + values.size_bytes());
    } else {
      for (T v : values) put(v);
    }
  }

  void put_bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  std::vector<unsigned char>& buffer() { return buf_; }
  const std::vector<unsigned char>& buffer() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

/// Bounds-checked little-endian reader. `ok()` turns false on the first overrun.
class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> data) : data_(data) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  bool get(T& out) {
    if (remaining() < sizeof(T)) return fail();
    std::memcpy(&out, data_.data() + pos_, sizeof(T));
    out = detail::byteswap_if_big(out);
    pos_ += sizeof(T);
    return true;
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  bool get_array(std::span<T> out) {
    if (remaining() / sizeof(T) < out.size()) return fail();
    std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
    if constexpr (std::endian::native != std::endian::little) {
      for (auto& v : out) v = detail::byteswap_if_big(v);
    }
    pos_ += out.size_bytes();
    return true;
  }

  bool get_bytes(std::size_t n, std::string& out) {
    if (remaining() < n) return fail();
    out.assign(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return true;
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool ok() const { return ok_; }

 private:
  bool fail() {
    ok_ = false;
    return false;
  }
  std::span<const unsigned char> data_;
  std::size_t pos_ = 0;
  bool ok_ = true;
};

}  // namespace rosa::io
