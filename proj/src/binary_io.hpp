#pragma once

// Little-endian byte encoding shared by the corpus and concept-bank formats.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <string>
#include <string_view>

#include "valc/error.hpp"

namespace valc::detail {

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes, std::size_t offset = 0) : bytes_(bytes), pos_(offset) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  bool at_end() const noexcept { return pos_ == bytes_.size(); }

  std::string_view take(std::size_t n, const char* what) {
    if (remaining() < n) {
      throw Error(ErrorKind::TruncatedRecord, std::string("stream ended while reading ") + what);
    }
    std::string_view out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(take(1, what)[0]); }

  std::uint32_t u32(const char* what) {
    auto b = take(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(b[static_cast<std::size_t>(i)]);
    return v;
  }

  std::uint64_t u64(const char* what) {
    auto b = take(8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(b[static_cast<std::size_t>(i)]);
    return v;
  }

  std::int32_t i32(const char* what) { return std::bit_cast<std::int32_t>(u32(what)); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

  std::string str(const char* what) {
    std::uint32_t n = u32(what);
    return std::string(take(n, what));
  }

 private:
  std::string_view bytes_;
  std::size_t pos_;
};

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }

  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }

  void i32(std::int32_t v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  /// Narrows to f32; values outside the f32 range are refused.
  void f32(double v, const char* what) {
    if (!std::isfinite(v) || std::fabs(v) > static_cast<double>(std::numeric_limits<float>::max())) {
      throw Error(ErrorKind::NonFiniteValue, std::string(what) + " is not representable as a finite f32");
    }
    u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }

  void raw(std::string_view bytes) { out_.append(bytes); }

  void str(std::string_view s) {
    if (s.size() > std::numeric_limits<std::uint32_t>::max()) {
      throw Error(ErrorKind::InvalidValue, "string too long for u32 length prefix");
    }
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }

  const std::string& bytes() const noexcept { return out_; }

 private:
  std::string out_;
};

bool is_valid_utf8(std::string_view s) noexcept;

}  // namespace valc::detail
