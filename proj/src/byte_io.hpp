#pragma once

// Little-endian primitive I/O shared by the binary formats.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "vdx/volume.hpp"

namespace vdx::detail {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& out) : out_(out) {}

  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), n); }
  template <typename T>
  void scalar(T v) {
    v = to_little(v);
    bytes(&v, sizeof v);
  }
  void u32(std::uint32_t v) { scalar(v); }
  void i32(std::int32_t v) { scalar(v); }
  void u64(std::uint64_t v) { scalar(v); }
  void f32(float v) { scalar(v); }
  void f64(double v) { scalar(v); }

  template <typename T>
  void array(std::span<const T> v) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(v.data(), v.size_bytes());
    } else {
      for (T x : v) scalar(x);
    }
  }
  void f32_array(std::span<const float> v) { array(v); }

 private:
  std::ostream& out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::istream& in) : in_(in) {
    const auto here = in_.tellg();
    if (here != std::streampos(-1)) {
      in_.seekg(0, std::ios::end);
      end_ = static_cast<std::uint64_t>(in_.tellg());
      in_.seekg(here);
      base_ = static_cast<std::uint64_t>(here);
    }
  }

  std::uint64_t offset() const noexcept { return offset_; }

  /// Bytes left in a seekable stream, if known.
  std::optional<std::uint64_t> remaining() const {
    if (!end_) return std::nullopt;
    return *end_ - base_ - offset_;
  }

  void bytes(void* p, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(p), n);
    const auto got = static_cast<std::size_t>(in_.gcount());
    if (got != n)
      throw FormatError(std::string("truncated input while reading ") + what, offset_ + got);
    offset_ += n;
  }
  template <typename T>
  T scalar(const char* what) {
    T v;
    bytes(&v, sizeof v, what);
    return to_little(v);
  }
  std::uint32_t u32(const char* what) { return scalar<std::uint32_t>(what); }
  std::int32_t i32(const char* what) { return scalar<std::int32_t>(what); }
  std::uint64_t u64(const char* what) { return scalar<std::uint64_t>(what); }
  float f32(const char* what) { return scalar<float>(what); }
  double f64(const char* what) { return scalar<double>(what); }

  template <typename T>
  void array(std::span<T> out, const char* what) {
    bytes(out.data(), out.size_bytes(), what);
    if constexpr (std::endian::native == std::endian::big)
      for (auto& x : out) x = to_little(x);
  }
  void f32_array(std::span<float> out, const char* what) { array(out, what); }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
  std::uint64_t base_ = 0;
  std::optional<std::uint64_t> end_;
};

}  // namespace vdx::detail
