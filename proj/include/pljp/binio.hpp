#pragma once

// Little-endian binary serialization for model and index files.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pljp/types.hpp"

namespace pljp {

class BinaryWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v);
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void raw(std::string_view bytes) { bytes_.append(bytes); }
  /// u32 length prefix followed by the bytes.
  void str(std::string_view s);
  void f64s(std::span<const double> values);
  void f32s(std::span<const float> values);

  const std::string& bytes() const { return bytes_; }
  void write_file(const std::filesystem::path& path) const;

 private:
  std::string bytes_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::string bytes) : bytes_(std::move(bytes)) {}
  static BinaryReader from_file(const std::filesystem::path& path);

  std::uint8_t u8();
  std::uint32_t u32();
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::uint64_t u64();
  float f32();
  double f64();
  std::string raw(std::size_t n);
  std::string str();
  std::vector<double> f64s(std::size_t n);
  std::vector<float> f32s(std::size_t n);

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const;

  std::string bytes_;
  std::size_t pos_ = 0;
};

/// Whole-file read; throws pljp::Error when the file cannot be opened.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace pljp
