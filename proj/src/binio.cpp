#include "pljp/binio.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <fmt/format.h>

#include "pljp/util.hpp"

namespace pljp {

std::string_view task_name(Task task) {
  switch (task) {
    case Task::article: return "article";
    case Task::charge: return "charge";
    case Task::term: return "term";
  }
  return "unknown";
}

Task parse_task(std::string_view name) {
  for (Task t : kAllTasks) {
    if (task_name(t) == name) return t;
  }
  throw Error(fmt::format("unknown task '{}' (expected article, charge or term)", name));
}

const LabelId& Verdict::operator[](Task task) const {
  switch (task) {
    case Task::article: return article;
    case Task::charge: return charge;
    case Task::term: return term;
  }
  return term;
}

LabelId& Verdict::operator[](Task task) {
  return const_cast<LabelId&>(static_cast<const Verdict&>(*this)[task]);
}

std::string hex64(std::uint64_t value) { return fmt::format("{:016x}", value); }

void BinaryWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void BinaryWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void BinaryWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void BinaryWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void BinaryWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  raw(s);
}

void BinaryWriter::f64s(std::span<const double> values) {
  for (double v : values) f64(v);
}

void BinaryWriter::f32s(std::span<const float> values) {
  for (float v : values) f32(v);
}

void BinaryWriter::write_file(const std::filesystem::path& path) const {
  pljp::write_file(path, bytes_);
}

BinaryReader BinaryReader::from_file(const std::filesystem::path& path) {
  return BinaryReader(read_file(path));
}

void BinaryReader::need(std::size_t n) const {
  if (bytes_.size() - pos_ < n) {
    throw Error(fmt::format("truncated binary data: need {} bytes at offset {}", n, pos_));
  }
}

std::uint8_t BinaryReader::u8() {
  need(1);
  return static_cast<std::uint8_t>(bytes_[pos_++]);
}

std::uint32_t BinaryReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
  return v;
}

std::uint64_t BinaryReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
  return v;
}

float BinaryReader::f32() { return std::bit_cast<float>(u32()); }
double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

std::string BinaryReader::raw(std::size_t n) {
  need(n);
  std::string out = bytes_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::string BinaryReader::str() { return raw(u32()); }

std::vector<double> BinaryReader::f64s(std::size_t n) {
  need(n * 8);
  std::vector<double> out(n);
  for (auto& v : out) v = f64();
  return out;
}

std::vector<float> BinaryReader::f32s(std::size_t n) {
  need(n * 4);
  std::vector<float> out(n);
  for (auto& v : out) v = f32();
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open '{}'", path.string()));
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw Error(fmt::format("write failed for '{}'", path.string()));
}

}  // namespace pljp
