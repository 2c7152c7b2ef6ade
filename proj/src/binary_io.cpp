#include "pahnet/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace pahnet {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error while reading " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error while writing " + path.string());
}

void ByteWriter::magic(std::string_view tag) {
  for (char c : tag) bytes_.push_back(static_cast<std::uint8_t>(c));
}

void ByteWriter::u16(std::uint16_t v) {
  for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::raw(std::span<const std::uint8_t> data) {
  bytes_.insert(bytes_.end(), data.begin(), data.end());
}

void ByteWriter::f64s(std::span<const double> data) {
  bytes_.reserve(bytes_.size() + 8 * data.size());
  for (double v : data) f64(v);
}

void ByteReader::need(std::size_t n) {
  if (remaining() < n) {
    throw ParseError(ParseError::Kind::Truncated,
                     source_ + ": truncated, needed " + std::to_string(offset_ + n) +
                         " bytes but the file has " + std::to_string(bytes_.size()));
  }
}

void ByteReader::expect_magic(std::string_view tag) {
  if (remaining() < tag.size() ||
      std::memcmp(bytes_.data() + offset_, tag.data(), tag.size()) != 0) {
    throw ParseError(ParseError::Kind::BadMagic,
                     source_ + ": bad magic, expected \"" + std::string(tag) + "\"");
  }
  offset_ += tag.size();
}

void ByteReader::require_total(std::size_t expected_total, std::string_view what) const {
  if (bytes_.size() < expected_total) {
    throw ParseError(ParseError::Kind::Truncated,
                     source_ + ": truncated " + std::string(what) + ", expected " +
                         std::to_string(expected_total) + " bytes but the file has " +
                         std::to_string(bytes_.size()));
  }
}

std::uint8_t ByteReader::u8() {
  need(1);
  return bytes_[offset_++];
}

std::uint16_t ByteReader::u16() {
  need(2);
  std::uint16_t v = 0;
  for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(bytes_[offset_++]) << (8 * i);
  return v;
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[offset_++]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[offset_++]) << (8 * i);
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

void ByteReader::raw(std::span<std::uint8_t> out) {
  need(out.size());
  std::memcpy(out.data(), bytes_.data() + offset_, out.size());
  offset_ += out.size();
}

void ByteReader::f64s(std::span<double> out) {
  need(8 * out.size());
  for (double& v : out) v = f64();
}

}  // namespace pahnet
