#pragma once

// Little-endian byte buffers for the PAHE / PAHM / PAHP file formats.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pahnet/errors.hpp"

namespace pahnet {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

class ByteWriter {
 public:
  void magic(std::string_view tag);
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void raw(std::span<const std::uint8_t> data);
  void f64s(std::span<const double> data);

  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string source)
      : bytes_(bytes), source_(std::move(source)) {}

  /// Throws ParseError::BadMagic if the next bytes are not `tag`.
  void expect_magic(std::string_view tag);
  /// Throws ParseError::Truncated naming `expected_total` if fewer than
  /// `expected_total` bytes exist in the buffer.
  void require_total(std::size_t expected_total, std::string_view what) const;

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void raw(std::span<std::uint8_t> out);
  void f64s(std::span<double> out);

  std::size_t offset() const noexcept { return offset_; }
  std::size_t remaining() const noexcept { return bytes_.size() - offset_; }
  std::size_t total() const noexcept { return bytes_.size(); }
  const std::string& source() const noexcept { return source_; }

 private:
  void need(std::size_t n);

  std::span<const std::uint8_t> bytes_;
  std::string source_;
  std::size_t offset_ = 0;
};

}  // namespace pahnet
