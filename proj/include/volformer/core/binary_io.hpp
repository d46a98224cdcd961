#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "volformer/core/error.hpp"

namespace volformer {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian and written with native byte order");

/// zlib CRC-32 of a byte range.
std::uint32_t crc32_of(const void* data, std::size_t size);

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames, so readers never observe a
/// half-written file.
void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);

class ByteWriter {
 public:
  void raw(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    bytes_.insert(bytes_.end(), p, p + size);
  }
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void text(const std::string& s) { raw(s.data(), s.size()); }

  std::size_t size() const { return bytes_.size(); }
  const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

/// Sequential decoder that reports the byte offset of every failure.
class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& bytes, std::string source)
      : bytes_(bytes), source_(std::move(source)) {}

  const unsigned char* take(std::size_t size, const char* what) {
    if (size > bytes_.size() - offset_) {
      throw ParseError(source_ + ": truncated while reading " + what + " (" + std::to_string(size) +
                           " bytes needed, " + std::to_string(bytes_.size() - offset_) + " left)",
                       offset_);
    }
    const unsigned char* p = bytes_.data() + offset_;
    offset_ += size;
    return p;
  }
  template <typename U>
  U scalar(const char* what) {
    U v;
    std::memcpy(&v, take(sizeof(U), what), sizeof(U));
    return v;
  }
  std::uint8_t u8(const char* what) { return scalar<std::uint8_t>(what); }
  std::uint32_t u32(const char* what) { return scalar<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return scalar<std::uint64_t>(what); }
  std::string text(std::size_t size, const char* what) {
    const unsigned char* p = take(size, what);
    return std::string(reinterpret_cast<const char*>(p), size);
  }

  [[noreturn]] void fail(const std::string& message, std::size_t at) const {
    throw ParseError(source_ + ": " + message, at);
  }

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return bytes_.size() - offset_; }

 private:
  const std::vector<unsigned char>& bytes_;
  std::string source_;
  std::size_t offset_ = 0;
};

}  // namespace volformer
