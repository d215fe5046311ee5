#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "mdae/common.hpp"

// Little-endian byte building/parsing. Files are assembled in memory and
// written through a temp-file + rename so readers never see partial state.

namespace mdae::detail {

struct ByteWriter {
  std::string buf;

  void u8(std::uint8_t v) { buf.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
      buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void bytes(const void* p, std::size_t n) {
    buf.append(static_cast<const char*>(p), n);
  }
  void zeros(std::size_t n) { buf.append(n, '\0'); }
};

class ByteReader {
 public:
  ByteReader(const std::string& data, std::string origin)
      : data_(data), origin_(std::move(origin)) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint8_t>(data_[pos_]) |
                      (static_cast<std::uint16_t>(
                           static_cast<std::uint8_t>(data_[pos_ + 1]))
                       << 8);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(
               static_cast<std::uint8_t>(data_[pos_ + i]))
           << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  void skip(std::size_t n) { need(n); pos_ += n; }
  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }

  [[noreturn]] void fail(const std::string& what) const {
    throw format_error(origin_ + ": " + what + " at byte " +
                       std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size())
      throw format_error(origin_ + ": truncated, wanted " + std::to_string(n) +
                         " bytes at byte " + std::to_string(pos_) + " of " +
                         std::to_string(data_.size()));
  }

  const std::string& data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error(path + ": cannot open");
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return data;
}

inline void atomic_write_file(const std::string& path,
                              const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw format_error(tmp + ": cannot open for write");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw format_error(tmp + ": write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw format_error(path + ": rename failed: " + ec.message());
}

}  // namespace mdae::detail
