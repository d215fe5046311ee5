#pragma once

#include <cctype>
#include <string>

#include "mdae/binio.hpp"
#include "mdae/image.hpp"

// Binary PGM (P5): 8-bit dumps for visual inspection and an import path for
// 8/16-bit slice stacks. 16-bit payloads are big-endian per the format.

namespace mdae {

inline void write_pgm8(const std::string& path, const Image2& img) {
  detail::ByteWriter w;
  w.buf = "P5\n" + std::to_string(img.w) + " " + std::to_string(img.h) +
          "\n255\n";
  for (float v : img.px) {
    const int q = static_cast<int>(v * 255.0f + 0.5f);
    w.u8(static_cast<std::uint8_t>(std::clamp(q, 0, 255)));
  }
  detail::atomic_write_file(path, w.buf);
}

// Reads P5 with maxval up to 65535; intensities scale to [0, 1].
inline Image2 read_pgm(const std::string& path) {
  const std::string data = detail::read_file(path);
  std::size_t pos = 0;
  auto token = [&]() -> std::string {
    while (pos < data.size()) {
      if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    std::size_t start = pos;
    while (pos < data.size() &&
           !std::isspace(static_cast<unsigned char>(data[pos])))
      ++pos;
    if (start == pos)
      throw format_error(path + ": truncated header at byte " +
                         std::to_string(pos));
    return data.substr(start, pos - start);
  };

  if (token() != "P5") throw format_error(path + ": not a binary PGM (P5)");
  const int w = std::stoi(token());
  const int h = std::stoi(token());
  const int maxval = std::stoi(token());
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535)
    throw format_error(path + ": bad PGM header values");
  ++pos;  // single whitespace after maxval

  const bool wide = maxval > 255;
  const std::size_t need = static_cast<std::size_t>(w) * h * (wide ? 2 : 1);
  if (data.size() - pos < need)
    throw format_error(path + ": truncated payload at byte " +
                       std::to_string(pos));
  Image2 img(h, w);
  for (std::size_t i = 0; i < img.size(); ++i) {
    int raw;
    if (wide) {
      raw = (static_cast<std::uint8_t>(data[pos]) << 8) |
            static_cast<std::uint8_t>(data[pos + 1]);
      pos += 2;
    } else {
      raw = static_cast<std::uint8_t>(data[pos]);
      pos += 1;
    }
    img.px[i] = static_cast<float>(raw) / static_cast<float>(maxval);
  }
  return img;
}

}  // namespace mdae
