#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mdae/common.hpp"

namespace mdae {

// Single 2-D slice, row-major f32.
struct Image2 {
  int h = 0, w = 0;
  std::vector<float> px;

  Image2() = default;
  Image2(int h_, int w_, float fill = 0.0f)
      : h(h_), w(w_), px(static_cast<std::size_t>(h_) * w_, fill) {}

  float& at(int i, int j) { return px[static_cast<std::size_t>(i) * w + j]; }
  float at(int i, int j) const {
    return px[static_cast<std::size_t>(i) * w + j];
  }
  std::size_t size() const { return px.size(); }
  bool same_dims(const Image2& o) const { return h == o.h && w == o.w; }
};

using ImageStack = std::vector<Image2>;

struct LabelImage {
  int h = 0, w = 0;
  std::vector<std::uint16_t> px;

  LabelImage() = default;
  LabelImage(int h_, int w_)
      : h(h_), w(w_), px(static_cast<std::size_t>(h_) * w_, 0) {}

  std::uint16_t& at(int i, int j) {
    return px[static_cast<std::size_t>(i) * w + j];
  }
  std::uint16_t at(int i, int j) const {
    return px[static_cast<std::size_t>(i) * w + j];
  }
};

using LabelStack = std::vector<LabelImage>;

// Separable Gaussian blur, reflect-101 borders, kernel radius ceil(3*sigma).
// sigma <= 0 returns the input unchanged.
inline Image2 gaussian_blur(const Image2& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;

  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i;
      if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
  };

  Image2 tmp(img.h, img.w), out(img.h, img.w);
  for (int i = 0; i < img.h; ++i)
    for (int j = 0; j < img.w; ++j) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t)
        acc += k[t + radius] * img.at(i, reflect(j + t, img.w));
      tmp.at(i, j) = static_cast<float>(acc);
    }
  for (int i = 0; i < img.h; ++i)
    for (int j = 0; j < img.w; ++j) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t)
        acc += k[t + radius] * tmp.at(reflect(i + t, img.h), j);
      out.at(i, j) = static_cast<float>(acc);
    }
  return out;
}

}  // namespace mdae
