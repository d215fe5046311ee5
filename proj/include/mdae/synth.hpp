#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mdae/image.hpp"
#include "mdae/metrics.hpp"
#include "mdae/rng.hpp"
#include "mdae/volume.hpp"

// Desk-scale paired data: high-field phantoms built from smooth random
// ellipses with tiered intensities on a black background, degraded to
// low-field counterparts by blur, gamma compression and additive noise.

namespace mdae {

struct SynthParams {
  double blur_sigma = 1.5;
  double gamma = 0.7;
  double noise_sigma = 0.02;
  int size = 64;
  int slices = 20;
  int count = 10;  // subjects
  std::uint64_t seed = 0;

  void validate() const {
    if (blur_sigma <= 0.0) throw contract_error("synth: blur_sigma <= 0");
    if (gamma <= 0.0 || gamma > 1.0)
      throw contract_error("synth: gamma outside (0, 1]");
    if (noise_sigma < 0.0) throw contract_error("synth: noise_sigma < 0");
    if (size < 16) throw contract_error("synth: size < 16");
    if (slices < 1 || count < 1)
      throw contract_error("synth: slices and count must be >= 1");
  }
};

namespace detail {

struct Ellipse {
  double cx, cy, ax, ay, angle;
  float tier;
  std::uint16_t label;

  bool contains(double x, double y, double scale) const {
    const double dx = x - cx, dy = y - cy;
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double u = (dx * ca + dy * sa) / (ax * scale);
    const double v = (-dx * sa + dy * ca) / (ay * scale);
    return u * u + v * v <= 1.0;
  }
};

}  // namespace detail

// The degradation oracle: clamp01(blur(hf, sigma)^gamma + N(0, noise)).
inline Image2 degrade(const Image2& hf, const SynthParams& p, Rng& rng) {
  Image2 lf = gaussian_blur(hf, p.blur_sigma);
  for (float& v : lf.px) {
    double d = static_cast<double>(v);
    if (p.gamma != 1.0) d = d > 0.0 ? std::pow(d, p.gamma) : 0.0;
    if (p.noise_sigma > 0.0) d += p.noise_sigma * rng.normal();
    v = static_cast<float>(std::clamp(d, 0.0, 1.0));
  }
  return lf;
}

// One subject: a large base ellipse with 3..5 inner tiered structures; axes
// shrink toward the first/last slices so the stack has a bounded foreground.
inline SubjectVolume synth_subject(const SynthParams& p, int subject_index) {
  Rng rng(p.seed, 0x70000 + static_cast<std::uint64_t>(subject_index));
  const double s = static_cast<double>(p.size);

  std::vector<detail::Ellipse> shapes;
  shapes.push_back({s * rng.uniform(0.46, 0.54), s * rng.uniform(0.46, 0.54),
                    s * rng.uniform(0.30, 0.40), s * rng.uniform(0.30, 0.40),
                    rng.uniform(0.0, 3.14159265), 0.35f, 1});
  const int inner = 3 + static_cast<int>(rng.index(3));
  static const float kTiers[4] = {0.55f, 0.75f, 0.9f, 1.0f};
  for (int i = 0; i < inner; ++i) {
    const double r = rng.uniform(0.0, 0.18) * s;
    const double th = rng.uniform(0.0, 2.0 * 3.14159265);
    const float tier = kTiers[i % 4];
    shapes.push_back({shapes[0].cx + r * std::cos(th),
                      shapes[0].cy + r * std::sin(th),
                      s * rng.uniform(0.05, 0.16), s * rng.uniform(0.05, 0.16),
                      rng.uniform(0.0, 3.14159265), tier,
                      static_cast<std::uint16_t>(2 + i)});
  }
  // every subject carries one full-intensity structure
  shapes.back().tier = 1.0f;

  SubjectVolume vol;
  vol.id = "s" + std::string(subject_index < 10 ? "0" : "") +
           std::to_string(subject_index);
  Rng noise_rng(p.seed, 0x90000 + static_cast<std::uint64_t>(subject_index));
  for (int z = 0; z < p.slices; ++z) {
    const double rel = p.slices == 1
                           ? 0.0
                           : (z - 0.5 * (p.slices - 1)) / (0.5 * (p.slices + 1));
    const double profile =
        0.35 + 0.65 * std::sqrt(std::max(0.0, 1.0 - rel * rel));
    Image2 hf(p.size, p.size);
    LabelImage lab(p.size, p.size);
    for (int i = 0; i < p.size; ++i)
      for (int j = 0; j < p.size; ++j)
        for (const auto& e : shapes)
          if (e.contains(j + 0.5, i + 0.5, profile)) {
            hf.at(i, j) = e.tier;
            lab.at(i, j) = e.label;
          }
    hf = gaussian_blur(hf, 0.5);  // soften rasterized boundaries
    vol.hf.push_back(hf);
    vol.labels.push_back(std::move(lab));
    vol.lf.push_back(degrade(hf, p, noise_rng));
  }
  return vol;
}

struct SynthResult {
  std::vector<SubjectVolume> subjects;
  // Mean per-slice PSNR of LF against HF after per-volume 0-1 normalization,
  // i.e. exactly what the training pipeline sees. This is the improvement
  // baseline a trained model is measured against.
  double baseline_psnr = 0.0;
};

inline SynthResult synth_generate(const SynthParams& p) {
  p.validate();
  SynthResult out;
  double psnr_sum = 0.0;
  long long n_slices = 0;
  for (int s = 0; s < p.count; ++s) {
    out.subjects.push_back(synth_subject(p, s));
    Volume lf = out.subjects.back().lf;
    Volume hf = out.subjects.back().hf;
    normalize_01(lf);
    normalize_01(hf);
    for (std::size_t z = 0; z < lf.size(); ++z) {
      psnr_sum += psnr(lf[z], hf[z], 1.0);
      ++n_slices;
    }
  }
  out.baseline_psnr = psnr_sum / static_cast<double>(n_slices);
  return out;
}

}  // namespace mdae
