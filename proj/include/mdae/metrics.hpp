#pragma once

#include <algorithm>
#include <array>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdae/image.hpp"

// Reconstruction quality metrics: PSNR, SSIM, edge-profile sharpness and
// width, histogram matching, dice overlap, and the per-volume report.

namespace mdae {

inline double mse_images(const Image2& a, const Image2& b) {
  if (!a.same_dims(b))
    throw shape_error("mse: image dims " + std::to_string(a.h) + "x" +
                      std::to_string(a.w) + " vs " + std::to_string(b.h) +
                      "x" + std::to_string(b.w));
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.px[i]) - b.px[i];
    acc += d * d;
  }
  return a.size() == 0 ? 0.0 : acc / static_cast<double>(a.size());
}

// 10*log10(range^2 / mse); identical images give +inf (serialized "inf").
inline double psnr(const Image2& a, const Image2& b, double data_range) {
  if (data_range <= 0.0) throw contract_error("psnr: data_range <= 0");
  const double m = mse_images(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / m);
}

inline double psnr(const ImageStack& a, const ImageStack& b,
                   double data_range) {
  if (a.size() != b.size())
    throw shape_error("psnr: slice counts " + std::to_string(a.size()) +
                      " vs " + std::to_string(b.size()));
  if (data_range <= 0.0) throw contract_error("psnr: data_range <= 0");
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < a.size(); ++s) {
    acc += mse_images(a[s], b[s]) * static_cast<double>(a[s].size());
    count += a[s].size();
  }
  const double m = count ? acc / static_cast<double>(count) : 0.0;
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / m);
}

// ---------------------------------------------------------------------------
// SSIM: 11x11 Gaussian window sigma 1.5, K1 0.01, K2 0.03, valid windows only.

inline double ssim(const Image2& a, const Image2& b, double data_range = 1.0) {
  constexpr int kWin = 11, kRad = 5;
  constexpr double kSigma = 1.5, kK1 = 0.01, kK2 = 0.03;
  if (!a.same_dims(b))
    throw shape_error("ssim: image dims differ");
  if (a.h < kWin || a.w < kWin)
    throw contract_error("ssim: image " + std::to_string(a.h) + "x" +
                         std::to_string(a.w) + " smaller than 11x11 window");

  std::array<double, kWin> k;
  double sum = 0.0;
  for (int i = -kRad; i <= kRad; ++i) {
    k[i + kRad] = std::exp(-0.5 * i * i / (kSigma * kSigma));
    sum += k[i + kRad];
  }
  for (double& v : k) v /= sum;

  const double c1 = kK1 * data_range * kK1 * data_range;
  const double c2 = kK2 * data_range * kK2 * data_range;

  // horizontal pass over the five products, valid columns only
  const int vw = a.w - 2 * kRad, vh = a.h - 2 * kRad;
  std::vector<double> ha(a.h * vw), hb(a.h * vw), haa(a.h * vw),
      hbb(a.h * vw), hab(a.h * vw);
  for (int i = 0; i < a.h; ++i)
    for (int j = 0; j < vw; ++j) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (int t = 0; t < kWin; ++t) {
        const double va = a.at(i, j + t), vb = b.at(i, j + t);
        sa += k[t] * va;
        sb += k[t] * vb;
        saa += k[t] * va * va;
        sbb += k[t] * vb * vb;
        sab += k[t] * va * vb;
      }
      const std::size_t o = static_cast<std::size_t>(i) * vw + j;
      ha[o] = sa;
      hb[o] = sb;
      haa[o] = saa;
      hbb[o] = sbb;
      hab[o] = sab;
    }

  double total = 0.0;
  for (int i = 0; i < vh; ++i)
    for (int j = 0; j < vw; ++j) {
      double mu_a = 0, mu_b = 0, saa = 0, sbb = 0, sab = 0;
      for (int t = 0; t < kWin; ++t) {
        const std::size_t o = static_cast<std::size_t>(i + t) * vw + j;
        mu_a += k[t] * ha[o];
        mu_b += k[t] * hb[o];
        saa += k[t] * haa[o];
        sbb += k[t] * hbb[o];
        sab += k[t] * hab[o];
      }
      const double va = saa - mu_a * mu_a;
      const double vb = sbb - mu_b * mu_b;
      const double cov = sab - mu_a * mu_b;
      total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
    }
  return total / (static_cast<double>(vh) * vw);
}

// ---------------------------------------------------------------------------
// Edge-profile statistics. Sobel magnitude, Otsu threshold inside the mask,
// then a 1-D profile trace along the quantized gradient direction per edge
// pixel: width is the pixel distance between the 10% and 90% levels of the
// local transition, sharpness the transition height over that width.

struct EdgeStats {
  double sharpness = 0.0;
  double edge_width = 0.0;  // mean width normalized by the image diagonal
  int edge_pixels = 0;
  bool empty = false;  // no edge pixels found
};

namespace detail {

inline double otsu_threshold(const std::vector<double>& values, double lo,
                             double hi) {
  constexpr int kBins = 256;
  if (values.empty() || hi <= lo) return lo;
  std::array<long long, kBins> hist{};
  for (double v : values) {
    int b = static_cast<int>((v - lo) / (hi - lo) * kBins);
    hist[std::clamp(b, 0, kBins - 1)]++;
  }
  const double n = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (int b = 0; b < kBins; ++b) sum_all += b * static_cast<double>(hist[b]);
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_bin = 0;
  for (int b = 0; b < kBins; ++b) {
    w0 += static_cast<double>(hist[b]);
    if (w0 == 0.0) continue;
    const double w1 = n - w0;
    if (w1 == 0.0) break;
    sum0 += b * static_cast<double>(hist[b]);
    const double mu0 = sum0 / w0, mu1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (between > best) {
      best = between;
      best_bin = b;
    }
  }
  return lo + (best_bin + 1) * (hi - lo) / kBins;
}

}  // namespace detail

inline EdgeStats edge_profile_stats(const Image2& img,
                                    const std::vector<std::uint8_t>& mask) {
  if (static_cast<int>(mask.size()) != img.h * img.w)
    throw shape_error("edge_profile_stats: mask size != image size");

  const int h = img.h, w = img.w;
  std::vector<float> gx(img.size(), 0.0f), gy(img.size(), 0.0f);
  std::vector<double> mag(img.size(), 0.0);
  std::vector<double> masked_mags;
  double max_mag = 0.0;
  for (int i = 1; i < h - 1; ++i)
    for (int j = 1; j < w - 1; ++j) {
      const double sx = (img.at(i - 1, j + 1) + 2.0 * img.at(i, j + 1) +
                         img.at(i + 1, j + 1)) -
                        (img.at(i - 1, j - 1) + 2.0 * img.at(i, j - 1) +
                         img.at(i + 1, j - 1));
      const double sy = (img.at(i + 1, j - 1) + 2.0 * img.at(i + 1, j) +
                         img.at(i + 1, j + 1)) -
                        (img.at(i - 1, j - 1) + 2.0 * img.at(i - 1, j) +
                         img.at(i - 1, j + 1));
      const std::size_t o = static_cast<std::size_t>(i) * w + j;
      gx[o] = static_cast<float>(sx);
      gy[o] = static_cast<float>(sy);
      mag[o] = std::sqrt(sx * sx + sy * sy);
      if (mask[o]) {
        masked_mags.push_back(mag[o]);
        max_mag = std::max(max_mag, mag[o]);
      }
    }

  EdgeStats stats;
  if (masked_mags.empty() || max_mag == 0.0) {
    stats.empty = true;
    return stats;
  }
  const double thresh = detail::otsu_threshold(masked_mags, 0.0, max_mag);

  // 8 quantized directions and their step lengths
  static const int kDx[8] = {1, 1, 0, -1, -1, -1, 0, 1};
  static const int kDy[8] = {0, 1, 1, 1, 0, -1, -1, -1};
  const double kSqrt2 = std::sqrt(2.0);

  double width_sum = 0.0, sharp_sum = 0.0;
  int edges = 0;
  for (int i = 1; i < h - 1; ++i)
    for (int j = 1; j < w - 1; ++j) {
      const std::size_t o = static_cast<std::size_t>(i) * w + j;
      if (!mask[o] || mag[o] <= thresh) continue;
      const double ang = std::atan2(gy[o], gx[o]);
      int dir = static_cast<int>(std::lround(ang / (3.14159265358979 / 4)));
      dir = ((dir % 8) + 8) % 8;
      const int dx = kDx[dir], dy = kDy[dir];
      const double step = (dx != 0 && dy != 0) ? kSqrt2 : 1.0;

      // climb uphill (+gradient) to the local max, downhill to the local min
      auto trace = [&](int sgn) {
        int ci = i, cj = j;
        std::vector<float> prof{img.at(ci, cj)};
        while (true) {
          const int ni = ci + sgn * dy, nj = cj + sgn * dx;
          if (ni < 0 || ni >= h || nj < 0 || nj >= w) break;
          const float nxt = img.at(ni, nj);
          if (sgn > 0 ? nxt <= prof.back() : nxt >= prof.back()) break;
          prof.push_back(nxt);
          ci = ni;
          cj = nj;
        }
        return prof;
      };
      const auto up = trace(+1);
      const auto down = trace(-1);

      // monotone profile from the min end to the max end
      std::vector<float> prof(down.rbegin(), down.rend());
      prof.insert(prof.end(), up.begin() + 1, up.end());
      const double lo = prof.front(), hi = prof.back();
      if (hi <= lo || prof.size() < 2) continue;
      const double l10 = lo + 0.1 * (hi - lo), l90 = lo + 0.9 * (hi - lo);
      // sub-pixel crossing positions; a hard one-pixel step measures 0.8 px,
      // the 10-90 fraction of its single-sample transition
      auto crossing = [&prof](double level) {
        int k = 0;
        while (k + 1 < static_cast<int>(prof.size()) && prof[k + 1] <= level)
          ++k;
        if (k + 1 == static_cast<int>(prof.size())) return static_cast<double>(k);
        return k + (level - prof[k]) / (prof[k + 1] - prof[k]);
      };
      const double width_px = (crossing(l90) - crossing(l10)) * step;
      if (width_px <= 0.0) continue;
      width_sum += width_px;
      sharp_sum += (hi - lo) / width_px;
      ++edges;
    }

  if (edges == 0) {
    stats.empty = true;
    return stats;
  }
  const double diagonal = std::sqrt(static_cast<double>(h) * h +
                                    static_cast<double>(w) * w);
  stats.edge_pixels = edges;
  stats.edge_width = (width_sum / edges) / diagonal;
  stats.sharpness = sharp_sum / edges;
  return stats;
}

// ---------------------------------------------------------------------------
// Histogram matching. Source intensities pass through the empirical source
// CDF (mid-rank over ties, so the mapping stays a function of intensity) and
// then through the piecewise-linear inverse of the reference's 256-bin CDF.

inline Image2 histogram_match(const Image2& src, const Image2& ref,
                              int bins = 256) {
  if (bins < 2) throw contract_error("histogram_match: bins < 2");
  if (src.size() == 0) return src;
  std::vector<double> hr(bins, 0.0);
  auto bin_of = [bins](float v) {
    int b = static_cast<int>(v * bins);
    return std::clamp(b, 0, bins - 1);
  };
  for (float v : ref.px) hr[bin_of(v)] += 1.0;
  std::vector<double> cr(bins);
  double acc = 0.0;
  for (int b = 0; b < bins; ++b) {
    acc += hr[b];
    cr[b] = acc;
  }
  const double ns = static_cast<double>(src.size());
  const double nr = cr[bins - 1];

  std::vector<std::size_t> order(src.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&src](std::size_t a, std::size_t b) {
                     return src.px[a] < src.px[b];
                   });

  Image2 out(src.h, src.w);
  std::size_t run = 0;
  while (run < order.size()) {
    std::size_t end = run;
    while (end + 1 < order.size() &&
           src.px[order[end + 1]] == src.px[order[run]])
      ++end;
    const double p = (static_cast<double>(run) + end + 1.0) * 0.5 / ns;
    // inverse reference CDF: first mass-bearing bin whose cumulative reaches
    // the transported mass, linear within that bin
    const double target = p * nr;
    int j = static_cast<int>(std::lower_bound(cr.begin(), cr.end(), target) -
                             cr.begin());
    j = std::min(j, bins - 1);
    while (hr[j] == 0.0 && j + 1 < bins) ++j;
    double t_frac =
        hr[j] > 0.0 ? (target - (j > 0 ? cr[j - 1] : 0.0)) / hr[j] : 0.0;
    t_frac = std::clamp(t_frac, 0.0, 1.0);
    const float mapped = static_cast<float>((j + t_frac) / bins);
    for (std::size_t k = run; k <= end; ++k) out.px[order[k]] = mapped;
    run = end + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dice overlap 2|A n B| / (|A| + |B|); both-empty counts as perfect overlap.

inline double dice(const LabelImage& a, const LabelImage& b, int class_id) {
  if (a.h != b.h || a.w != b.w)
    throw shape_error("dice: label dims " + std::to_string(a.h) + "x" +
                      std::to_string(a.w) + " vs " + std::to_string(b.h) +
                      "x" + std::to_string(b.w));
  long long na = 0, nb = 0, inter = 0;
  for (std::size_t i = 0; i < a.px.size(); ++i) {
    const bool ia = a.px[i] == class_id, ib = b.px[i] == class_id;
    na += ia;
    nb += ib;
    inter += ia && ib;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

inline double dice(const LabelStack& a, const LabelStack& b, int class_id) {
  if (a.size() != b.size())
    throw shape_error("dice: slice counts differ");
  long long na = 0, nb = 0, inter = 0;
  for (std::size_t s = 0; s < a.size(); ++s) {
    if (a[s].h != b[s].h || a[s].w != b[s].w)
      throw shape_error("dice: slice dims differ");
    for (std::size_t i = 0; i < a[s].px.size(); ++i) {
      const bool ia = a[s].px[i] == class_id, ib = b[s].px[i] == class_id;
      na += ia;
      nb += ib;
      inter += ia && ib;
    }
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

// ---------------------------------------------------------------------------
// Per-volume report.

struct SliceMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
  double sharpness = 0.0;
  double edge_width = 0.0;
  bool edge_empty = false;
};

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;
};

struct MetricReport {
  std::vector<SliceMetrics> slices;
  Aggregate psnr, ssim, sharpness, edge_width;
  std::map<int, double> dice_per_class;
  bool hm_applied = false;
};

namespace detail {

// Mean propagates inf; the spread is taken over the finite entries.
inline Aggregate aggregate(const std::vector<double>& v) {
  Aggregate a;
  if (v.empty()) return a;
  bool any_inf = false;
  std::vector<double> finite;
  for (double x : v) {
    if (std::isinf(x))
      any_inf = true;
    else
      finite.push_back(x);
  }
  if (any_inf) {
    a.mean = std::numeric_limits<double>::infinity();
  } else {
    double s = 0.0;
    for (double x : v) s += x;
    a.mean = s / static_cast<double>(v.size());
  }
  if (!finite.empty()) {
    double m = 0.0;
    for (double x : finite) m += x;
    m /= static_cast<double>(finite.size());
    double q = 0.0;
    for (double x : finite) q += (x - m) * (x - m);
    a.stddev = std::sqrt(q / static_cast<double>(finite.size()));
  }
  return a;
}

}  // namespace detail

struct EvaluateOptions {
  bool apply_hm = false;
  // Normalization record of the truth volume, for computing edge statistics
  // on intensities scaled back to their original range.
  double scale_min = 0.0;
  double scale_max = 1.0;
};

inline MetricReport evaluate_volume(const ImageStack& pred,
                                    const ImageStack& truth,
                                    const ImageStack& lf_ref,
                                    const EvaluateOptions& opts = {}) {
  if (pred.size() != truth.size() ||
      (opts.apply_hm && lf_ref.size() != pred.size()))
    throw shape_error("evaluate_volume: slice counts differ");

  MetricReport rep;
  rep.hm_applied = opts.apply_hm;
  std::vector<double> psnrs, ssims, sharps, widths;
  const double range = opts.scale_max - opts.scale_min;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    Image2 p = opts.apply_hm ? histogram_match(pred[s], lf_ref[s]) : pred[s];
    SliceMetrics m;
    m.psnr = psnr(p, truth[s], 1.0);
    m.ssim = ssim(p, truth[s], 1.0);

    std::vector<std::uint8_t> mask(truth[s].size());
    for (std::size_t i = 0; i < mask.size(); ++i)
      mask[i] = truth[s].px[i] > 0.0f ? 1 : 0;
    Image2 scaled = p;
    if (range != 1.0 || opts.scale_min != 0.0)
      for (float& v : scaled.px)
        v = static_cast<float>(v * range + opts.scale_min);
    const EdgeStats e = edge_profile_stats(scaled, mask);
    m.sharpness = e.sharpness;
    m.edge_width = e.edge_width;
    m.edge_empty = e.empty;

    psnrs.push_back(m.psnr);
    ssims.push_back(m.ssim);
    if (!e.empty) {
      sharps.push_back(m.sharpness);
      widths.push_back(m.edge_width);
    }
    rep.slices.push_back(m);
  }
  rep.psnr = detail::aggregate(psnrs);
  rep.ssim = detail::aggregate(ssims);
  rep.sharpness = detail::aggregate(sharps);
  rep.edge_width = detail::aggregate(widths);
  return rep;
}

// ---------------------------------------------------------------------------
// Serialization. +inf is emitted as the string "inf" in both formats.

inline nlohmann::json metric_value(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline nlohmann::json report_to_json(const MetricReport& rep) {
  nlohmann::json slices = nlohmann::json::array();
  for (const auto& s : rep.slices)
    slices.push_back({{"psnr", metric_value(s.psnr)},
                      {"ssim", s.ssim},
                      {"sharpness", s.sharpness},
                      {"edge_width", s.edge_width},
                      {"edge_empty", s.edge_empty}});
  nlohmann::json j{
      {"hm_applied", rep.hm_applied},
      {"slices", slices},
      {"aggregates",
       {{"psnr", {{"mean", metric_value(rep.psnr.mean)}, {"std", rep.psnr.stddev}}},
        {"ssim", {{"mean", rep.ssim.mean}, {"std", rep.ssim.stddev}}},
        {"sharpness",
         {{"mean", rep.sharpness.mean}, {"std", rep.sharpness.stddev}}},
        {"edge_width",
         {{"mean", rep.edge_width.mean}, {"std", rep.edge_width.stddev}}}}}};
  if (!rep.dice_per_class.empty()) {
    nlohmann::json d;
    for (const auto& [cls, val] : rep.dice_per_class)
      d[std::to_string(cls)] = val;
    j["dice"] = d;
  }
  return j;
}

inline std::string csv_value(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline std::string report_to_csv(const MetricReport& rep) {
  std::string out = "slice,psnr,ssim,sharpness,edge_width,edge_empty\n";
  for (std::size_t s = 0; s < rep.slices.size(); ++s) {
    const auto& m = rep.slices[s];
    out += std::to_string(s) + "," + csv_value(m.psnr) + "," +
           csv_value(m.ssim) + "," + csv_value(m.sharpness) + "," +
           csv_value(m.edge_width) + "," + (m.edge_empty ? "1" : "0") + "\n";
  }
  return out;
}

}  // namespace mdae
