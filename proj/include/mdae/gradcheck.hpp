#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mdae/ops.hpp"
#include "mdae/rng.hpp"

// Finite-difference oracle for the differentiable primitives. Everything here
// runs in f64: central differences with step 1e-5 are meaningless at f32
// precision. Analytic backwards are compared element by element against
// numeric derivatives of a random-projection loss.

namespace mdae::gradcheck {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdTolerance = 1e-4;
inline constexpr double kAdjointTolerance = 1e-10;

struct ArgReport {
  std::string name;
  double max_rel_err = 0.0;
};

struct OpReport {
  std::string op;
  double tolerance = kFdTolerance;
  std::vector<ArgReport> args;

  double worst() const {
    double m = 0.0;
    for (const auto& a : args) m = std::max(m, a.max_rel_err);
    return m;
  }
  bool pass() const { return worst() < tolerance; }
};

namespace detail {

inline double rel_err(double analytic, double numeric) {
  const double denom =
      std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
  return std::fabs(analytic - numeric) / denom;
}

// Central-difference probe of one flat parameter array. `loss` re-evaluates
// the scalar objective with the array's current contents. Large arrays are
// subsampled; the probe set is seeded so reports are reproducible.
inline double fd_max_rel_err(double* param, std::size_t size,
                             const double* analytic,
                             const std::function<double()>& loss, Rng& rng,
                             std::size_t max_probes = 160) {
  double worst = 0.0;
  std::vector<std::size_t> idx;
  if (size <= max_probes) {
    idx.resize(size);
    for (std::size_t i = 0; i < size; ++i) idx[i] = i;
  } else {
    idx.resize(max_probes);
    for (auto& i : idx) i = rng.index(size);
  }
  for (std::size_t i : idx) {
    const double keep = param[i];
    param[i] = keep + kFdStep;
    const double lp = loss();
    param[i] = keep - kFdStep;
    const double lm = loss();
    param[i] = keep;
    const double numeric = (lp - lm) / (2.0 * kFdStep);
    worst = std::max(worst, rel_err(analytic[i], numeric));
  }
  return worst;
}

inline Tensor4<double> random_tensor(int n, int c, int h, int w, Rng& rng,
                                     double lo = -1.0, double hi = 1.0) {
  Tensor4<double> t(n, c, h, w);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline std::vector<double> random_vec(int n, Rng& rng, double lo = -1.0,
                                      double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline double dot(const Tensor4<double>& a, const Tensor4<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace detail

inline OpReport check_conv2d(int n, int ic, int h, int w, int oc, int k,
                             std::uint64_t seed) {
  Rng rng(seed, 11);
  auto x = detail::random_tensor(n, ic, h, w, rng);
  auto wt = detail::random_tensor(oc, ic, k, k, rng);
  auto b = detail::random_vec(oc, rng);
  auto proj = detail::random_tensor(n, oc, h, w, rng);
  auto loss = [&] {
    return detail::dot(conv2d<double>(x, wt, b), proj);
  };

  ConvCache<double> cache;
  conv2d<double>(x, wt, b, &cache);
  Tensor4<double> g_w(oc, ic, k, k);
  std::vector<double> g_b(oc, 0.0);
  Tensor4<double> g_x = conv2d_backward(cache, proj, wt, g_w, g_b);

  OpReport rep{"conv2d", kFdTolerance, {}};
  rep.args.push_back({"x", detail::fd_max_rel_err(x.data(), x.size(),
                                                  g_x.data(), loss, rng)});
  rep.args.push_back({"w", detail::fd_max_rel_err(wt.data(), wt.size(),
                                                  g_w.data(), loss, rng)});
  rep.args.push_back({"b", detail::fd_max_rel_err(b.data(), b.size(),
                                                  g_b.data(), loss, rng)});
  return rep;
}

inline OpReport check_maxpool2(int n, int c, int h, int w,
                               std::uint64_t seed) {
  Rng rng(seed, 12);
  auto x = detail::random_tensor(n, c, h, w, rng);
  auto proj = detail::random_tensor(n, c, h / 2, w / 2, rng);
  auto loss = [&] { return detail::dot(maxpool2<double>(x), proj); };

  PoolCache cache;
  maxpool2<double>(x, &cache);
  Tensor4<double> g_x = maxpool2_backward<double>(cache, proj);

  OpReport rep{"maxpool2", kFdTolerance, {}};
  rep.args.push_back({"x", detail::fd_max_rel_err(x.data(), x.size(),
                                                  g_x.data(), loss, rng)});
  return rep;
}

inline OpReport check_upsample_nearest2(int n, int c, int h, int w,
                                        std::uint64_t seed) {
  Rng rng(seed, 13);
  auto x = detail::random_tensor(n, c, h, w, rng);
  auto proj = detail::random_tensor(n, c, 2 * h, 2 * w, rng);
  auto loss = [&] { return detail::dot(upsample_nearest2<double>(x), proj); };

  UpsampleCache cache;
  upsample_nearest2<double>(x, &cache);
  Tensor4<double> g_x = upsample_nearest2_backward<double>(cache, proj);

  OpReport rep{"upsample_nearest2", kFdTolerance, {}};
  rep.args.push_back({"x", detail::fd_max_rel_err(x.data(), x.size(),
                                                  g_x.data(), loss, rng)});
  return rep;
}

inline OpReport check_concat_channels(int n, int ca, int cb, int h, int w,
                                      std::uint64_t seed) {
  Rng rng(seed, 14);
  auto a = detail::random_tensor(n, ca, h, w, rng);
  auto b = detail::random_tensor(n, cb, h, w, rng);
  auto proj = detail::random_tensor(n, ca + cb, h, w, rng);
  auto loss = [&] { return detail::dot(concat_channels(a, b), proj); };

  ConcatCache cache;
  concat_channels(a, b, &cache);
  auto [g_a, g_b] = concat_channels_backward<double>(cache, proj);

  OpReport rep{"concat_channels", kFdTolerance, {}};
  rep.args.push_back({"a", detail::fd_max_rel_err(a.data(), a.size(),
                                                  g_a.data(), loss, rng)});
  rep.args.push_back({"b", detail::fd_max_rel_err(b.data(), b.size(),
                                                  g_b.data(), loss, rng)});
  return rep;
}

inline OpReport check_batchnorm(int n, int c, int h, int w,
                                std::uint64_t seed) {
  Rng rng(seed, 15);
  auto x = detail::random_tensor(n, c, h, w, rng);
  auto gamma = detail::random_vec(c, rng, 0.5, 1.5);
  auto beta = detail::random_vec(c, rng);
  auto proj = detail::random_tensor(n, c, h, w, rng);
  auto loss = [&] {
    std::vector<double> rm(c, 0.0), rv(c, 1.0);
    return detail::dot(batchnorm<double>(x, gamma, beta, rm, rv, false,
                                         Mode::train),
                       proj);
  };

  std::vector<double> rm(c, 0.0), rv(c, 1.0);
  BnCache<double> cache;
  batchnorm<double>(x, gamma, beta, rm, rv, false, Mode::train, &cache);
  std::vector<double> g_gamma(c, 0.0), g_beta(c, 0.0);
  Tensor4<double> g_x =
      batchnorm_backward(cache, proj, gamma, g_gamma, g_beta);

  OpReport rep{"batchnorm", kFdTolerance, {}};
  rep.args.push_back({"x", detail::fd_max_rel_err(x.data(), x.size(),
                                                  g_x.data(), loss, rng)});
  rep.args.push_back({"gamma", detail::fd_max_rel_err(gamma.data(),
                                                      gamma.size(),
                                                      g_gamma.data(), loss,
                                                      rng)});
  rep.args.push_back({"beta", detail::fd_max_rel_err(beta.data(), beta.size(),
                                                     g_beta.data(), loss,
                                                     rng)});
  return rep;
}

// ReLU is probed away from the kink: |x| >= 0.1 keeps the finite-difference
// stencil on one side of zero.
inline OpReport check_relu(int n, int c, int h, int w, std::uint64_t seed) {
  Rng rng(seed, 16);
  Tensor4<double> x(n, c, h, w);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double mag = rng.uniform(0.1, 1.0);
    x[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  auto proj = detail::random_tensor(n, c, h, w, rng);
  auto loss = [&] { return detail::dot(relu(x), proj); };

  ActCache<double> cache;
  relu(x, &cache);
  Tensor4<double> g_x = relu_backward(cache, proj);

  OpReport rep{"relu", kFdTolerance, {}};
  rep.args.push_back({"x", detail::fd_max_rel_err(x.data(), x.size(),
                                                  g_x.data(), loss, rng)});
  return rep;
}

inline OpReport check_sigmoid(int n, int c, int h, int w, std::uint64_t seed) {
  Rng rng(seed, 17);
  auto x = detail::random_tensor(n, c, h, w, rng, -3.0, 3.0);
  auto proj = detail::random_tensor(n, c, h, w, rng);
  auto loss = [&] { return detail::dot(sigmoid(x), proj); };

  ActCache<double> cache;
  sigmoid(x, &cache);
  Tensor4<double> g_x = sigmoid_backward(cache, proj);

  OpReport rep{"sigmoid", kFdTolerance, {}};
  rep.args.push_back({"x", detail::fd_max_rel_err(x.data(), x.size(),
                                                  g_x.data(), loss, rng)});
  return rep;
}

inline OpReport check_mse(int n, int c, int h, int w, std::uint64_t seed) {
  Rng rng(seed, 18);
  auto pred = detail::random_tensor(n, c, h, w, rng);
  auto target = detail::random_tensor(n, c, h, w, rng);
  auto loss = [&] { return mse<double>(pred, target); };

  MseCache<double> cache;
  mse<double>(pred, target, &cache);
  Tensor4<double> g = mse_backward(cache);

  OpReport rep{"mse", kFdTolerance, {}};
  rep.args.push_back({"pred", detail::fd_max_rel_err(pred.data(), pred.size(),
                                                     g.data(), loss, rng)});
  return rep;
}

// ---------------------------------------------------------------------------
// Adjoint identities <L(x), y> == <x, L^T(y)> for the linear maps.

namespace detail {

inline double adjoint_mismatch(double lhs, double rhs) {
  return std::fabs(lhs - rhs) / std::max({std::fabs(lhs), std::fabs(rhs), 1.0});
}

}  // namespace detail

inline OpReport check_adjoints(std::uint64_t seed) {
  Rng rng(seed, 19);
  OpReport rep{"adjoint_identities", kAdjointTolerance, {}};

  {  // conv2d, input route (bias 0 fixed weights) and weight route
    const int n = 2, ic = 3, oc = 4, h = 8, w = 8, k = 3;
    auto x = detail::random_tensor(n, ic, h, w, rng);
    auto wt = detail::random_tensor(oc, ic, k, k, rng);
    std::vector<double> b(oc, 0.0);
    auto y = detail::random_tensor(n, oc, h, w, rng);

    ConvCache<double> cache;
    auto lx = conv2d<double>(x, wt, b, &cache);
    Tensor4<double> g_w(oc, ic, k, k);
    std::vector<double> g_b(oc, 0.0);
    auto g_x = conv2d_backward(cache, y, wt, g_w, g_b);
    rep.args.push_back({"conv2d_x", detail::adjoint_mismatch(
                                        detail::dot(lx, y),
                                        detail::dot(x, g_x))});
    double wg = 0.0;
    for (std::size_t i = 0; i < wt.size(); ++i) wg += wt[i] * g_w[i];
    rep.args.push_back(
        {"conv2d_w", detail::adjoint_mismatch(detail::dot(lx, y), wg)});
  }
  {  // concat
    const int n = 2, ca = 2, cb = 3, h = 6, w = 6;
    auto a = detail::random_tensor(n, ca, h, w, rng);
    auto b = detail::random_tensor(n, cb, h, w, rng);
    auto y = detail::random_tensor(n, ca + cb, h, w, rng);
    ConcatCache cache;
    auto l = concat_channels(a, b, &cache);
    auto [g_a, g_b] = concat_channels_backward<double>(cache, y);
    rep.args.push_back(
        {"concat", detail::adjoint_mismatch(
                       detail::dot(l, y),
                       detail::dot(a, g_a) + detail::dot(b, g_b))});
  }
  {  // upsample
    const int n = 1, c = 2, h = 5, w = 7;
    auto x = detail::random_tensor(n, c, h, w, rng);
    auto y = detail::random_tensor(n, c, 2 * h, 2 * w, rng);
    UpsampleCache cache;
    auto l = upsample_nearest2(x, &cache);
    auto g_x = upsample_nearest2_backward<double>(cache, y);
    rep.args.push_back({"upsample", detail::adjoint_mismatch(
                                        detail::dot(l, y),
                                        detail::dot(x, g_x))});
  }
  {  // maxpool with its argmax pattern frozen is a selection map
    const int n = 1, c = 2, h = 6, w = 6;
    auto x = detail::random_tensor(n, c, h, w, rng);
    auto y = detail::random_tensor(n, c, h / 2, w / 2, rng);
    PoolCache cache;
    auto l = maxpool2<double>(x, &cache);
    auto g_x = maxpool2_backward<double>(cache, y);
    rep.args.push_back({"maxpool2", detail::adjoint_mismatch(
                                        detail::dot(l, y),
                                        detail::dot(x, g_x))});
  }
  return rep;
}

// The default suite behind `gradcheck` in the CLI and the P1 criterion.
inline std::vector<OpReport> run_all(std::uint64_t seed) {
  std::vector<OpReport> reports;
  reports.push_back(check_conv2d(2, 3, 8, 8, 4, 3, seed));
  reports.push_back(check_conv2d(1, 1, 5, 7, 2, 5, seed + 1));
  reports.push_back(check_maxpool2(1, 2, 6, 6, seed));
  reports.push_back(check_upsample_nearest2(2, 2, 4, 5, seed));
  reports.push_back(check_concat_channels(2, 2, 3, 5, 5, seed));
  reports.push_back(check_batchnorm(3, 2, 5, 5, seed));
  reports.push_back(check_relu(2, 2, 6, 6, seed));
  reports.push_back(check_sigmoid(2, 2, 6, 6, seed));
  reports.push_back(check_mse(2, 2, 6, 6, seed));
  reports.push_back(check_adjoints(seed));
  return reports;
}

}  // namespace mdae::gradcheck
