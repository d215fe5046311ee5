#include <gtest/gtest.h>

#include <cmath>

#include "mdae/model.hpp"

using namespace mdae;

namespace {

template <typename T>
Tensor4<T> random_input(int n, int c, int h, int w, std::uint64_t seed,
                        double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor4<T> t(n, c, h, w);
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

ModelSpec tiny_spec(int decoders = 1, bool merge = true) {
  ModelSpec s;
  s.enc_channels = {2, 4, 8};
  s.bottleneck = 16;
  s.decoders = decoders;
  s.merge = merge;
  return s;
}

// Independent parameter tally, written from the layer schedule rather than
// the registry: 3 convs + 3 batchnorms per block, plus the 1-channel head.
long long expected_param_count(const ModelSpec& spec) {
  auto block = [](int in_c, int out_c) {
    long long n = 0;
    for (int l = 0; l < 3; ++l) {
      const int ic = l == 0 ? in_c : out_c;
      n += static_cast<long long>(out_c) * ic * 9 + out_c;  // w + b
      n += 2 * out_c;                                       // gamma + beta
    }
    return n;
  };
  long long total = 0;
  int in_c = spec.in_channels;
  for (int c : spec.enc_channels) {
    total += block(in_c, c);
    in_c = c;
  }
  total += block(in_c, spec.bottleneck);
  const auto dec = spec.dec_channels();
  for (int d = 0; d < spec.decoders; ++d) {
    int cur = spec.bottleneck;
    for (int k = 0; k < spec.depth(); ++k) {
      int bi = cur;
      if (spec.merge) bi += spec.enc_channels[spec.depth() - 1 - k];
      total += block(bi, dec[k]);
      cur = dec[k];
    }
    total += static_cast<long long>(cur) * 9 + 1;  // head
  }
  return total;
}

}  // namespace

TEST(Init, SameSeedGivesIdenticalRegistries) {
  MergedAutoencoder<float> a(tiny_spec(3), 7);
  MergedAutoencoder<float> b(tiny_spec(3), 7);
  ASSERT_EQ(a.registry().size(), b.registry().size());
  for (std::size_t i = 0; i < a.registry().size(); ++i) {
    const auto& pa = a.registry().at(i);
    const auto& pb = b.registry().at(i);
    EXPECT_EQ(pa.name, pb.name);
    ASSERT_EQ(pa.value.size(), pb.value.size());
    for (std::size_t k = 0; k < pa.value.size(); ++k)
      EXPECT_EQ(pa.value[k], pb.value[k]) << pa.name;
  }
}

TEST(Init, DecodersDrawFromDistinctStreams) {
  MergedAutoencoder<float> m(tiny_spec(3), 7);
  const auto& w0 = m.registry()["decoder0/block0/conv0/w"].value;
  const auto& w1 = m.registry()["decoder1/block0/conv0/w"].value;
  bool differ = false;
  for (std::size_t i = 0; i < w0.size(); ++i)
    if (w0[i] != w1[i]) differ = true;
  EXPECT_TRUE(differ);
}

TEST(Init, WeightsRespectFanInBound) {
  MergedAutoencoder<float> m(tiny_spec(2), 9);
  for (const auto& p : m.registry()) {
    if (p.ndim != 4) continue;
    const double bound =
        std::sqrt(6.0 / (static_cast<double>(p.value.c()) * 9));
    for (std::size_t i = 0; i < p.value.size(); ++i)
      ASSERT_LT(std::fabs(p.value[i]), bound) << p.name;
  }
}

TEST(Init, BiasZeroGammaOneBetaZero) {
  MergedAutoencoder<float> m(tiny_spec(1), 3);
  EXPECT_EQ(m.registry()["encoder/block0/conv0/b"].value[0], 0.0f);
  EXPECT_EQ(m.registry()["encoder/block0/bn0/gamma"].value[0], 1.0f);
  EXPECT_EQ(m.registry()["encoder/block0/bn0/beta"].value[0], 0.0f);
  EXPECT_EQ(m.registry()["encoder/block0/bn0/running_var"].value[0], 1.0f);
}

TEST(Encoder, DefaultSpecShapes) {
  MergedAutoencoder<float> m(ModelSpec{}, 1);
  auto x = random_input<float>(1, 1, 64, 64, 11);
  auto enc = m.encoder_forward(x, Mode::train);
  EXPECT_EQ(enc.bottleneck.dims(), dims_str(1, 256, 8, 8));
  ASSERT_EQ(enc.skips.size(), 3u);
  EXPECT_EQ(enc.skips[0].dims(), dims_str(1, 32, 64, 64));
  EXPECT_EQ(enc.skips[1].dims(), dims_str(1, 64, 32, 32));
  EXPECT_EQ(enc.skips[2].dims(), dims_str(1, 128, 16, 16));
}

TEST(Encoder, BatchDimensionCarriesThrough) {
  MergedAutoencoder<float> m(tiny_spec(1), 2);
  auto x = random_input<float>(4, 1, 16, 16, 12);
  auto enc = m.encoder_forward(x, Mode::train);
  EXPECT_EQ(enc.bottleneck.n(), 4);
  for (const auto& s : enc.skips) EXPECT_EQ(s.n(), 4);
}

TEST(Encoder, IndivisibleInputTellsCallerToPad) {
  MergedAutoencoder<float> m(tiny_spec(1), 2);
  auto x = random_input<float>(1, 1, 20, 16, 13);
  try {
    m.encoder_forward(x, Mode::train);
    FAIL() << "expected shape_error";
  } catch (const shape_error& e) {
    EXPECT_NE(std::string(e.what()).find("pad"), std::string::npos);
  }
}

TEST(Encoder, InferModeDeterministic) {
  MergedAutoencoder<float> m(tiny_spec(1), 21);
  auto x = random_input<float>(2, 1, 16, 16, 22);
  m.encoder_forward(x, Mode::train);  // populate running stats
  auto a = m.encoder_forward(x, Mode::infer);
  auto b = m.encoder_forward(x, Mode::infer);
  for (std::size_t i = 0; i < a.bottleneck.size(); ++i)
    ASSERT_EQ(a.bottleneck[i], b.bottleneck[i]);
}

TEST(Decoder, RoundTripShapeAndRange) {
  MergedAutoencoder<float> m(ModelSpec{}, 5);
  auto x = random_input<float>(1, 1, 64, 64, 14);
  auto enc = m.encoder_forward(x, Mode::train);
  auto y = m.decoder_forward(0, enc, Mode::train);
  EXPECT_EQ(y.dims(), dims_str(1, 1, 64, 64));
  for (std::size_t i = 0; i < y.size(); ++i) {
    ASSERT_GT(y[i], 0.0f);
    ASSERT_LT(y[i], 1.0f);
  }
}

TEST(Decoder, MergeDisabledStillShapeValid) {
  MergedAutoencoder<float> m(tiny_spec(2, /*merge=*/false), 6);
  auto x = random_input<float>(2, 1, 24, 16, 15);
  auto enc = m.encoder_forward(x, Mode::train);
  auto y = m.decoder_forward(1, enc, Mode::train);
  EXPECT_EQ(y.dims(), dims_str(2, 1, 24, 16));
}

TEST(Decoder, ShapeLawAcrossSizes) {
  MergedAutoencoder<float> m(tiny_spec(2), 8);
  for (auto [h, w] : {std::pair{8, 8}, std::pair{16, 40}, std::pair{32, 24}}) {
    auto x = random_input<float>(2, 1, h, w, 100 + h + w);
    auto enc = m.encoder_forward(x, Mode::train);
    for (int d = 0; d < 2; ++d) {
      auto y = m.decoder_forward(d, enc, Mode::train);
      EXPECT_EQ(y.dims(), dims_str(2, 1, h, w));
    }
  }
}

TEST(Params, CountMatchesIndependentTallyAndPublishedValue) {
  ModelSpec def{};
  MergedAutoencoder<float> m(def, 1);
  const long long tally = expected_param_count(def);
  EXPECT_EQ(static_cast<long long>(m.registry().value_count(true)), tally);
  EXPECT_EQ(tally, 10653699);  // default spec: 32/64/128/256, D=3, merge on

  ModelSpec t = tiny_spec(3);
  MergedAutoencoder<float> mt(t, 1);
  EXPECT_EQ(static_cast<long long>(mt.registry().value_count(true)),
            expected_param_count(t));
}

TEST(Backward, ZeroUpstreamLeavesGradsZero) {
  MergedAutoencoder<float> m(tiny_spec(1), 31);
  auto x = random_input<float>(2, 1, 8, 8, 32);
  MergedAutoencoder<float>::ForwardCaches caches;
  auto ys = m.forward_all(x, Mode::train, &caches);
  m.registry().zero_grads();
  Tensor4<float> g_y(2, 1, 8, 8);
  auto branch = m.decoder_backward(0, caches.decoders[0], g_y);
  m.encoder_backward(caches.encoder, branch);
  for (const auto& p : m.registry())
    for (std::size_t i = 0; i < p.grad.size(); ++i)
      ASSERT_EQ(p.grad[i], 0.0f) << p.name;
}

TEST(Backward, TwoBackwardsAccumulateDouble) {
  MergedAutoencoder<float> m(tiny_spec(1), 41);
  auto x = random_input<float>(2, 1, 8, 8, 42);
  auto run_backward = [&] {
    MergedAutoencoder<float>::ForwardCaches caches;
    auto ys = m.forward_all(x, Mode::train, &caches);
    Tensor4<float> g_y = random_input<float>(2, 1, 8, 8, 43, -1.0, 1.0);
    auto branch = m.decoder_backward(0, caches.decoders[0], g_y);
    m.encoder_backward(caches.encoder, branch);
  };
  m.registry().zero_grads();
  run_backward();
  std::vector<float> once;
  for (const auto& p : m.registry())
    for (std::size_t i = 0; i < p.grad.size(); ++i) once.push_back(p.grad[i]);
  m.registry().zero_grads();
  run_backward();
  run_backward();
  std::size_t k = 0;
  for (const auto& p : m.registry())
    for (std::size_t i = 0; i < p.grad.size(); ++i, ++k)
      ASSERT_NEAR(p.grad[i], 2.0f * once[k], 2e-5f + std::fabs(once[k]) * 1e-4f)
          << p.name;
}

TEST(Backward, ConsumedCachesRejected) {
  MergedAutoencoder<float> m(tiny_spec(1), 51);
  auto x = random_input<float>(2, 1, 8, 8, 52);
  MergedAutoencoder<float>::ForwardCaches caches;
  m.forward_all(x, Mode::train, &caches);
  Tensor4<float> g_y(2, 1, 8, 8);
  auto branch = m.decoder_backward(0, caches.decoders[0], g_y);
  EXPECT_THROW(m.decoder_backward(0, caches.decoders[0], g_y), contract_error);
  m.encoder_backward(caches.encoder, branch);
  EXPECT_THROW(m.encoder_backward(caches.encoder, branch), contract_error);
}

// Whole-path oracle: analytic gradients through decoder 0 match central
// finite differences of the mse loss, in f64 on the tiny model.
TEST(Backward, WholePathFiniteDifference) {
  ModelSpec spec = tiny_spec(1);
  MergedAutoencoder<double> m(spec, 61);
  auto x = random_input<double>(2, 1, 8, 8, 62);
  auto target = random_input<double>(2, 1, 8, 8, 63, 0.1, 0.9);

  auto loss = [&] {
    auto enc = m.encoder_forward(x, Mode::train);
    auto y = m.decoder_forward(0, enc, Mode::train);
    return mse(y, target);
  };

  MergedAutoencoder<double>::ForwardCaches caches;
  auto ys = m.forward_all(x, Mode::train, &caches);
  MseCache<double> mc;
  mse(ys[0], target, &mc);
  m.registry().zero_grads();
  auto branch = m.decoder_backward(0, caches.decoders[0], mse_backward(mc));
  m.encoder_backward(caches.encoder, branch);

  Rng rng(64);
  const double step = 1e-5;
  double worst = 0.0;
  for (auto& p : m.registry()) {
    if (!p.trainable) continue;
    const std::size_t probes = std::min<std::size_t>(p.value.size(), 4);
    for (std::size_t t = 0; t < probes; ++t) {
      const std::size_t i = rng.index(p.value.size());
      const double keep = p.value[i];
      p.value[i] = keep + step;
      const double lp = loss();
      p.value[i] = keep - step;
      const double lm = loss();
      p.value[i] = keep;
      const double numeric = (lp - lm) / (2 * step);
      const double analytic = p.grad[i];
      const double rel = std::fabs(analytic - numeric) /
                         std::max({std::fabs(analytic), std::fabs(numeric),
                                   1e-3});
      worst = std::max(worst, rel);
      ASSERT_LT(rel, 1e-4) << p.name << "[" << i << "] analytic " << analytic
                           << " numeric " << numeric;
    }
  }
  EXPECT_LT(worst, 1e-4);
}
