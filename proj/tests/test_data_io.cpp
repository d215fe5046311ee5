#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mdae/pgm.hpp"
#include "mdae/synth.hpp"
#include "mdae/volume.hpp"

using namespace mdae;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("mdae_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

Volume random_volume(int slices, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Volume vol;
  for (int s = 0; s < slices; ++s) {
    Image2 img(h, w);
    for (auto& v : img.px) v = static_cast<float>(rng.uniform(0.0, 1.0));
    vol.push_back(std::move(img));
  }
  return vol;
}

}  // namespace

TEST(Mvol, RoundTripIsByteExact) {
  TempDir dir;
  auto vol = random_volume(3, 16, 16, 1);
  vol[1].px[5] = std::numeric_limits<float>::quiet_NaN();  // payload survives
  const auto path = dir.file("a.mvol");
  save_volume(path, vol);
  auto loaded = load_volume(path);
  save_volume(dir.file("b.mvol"), loaded);
  const auto bytes_a = detail::read_file(path);
  const auto bytes_b = detail::read_file(dir.file("b.mvol"));
  EXPECT_EQ(bytes_a, bytes_b);
  ASSERT_EQ(loaded.size(), vol.size());
  for (std::size_t s = 0; s < vol.size(); ++s)
    for (std::size_t i = 0; i < vol[s].size(); ++i) {
      const std::uint32_t wa = std::bit_cast<std::uint32_t>(vol[s].px[i]);
      const std::uint32_t wb = std::bit_cast<std::uint32_t>(loaded[s].px[i]);
      ASSERT_EQ(wa, wb);
    }
}

TEST(Mvol, FileSizeMatchesFormat) {
  TempDir dir;
  auto vol = random_volume(3, 16, 16, 2);
  const auto path = dir.file("size.mvol");
  save_volume(path, vol);
  EXPECT_EQ(fs::file_size(path), 32u + 3u * 16 * 16 * 4);
}

TEST(Mvol, BadMagicRejected) {
  TempDir dir;
  const auto path = dir.file("bad.mvol");
  std::ofstream(path, std::ios::binary) << "MVOZ garbage here and beyond";
  EXPECT_THROW(load_volume(path), format_error);
}

TEST(Mvol, TruncationRejectedWithOffset) {
  TempDir dir;
  auto vol = random_volume(2, 8, 8, 3);
  const auto path = dir.file("t.mvol");
  save_volume(path, vol);
  auto bytes = detail::read_file(path);
  bytes.resize(bytes.size() - 7);
  std::ofstream(path, std::ios::binary) << bytes;
  try {
    load_volume(path);
    FAIL() << "expected format_error";
  } catch (const format_error& e) {
    EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos);
  }
}

TEST(Mvol, LabelRoundTrip) {
  TempDir dir;
  LabelStack labels(2, LabelImage(8, 8));
  labels[0].at(3, 3) = 2;
  labels[1].at(7, 0) = 999;
  const auto path = dir.file("l.mvol");
  save_labels(path, labels);
  auto loaded = load_labels(path);
  EXPECT_EQ(loaded[0].at(3, 3), 2);
  EXPECT_EQ(loaded[1].at(7, 0), 999);
  EXPECT_THROW(load_volume(path), format_error);  // dtype mismatch
}

TEST(Normalize, KnownValuesAndInversion) {
  Volume vol{Image2(1, 3)};
  vol[0].px = {0.0f, 5.0f, 10.0f};
  auto rec = normalize_01(vol);
  EXPECT_FLOAT_EQ(vol[0].px[0], 0.0f);
  EXPECT_FLOAT_EQ(vol[0].px[1], 0.5f);
  EXPECT_FLOAT_EQ(vol[0].px[2], 1.0f);
  EXPECT_FLOAT_EQ(rec.min, 0.0f);
  EXPECT_FLOAT_EQ(rec.max, 10.0f);
  denormalize(vol, rec);
  EXPECT_FLOAT_EQ(vol[0].px[1], 5.0f);
}

TEST(Normalize, ConstantVolumeGoesToZero) {
  Volume vol{Image2(2, 2, 3.5f)};
  normalize_01(vol);
  for (float v : vol[0].px) EXPECT_EQ(v, 0.0f);
}

TEST(Normalize, RoundTripWithinF32Rounding) {
  auto vol = random_volume(2, 8, 8, 4);
  for (auto& img : vol)
    for (auto& v : img.px) v = v * 173.0f - 40.0f;
  Volume orig = vol;
  auto rec = normalize_01(vol);
  for (const auto& img : vol)
    for (float v : img.px) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  denormalize(vol, rec);
  for (std::size_t s = 0; s < vol.size(); ++s)
    for (std::size_t i = 0; i < vol[s].size(); ++i)
      ASSERT_NEAR(vol[s].px[i], orig[s].px[i], 1e-4f);
}

TEST(CentralSlices, PaperCaseAndEdgeCases) {
  EXPECT_EQ(central_slices(207, 167), (std::pair{20, 186}));
  EXPECT_EQ(central_slices(10, 10), (std::pair{0, 9}));
  EXPECT_EQ(central_slices(11, 9), (std::pair{1, 9}));
  EXPECT_THROW(central_slices(5, 6), contract_error);
  for (int total : {10, 11, 31})
    for (int keep = 1; keep <= total; ++keep) {
      auto [a, b] = central_slices(total, keep);
      EXPECT_EQ(b - a + 1, keep);
      EXPECT_GE(a, 0);
      EXPECT_LT(b, total);
    }
}

TEST(SplitSubjects, PaperCountsAndDeterminism) {
  std::vector<std::string> ids;
  for (int i = 0; i < 39; ++i) ids.push_back("s" + std::to_string(i));
  auto s1 = split_subjects(ids, 22, 6, 11, 7);
  EXPECT_EQ(s1.train.size(), 22u);
  EXPECT_EQ(s1.val.size(), 6u);
  EXPECT_EQ(s1.test.size(), 11u);
  auto s2 = split_subjects(ids, 22, 6, 11, 7);
  EXPECT_EQ(s1.train, s2.train);
  EXPECT_EQ(s1.test, s2.test);

  // disjoint and covering
  std::set<std::string> all;
  for (const auto& v : {s1.train, s1.val, s1.test})
    for (const auto& id : v) EXPECT_TRUE(all.insert(id).second);
  EXPECT_EQ(all.size(), 39u);

  EXPECT_THROW(split_subjects(ids, 30, 6, 11, 7), contract_error);
}

TEST(Padding, RoundTripRestoresExactly) {
  Rng rng(8);
  for (auto [h, w] : {std::pair{20, 30}, std::pair{17, 9}, std::pair{16, 16}}) {
    Image2 img(h, w);
    for (auto& v : img.px) v = static_cast<float>(rng.uniform(0.0, 1.0));
    PadInfo info;
    auto padded = pad_to_multiple(img, 8, &info);
    EXPECT_EQ(padded.h % 8, 0);
    EXPECT_EQ(padded.w % 8, 0);
    auto restored = crop_to(padded, info);
    ASSERT_EQ(restored.h, h);
    ASSERT_EQ(restored.w, w);
    for (std::size_t i = 0; i < img.size(); ++i)
      ASSERT_EQ(restored.px[i], img.px[i]);
  }
}

TEST(MakeBatches, SizesAndReshuffling) {
  SliceSet set;
  for (int i = 0; i < 10; ++i) {
    Image2 lf(8, 8, static_cast<float>(i) / 10.0f);
    Image2 hf(8, 8, static_cast<float>(i) / 10.0f + 0.01f);
    set.push_back({lf, hf});
  }
  auto batches = make_batches(set, 4, 1);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].lf.n(), 4);
  EXPECT_EQ(batches[1].lf.n(), 4);
  EXPECT_EQ(batches[2].lf.n(), 2);

  // same multiset of slices across epochs, different order for some epoch
  auto collect = [](const std::vector<Batch>& bs) {
    std::vector<float> firsts;
    for (const auto& b : bs)
      for (int n = 0; n < b.lf.n(); ++n) firsts.push_back(b.lf(n, 0, 0, 0));
    return firsts;
  };
  auto e1 = collect(batches);
  auto e2 = collect(make_batches(set, 4, 2));
  auto sorted1 = e1, sorted2 = e2;
  std::sort(sorted1.begin(), sorted1.end());
  std::sort(sorted2.begin(), sorted2.end());
  EXPECT_EQ(sorted1, sorted2);
  EXPECT_NE(e1, e2);

  EXPECT_THROW(make_batches(SliceSet{}, 4, 1), contract_error);
}

TEST(Manifest, RoundTripAndUnknownKeyRejected) {
  TempDir dir;
  std::vector<ManifestEntry> entries{{"s00", "s00_lf.mvol", "s00_hf.mvol", ""},
                                     {"s01", "a.mvol", "b.mvol", "c.mvol"}};
  const auto path = dir.file("manifest.json");
  write_manifest(path, entries);
  auto loaded = read_manifest(path);
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(loaded[0].id, "s00");
  EXPECT_TRUE(loaded[0].labels_path.empty());
  EXPECT_EQ(loaded[1].labels_path, "c.mvol");

  std::ofstream(dir.file("bad.json"))
      << R"([{"id":"x","lf_path":"a","hf_path":"b","typo_key":1}])";
  EXPECT_THROW(read_manifest(dir.file("bad.json")), format_error);
}

TEST(Synth, DeterministicPerSeed) {
  SynthParams p;
  p.count = 2;
  p.slices = 3;
  p.size = 32;
  p.seed = 11;
  auto a = synth_generate(p);
  auto b = synth_generate(p);
  EXPECT_EQ(a.baseline_psnr, b.baseline_psnr);
  for (std::size_t s = 0; s < a.subjects.size(); ++s)
    for (std::size_t z = 0; z < a.subjects[s].lf.size(); ++z)
      for (std::size_t i = 0; i < a.subjects[s].lf[z].size(); ++i) {
        ASSERT_EQ(a.subjects[s].lf[z].px[i], b.subjects[s].lf[z].px[i]);
        ASSERT_EQ(a.subjects[s].hf[z].px[i], b.subjects[s].hf[z].px[i]);
      }
}

TEST(Synth, IdentityDegradationWhenAllKnobsOff) {
  SynthParams p;
  p.count = 1;
  p.slices = 2;
  p.size = 32;
  p.blur_sigma = 1e-6;  // kernel underflows to a delta
  p.gamma = 1.0;
  p.noise_sigma = 0.0;
  auto r = synth_generate(p);
  for (std::size_t z = 0; z < r.subjects[0].lf.size(); ++z)
    for (std::size_t i = 0; i < r.subjects[0].lf[z].size(); ++i)
      ASSERT_EQ(r.subjects[0].lf[z].px[i], r.subjects[0].hf[z].px[i]);
}

TEST(Synth, EachKnobStrictlyReducesPsnr) {
  SynthParams clean;
  clean.count = 1;
  clean.slices = 2;
  clean.size = 32;
  clean.blur_sigma = 1e-6;
  clean.gamma = 1.0;
  clean.noise_sigma = 0.0;
  const double base = synth_generate(clean).baseline_psnr;
  EXPECT_TRUE(std::isinf(base));

  for (int knob = 0; knob < 3; ++knob) {
    SynthParams p = clean;
    if (knob == 0) p.blur_sigma = 1.5;
    if (knob == 1) p.gamma = 0.7;
    if (knob == 2) p.noise_sigma = 0.02;
    EXPECT_TRUE(std::isfinite(synth_generate(p).baseline_psnr))
        << "knob " << knob;
  }
}

TEST(Synth, DefaultBaselineInStableBand) {
  SynthParams p;
  p.count = 3;
  p.slices = 4;
  p.size = 64;
  p.seed = 2024;
  const double base = synth_generate(p).baseline_psnr;
  EXPECT_GT(base, 10.0);
  EXPECT_LT(base, 35.0);
}

TEST(Synth, LabelsCoverForeground) {
  SynthParams p;
  p.count = 1;
  p.slices = 2;
  p.size = 32;
  auto r = synth_generate(p);
  const auto& sub = r.subjects[0];
  ASSERT_EQ(sub.labels.size(), sub.hf.size());
  int labelled = 0;
  for (std::size_t i = 0; i < sub.labels[0].px.size(); ++i)
    if (sub.labels[0].px[i] > 0) ++labelled;
  EXPECT_GT(labelled, 0);
}

TEST(Pgm, WriteReadRoundTrip) {
  TempDir dir;
  Image2 img(5, 7);
  for (std::size_t i = 0; i < img.size(); ++i)
    img.px[i] = static_cast<float>(i) / static_cast<float>(img.size());
  const auto path = dir.file("x.pgm");
  write_pgm8(path, img);
  auto back = read_pgm(path);
  ASSERT_EQ(back.h, 5);
  ASSERT_EQ(back.w, 7);
  for (std::size_t i = 0; i < img.size(); ++i)
    ASSERT_NEAR(back.px[i], img.px[i], 1.0f / 255.0f);
}

TEST(Pgm, Reads16BitBigEndian) {
  TempDir dir;
  const auto path = dir.file("wide.pgm");
  std::ofstream out(path, std::ios::binary);
  out << "P5\n# comment\n2 1\n65535\n";
  const unsigned char payload[4] = {0xff, 0xff, 0x00, 0x00};
  out.write(reinterpret_cast<const char*>(payload), 4);
  out.close();
  auto img = read_pgm(path);
  EXPECT_FLOAT_EQ(img.px[0], 1.0f);
  EXPECT_FLOAT_EQ(img.px[1], 0.0f);
}
