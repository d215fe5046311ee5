#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdae/binio.hpp"
#include "mdae/image.hpp"
#include "mdae/rng.hpp"
#include "mdae/tensor.hpp"

// Volume container (MVOL), dataset manifests, normalization, slice
// selection, subject splits, padding and batching.

namespace mdae {

using Volume = ImageStack;

// ---------------------------------------------------------------------------
// MVOL: magic "MVOL", version u16, dtype u8 (0 f32, 1 u16 labels), ndim u8
// = 3, dims 3xu32 (slices, h, w), 12 reserved zero bytes; header is exactly
// 32 bytes, then the row-major payload.

namespace detail {

inline constexpr std::uint16_t kMvolVersion = 1;
inline constexpr std::size_t kMvolHeaderSize = 32;

inline void mvol_header(ByteWriter& w, std::uint8_t dtype, std::uint32_t s,
                        std::uint32_t h, std::uint32_t wd) {
  w.bytes("MVOL", 4);
  w.u16(kMvolVersion);
  w.u8(dtype);
  w.u8(3);
  w.u32(s);
  w.u32(h);
  w.u32(wd);
  w.zeros(12);
}

struct MvolDims {
  std::uint8_t dtype = 0;
  std::uint32_t slices = 0, h = 0, w = 0;
};

inline MvolDims mvol_read_header(ByteReader& r) {
  if (r.bytes(4) != "MVOL") throw format_error("MVOL: bad magic at byte 0");
  const std::uint16_t version = r.u16();
  if (version != kMvolVersion)
    throw format_error("MVOL: unsupported version " + std::to_string(version) +
                       " at byte 4");
  MvolDims d;
  d.dtype = r.u8();
  if (d.dtype > 1)
    throw format_error("MVOL: unknown dtype " + std::to_string(d.dtype) +
                       " at byte 6");
  const std::uint8_t ndim = r.u8();
  if (ndim != 3)
    throw format_error("MVOL: ndim " + std::to_string(ndim) +
                       " != 3 at byte 7");
  d.slices = r.u32();
  d.h = r.u32();
  d.w = r.u32();
  if (d.h > (1u << 20) || d.w > (1u << 20) || d.slices > (1u << 20))
    throw format_error("MVOL: implausible dims at byte 8");
  r.skip(12);
  return d;
}

}  // namespace detail

inline void save_volume(const std::string& path, const Volume& vol) {
  detail::ByteWriter w;
  const std::uint32_t s = static_cast<std::uint32_t>(vol.size());
  const std::uint32_t h = s ? vol[0].h : 0, wd = s ? vol[0].w : 0;
  for (const auto& img : vol)
    if (img.h != static_cast<int>(h) || img.w != static_cast<int>(wd))
      throw shape_error("save_volume: ragged slice dims");
  detail::mvol_header(w, 0, s, h, wd);
  for (const auto& img : vol)
    for (float v : img.px) w.f32(v);
  detail::atomic_write_file(path, w.buf);
}

inline Volume load_volume(const std::string& path) {
  const std::string data = detail::read_file(path);
  detail::ByteReader r(data, path);
  const auto d = detail::mvol_read_header(r);
  if (d.dtype != 0)
    throw format_error(path + ": dtype is labels, expected f32 at byte 6");
  Volume vol;
  vol.reserve(d.slices);
  for (std::uint32_t s = 0; s < d.slices; ++s) {
    Image2 img(static_cast<int>(d.h), static_cast<int>(d.w));
    for (auto& v : img.px) v = r.f32();
    vol.push_back(std::move(img));
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return vol;
}

inline void save_labels(const std::string& path, const LabelStack& vol) {
  detail::ByteWriter w;
  const std::uint32_t s = static_cast<std::uint32_t>(vol.size());
  const std::uint32_t h = s ? vol[0].h : 0, wd = s ? vol[0].w : 0;
  detail::mvol_header(w, 1, s, h, wd);
  for (const auto& img : vol)
    for (std::uint16_t v : img.px) w.u16(v);
  detail::atomic_write_file(path, w.buf);
}

inline LabelStack load_labels(const std::string& path) {
  const std::string data = detail::read_file(path);
  detail::ByteReader r(data, path);
  const auto d = detail::mvol_read_header(r);
  if (d.dtype != 1)
    throw format_error(path + ": dtype is f32, expected labels at byte 6");
  LabelStack vol;
  vol.reserve(d.slices);
  for (std::uint32_t s = 0; s < d.slices; ++s) {
    LabelImage img(static_cast<int>(d.h), static_cast<int>(d.w));
    for (auto& v : img.px) v = r.u16();
    vol.push_back(std::move(img));
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return vol;
}

// ---------------------------------------------------------------------------
// Manifest: JSON array of {id, lf_path, hf_path, labels_path?}. Paths are
// relative to the manifest's directory.

struct ManifestEntry {
  std::string id, lf_path, hf_path, labels_path;
};

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw format_error(path + ": " + e.what());
  }
  if (!j.is_array()) throw format_error(path + ": manifest is not an array");
  std::vector<ManifestEntry> out;
  for (const auto& e : j) {
    ManifestEntry m;
    m.id = e.at("id").get<std::string>();
    m.lf_path = e.at("lf_path").get<std::string>();
    m.hf_path = e.at("hf_path").get<std::string>();
    if (e.contains("labels_path"))
      m.labels_path = e.at("labels_path").get<std::string>();
    for (const auto& [key, _] : e.items())
      if (key != "id" && key != "lf_path" && key != "hf_path" &&
          key != "labels_path")
        throw format_error(path + ": unknown manifest key '" + key + "'");
    out.push_back(std::move(m));
  }
  return out;
}

inline void write_manifest(const std::string& path,
                           const std::vector<ManifestEntry>& entries) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json o{{"id", e.id}, {"lf_path", e.lf_path},
                     {"hf_path", e.hf_path}};
    if (!e.labels_path.empty()) o["labels_path"] = e.labels_path;
    j.push_back(o);
  }
  detail::atomic_write_file(path, j.dump(2) + "\n");
}

struct SubjectVolume {
  std::string id;
  Volume lf, hf;
  LabelStack labels;
};

inline SubjectVolume load_subject(const ManifestEntry& e,
                                  const std::string& base_dir) {
  namespace fs = std::filesystem;
  SubjectVolume s;
  s.id = e.id;
  s.lf = load_volume((fs::path(base_dir) / e.lf_path).string());
  s.hf = load_volume((fs::path(base_dir) / e.hf_path).string());
  if (s.lf.size() != s.hf.size() ||
      (!s.lf.empty() && !s.lf[0].same_dims(s.hf[0])))
    throw shape_error("subject " + e.id + ": lf and hf dims differ");
  if (!e.labels_path.empty())
    s.labels = load_labels((fs::path(base_dir) / e.labels_path).string());
  return s;
}

// ---------------------------------------------------------------------------
// Per-volume 0-1 normalization; a constant volume maps to all zeros.

struct NormRecord {
  float min = 0.0f, max = 1.0f;
};

inline NormRecord normalize_01(Volume& vol) {
  NormRecord rec;
  if (vol.empty()) return rec;
  float lo = vol[0].px.empty() ? 0.0f : vol[0].px[0], hi = lo;
  for (const auto& img : vol)
    for (float v : img.px) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  rec.min = lo;
  rec.max = hi;
  const float range = hi - lo;
  for (auto& img : vol)
    for (float& v : img.px) v = range > 0.0f ? (v - lo) / range : 0.0f;
  return rec;
}

inline void denormalize(Volume& vol, const NormRecord& rec) {
  const float range = rec.max - rec.min;
  for (auto& img : vol)
    for (float& v : img.px) v = v * range + rec.min;
}

// ---------------------------------------------------------------------------
// Central slice selection: drop floor((total-keep)/2) from the front.
// Returns the inclusive index range.

inline std::pair<int, int> central_slices(int total, int keep) {
  if (keep < 0 || keep > total)
    throw contract_error("central_slices: keep " + std::to_string(keep) +
                         " exceeds available " + std::to_string(total));
  const int front = (total - keep) / 2;
  return {front, front + keep - 1};
}

// ---------------------------------------------------------------------------
// Subject split: seeded shuffle, then counts off the front.

struct SplitSpec {
  std::vector<std::string> train, val, test;
};

inline SplitSpec split_subjects(std::vector<std::string> ids, int n_train,
                                int n_val, int n_test, std::uint64_t seed) {
  if (n_train < 0 || n_val < 0 || n_test < 0 ||
      static_cast<std::size_t>(n_train) + n_val + n_test > ids.size())
    throw contract_error("split_subjects: counts " + std::to_string(n_train) +
                         "/" + std::to_string(n_val) + "/" +
                         std::to_string(n_test) + " exceed " +
                         std::to_string(ids.size()) + " subjects");
  Rng rng(seed, 0x5117);
  rng.shuffle(ids);
  SplitSpec s;
  int k = 0;
  for (int i = 0; i < n_train; ++i) s.train.push_back(ids[k++]);
  for (int i = 0; i < n_val; ++i) s.val.push_back(ids[k++]);
  for (int i = 0; i < n_test; ++i) s.test.push_back(ids[k++]);
  return s;
}

// ---------------------------------------------------------------------------
// Reflect padding (mirror without edge repeat) to a multiple, plus the
// inverse crop.

struct PadInfo {
  int orig_h = 0, orig_w = 0;
};

inline Image2 pad_to_multiple(const Image2& img, int multiple,
                              PadInfo* info = nullptr) {
  const int ph = (multiple - img.h % multiple) % multiple;
  const int pw = (multiple - img.w % multiple) % multiple;
  if (info) *info = PadInfo{img.h, img.w};
  if (ph == 0 && pw == 0) return img;
  if (ph >= img.h || pw >= img.w)
    throw shape_error("pad_to_multiple: image " + std::to_string(img.h) + "x" +
                      std::to_string(img.w) + " too small to reflect-pad");
  Image2 out(img.h + ph, img.w + pw);
  for (int i = 0; i < out.h; ++i) {
    const int si = i < img.h ? i : 2 * img.h - 2 - i;
    for (int j = 0; j < out.w; ++j) {
      const int sj = j < img.w ? j : 2 * img.w - 2 - j;
      out.at(i, j) = img.at(si, sj);
    }
  }
  return out;
}

inline Image2 crop_to(const Image2& img, const PadInfo& info) {
  if (info.orig_h == img.h && info.orig_w == img.w) return img;
  Image2 out(info.orig_h, info.orig_w);
  for (int i = 0; i < out.h; ++i)
    for (int j = 0; j < out.w; ++j) out.at(i, j) = img.at(i, j);
  return out;
}

// ---------------------------------------------------------------------------
// Slice pairs and batching.

struct SlicePair {
  Image2 lf, hf;
};

using SliceSet = std::vector<SlicePair>;

inline Tensor4<float> stack_slices(std::span<const Image2> slices) {
  if (slices.empty()) throw contract_error("stack_slices: empty batch");
  const int h = slices[0].h, w = slices[0].w;
  Tensor4<float> t(static_cast<int>(slices.size()), 1, h, w);
  for (std::size_t s = 0; s < slices.size(); ++s) {
    if (slices[s].h != h || slices[s].w != w)
      throw shape_error("stack_slices: ragged dims in batch");
    std::copy(slices[s].px.begin(), slices[s].px.end(),
              t.data() + t.flat(static_cast<int>(s), 0, 0, 0));
  }
  return t;
}

inline Image2 tensor_slice(const Tensor4<float>& t, int n) {
  Image2 img(t.h(), t.w());
  std::copy(t.data() + t.flat(n, 0, 0, 0),
            t.data() + t.flat(n, 0, 0, 0) + img.size(), img.px.begin());
  return img;
}

struct Batch {
  Tensor4<float> lf, hf;
};

// Seeded shuffle per epoch; the final partial batch is emitted.
inline std::vector<Batch> make_batches(const SliceSet& set, int batch_size,
                                       std::uint64_t epoch_seed,
                                       bool shuffle = true) {
  if (set.empty()) throw contract_error("make_batches: empty slice set");
  if (batch_size < 1) throw contract_error("make_batches: batch_size < 1");
  std::vector<std::size_t> order(set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle) {
    Rng rng(epoch_seed, 0xba7c4);
    rng.shuffle(order);
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count =
        std::min<std::size_t>(batch_size, order.size() - start);
    std::vector<Image2> lf, hf;
    lf.reserve(count);
    hf.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      lf.push_back(set[order[start + i]].lf);
      hf.push_back(set[order[start + i]].hf);
    }
    batches.push_back(Batch{stack_slices(lf), stack_slices(hf)});
  }
  return batches;
}

}  // namespace mdae
