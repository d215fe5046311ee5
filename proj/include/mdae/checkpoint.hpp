#pragma once

#include <cmath>
#include <limits>
#include <string>

#include <json.hpp>

#include "mdae/binio.hpp"
#include "mdae/model.hpp"

// Checkpoint container: magic "MDAE", version u16, a JSON blob holding the
// model spec plus epoch and validation PSNR, then every registry tensor
// (name, dtype f32, dims, raw payload) in registry order. Serialization is
// canonical: save -> load -> save reproduces the bytes.

namespace mdae {

namespace detail {

inline constexpr std::uint16_t kCheckpointVersion = 1;

inline nlohmann::json psnr_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double psnr_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw format_error("checkpoint: bad val_psnr string '" + s + "'");
  }
  return j.get<double>();
}

}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const MergedAutoencoder<float>& model, int epoch,
                            double val_psnr) {
  detail::ByteWriter w;
  w.bytes("MDAE", 4);
  w.u16(detail::kCheckpointVersion);

  nlohmann::json meta{{"epoch", epoch},
                      {"spec", model.spec().to_json()},
                      {"val_psnr", detail::psnr_to_json(val_psnr)}};
  const std::string blob = meta.dump();
  w.u32(static_cast<std::uint32_t>(blob.size()));
  w.bytes(blob.data(), blob.size());

  const auto& reg = model.registry();
  w.u32(static_cast<std::uint32_t>(reg.size()));
  for (const auto& p : reg) {
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.u8(0);  // dtype f32
    w.u8(static_cast<std::uint8_t>(p.ndim));
    if (p.ndim == 1) {
      w.u32(static_cast<std::uint32_t>(p.value.n()));
    } else {
      w.u32(static_cast<std::uint32_t>(p.value.n()));
      w.u32(static_cast<std::uint32_t>(p.value.c()));
      w.u32(static_cast<std::uint32_t>(p.value.h()));
      w.u32(static_cast<std::uint32_t>(p.value.w()));
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) w.f32(p.value[i]);
  }
  detail::atomic_write_file(path, w.buf);
}

struct LoadedCheckpoint {
  ModelSpec spec;
  int epoch = 0;
  double val_psnr = 0.0;
  MergedAutoencoder<float> model;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  const std::string data = detail::read_file(path);
  detail::ByteReader r(data, path);
  if (r.bytes(4) != "MDAE") throw format_error(path + ": bad magic at byte 0");
  const std::uint16_t version = r.u16();
  if (version != detail::kCheckpointVersion)
    throw format_error(path + ": unsupported version " +
                       std::to_string(version));

  const std::uint32_t blob_len = r.u32();
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.bytes(blob_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw format_error(path + ": spec blob: " + e.what());
  }

  ModelSpec spec;
  int epoch;
  double val_psnr;
  try {
    spec = ModelSpec::from_json(meta.at("spec"));
    epoch = meta.at("epoch").get<int>();
    val_psnr = detail::psnr_from_json(meta.at("val_psnr"));
  } catch (const nlohmann::json::exception& e) {
    throw format_error(path + ": spec blob: " + e.what());
  }

  LoadedCheckpoint out{spec, epoch, val_psnr,
                       MergedAutoencoder<float>(spec, 0)};
  auto& reg = out.model.registry();
  const std::uint32_t count = r.u32();
  if (count != reg.size())
    throw format_error(path + ": tensor count " + std::to_string(count) +
                       " != expected " + std::to_string(reg.size()));
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint16_t name_len = r.u16();
    const std::string name = r.bytes(name_len);
    auto& p = reg.at(t);
    if (name != p.name)
      throw format_error(path + ": tensor '" + name + "' where '" + p.name +
                         "' expected at byte " + std::to_string(r.pos()));
    const std::uint8_t dtype = r.u8();
    if (dtype != 0)
      throw format_error(path + ": unsupported dtype " +
                         std::to_string(dtype) + " for '" + name + "'");
    const std::uint8_t ndim = r.u8();
    if (ndim != p.ndim)
      throw format_error(path + ": ndim mismatch for '" + name + "'");
    std::uint32_t dims[4] = {1, 1, 1, 1};
    for (int d = 0; d < ndim; ++d) {
      dims[d] = r.u32();
      if (dims[d] == 0 || dims[d] > (1u << 24))
        r.fail("dim overflow in '" + name + "'");
    }
    const bool dims_ok =
        ndim == 1 ? dims[0] == static_cast<std::uint32_t>(p.value.n())
                  : dims[0] == static_cast<std::uint32_t>(p.value.n()) &&
                        dims[1] == static_cast<std::uint32_t>(p.value.c()) &&
                        dims[2] == static_cast<std::uint32_t>(p.value.h()) &&
                        dims[3] == static_cast<std::uint32_t>(p.value.w());
    if (!dims_ok)
      throw format_error(path + ": dims mismatch for '" + name + "'");
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = r.f32();
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return out;
}

}  // namespace mdae
