#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdae/ops.hpp"
#include "mdae/registry.hpp"
#include "mdae/rng.hpp"

// The merged autoencoder: one encoder, D decoders, merge connections.
// Encoder blocks double their filter count and each is followed by a 2x
// maxpool; a bottleneck block sits below the last pool. Decoder blocks
// upsample 2x, concatenate the resolution-matched encoder feature map and
// halve the filter count; a single 3x3 conv plus sigmoid head maps back to
// one channel.

namespace mdae {

struct ModelSpec {
  int in_channels = 1;
  std::vector<int> enc_channels{32, 64, 128};
  int bottleneck = 256;
  int decoders = 3;
  bool merge = true;

  int depth() const { return static_cast<int>(enc_channels.size()); }
  int spatial_divisor() const { return 1 << depth(); }

  // Decoder filter schedule: halves from the bottleneck, i.e. twice the
  // reversed encoder schedule.
  std::vector<int> dec_channels() const {
    std::vector<int> out(enc_channels.rbegin(), enc_channels.rend());
    for (int& c : out) c *= 2;
    return out;
  }

  void validate() const {
    if (in_channels < 1) throw contract_error("spec: in_channels < 1");
    if (enc_channels.empty()) throw contract_error("spec: no encoder blocks");
    for (int c : enc_channels)
      if (c < 1) throw contract_error("spec: non-positive channel count");
    if (bottleneck < 1) throw contract_error("spec: bottleneck < 1");
    if (decoders < 1) throw contract_error("spec: decoders < 1");
  }

  nlohmann::json to_json() const {
    return {{"in_channels", in_channels}, {"channels", enc_channels},
            {"bottleneck", bottleneck},   {"decoders", decoders},
            {"merge", merge}};
  }

  static ModelSpec from_json(const nlohmann::json& j) {
    ModelSpec s;
    s.in_channels = j.at("in_channels").get<int>();
    s.enc_channels = j.at("channels").get<std::vector<int>>();
    s.bottleneck = j.at("bottleneck").get<int>();
    s.decoders = j.at("decoders").get<int>();
    s.merge = j.at("merge").get<bool>();
    s.validate();
    return s;
  }

  bool operator==(const ModelSpec&) const = default;
};

// ---------------------------------------------------------------------------
// Registry wiring.

struct ConvIds {
  std::size_t w = 0, b = 0;
};
struct BnIds {
  std::size_t gamma = 0, beta = 0, mean = 0, var = 0;
};
struct BlockIds {
  std::array<ConvIds, 3> conv;
  std::array<BnIds, 3> bn;
  int out_channels = 0;
};

template <typename T>
struct ConvBnReluCache {
  ConvCache<T> conv;
  BnCache<T> bn;
  ActCache<T> act;
};

template <typename T>
struct BlockCache {
  std::array<ConvBnReluCache<T>, 3> layer;
};

template <typename T>
struct EncoderCache {
  std::vector<BlockCache<T>> blocks;
  std::vector<PoolCache> pools;
  BlockCache<T> bottleneck;
  bool consumed = false;
};

template <typename T>
struct DecoderCache {
  std::vector<UpsampleCache> ups;
  std::vector<ConcatCache> concats;
  std::vector<BlockCache<T>> blocks;
  ConvCache<T> head;
  ActCache<T> head_act;
  bool consumed = false;
};

// Encoder outputs: bottleneck features plus the per-block pre-pool skips,
// ordered from full resolution downward.
template <typename T>
struct EncoderOut {
  Tensor4<T> bottleneck;
  std::vector<Tensor4<T>> skips;
};

// Gradient flowing from one decoder branch back into the encoder.
template <typename T>
struct BranchGrads {
  Tensor4<T> bottleneck;
  std::vector<Tensor4<T>> skips;  // empty when merge connections are off
};

template <typename T>
class MergedAutoencoder {
 public:
  MergedAutoencoder(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    build();
    init_params(seed);
  }

  const ModelSpec& spec() const { return spec_; }
  ParameterRegistry<T>& registry() { return reg_; }
  const ParameterRegistry<T>& registry() const { return reg_; }

  bool stats_ready() const { return reg_.at(bn_batches_id_).value[0] > T(0); }
  std::uint64_t encoder_passes() const { return encoder_passes_; }

  // -------------------------------------------------------------------------
  EncoderOut<T> encoder_forward(const Tensor4<T>& x, Mode mode,
                                EncoderCache<T>* cache = nullptr) {
    const int div = spec_.spatial_divisor();
    if (x.c() != spec_.in_channels)
      throw shape_error("encoder: input channels " + std::to_string(x.c()) +
                        " != spec in_channels " +
                        std::to_string(spec_.in_channels));
    if (x.h() % div != 0 || x.w() % div != 0)
      throw shape_error("encoder: h and w of " + x.dims() +
                        " must be divisible by " + std::to_string(div) +
                        "; pad the input first");
    ++encoder_passes_;
    if (mode == Mode::train) reg_.at(bn_batches_id_).value[0] += T(1);

    if (cache) {
      cache->blocks.resize(spec_.depth());
      cache->pools.resize(spec_.depth());
      cache->consumed = false;
    }
    EncoderOut<T> out;
    Tensor4<T> cur = x;
    for (int k = 0; k < spec_.depth(); ++k) {
      cur = block_forward(enc_blocks_[k], cur, mode,
                          cache ? &cache->blocks[k] : nullptr);
      out.skips.push_back(cur);
      cur = maxpool2(cur, cache ? &cache->pools[k] : nullptr);
    }
    out.bottleneck = block_forward(enc_bottleneck_, cur, mode,
                                   cache ? &cache->bottleneck : nullptr);
    return out;
  }

  Tensor4<T> decoder_forward(int d, const EncoderOut<T>& enc, Mode mode,
                             DecoderCache<T>* cache = nullptr) {
    check_decoder_index(d);
    const int depth = spec_.depth();
    if (static_cast<int>(enc.skips.size()) != depth)
      throw shape_error("decoder: expected " + std::to_string(depth) +
                        " skips, got " + std::to_string(enc.skips.size()));
    if (cache) {
      cache->ups.resize(depth);
      cache->concats.resize(depth);
      cache->blocks.resize(depth);
      cache->consumed = false;
    }
    Tensor4<T> cur = enc.bottleneck;
    for (int k = 0; k < depth; ++k) {
      cur = upsample_nearest2(cur, cache ? &cache->ups[k] : nullptr);
      if (spec_.merge) {
        const Tensor4<T>& skip = enc.skips[depth - 1 - k];
        if (skip.h() != cur.h() || skip.w() != cur.w())
          throw shape_error("decoder: skip " + skip.dims() +
                            " does not match upsampled features " + cur.dims());
        cur = concat_channels(cur, skip, cache ? &cache->concats[k] : nullptr);
      }
      cur = block_forward(dec_blocks_[d][k], cur, mode,
                          cache ? &cache->blocks[k] : nullptr);
    }
    cur = conv2d(cur, reg_.at(dec_head_[d].w).value,
                 reg_.at(dec_head_[d].b).vec(),
                 cache ? &cache->head : nullptr);
    return sigmoid(cur, cache ? &cache->head_act : nullptr);
  }

  struct ForwardCaches {
    EncoderCache<T> encoder;
    std::vector<DecoderCache<T>> decoders;
  };

  // One shared encoder pass, then every decoder.
  std::vector<Tensor4<T>> forward_all(const Tensor4<T>& x, Mode mode,
                                      ForwardCaches* caches = nullptr,
                                      EncoderOut<T>* enc_out = nullptr) {
    if (caches) caches->decoders.resize(spec_.decoders);
    EncoderOut<T> enc =
        encoder_forward(x, mode, caches ? &caches->encoder : nullptr);
    std::vector<Tensor4<T>> ys;
    ys.reserve(spec_.decoders);
    for (int d = 0; d < spec_.decoders; ++d)
      ys.push_back(decoder_forward(d, enc, mode,
                                   caches ? &caches->decoders[d] : nullptr));
    if (enc_out) *enc_out = std::move(enc);
    return ys;
  }

  // Elementwise mean of the decoder outputs, accumulated in f64.
  Tensor4<T> predict_average(const Tensor4<T>& x) {
    auto ys = forward_all(x, Mode::infer);
    Tensor4<T> out(ys[0].n(), ys[0].c(), ys[0].h(), ys[0].w());
    const double inv = 1.0 / static_cast<double>(ys.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      double acc = 0.0;
      for (const auto& y : ys) acc += static_cast<double>(y[i]);
      out[i] = static_cast<T>(acc * inv);
    }
    return out;
  }

  // -------------------------------------------------------------------------
  // Backward. Decoder branches accumulate their own parameter gradients and
  // hand back the gradient w.r.t. the encoder interface; the encoder pass
  // accumulates encoder parameter gradients from exactly one such branch.

  BranchGrads<T> decoder_backward(int d, DecoderCache<T>& cache,
                                  const Tensor4<T>& g_y) {
    check_decoder_index(d);
    detail::mark_consumed(cache.consumed, "decoder_backward");
    const int depth = spec_.depth();
    BranchGrads<T> out;
    out.skips.resize(depth);

    Tensor4<T> g = sigmoid_backward(cache.head_act, g_y);
    g = conv2d_backward(cache.head, g, reg_.at(dec_head_[d].w).value,
                        reg_.at(dec_head_[d].w).grad,
                        reg_.at(dec_head_[d].b).gvec());
    for (int k = depth - 1; k >= 0; --k) {
      g = block_backward(dec_blocks_[d][k], cache.blocks[k], g);
      if (spec_.merge) {
        auto [g_up, g_skip] = concat_channels_backward(cache.concats[k], g);
        out.skips[depth - 1 - k] = std::move(g_skip);
        g = std::move(g_up);
      }
      g = upsample_nearest2_backward(cache.ups[k], g);
    }
    out.bottleneck = std::move(g);
    return out;
  }

  void encoder_backward(EncoderCache<T>& cache, const BranchGrads<T>& branch) {
    detail::mark_consumed(cache.consumed, "encoder_backward");
    const int depth = spec_.depth();
    Tensor4<T> g = block_backward(enc_bottleneck_, cache.bottleneck,
                                  branch.bottleneck);
    for (int k = depth - 1; k >= 0; --k) {
      g = maxpool2_backward(cache.pools[k], g);
      if (spec_.merge && !branch.skips.empty()) {
        const Tensor4<T>& gs = branch.skips[k];
        require_same_dims(g, gs, "encoder_backward skip");
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gs[i];
      }
      g = block_backward(enc_blocks_[k], cache.blocks[k], g,
                         /*need_gx=*/k > 0);
    }
  }

  // Group membership by name prefix ("encoder" or "decoder<d>").
  static std::string decoder_prefix(int d) {
    return "decoder" + std::to_string(d);
  }
  bool in_group(const std::string& param_name, const std::string& prefix) const {
    return param_name.rfind(prefix + "/", 0) == 0;
  }

 private:
  void check_decoder_index(int d) const {
    if (d < 0 || d >= spec_.decoders)
      throw contract_error("decoder index " + std::to_string(d) +
                           " out of range, D=" + std::to_string(spec_.decoders));
  }

  BlockIds add_block(const std::string& prefix, int in_c, int out_c) {
    BlockIds ids;
    ids.out_channels = out_c;
    for (int l = 0; l < 3; ++l) {
      const int ic = l == 0 ? in_c : out_c;
      const std::string base = prefix + "/conv" + std::to_string(l);
      ids.conv[l].w = reg_.add_tensor(base + "/w", out_c, ic, 3, 3);
      ids.conv[l].b = reg_.add_vector(base + "/b", out_c, T(0));
      const std::string bn = prefix + "/bn" + std::to_string(l);
      ids.bn[l].gamma = reg_.add_vector(bn + "/gamma", out_c, T(1));
      ids.bn[l].beta = reg_.add_vector(bn + "/beta", out_c, T(0));
      ids.bn[l].mean =
          reg_.add_vector(bn + "/running_mean", out_c, T(0), false);
      ids.bn[l].var = reg_.add_vector(bn + "/running_var", out_c, T(1), false);
    }
    return ids;
  }

  void build() {
    int in_c = spec_.in_channels;
    for (int k = 0; k < spec_.depth(); ++k) {
      enc_blocks_.push_back(add_block("encoder/block" + std::to_string(k),
                                      in_c, spec_.enc_channels[k]));
      in_c = spec_.enc_channels[k];
    }
    enc_bottleneck_ = add_block("encoder/bottleneck", in_c, spec_.bottleneck);

    const auto dec_ch = spec_.dec_channels();
    dec_blocks_.resize(spec_.decoders);
    dec_head_.resize(spec_.decoders);
    for (int d = 0; d < spec_.decoders; ++d) {
      const std::string dp = decoder_prefix(d);
      int cur = spec_.bottleneck;
      for (int k = 0; k < spec_.depth(); ++k) {
        int block_in = cur;
        if (spec_.merge)
          block_in += spec_.enc_channels[spec_.depth() - 1 - k];
        dec_blocks_[d].push_back(add_block(
            dp + "/block" + std::to_string(k), block_in, dec_ch[k]));
        cur = dec_ch[k];
      }
      dec_head_[d].w = reg_.add_tensor(dp + "/head/w", 1, cur, 3, 3);
      dec_head_[d].b = reg_.add_vector(dp + "/head/b", 1, T(0));
    }
    bn_batches_id_ = reg_.add_vector("stats/bn_batches", 1, T(0), false);
  }

  // Uniform(-b, b) with b = sqrt(6 / fan_in) on conv weights; biases zero,
  // batchnorm at identity. The encoder draws from stream 0 and each decoder
  // from its own stream, so decoders start distinct under one seed.
  void init_params(std::uint64_t seed) {
    Rng enc_rng(seed, 0);
    std::vector<Rng> dec_rngs;
    for (int d = 0; d < spec_.decoders; ++d)
      dec_rngs.emplace_back(seed, static_cast<std::uint64_t>(d) + 1);
    for (auto& p : reg_) {
      if (p.ndim != 4) continue;
      Rng* rng = &enc_rng;
      for (int d = 0; d < spec_.decoders; ++d)
        if (in_group(p.name, decoder_prefix(d))) {
          rng = &dec_rngs[d];
          break;
        }
      const double bound =
          std::sqrt(6.0 / (static_cast<double>(p.value.c()) * p.value.h() *
                           p.value.w()));
      for (std::size_t i = 0; i < p.value.size(); ++i)
        p.value[i] = static_cast<T>(rng->uniform(-bound, bound));
    }
  }

  Tensor4<T> block_forward(const BlockIds& ids, const Tensor4<T>& x, Mode mode,
                           BlockCache<T>* cache) {
    Tensor4<T> cur = x;
    for (int l = 0; l < 3; ++l) {
      auto* c = cache ? &cache->layer[l] : nullptr;
      cur = conv2d(cur, reg_.at(ids.conv[l].w).value,
                   reg_.at(ids.conv[l].b).vec(), c ? &c->conv : nullptr);
      cur = batchnorm(cur, reg_.at(ids.bn[l].gamma).vec(),
                      reg_.at(ids.bn[l].beta).vec(),
                      reg_.at(ids.bn[l].mean).vec(),
                      reg_.at(ids.bn[l].var).vec(), stats_ready(), mode,
                      c ? &c->bn : nullptr);
      cur = relu(cur, c ? &c->act : nullptr);
    }
    return cur;
  }

  Tensor4<T> block_backward(const BlockIds& ids, BlockCache<T>& cache,
                            const Tensor4<T>& g_out, bool need_gx = true) {
    Tensor4<T> g = g_out;
    for (int l = 2; l >= 0; --l) {
      auto& c = cache.layer[l];
      g = relu_backward(c.act, g);
      g = batchnorm_backward(c.bn, g, reg_.at(ids.bn[l].gamma).vec(),
                             reg_.at(ids.bn[l].gamma).gvec(),
                             reg_.at(ids.bn[l].beta).gvec());
      g = conv2d_backward(c.conv, g, reg_.at(ids.conv[l].w).value,
                          reg_.at(ids.conv[l].w).grad,
                          reg_.at(ids.conv[l].b).gvec(),
                          need_gx || l > 0);
    }
    return g;
  }

  ModelSpec spec_;
  ParameterRegistry<T> reg_;
  std::vector<BlockIds> enc_blocks_;
  BlockIds enc_bottleneck_;
  std::vector<std::vector<BlockIds>> dec_blocks_;
  std::vector<ConvIds> dec_head_;
  std::size_t bn_batches_id_ = 0;
  std::uint64_t encoder_passes_ = 0;
};

// ---------------------------------------------------------------------------
// Multiply-accumulate counting: convolutions only, per input sample.

struct MacLine {
  std::string layer;
  long long macs = 0;
};

struct MacReport {
  std::vector<MacLine> lines;
  long long total = 0;
};

inline long long conv_macs(int out_c, int in_c, int kh, int kw, int out_h,
                           int out_w) {
  return static_cast<long long>(out_c) * in_c * kh * kw * out_h * out_w;
}

inline MacReport count_macs(const ModelSpec& spec, int h, int w) {
  spec.validate();
  MacReport rep;
  auto add = [&rep](const std::string& name, long long macs) {
    rep.lines.push_back({name, macs});
    rep.total += macs;
  };
  auto block = [&](const std::string& prefix, int in_c, int out_c, int bh,
                   int bw) {
    for (int l = 0; l < 3; ++l) {
      add(prefix + "/conv" + std::to_string(l),
          conv_macs(out_c, l == 0 ? in_c : out_c, 3, 3, bh, bw));
    }
  };

  int bh = h, bw = w;
  int in_c = spec.in_channels;
  for (int k = 0; k < spec.depth(); ++k) {
    block("encoder/block" + std::to_string(k), in_c, spec.enc_channels[k], bh,
          bw);
    in_c = spec.enc_channels[k];
    bh /= 2;
    bw /= 2;
  }
  block("encoder/bottleneck", in_c, spec.bottleneck, bh, bw);

  const auto dec_ch = spec.dec_channels();
  for (int d = 0; d < spec.decoders; ++d) {
    int cur = spec.bottleneck;
    int dh = bh, dw = bw;
    const std::string dp = MergedAutoencoder<float>::decoder_prefix(d);
    for (int k = 0; k < spec.depth(); ++k) {
      dh *= 2;
      dw *= 2;
      int block_in = cur;
      if (spec.merge) block_in += spec.enc_channels[spec.depth() - 1 - k];
      block(dp + "/block" + std::to_string(k), block_in, dec_ch[k], dh, dw);
      cur = dec_ch[k];
    }
    add(dp + "/head", conv_macs(1, cur, 3, 3, dh, dw));
  }
  return rep;
}

}  // namespace mdae
