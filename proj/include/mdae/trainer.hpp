#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mdae/checkpoint.hpp"
#include "mdae/metrics.hpp"
#include "mdae/model.hpp"
#include "mdae/optimizer.hpp"
#include "mdae/volume.hpp"

// The selective backpropagation loop. Per batch, every decoder is trained on
// its own reconstruction loss while the encoder receives gradients from the
// minimum-loss branch only; one Adam step then updates all groups.

namespace mdae {

struct TrainConfig {
  double lr0 = 1e-3;
  double decay_factor = 0.9;
  int decay_every = 20;
  int epochs = 500;
  int batch_size = 8;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const {
    if (!(lr0 > 0.0)) throw contract_error("train: lr0 must be > 0");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0))
      throw contract_error("train: decay_factor outside (0, 1]");
    if (decay_every < 1) throw contract_error("train: decay_every < 1");
    if (epochs < 1) throw contract_error("train: epochs < 1");
    if (batch_size < 1) throw contract_error("train: batch_size < 1");
  }
};

// lr0 * decay^floor(e / decay_every), by repeated multiplication so the
// schedule is bit-stable across libm versions.
inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw contract_error("lr_at_epoch: negative epoch");
  const int k = epoch / cfg.decay_every;
  double lr = cfg.lr0;
  for (int i = 0; i < k; ++i) lr *= cfg.decay_factor;
  return lr;
}

// Argmin of the per-decoder losses; ties break to the smallest index.
inline int select_decoder(std::span<const double> losses) {
  if (losses.empty()) throw contract_error("select_decoder: no decoders");
  int best = 0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!std::isfinite(losses[i]))
      throw training_error("non-finite loss " + std::to_string(losses[i]) +
                           " at decoder " + std::to_string(i));
    if (losses[i] < losses[best]) best = static_cast<int>(i);
  }
  return best;
}

struct BatchResult {
  std::vector<double> losses;  // E_i per decoder
  int selected = 0;            // branch that updated the encoder
};

inline BatchResult train_batch(MergedAutoencoder<float>& model,
                               Adam<float>& opt, const Tensor4<float>& lf,
                               const Tensor4<float>& hf, double lr) {
  require_same_dims(lf, hf, "train_batch");
  const int d_count = model.spec().decoders;

  MergedAutoencoder<float>::ForwardCaches caches;
  auto ys = model.forward_all(lf, Mode::train, &caches);

  BatchResult res;
  std::vector<MseCache<float>> mse_caches(d_count);
  for (int d = 0; d < d_count; ++d)
    res.losses.push_back(mse(ys[d], hf, &mse_caches[d]));
  res.selected = select_decoder(res.losses);

  model.registry().zero_grads();
  BranchGrads<float> selected_branch;
  for (int d = 0; d < d_count; ++d) {
    auto branch =
        model.decoder_backward(d, caches.decoders[d], mse_backward(mse_caches[d]));
    if (d == res.selected) selected_branch = std::move(branch);
  }
  model.encoder_backward(caches.encoder, selected_branch);
  opt.step(model.registry(), lr);
  return res;
}

// Mean per-slice PSNR of the averaged prediction, data range 1.
inline double validate(MergedAutoencoder<float>& model, const SliceSet& val,
                       int batch_size = 8) {
  if (val.empty()) throw contract_error("validate: empty validation set");
  double sum = 0.0;
  std::size_t done = 0;
  while (done < val.size()) {
    const std::size_t count =
        std::min<std::size_t>(batch_size, val.size() - done);
    std::vector<Image2> lf;
    lf.reserve(count);
    for (std::size_t i = 0; i < count; ++i) lf.push_back(val[done + i].lf);
    auto pred = model.predict_average(stack_slices(lf));
    for (std::size_t i = 0; i < count; ++i)
      sum += psnr(tensor_slice(pred, static_cast<int>(i)), val[done + i].hf,
                  1.0);
    done += count;
  }
  return sum / static_cast<double>(val.size());
}

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  std::vector<double> mean_loss;       // per decoder, mean over batches
  std::vector<long long> selections;   // per decoder
  double val_psnr = 0.0;
};

struct FitResult {
  std::vector<EpochStats> history;
  int best_epoch = -1;
  double best_val_psnr = -std::numeric_limits<double>::infinity();
  bool aborted = false;
  std::string abort_reason;
};

// Epoch loop: seeded shuffle, train_batch over the epoch, validate, keep the
// checkpoint with maximum validation PSNR. On a non-finite loss the loop
// aborts; the best checkpoint written so far stays on disk. The model is
// left holding the best parameters.
inline FitResult fit(MergedAutoencoder<float>& model, const SliceSet& train,
                     const SliceSet& val, const TrainConfig& cfg,
                     const std::string& checkpoint_path = "") {
  cfg.validate();
  if (train.empty()) throw contract_error("fit: empty training set");
  if (val.empty()) throw contract_error("fit: empty validation set");

  const int d_count = model.spec().decoders;
  Adam<float> opt(model.registry());
  FitResult out;
  std::vector<Tensor4<float>> best_values;

  auto snapshot = [&model, &best_values] {
    best_values.clear();
    for (const auto& p : model.registry()) best_values.push_back(p.value);
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr_at_epoch(cfg, epoch);
    stats.mean_loss.assign(d_count, 0.0);
    stats.selections.assign(d_count, 0);

    try {
      const auto batches = make_batches(
          train, cfg.batch_size, splitmix64(cfg.seed) + epoch, cfg.shuffle);
      for (const auto& batch : batches) {
        const auto res = train_batch(model, opt, batch.lf, batch.hf, stats.lr);
        for (int d = 0; d < d_count; ++d)
          stats.mean_loss[d] += res.losses[d];
        stats.selections[res.selected]++;
      }
      for (int d = 0; d < d_count; ++d)
        stats.mean_loss[d] /= static_cast<double>(batches.size());
      stats.val_psnr = validate(model, val, cfg.batch_size);
    } catch (const training_error& e) {
      out.aborted = true;
      out.abort_reason = e.what();
      break;
    }

    out.history.push_back(stats);
    if (stats.val_psnr > out.best_val_psnr) {
      out.best_val_psnr = stats.val_psnr;
      out.best_epoch = epoch;
      snapshot();
      if (!checkpoint_path.empty())
        save_checkpoint(checkpoint_path, model, epoch, stats.val_psnr);
    }
  }

  if (!best_values.empty()) {
    std::size_t i = 0;
    for (auto& p : model.registry()) p.value = best_values[i++];
  }
  return out;
}

// CSV: epoch, lr, loss_d0.., sel_d0.., val_psnr. %.17g keeps doubles exact.
inline std::string history_to_csv(const FitResult& fit_result, int decoders) {
  std::string out = "epoch,lr";
  for (int d = 0; d < decoders; ++d) out += ",loss_d" + std::to_string(d);
  for (int d = 0; d < decoders; ++d) out += ",sel_d" + std::to_string(d);
  out += ",val_psnr\n";
  char buf[64];
  for (const auto& e : fit_result.history) {
    out += std::to_string(e.epoch);
    std::snprintf(buf, sizeof(buf), ",%.17g", e.lr);
    out += buf;
    for (double l : e.mean_loss) {
      std::snprintf(buf, sizeof(buf), ",%.17g", l);
      out += buf;
    }
    for (long long s : e.selections) out += "," + std::to_string(s);
    if (std::isinf(e.val_psnr)) {
      out += e.val_psnr > 0 ? ",inf" : ",-inf";
    } else {
      std::snprintf(buf, sizeof(buf), ",%.17g", e.val_psnr);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace mdae
