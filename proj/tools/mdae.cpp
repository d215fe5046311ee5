// mdae: merged multi-decoder autoencoder pipeline.
// Subcommands: synth, train, reconstruct, evaluate, gradcheck, macs, import.
// Exit codes: 0 success, 2 usage/config error, 3 runtime abort.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mdae/checkpoint.hpp"
#include "mdae/gradcheck.hpp"
#include "mdae/metrics.hpp"
#include "mdae/model.hpp"
#include "mdae/pgm.hpp"
#include "mdae/synth.hpp"
#include "mdae/trainer.hpp"
#include "mdae/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

// ---------------------------------------------------------------------------
// Run configuration: JSON file mirroring the trainer knobs plus model spec
// and dataset paths. Precedence: CLI flag > JSON key > built-in default.

struct RunConfig {
  std::string dataset;
  std::string out = "run";
  std::uint64_t seed = 0;
  int epochs = 500;
  int batch_size = 8;
  double lr0 = 1e-3;
  double decay_factor = 0.9;
  int decay_every = 20;
  bool shuffle = true;
  int decoders = 3;
  bool merge = true;
  std::vector<int> channels{32, 64, 128};
  int bottleneck = 256;
  int split_train = 0;  // 0 = remainder after val/test
  int split_val = 0;    // 0 = 20% (at least 1)
  int split_test = 0;   // 0 = 20% (at least 1)
  int central_total = 0;  // 0 = use all slices
  int central_keep = 0;

  static RunConfig from_file(const std::string& path) {
    json j;
    try {
      j = json::parse(mdae::detail::read_file(path));
    } catch (const json::parse_error& e) {
      throw mdae::format_error(path + ": " + e.what());
    }
    static const std::set<std::string> known{
        "dataset",    "out",        "seed",          "epochs",
        "batch_size", "lr0",        "decay_factor",  "decay_every",
        "shuffle",    "decoders",   "merge",         "channels",
        "bottleneck", "split_train", "split_val",    "split_test",
        "central_total", "central_keep"};
    for (const auto& [key, _] : j.items())
      if (!known.count(key))
        throw mdae::format_error(path + ": unknown config key '" + key + "'");
    RunConfig c;
    auto get = [&j](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("dataset", c.dataset);
    get("out", c.out);
    get("seed", c.seed);
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("lr0", c.lr0);
    get("decay_factor", c.decay_factor);
    get("decay_every", c.decay_every);
    get("shuffle", c.shuffle);
    get("decoders", c.decoders);
    get("merge", c.merge);
    get("channels", c.channels);
    get("bottleneck", c.bottleneck);
    get("split_train", c.split_train);
    get("split_val", c.split_val);
    get("split_test", c.split_test);
    get("central_total", c.central_total);
    get("central_keep", c.central_keep);
    return c;
  }

  json to_json() const {
    return json{{"dataset", dataset},
                {"out", out},
                {"seed", seed},
                {"epochs", epochs},
                {"batch_size", batch_size},
                {"lr0", lr0},
                {"decay_factor", decay_factor},
                {"decay_every", decay_every},
                {"shuffle", shuffle},
                {"decoders", decoders},
                {"merge", merge},
                {"channels", channels},
                {"bottleneck", bottleneck},
                {"split_train", split_train},
                {"split_val", split_val},
                {"split_test", split_test},
                {"central_total", central_total},
                {"central_keep", central_keep}};
  }

  mdae::ModelSpec model_spec() const {
    mdae::ModelSpec s;
    s.enc_channels = channels;
    s.bottleneck = bottleneck;
    s.decoders = decoders;
    s.merge = merge;
    return s;
  }

  mdae::TrainConfig train_config() const {
    mdae::TrainConfig t;
    t.lr0 = lr0;
    t.decay_factor = decay_factor;
    t.decay_every = decay_every;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.seed = seed;
    t.shuffle = shuffle;
    return t;
  }
};

// ---------------------------------------------------------------------------
// Dataset assembly shared by train.

struct LoadedDataset {
  mdae::SliceSet train, val, test;
  std::vector<std::string> train_ids, val_ids, test_ids;
};

mdae::SliceSet subject_slices(const mdae::SubjectVolume& sub,
                              const RunConfig& cfg, int divisor) {
  mdae::Volume lf = sub.lf, hf = sub.hf;
  mdae::normalize_01(lf);
  mdae::normalize_01(hf);
  int first = 0, last = static_cast<int>(lf.size()) - 1;
  if (cfg.central_keep > 0) {
    const int total =
        cfg.central_total > 0 ? cfg.central_total : static_cast<int>(lf.size());
    std::tie(first, last) = mdae::central_slices(total, cfg.central_keep);
    last = std::min<int>(last, static_cast<int>(lf.size()) - 1);
  }
  mdae::SliceSet out;
  for (int z = first; z <= last; ++z)
    out.push_back({mdae::pad_to_multiple(lf[z], divisor),
                   mdae::pad_to_multiple(hf[z], divisor)});
  return out;
}

LoadedDataset load_dataset(const RunConfig& cfg, int divisor) {
  const auto entries = mdae::read_manifest(cfg.dataset);
  if (entries.empty())
    throw mdae::contract_error(cfg.dataset + ": empty manifest");
  const std::string base = fs::path(cfg.dataset).parent_path().string();

  std::vector<std::string> ids;
  for (const auto& e : entries) ids.push_back(e.id);
  const int n = static_cast<int>(ids.size());
  int n_val = cfg.split_val > 0 ? cfg.split_val : std::max(1, n / 5);
  int n_test = cfg.split_test > 0 ? cfg.split_test : std::max(1, n / 5);
  int n_train = cfg.split_train > 0 ? cfg.split_train : n - n_val - n_test;
  const auto split =
      mdae::split_subjects(ids, n_train, n_val, n_test, cfg.seed);

  std::map<std::string, const mdae::ManifestEntry*> by_id;
  for (const auto& e : entries) by_id[e.id] = &e;

  LoadedDataset out;
  auto fill = [&](const std::vector<std::string>& subset, mdae::SliceSet& set,
                  std::vector<std::string>& id_list) {
    for (const auto& id : subset) {
      const auto sub = mdae::load_subject(*by_id.at(id), base);
      auto slices = subject_slices(sub, cfg, divisor);
      set.insert(set.end(), slices.begin(), slices.end());
      id_list.push_back(id);
    }
  };
  fill(split.train, out.train, out.train_ids);
  fill(split.val, out.val, out.val_ids);
  fill(split.test, out.test, out.test_ids);
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

// ---------------------------------------------------------------------------

int cmd_synth(const mdae::SynthParams& params, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const auto result = mdae::synth_generate(params);

  std::vector<mdae::ManifestEntry> entries;
  for (const auto& sub : result.subjects) {
    mdae::ManifestEntry e;
    e.id = sub.id;
    e.lf_path = sub.id + "_lf.mvol";
    e.hf_path = sub.id + "_hf.mvol";
    e.labels_path = sub.id + "_labels.mvol";
    mdae::save_volume((fs::path(out_dir) / e.lf_path).string(), sub.lf);
    mdae::save_volume((fs::path(out_dir) / e.hf_path).string(), sub.hf);
    mdae::save_labels((fs::path(out_dir) / e.labels_path).string(),
                      sub.labels);
    entries.push_back(std::move(e));
  }
  mdae::write_manifest((fs::path(out_dir) / "manifest.json").string(),
                       entries);

  json stats{{"baseline_psnr", result.baseline_psnr},
             {"subjects", static_cast<int>(result.subjects.size())},
             {"slices_per_subject", params.slices},
             {"size", params.size},
             {"seed", params.seed},
             {"blur_sigma", params.blur_sigma},
             {"gamma", params.gamma},
             {"noise_sigma", params.noise_sigma}};
  mdae::detail::atomic_write_file(
      (fs::path(out_dir) / "stats.json").string(), stats.dump(2) + "\n");
  std::cout << "synth: " << result.subjects.size() << " subjects, baseline LF-vs-HF PSNR "
            << result.baseline_psnr << " dB -> " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& cfg) {
  if (cfg.dataset.empty())
    throw mdae::contract_error("train: no dataset configured");
  std::cout << "config: " << cfg.to_json().dump() << "\n";
  fs::create_directories(cfg.out);

  const auto spec = cfg.model_spec();
  const auto data = load_dataset(cfg, spec.spatial_divisor());
  std::cout << "split subjects: train [" << join(data.train_ids) << "] val ["
            << join(data.val_ids) << "] test [" << join(data.test_ids)
            << "]\n";
  std::cout << "slices: train " << data.train.size() << ", val "
            << data.val.size() << ", test " << data.test.size() << "\n";

  mdae::MergedAutoencoder<float> model(spec, cfg.seed);
  std::cout << "parameters: " << model.registry().value_count(true) << "\n";

  const std::string ckpt = (fs::path(cfg.out) / "checkpoint.mdae").string();
  const auto t0 = std::chrono::steady_clock::now();
  auto result = mdae::fit(model, data.train, data.val, cfg.train_config(), ckpt);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  mdae::detail::atomic_write_file(
      (fs::path(cfg.out) / "history.csv").string(),
      mdae::history_to_csv(result, spec.decoders));

  std::vector<long long> selections(spec.decoders, 0);
  for (const auto& e : result.history)
    for (int d = 0; d < spec.decoders; ++d) selections[d] += e.selections[d];

  double test_psnr = 0.0;
  if (!data.test.empty() && !result.aborted)
    test_psnr = mdae::validate(model, data.test, cfg.batch_size);

  json summary{{"best_epoch", result.best_epoch},
               {"best_val_psnr", mdae::metric_value(result.best_val_psnr)},
               {"test_psnr", mdae::metric_value(test_psnr)},
               {"selection_counts", selections},
               {"epochs_run", static_cast<int>(result.history.size())},
               {"aborted", result.aborted},
               {"abort_reason", result.abort_reason},
               {"train_seconds", secs},
               {"config", cfg.to_json()}};
  mdae::detail::atomic_write_file(
      (fs::path(cfg.out) / "summary.json").string(), summary.dump(2) + "\n");

  for (const auto& e : result.history)
    if (e.epoch == result.best_epoch)
      std::cout << "best epoch " << e.epoch << " val PSNR " << e.val_psnr
                << " dB\n";
  std::cout << "train: " << result.history.size() << " epochs in " << secs
            << " s; test PSNR " << test_psnr << " dB -> " << cfg.out << "\n";
  if (result.aborted) {
    std::cerr << "training aborted: " << result.abort_reason
              << " (best checkpoint retained)\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_reconstruct(const std::string& ckpt_path, const std::string& manifest,
                    const std::string& out_dir, bool dump_pgm) {
  auto loaded = mdae::load_checkpoint(ckpt_path);
  const int divisor = loaded.spec.spatial_divisor();
  fs::create_directories(out_dir);

  const auto entries = mdae::read_manifest(manifest);
  const std::string base = fs::path(manifest).parent_path().string();
  for (const auto& e : entries) {
    const auto t0 = std::chrono::steady_clock::now();
    mdae::Volume lf = mdae::load_volume((fs::path(base) / e.lf_path).string());
    mdae::normalize_01(lf);

    mdae::Volume pred;
    std::vector<mdae::PadInfo> infos(lf.size());
    std::vector<mdae::Image2> padded;
    for (std::size_t z = 0; z < lf.size(); ++z)
      padded.push_back(mdae::pad_to_multiple(lf[z], divisor, &infos[z]));
    const int batch = 8;
    for (std::size_t start = 0; start < padded.size(); start += batch) {
      const std::size_t count =
          std::min<std::size_t>(batch, padded.size() - start);
      std::span<const mdae::Image2> chunk(padded.data() + start, count);
      auto avg = loaded.model.predict_average(mdae::stack_slices(chunk));
      for (std::size_t i = 0; i < count; ++i)
        pred.push_back(mdae::crop_to(
            mdae::tensor_slice(avg, static_cast<int>(i)), infos[start + i]));
    }
    const auto out_path = (fs::path(out_dir) / (e.id + "_pred.mvol")).string();
    mdae::save_volume(out_path, pred);
    if (dump_pgm) {
      const auto pgm_dir = fs::path(out_dir) / (e.id + "_pgm");
      fs::create_directories(pgm_dir);
      char name[32];
      for (std::size_t z = 0; z < pred.size(); ++z) {
        std::snprintf(name, sizeof(name), "slice_%04zu.pgm", z);
        mdae::write_pgm8((pgm_dir / name).string(), pred[z]);
      }
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    std::cout << "reconstruct " << e.id << ": " << pred.size() << " slices in "
              << secs << " s -> " << out_path << "\n";
  }
  return kExitOk;
}

int cmd_evaluate(const std::string& pred_dir, const std::string& manifest,
                 bool apply_hm, bool with_labels,
                 const std::vector<int>& classes, std::string out_dir) {
  if (out_dir.empty()) out_dir = pred_dir;
  fs::create_directories(out_dir);
  const auto entries = mdae::read_manifest(manifest);
  const std::string base = fs::path(manifest).parent_path().string();

  std::vector<std::string> missing;
  for (const auto& e : entries) {
    if (!fs::exists(fs::path(pred_dir) / (e.id + "_pred.mvol")))
      missing.push_back(e.id);
    if (with_labels &&
        !fs::exists(fs::path(pred_dir) / (e.id + "_labels.mvol")))
      missing.push_back(e.id + " (labels)");
  }
  if (!missing.empty())
    throw mdae::contract_error("evaluate: missing predictions for subjects: " +
                               join(missing));

  json dataset_summary = json::array();
  std::vector<double> vol_psnr, vol_ssim, vol_sharp, vol_width;
  std::map<int, std::vector<double>> vol_dice;
  for (const auto& e : entries) {
    mdae::Volume truth =
        mdae::load_volume((fs::path(base) / e.hf_path).string());
    const auto rec = mdae::normalize_01(truth);
    mdae::Volume lf = mdae::load_volume((fs::path(base) / e.lf_path).string());
    mdae::normalize_01(lf);
    mdae::Volume pred = mdae::load_volume(
        (fs::path(pred_dir) / (e.id + "_pred.mvol")).string());
    if (pred.size() != truth.size())
      throw mdae::shape_error("evaluate " + e.id + ": pred has " +
                              std::to_string(pred.size()) + " slices, truth " +
                              std::to_string(truth.size()));

    mdae::EvaluateOptions opts;
    opts.apply_hm = apply_hm;
    opts.scale_min = rec.min;
    opts.scale_max = rec.max;
    auto rep = mdae::evaluate_volume(pred, truth, lf, opts);

    if (with_labels) {
      const auto truth_labels =
          mdae::load_labels((fs::path(base) / e.labels_path).string());
      const auto pred_labels = mdae::load_labels(
          (fs::path(pred_dir) / (e.id + "_labels.mvol")).string());
      for (int cls : classes) {
        rep.dice_per_class[cls] = mdae::dice(pred_labels, truth_labels, cls);
        vol_dice[cls].push_back(rep.dice_per_class[cls]);
      }
    }

    mdae::detail::atomic_write_file(
        (fs::path(out_dir) / (e.id + "_metrics.json")).string(),
        mdae::report_to_json(rep).dump(2) + "\n");
    mdae::detail::atomic_write_file(
        (fs::path(out_dir) / (e.id + "_metrics.csv")).string(),
        mdae::report_to_csv(rep));

    vol_psnr.push_back(rep.psnr.mean);
    vol_ssim.push_back(rep.ssim.mean);
    vol_sharp.push_back(rep.sharpness.mean);
    vol_width.push_back(rep.edge_width.mean);
    dataset_summary.push_back({{"id", e.id},
                               {"psnr", mdae::metric_value(rep.psnr.mean)},
                               {"ssim", rep.ssim.mean},
                               {"sharpness", rep.sharpness.mean},
                               {"edge_width", rep.edge_width.mean}});
    std::cout << "evaluate " << e.id << ": PSNR "
              << mdae::csv_value(rep.psnr.mean) << " dB, SSIM "
              << rep.ssim.mean << "\n";
  }

  auto agg = [](const std::vector<double>& v) {
    const auto a = mdae::detail::aggregate(v);
    return json{{"mean", mdae::metric_value(a.mean)}, {"std", a.stddev}};
  };
  json summary{{"hm_applied", apply_hm},
               {"volumes", dataset_summary},
               {"psnr", agg(vol_psnr)},
               {"ssim", agg(vol_ssim)},
               {"sharpness", agg(vol_sharp)},
               {"edge_width", agg(vol_width)}};
  if (!vol_dice.empty()) {
    json d;
    for (const auto& [cls, vals] : vol_dice) d[std::to_string(cls)] = agg(vals);
    summary["dice"] = d;
  }
  mdae::detail::atomic_write_file(
      (fs::path(out_dir) / "evaluation_summary.json").string(),
      summary.dump(2) + "\n");
  std::cout << "evaluate: summary -> "
            << (fs::path(out_dir) / "evaluation_summary.json").string() << "\n";
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed) {
  bool all_pass = true;
  for (const auto& rep : mdae::gradcheck::run_all(seed)) {
    for (const auto& arg : rep.args) {
      const bool ok = arg.max_rel_err < rep.tolerance;
      all_pass = all_pass && ok;
      std::printf("%-22s %-10s %1.3e  %s\n", rep.op.c_str(), arg.name.c_str(),
                  arg.max_rel_err, ok ? "PASS" : "FAIL");
    }
  }
  return all_pass ? kExitOk : kExitRuntime;
}

int cmd_macs(const RunConfig& cfg, int size, const std::string& single_conv) {
  if (!single_conv.empty()) {
    int oc, ic, k, hw;
    if (std::sscanf(single_conv.c_str(), "%d:%d:%d:%d", &oc, &ic, &k, &hw) != 4)
      throw mdae::contract_error("--conv expects OC:IC:K:HW");
    std::cout << "conv " << oc << "x" << ic << "x" << k << "x" << k << " @ "
              << hw << "x" << hw << ": " << mdae::conv_macs(oc, ic, k, k, hw, hw)
              << " MACs\n";
    return kExitOk;
  }
  const auto rep = mdae::count_macs(cfg.model_spec(), size, size);
  for (const auto& line : rep.lines)
    std::printf("%-28s %14lld\n", line.layer.c_str(), line.macs);
  std::printf("%-28s %14lld\n", "total (per sample)", rep.total);
  return kExitOk;
}

int cmd_import(const std::string& out_dir, const std::string& id,
               const std::string& lf_dir, const std::string& hf_dir) {
  auto read_stack = [](const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.path().extension() == ".pgm")
        files.push_back(entry.path().string());
    if (files.empty())
      throw mdae::contract_error(dir + ": no .pgm slices found");
    std::sort(files.begin(), files.end());
    mdae::Volume vol;
    for (const auto& f : files) vol.push_back(mdae::read_pgm(f));
    return vol;
  };
  const auto lf = read_stack(lf_dir);
  const auto hf = read_stack(hf_dir);
  if (lf.size() != hf.size() || !lf[0].same_dims(hf[0]))
    throw mdae::shape_error("import: lf and hf stacks disagree on dims");

  fs::create_directories(out_dir);
  mdae::ManifestEntry e;
  e.id = id;
  e.lf_path = id + "_lf.mvol";
  e.hf_path = id + "_hf.mvol";
  mdae::save_volume((fs::path(out_dir) / e.lf_path).string(), lf);
  mdae::save_volume((fs::path(out_dir) / e.hf_path).string(), hf);

  const auto manifest = (fs::path(out_dir) / "manifest.json").string();
  std::vector<mdae::ManifestEntry> entries;
  if (fs::exists(manifest)) entries = mdae::read_manifest(manifest);
  entries.erase(std::remove_if(entries.begin(), entries.end(),
                               [&id](const auto& x) { return x.id == id; }),
                entries.end());
  entries.push_back(e);
  mdae::write_manifest(manifest, entries);
  std::cout << "import: " << id << " (" << lf.size() << " slices) -> "
            << manifest << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"merged multi-decoder autoencoder for paired slice-to-slice "
               "image reconstruction"};
  app.require_subcommand(1);

  // synth ---------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate a synthetic paired dataset");
  mdae::SynthParams sp;
  std::string synth_out = "data";
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--count", sp.count, "number of subjects");
  synth->add_option("--size", sp.size, "slice height/width");
  synth->add_option("--slices", sp.slices, "slices per subject");
  synth->add_option("--seed", sp.seed, "generator seed");
  synth->add_option("--blur", sp.blur_sigma, "degradation blur sigma");
  synth->add_option("--gamma", sp.gamma, "degradation gamma");
  synth->add_option("--noise", sp.noise_sigma, "degradation noise sigma");

  // train ---------------------------------------------------------------
  auto* train = app.add_subcommand("train", "train on a paired dataset");
  std::string config_path;
  RunConfig overrides;
  bool no_merge = false, merge_on = false;
  train->add_option("--config", config_path, "JSON config file");
  auto* o_ds = train->add_option("--dataset", overrides.dataset, "manifest path");
  auto* o_out = train->add_option("--out", overrides.out, "output directory");
  auto* o_seed = train->add_option("--seed", overrides.seed, "training seed");
  auto* o_epochs = train->add_option("--epochs", overrides.epochs, "epochs");
  auto* o_batch = train->add_option("--batch-size", overrides.batch_size, "batch size");
  auto* o_lr = train->add_option("--lr0", overrides.lr0, "initial learning rate");
  auto* o_dec = train->add_option("--decoders", overrides.decoders, "decoder count");
  train->add_flag("--no-merge", no_merge, "disable merge connections");
  train->add_flag("--merge", merge_on, "enable merge connections");

  // reconstruct ----------------------------------------------------------
  auto* rec = app.add_subcommand("reconstruct", "run averaged inference");
  std::string rec_ckpt, rec_manifest, rec_out = "pred";
  bool rec_pgm = false;
  rec->add_option("--checkpoint", rec_ckpt, "checkpoint file")->required();
  rec->add_option("--input", rec_manifest, "input manifest")->required();
  rec->add_option("--out", rec_out, "output directory");
  rec->add_flag("--dump-pgm", rec_pgm, "also write 8-bit PGM slices");

  // evaluate ---------------------------------------------------------------
  auto* eval = app.add_subcommand("evaluate", "score predictions against truth");
  std::string ev_pred, ev_manifest, ev_out;
  bool ev_hm = false, ev_labels = false;
  std::vector<int> ev_classes{1, 2, 3};
  eval->add_option("--pred", ev_pred, "directory of <id>_pred.mvol")->required();
  eval->add_option("--truth", ev_manifest, "truth manifest")->required();
  eval->add_option("--out", ev_out, "report directory (default: pred dir)");
  eval->add_flag("--hm", ev_hm, "histogram-match predictions to the LF reference");
  eval->add_flag("--labels", ev_labels, "compute dice from <id>_labels.mvol pairs");
  eval->add_option("--classes", ev_classes, "label classes for dice");

  // gradcheck / macs ------------------------------------------------------
  auto* gc = app.add_subcommand("gradcheck", "finite-difference oracle suite");
  std::uint64_t gc_seed = 20240501;
  gc->add_option("--seed", gc_seed, "suite seed");

  auto* macs = app.add_subcommand("macs", "multiply-accumulate counts");
  int macs_size = 64;
  std::string macs_conv;
  RunConfig macs_cfg;
  macs->add_option("--size", macs_size, "input height/width");
  macs->add_option("--decoders", macs_cfg.decoders, "decoder count");
  macs->add_option("--bottleneck", macs_cfg.bottleneck, "bottleneck channels");
  macs->add_option("--channels", macs_cfg.channels, "encoder channel schedule");
  bool macs_no_merge = false;
  macs->add_flag("--no-merge", macs_no_merge, "disable merge connections");
  macs->add_option("--conv", macs_conv, "single conv probe OC:IC:K:HW");

  // import -----------------------------------------------------------------
  auto* imp = app.add_subcommand("import", "import PGM slice stacks as a subject");
  std::string imp_out = "data", imp_id, imp_lf, imp_hf;
  imp->add_option("--out", imp_out, "dataset directory");
  imp->add_option("--id", imp_id, "subject id")->required();
  imp->add_option("--lf-dir", imp_lf, "directory of LF .pgm slices")->required();
  imp->add_option("--hf-dir", imp_hf, "directory of HF .pgm slices")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*synth) return cmd_synth(sp, synth_out);
    if (*train) {
      RunConfig cfg = config_path.empty() ? RunConfig{}
                                          : RunConfig::from_file(config_path);
      if (o_ds->count()) cfg.dataset = overrides.dataset;
      if (o_out->count()) cfg.out = overrides.out;
      if (o_seed->count()) cfg.seed = overrides.seed;
      if (o_epochs->count()) cfg.epochs = overrides.epochs;
      if (o_batch->count()) cfg.batch_size = overrides.batch_size;
      if (o_lr->count()) cfg.lr0 = overrides.lr0;
      if (o_dec->count()) cfg.decoders = overrides.decoders;
      if (no_merge) cfg.merge = false;
      if (merge_on) cfg.merge = true;
      return cmd_train(cfg);
    }
    if (*rec) return cmd_reconstruct(rec_ckpt, rec_manifest, rec_out, rec_pgm);
    if (*eval)
      return cmd_evaluate(ev_pred, ev_manifest, ev_hm, ev_labels, ev_classes,
                          ev_out);
    if (*gc) return cmd_gradcheck(gc_seed);
    if (*macs) {
      macs_cfg.merge = !macs_no_merge;
      return cmd_macs(macs_cfg, macs_size, macs_conv);
    }
    if (*imp) return cmd_import(imp_out, imp_id, imp_lf, imp_hf);
  } catch (const mdae::training_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const mdae::format_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const mdae::contract_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const mdae::shape_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
