#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "brainmclip/alignment/csv.hpp"
#include "brainmclip/alignment/rsa.hpp"
#include "brainmclip/cli/run_config.hpp"
#include "brainmclip/core/error.hpp"
#include "brainmclip/data/dataset_io.hpp"
#include "brainmclip/data/synth.hpp"
#include "brainmclip/model/checkpoint.hpp"
#include "brainmclip/train/evaluate.hpp"
#include "brainmclip/train/grad_suite.hpp"
#include "brainmclip/train/lasso.hpp"
#include "brainmclip/train/trainer.hpp"

namespace brainmclip::cli {

namespace fs = std::filesystem;

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool quiet = false;
};

enum ExitCode : int { kOk = 0, kUsage = 2, kNumerical = 3 };

inline RunConfig resolve_config(const fs::path& config, const GlobalOptions& g) {
  RunConfig c = load_run_config(config);
  if (g.seed) {
    c.synth.seed = *g.seed;
    c.train.seed = *g.seed;
  }
  validate_run_config(c);
  return c;
}

/// Creates dir; a non-empty existing dir is cleared with --force and refused otherwise.
inline void prepare_output_dir(const fs::path& dir, bool force) {
  if (dir.empty()) throw UsageError("--out is required");
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw UsageError(dir.string() + " is not empty (use --force to overwrite)");
      for (const auto& entry : fs::directory_iterator(dir)) fs::remove_all(entry.path());
    }
  }
  fs::create_directories(dir);
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw UsageError("cannot write " + path.string());
  f << text;
}

inline void write_resolved(const fs::path& dir, const RunConfig& c) {
  std::ostringstream os;
  write_resolved_config(os, c);
  write_text_file(dir / "config.resolved.txt", os.str());
}

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json metrics_json(const EvalMetrics& m, const std::string& history_file) {
  nlohmann::json j;
  j["variant"] = to_string(m.variant);
  j["seed"] = m.seed;
  j["pixcorr"] = optional_json(m.pixcorr);
  j["ssim"] = optional_json(m.ssim);
  j["two_way_image"] = optional_json(m.two_way_image);
  j["two_way_text"] = optional_json(m.two_way_text);
  j["loss_history_file"] = history_file.empty() ? nlohmann::json(nullptr) : nlohmann::json(history_file);
  return j;
}

/// Training-target settings stored beside a checkpoint so eval rebuilds the same targets.
inline void save_target_spec(const fs::path& ckpt, const TrainConfig& tc) {
  write_text_file(ckpt / "targets.txt", "layer_lo=" + std::to_string(tc.layer_range.lo) + "\nlayer_hi=" +
                                            std::to_string(tc.layer_range.hi) + "\ninclude_final=" +
                                            (tc.include_final ? "true" : "false") + "\nseed=" +
                                            std::to_string(tc.seed) + "\n");
}

inline TrainConfig load_target_spec(const fs::path& ckpt) {
  const auto kv = detail::read_key_values(ckpt / "targets.txt");
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw UsageError((ckpt / "targets.txt").string() + ": missing key " + key);
    return it->second;
  };
  TrainConfig tc;
  tc.layer_range = {detail::parse_number<int>("layer_lo", get("layer_lo")),
                    detail::parse_number<int>("layer_hi", get("layer_hi"))};
  tc.include_final = detail::parse_bool("include_final", get("include_final"));
  tc.seed = detail::parse_number<std::uint64_t>("seed", get("seed"));
  return tc;
}

inline int cmd_gen_data(const fs::path& config, const fs::path& out, const GlobalOptions& g) {
  const RunConfig c = resolve_config(config, g);
  prepare_output_dir(out, g.force);
  save_dataset(synth_generate(c.synth), out);
  write_resolved(out, c);
  if (!g.quiet) std::cout << "wrote dataset to " << out.string() << '\n';
  return kOk;
}

inline int cmd_train(const fs::path& config, const fs::path& data, const fs::path& out,
                     const std::optional<std::string>& variant, const GlobalOptions& g) {
  RunConfig c = resolve_config(config, g);
  if (variant) c.train.variant = variant_from_string(*variant);
  const Dataset ds = load_dataset(data, c.analysis.projection);
  const ModelConfig mc = resolve_model_config(c.model, ds);
  c.model = mc;
  prepare_output_dir(out, g.force);

  const TrainResult r = train(ds, mc, c.train);
  save_checkpoint(r.params, out / "checkpoint");
  save_target_spec(out / "checkpoint", c.train);
  {
    std::ostringstream os;
    write_loss_history_csv(os, r.report);
    write_text_file(out / "loss_history.csv", os.str());
  }
  nlohmann::json report;
  report["variant"] = to_string(r.report.variant);
  report["seed"] = r.report.seed;
  report["epochs"] = c.train.epochs;
  report["monitored"] = r.report.monitored;
  report["best_epoch"] = r.report.best_epoch;
  report["best_value"] = r.report.best_value;
  report["loss_history_file"] = "loss_history.csv";
  write_text_file(out / "train_report.json", report.dump(2) + "\n");
  if (ds.n_test >= 2) {
    const EvalMetrics m = evaluate_test(r.params, ds, c.train);
    write_text_file(out / "metrics.json", metrics_json(m, "loss_history.csv").dump(2) + "\n");
  }
  write_resolved(out, c);
  if (!g.quiet) {
    std::cout << "trained " << to_string(c.train.variant) << " for " << c.train.epochs << " epochs; best "
              << r.report.monitored << " " << r.report.best_value << " at epoch " << r.report.best_epoch << '\n';
  }
  return kOk;
}

inline int cmd_eval(const fs::path& ckpt, const fs::path& data, const fs::path& out, const GlobalOptions& g) {
  if (ckpt.empty()) throw UsageError("eval requires --ckpt");
  const ModelParams p = load_checkpoint(ckpt);
  const TrainConfig tc = load_target_spec(ckpt);
  const Dataset ds = load_dataset(data);
  prepare_output_dir(out, g.force);
  EvalMetrics m = evaluate_test(p, ds, tc);
  const fs::path history = ckpt.parent_path() / "loss_history.csv";
  write_text_file(out / "metrics.json",
                  metrics_json(m, fs::exists(history) ? history.string() : std::string()).dump(2) + "\n");
  if (!g.quiet) std::cout << "wrote " << (out / "metrics.json").string() << '\n';
  return kOk;
}

/// Latent codes b_IS / b_ID of the given samples, in inference mode.
inline ImageOutputs image_codes(const ModelParams& p, const Dataset& ds, std::span<const std::size_t> idx) {
  if (!has_image_branch(p.variant)) throw UsageError("checkpoint variant " + std::string(to_string(p.variant)) + " has no image branch");
  const Matrix f_det = gather_rows(ds.voxels, idx);
  const Matrix f_sem = region_columns(f_det, ds.mask, Region::high_level);
  return image_branch_forward(f_sem, f_det, p, ForwardMode::infer());
}

inline int cmd_analyze(const std::string& mode, const fs::path& config, const fs::path& data,
                       const std::optional<fs::path>& ckpt, const fs::path& out, const GlobalOptions& g) {
  RunConfig c = resolve_config(config, g);
  if (mode != "rsa" && mode != "cka-heatmap" && mode != "layer-scan") {
    throw UsageError("unknown analyze mode '" + mode + "' (rsa | cka-heatmap | layer-scan)");
  }
  if (mode == "rsa" && c.analysis.rsa_source == "codes" && !ckpt) {
    throw UsageError("analyze --mode rsa with analysis.rsa_source=codes requires --ckpt");
  }
  const Dataset ds = load_dataset(data, c.analysis.projection);
  prepare_output_dir(out, g.force);

  std::ostringstream os;
  fs::path file;
  if (mode == "rsa") {
    std::vector<NamedFeatures> regions;
    if (c.analysis.rsa_source == "voxels") {
      regions.push_back({"low_level", region_columns(ds.voxels, ds.mask, Region::low_level)});
      regions.push_back({"high_level", region_columns(ds.voxels, ds.mask, Region::high_level)});
    } else {
      const ModelParams p = load_checkpoint(*ckpt);
      const auto all = index_range(0, ds.size());
      ImageOutputs codes = image_codes(p, ds, all);
      if (!codes.code_sem.empty()) regions.push_back({"code_sem", std::move(codes.code_sem)});
      if (!codes.code_det.empty()) regions.push_back({"code_det", std::move(codes.code_det)});
    }
    RsaMode rmode = RsaRaw{};
    if (c.analysis.rsa_mode == "ridge") rmode = RsaRidge{c.analysis.ridge_lambda};
    write_rsa_csv(os, region_layer_rsa(regions, ds.layers, rmode));
    file = out / "rsa.csv";
  } else if (mode == "cka-heatmap") {
    write_pairs_csv(os, layer_cka_heatmap(ds.layers), ds.layers.ids());
    file = out / "cka_heatmap.csv";
  } else {
    const ModelConfig mc = resolve_model_config(c.model, ds);
    c.model = mc;
    TrainConfig tc = c.train;
    tc.epochs = c.analysis.scan_epochs;
    write_layer_scan_csv(os, layer_scan(ds, c.analysis.scan, mc, tc));
    file = out / "layer_scan.csv";
  }
  write_text_file(file, os.str());
  write_resolved(out, c);
  if (!g.quiet) std::cout << "wrote " << file.string() << '\n';
  return kOk;
}

inline int cmd_backproject(const fs::path& config, const fs::path& ckpt, const fs::path& data,
                           std::optional<double> lambda, const std::string& branch, const fs::path& out,
                           const GlobalOptions& g) {
  RunConfig c = resolve_config(config, g);
  if (lambda) c.analysis.lasso_lambda = *lambda;
  if (branch != "detail" && branch != "semantic") throw UsageError("--branch must be detail or semantic");
  if (ckpt.empty()) throw UsageError("backproject requires --ckpt");
  const ModelParams p = load_checkpoint(ckpt);
  const Dataset ds = load_dataset(data);
  prepare_output_dir(out, g.force);

  const auto idx = train_indices(ds);
  ImageOutputs codes = image_codes(p, ds, idx);
  const Matrix& features = branch == "detail" ? codes.code_det : codes.code_sem;
  if (features.empty()) {
    throw UsageError("checkpoint variant " + std::string(to_string(p.variant)) + " has no " + branch + " path");
  }
  const BackprojectResult r = backproject(features, gather_rows(ds.voxels, idx), ds.mask, c.analysis.lasso_lambda);
  if (!g.quiet && !r.unconverged_features.empty()) {
    std::cerr << "warning: lasso did not converge for " << r.unconverged_features.size() << " feature(s)\n";
  }
  write_text_file(out / "backproject.csv", "region,mean_abs_beta\nlow_level," + format_g9(r.low_level) +
                                               "\nhigh_level," + format_g9(r.high_level) + "\n");
  write_resolved(out, c);
  if (!g.quiet) std::cout << "wrote " << (out / "backproject.csv").string() << '\n';
  return kOk;
}

/// Runs the gradient suite; any breach exits with the numerical-failure code.
inline int cmd_gradcheck(const GlobalOptions& g) {
  bool ok = true;
  for (const auto& c : run_grad_suite()) {
    ok = ok && c.passed();
    if (!g.quiet || !c.passed()) {
      std::printf("%-30s max_rel_err=%.3e threshold=%.0e %s\n", c.name.c_str(), c.max_rel_error, c.threshold,
                  c.passed() ? "ok" : "FAIL");
    }
  }
  return ok ? kOk : kNumerical;
}

}  // namespace brainmclip::cli
