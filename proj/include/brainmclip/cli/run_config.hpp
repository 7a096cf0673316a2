#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "brainmclip/alignment/rsa.hpp"
#include "brainmclip/core/error.hpp"
#include "brainmclip/data/synth.hpp"
#include "brainmclip/model/params.hpp"
#include "brainmclip/train/evaluate.hpp"
#include "brainmclip/train/metrics.hpp"
#include "brainmclip/train/trainer.hpp"

namespace brainmclip {

struct AnalysisConfig {
  std::string rsa_mode = "raw";        // raw | ridge
  double ridge_lambda = 1.0;
  std::string rsa_source = "voxels";  // voxels | codes
  std::vector<LayerScanEntry> scan{{{2, 4}, true}, {{2, 4}, false}, {{3, 6}, true},
                                   {{3, 6}, false}, {{5, 7}, true}, {{5, 7}, false}};
  std::size_t scan_epochs = 40;
  double lasso_lambda = 0.01;
  std::string similarity = "pearson";
  std::string projection;  // optional token projection matrix applied when loading layers
};

/// Model dimensions left at 0 are taken from the dataset.
struct RunConfig {
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
  AnalysisConfig analysis;

  RunConfig() {
    model.n_sem = model.n_det = model.m_text = model.d_text = model.m_img = model.d_img = 0;
  }
};

namespace detail {

inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw UsageError(key + ": cannot parse '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw UsageError(key + ": expected true or false, got '" + text + "'");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct ConfigKey {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
ConfigKey size_key(std::string name, T RunConfig::*section, std::size_t T::*field) {
  return {name,
          [=](RunConfig& c, const std::string& v) { (c.*section).*field = parse_number<std::size_t>(name, v); },
          [=](const RunConfig& c) { return std::to_string((c.*section).*field); }};
}

template <class T>
ConfigKey real_key(std::string name, T RunConfig::*section, double T::*field) {
  return {name, [=](RunConfig& c, const std::string& v) { (c.*section).*field = parse_number<double>(name, v); },
          [=](const RunConfig& c) { return format_real((c.*section).*field); }};
}

inline ConfigKey weight_key(std::string name, double LossWeights::*field) {
  return {name, [=](RunConfig& c, const std::string& v) { c.train.weights.*field = parse_number<double>(name, v); },
          [=](const RunConfig& c) { return format_real(c.train.weights.*field); }};
}

inline ConfigKey adam_key(std::string name, double AdamConfig::*field) {
  return {name, [=](RunConfig& c, const std::string& v) { c.train.adam.*field = parse_number<double>(name, v); },
          [=](const RunConfig& c) { return format_real(c.train.adam.*field); }};
}

inline std::string format_scan(const std::vector<LayerScanEntry>& scan) {
  std::string out;
  for (const auto& e : scan) {
    if (!out.empty()) out += ',';
    out += std::to_string(e.range.lo) + "-" + std::to_string(e.range.hi) + (e.include_final ? "+final" : "");
  }
  return out;
}

/// "lo-hi" or "lo-hi+final", comma separated.
inline std::vector<LayerScanEntry> parse_scan(const std::string& key, const std::string& text) {
  std::vector<LayerScanEntry> out;
  for (std::string item : split_list(text)) {
    LayerScanEntry e;
    e.include_final = false;
    if (item.ends_with("+final")) {
      e.include_final = true;
      item.resize(item.size() - 6);
    }
    const auto dash = item.find('-', 1);
    if (dash == std::string::npos) throw UsageError(key + ": expected lo-hi, got '" + item + "'");
    e.range.lo = parse_number<int>(key, item.substr(0, dash));
    e.range.hi = parse_number<int>(key, item.substr(dash + 1));
    if (e.range.lo > e.range.hi) throw UsageError(key + ": range " + item + " has lo > hi");
    out.push_back(e);
  }
  if (out.empty()) throw UsageError(key + ": no ranges given");
  return out;
}

inline const std::vector<ConfigKey>& config_keys() {
  using RC = RunConfig;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    k.push_back(size_key("synth.n_train", &RC::synth, &SynthConfig::n_train));
    k.push_back(size_key("synth.n_test", &RC::synth, &SynthConfig::n_test));
    k.push_back(size_key("synth.n_low", &RC::synth, &SynthConfig::n_low));
    k.push_back(size_key("synth.n_high", &RC::synth, &SynthConfig::n_high));
    k.push_back(size_key("synth.k_sem", &RC::synth, &SynthConfig::k_sem));
    k.push_back(size_key("synth.k_det", &RC::synth, &SynthConfig::k_det));
    k.push_back(size_key("synth.k_nuis", &RC::synth, &SynthConfig::k_nuis));
    k.push_back(size_key("synth.n_layers", &RC::synth, &SynthConfig::n_layers));
    k.push_back({"synth.alpha",
                 [](RC& c, const std::string& v) {
                   c.synth.alpha.clear();
                   for (const auto& item : split_list(v)) c.synth.alpha.push_back(parse_number<double>("synth.alpha", item));
                 },
                 [](const RC& c) {
                   std::string out;
                   for (double a : c.synth.resolved_alpha()) out += (out.empty() ? "" : ",") + format_real(a);
                   return out;
                 }});
    k.push_back(size_key("synth.m_text", &RC::synth, &SynthConfig::m_text));
    k.push_back(size_key("synth.d_text", &RC::synth, &SynthConfig::d_text));
    k.push_back(size_key("synth.m_img", &RC::synth, &SynthConfig::m_img));
    k.push_back(size_key("synth.d_img", &RC::synth, &SynthConfig::d_img));
    k.push_back(real_key("synth.voxel_noise", &RC::synth, &SynthConfig::voxel_noise));
    k.push_back(real_key("synth.layer_noise", &RC::synth, &SynthConfig::layer_noise));
    k.push_back(real_key("synth.nuisance_std", &RC::synth, &SynthConfig::nuisance_std));
    k.push_back(real_key("synth.caption_noise", &RC::synth, &SynthConfig::caption_noise));
    k.push_back(size_key("synth.max_captions", &RC::synth, &SynthConfig::max_captions));
    k.push_back({"synth.seed", [](RC& c, const std::string& v) { c.synth.seed = parse_number<std::uint64_t>("synth.seed", v); },
                 [](const RC& c) { return std::to_string(c.synth.seed); }});

    k.push_back(size_key("model.n_sem", &RC::model, &ModelConfig::n_sem));
    k.push_back(size_key("model.n_det", &RC::model, &ModelConfig::n_det));
    k.push_back(size_key("model.latent_dim", &RC::model, &ModelConfig::latent_dim));
    k.push_back(size_key("model.m_text", &RC::model, &ModelConfig::m_text));
    k.push_back(size_key("model.d_text", &RC::model, &ModelConfig::d_text));
    k.push_back(size_key("model.m_img", &RC::model, &ModelConfig::m_img));
    k.push_back(size_key("model.d_img", &RC::model, &ModelConfig::d_img));
    k.push_back(real_key("model.dropout_codec", &RC::model, &ModelConfig::dropout_codec));
    k.push_back(real_key("model.dropout_backbone", &RC::model, &ModelConfig::dropout_backbone));

    k.push_back(size_key("train.epochs", &RC::train, &TrainConfig::epochs));
    k.push_back(size_key("train.batch_size", &RC::train, &TrainConfig::batch_size));
    k.push_back(size_key("train.text_batch_size", &RC::train, &TrainConfig::text_batch_size));
    k.push_back(adam_key("train.learning_rate", &AdamConfig::learning_rate));
    k.push_back(adam_key("train.beta1", &AdamConfig::beta1));
    k.push_back(adam_key("train.beta2", &AdamConfig::beta2));
    k.push_back(adam_key("train.epsilon", &AdamConfig::epsilon));
    k.push_back({"train.seed", [](RC& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>("train.seed", v); },
                 [](const RC& c) { return std::to_string(c.train.seed); }});
    k.push_back(weight_key("train.w_text_mg", &LossWeights::text_mg));
    k.push_back(weight_key("train.w_text_rec", &LossWeights::text_rec));
    k.push_back(weight_key("train.w_image_mg", &LossWeights::image_mg));
    k.push_back(weight_key("train.w_crec", &LossWeights::crec));
    k.push_back(weight_key("train.w_image_mse", &LossWeights::image_mse));
    k.push_back(weight_key("train.w_cka", &LossWeights::cka));
    k.push_back(weight_key("train.w_sims", &LossWeights::sims));
    k.push_back({"train.anchor", [](RC& c, const std::string& v) { c.train.anchor = sims_anchor_from_string(v); },
                 [](const RC& c) { return std::string(to_string(c.train.anchor)); }});
    k.push_back({"train.layer_lo",
                 [](RC& c, const std::string& v) { c.train.layer_range.lo = parse_number<int>("train.layer_lo", v); },
                 [](const RC& c) { return std::to_string(c.train.layer_range.lo); }});
    k.push_back({"train.layer_hi",
                 [](RC& c, const std::string& v) { c.train.layer_range.hi = parse_number<int>("train.layer_hi", v); },
                 [](const RC& c) { return std::to_string(c.train.layer_range.hi); }});
    k.push_back({"train.include_final",
                 [](RC& c, const std::string& v) { c.train.include_final = parse_bool("train.include_final", v); },
                 [](const RC& c) { return std::string(c.train.include_final ? "true" : "false"); }});
    k.push_back({"train.separate_branches",
                 [](RC& c, const std::string& v) { c.train.separate_branches = parse_bool("train.separate_branches", v); },
                 [](const RC& c) { return std::string(c.train.separate_branches ? "true" : "false"); }});
    k.push_back({"train.variant", [](RC& c, const std::string& v) { c.train.variant = variant_from_string(v); },
                 [](const RC& c) { return std::string(to_string(c.train.variant)); }});

    k.push_back({"analysis.rsa_mode",
                 [](RC& c, const std::string& v) {
                   if (v != "raw" && v != "ridge") throw UsageError("analysis.rsa_mode: expected raw or ridge");
                   c.analysis.rsa_mode = v;
                 },
                 [](const RC& c) { return c.analysis.rsa_mode; }});
    k.push_back(real_key("analysis.ridge_lambda", &RC::analysis, &AnalysisConfig::ridge_lambda));
    k.push_back({"analysis.rsa_source",
                 [](RC& c, const std::string& v) {
                   if (v != "voxels" && v != "codes") throw UsageError("analysis.rsa_source: expected voxels or codes");
                   c.analysis.rsa_source = v;
                 },
                 [](const RC& c) { return c.analysis.rsa_source; }});
    k.push_back({"analysis.scan_ranges",
                 [](RC& c, const std::string& v) { c.analysis.scan = parse_scan("analysis.scan_ranges", v); },
                 [](const RC& c) { return format_scan(c.analysis.scan); }});
    k.push_back(size_key("analysis.scan_epochs", &RC::analysis, &AnalysisConfig::scan_epochs));
    k.push_back(real_key("analysis.lasso_lambda", &RC::analysis, &AnalysisConfig::lasso_lambda));
    k.push_back({"analysis.similarity",
                 [](RC& c, const std::string& v) {
                   similarity_from_string(v);
                   c.analysis.similarity = v;
                 },
                 [](const RC& c) { return c.analysis.similarity; }});
    k.push_back({"analysis.projection", [](RC& c, const std::string& v) { c.analysis.projection = v; },
                 [](const RC& c) { return c.analysis.projection; }});
    return k;
  }();
  return keys;
}

}  // namespace detail

/// Applies one `key=value` assignment; unknown keys are rejected.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& k : detail::config_keys()) {
    if (k.name == key) {
      k.set(c, value);
      return;
    }
  }
  throw UsageError("unknown config key '" + key + "'");
}

/// `key=value` lines; blank lines and `#` comments are ignored.
inline void apply_config_text(RunConfig& c, std::istream& in, const std::string& source = "config") {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(source + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    set_config_value(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig c;
  if (path.empty()) return c;
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open config " + path.string());
  apply_config_text(c, f, path.string());
  return c;
}

/// Every key with its effective value, in a fixed order.
inline void write_resolved_config(std::ostream& os, const RunConfig& c) {
  for (const auto& k : detail::config_keys()) os << k.name << '=' << k.get(c) << '\n';
}

inline void validate_run_config(const RunConfig& c) {
  c.synth.validate();
  c.train.validate();
}

/// The model config for a dataset: zero dimensions are filled from the data, explicit ones must match.
inline ModelConfig resolve_model_config(const ModelConfig& requested, const Dataset& ds) {
  ModelConfig m = requested;
  auto fill = [](std::size_t& field, std::size_t data, const char* key) {
    if (field == 0) field = data;
    else if (field != data) {
      throw ShapeMismatch(std::string("model.") + key + " = " + std::to_string(field) + " but the dataset has " +
                          std::to_string(data));
    }
  };
  fill(m.n_sem, ds.mask.n_sem(), "n_sem");
  fill(m.n_det, ds.mask.n_det(), "n_det");
  fill(m.m_text, ds.m_text, "m_text");
  fill(m.d_text, ds.d_text, "d_text");
  fill(m.m_img, ds.m_img, "m_img");
  fill(m.d_img, ds.d_img, "d_img");
  m.validate();
  return m;
}

}  // namespace brainmclip
