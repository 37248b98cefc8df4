#pragma once

// Pipeline configuration: JSON defaults, dataset presets, dotted-key
// overrides, validation into typed fields, and provenance stamps.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecg/augmentation.hpp"
#include "ecg/common.hpp"
#include "ecg/features.hpp"
#include "ecg/linear_models.hpp"
#include "ecg/refinement.hpp"
#include "ecg/segmentation.hpp"
#include "ecg/wfdb.hpp"

namespace ecg::config {

using nlohmann::json;

inline constexpr const char* kDataDirEnv = "ECG_DATA_DIR";
inline constexpr const char* kToolVersion = "1.0.0";

inline json default_config() {
  return json::parse(R"({
    "dataset": "custom",
    "data_dir": "",
    "records": [],
    "annotator": "atr",
    "leads": [0, 1],
    "fs_target": 0,
    "max_record_seconds": 0,
    "aami_map": null,
    "filter": {"order": 4, "low_hz": 0.5, "high_hz": 40.0},
    "detector": {"merge_tolerance_s": 0.05, "refractory_s": 0.2},
    "segmentation": {
      "alpha": 0.233, "beta": 0.367, "target_len": 324, "label_tolerance_s": 0.075, "iqr_prune": true,
      "weights": {"entropy": 0.5, "snr": 0.3, "energy": 0.2},
      "grid": {"use_robust_optimum": false, "alpha_start": 0.1, "beta_start": 0.3,
               "step": 0.06666666666666667, "count": 9, "top_fraction": 0.05}
    },
    "graph": {"k": 4, "tau": 1.0, "damping": 0.85, "hrv_half_window": 10},
    "refinement": {"mi_top": 100, "mi_bins": 16, "rfe_target": 50, "rfe_drop_fraction": 0.1, "rfe_C": 0.1, "pca_n": 5},
    "balance": {"mode": "split_then_balance", "smote_k": 5, "enn_k": 3},
    "split": {"train_ratio": 0.8, "stratified": true},
    "models": {"kinds": ["linear_svc", "logistic_regression", "decision_tree"],
               "svc_C": 0.1, "lr_C": 1.0, "tree_max_depth": 5, "balanced_class_weights": true},
    "cv": {"enabled": true, "folds": 5},
    "timing": {"enabled": true, "repeats": 30},
    "seed": 42,
    "workers": 0,
    "output_dir": "ecgpipe_out"
  })");
}

/// Dataset-specific starting points layered over the defaults.
inline json preset(const std::string& dataset) {
  if (dataset == "mitbih") return {{"dataset", "mitbih"}, {"leads", {0, 1}}, {"fs_target", 0}, {"max_record_seconds", 20}};
  if (dataset == "incart") return {{"dataset", "incart"}, {"leads", {"II", "V1"}}, {"fs_target", 360}};
  if (dataset == "custom") return {{"dataset", "custom"}};
  throw ParameterError("unknown dataset '" + dataset + "' (expected mitbih, incart or custom)");
}

namespace detail {

inline bool compatible(const json& old_v, const json& new_v) {
  if (old_v.is_null()) return true;
  if (old_v.is_number()) return new_v.is_number();
  return old_v.type() == new_v.type();
}

inline void merge_into(json& base, const json& overlay, const std::string& prefix) {
  for (const auto& [k, v] : overlay.items()) {
    const std::string path = prefix.empty() ? k : prefix + "." + k;
    if (!base.contains(k)) throw ParameterError("unknown config key '" + path + "'");
    json& slot = base[k];
    if (path == "aami_map") {
      slot = v;
    } else if (slot.is_object() && v.is_object()) {
      merge_into(slot, v, path);
    } else {
      if (!compatible(slot, v)) throw ParameterError("config key '" + path + "' has the wrong type");
      slot = v;
    }
  }
}

}  // namespace detail

/// Recursive merge; keys absent from `base` are rejected.
inline void merge(json& base, const json& overlay) {
  if (!overlay.is_object()) throw ParameterError("config overlay must be a JSON object");
  detail::merge_into(base, overlay, "");
}

/// `key` is a dotted path into the config. `value` is parsed as JSON when
/// the target is not a string; an unparsable value for a list target is
/// split on commas.
inline void apply_override(json& cfg, const std::string& key, const std::string& value) {
  std::vector<std::string> parts;
  std::string rest = key;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) parts.push_back(rest.substr(0, pos));
  parts.push_back(rest);
  const json* target = &cfg;
  for (const auto& p : parts) {
    if (!target->is_object() || !target->contains(p)) throw ParameterError("unknown config key '" + key + "'");
    target = &target->at(p);
  }
  json v;
  if (target->is_string()) {
    v = value;
  } else {
    try {
      v = json::parse(value);
    } catch (const json::parse_error&) {
      if (target->is_array()) {
        v = json::array();
        std::string cur;
        for (char ch : value + ",") {
          if (ch == ',') {
            if (!cur.empty()) v.push_back(cur);
            cur.clear();
          } else {
            cur += ch;
          }
        }
      } else {
        v = value;
      }
    }
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) v = json{{*it, v}};
  merge(cfg, v);
}

inline json load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return json::parse(in, nullptr, true, true);
}

/// Defaults, then the preset named by the file's (or override's) dataset,
/// then the file, then overrides.
inline json compose(const json& file, const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::string dataset = file.is_object() ? file.value("dataset", std::string("custom")) : std::string("custom");
  for (const auto& [k, v] : overrides)
    if (k == "dataset") dataset = v;
  json cfg = default_config();
  merge(cfg, preset(dataset));
  if (!file.is_null()) merge(cfg, file);
  for (const auto& [k, v] : overrides) apply_override(cfg, k, v);
  return cfg;
}

struct Filter {
  int order = 4;
  double low_hz = 0.5, high_hz = 40.0;
};

struct Segmentation {
  seg::WindowParams window;
  std::size_t target_len = 324;
  double label_tolerance_s = 0.075;
  bool iqr_prune = true;
  seg::LossWeights weights;
  bool use_robust_optimum = false;
  std::vector<double> alphas, betas;
  double top_fraction = 0.05;
};

struct PipelineConfig {
  json raw;
  std::string dataset;
  std::filesystem::path data_dir;
  std::vector<std::string> records;
  std::string annotator;
  json leads;
  double fs_target = 0, max_record_seconds = 0;
  wfdb::AamiMap aami;
  Filter filter;
  double merge_tolerance_s = 0.05, refractory_s = 0.2;
  Segmentation segmentation;
  augment::AugmentParams graph;
  refine::RefineParams refinement;
  std::string balance_mode;
  std::size_t smote_k = 5, enn_k = 3;
  double train_ratio = 0.8;
  std::vector<models::ModelKind> model_kinds;
  double svc_C = 0.1, lr_C = 1.0;
  int tree_max_depth = 5;
  bool balanced_class_weights = true;
  bool cv_enabled = true;
  int cv_folds = 5;
  bool timing_enabled = true;
  int timing_repeats = 30;
  std::uint64_t seed = 42;
  unsigned workers = 0;
  std::filesystem::path output_dir;
};

namespace detail {

[[noreturn]] inline void bad(const std::string& key, const std::string& why) {
  throw ParameterError("config '" + key + "': " + why);
}

inline double positive(const json& j, const std::string& key) {
  const double v = j.get<double>();
  if (!(v > 0)) bad(key, "must be positive");
  return v;
}

}  // namespace detail

/// Validates every field before anything runs.
inline PipelineConfig validate(const json& cfg) {
  using detail::bad;
  using detail::positive;
  PipelineConfig c;
  c.raw = cfg;
  try {
    c.dataset = cfg.at("dataset").get<std::string>();
    preset(c.dataset);
    std::string dir = cfg.at("data_dir").get<std::string>();
    if (dir.empty())
      if (const char* env = std::getenv(kDataDirEnv)) dir = env;
    c.data_dir = dir;
    c.records = cfg.at("records").get<std::vector<std::string>>();
    c.annotator = cfg.at("annotator").get<std::string>();
    c.leads = cfg.at("leads");
    if (!c.leads.is_array() || c.leads.empty()) bad("leads", "must be a non-empty list");
    for (const auto& l : c.leads)
      if (!(l.is_number_unsigned() || l.is_string())) bad("leads", "entries are channel indices or channel names");
    c.fs_target = cfg.at("fs_target").get<double>();
    if (c.fs_target < 0) bad("fs_target", "must be 0 (native) or positive");
    c.max_record_seconds = cfg.at("max_record_seconds").get<double>();
    if (c.max_record_seconds < 0) bad("max_record_seconds", "must be 0 (whole record) or positive");
    if (!cfg.at("aami_map").is_null()) c.aami = wfdb::AamiMap::from_json(cfg.at("aami_map"));

    const auto& f = cfg.at("filter");
    c.filter.order = f.at("order").get<int>();
    if (c.filter.order < 2 || c.filter.order > 8 || c.filter.order % 2) bad("filter.order", "must be 2, 4, 6 or 8");
    c.filter.low_hz = positive(f.at("low_hz"), "filter.low_hz");
    c.filter.high_hz = positive(f.at("high_hz"), "filter.high_hz");
    if (c.filter.low_hz >= c.filter.high_hz) bad("filter", "low_hz must be below high_hz");

    c.merge_tolerance_s = positive(cfg.at("detector").at("merge_tolerance_s"), "detector.merge_tolerance_s");
    c.refractory_s = positive(cfg.at("detector").at("refractory_s"), "detector.refractory_s");

    const auto& s = cfg.at("segmentation");
    c.segmentation.window = {s.at("alpha").get<double>(), s.at("beta").get<double>()};
    if (!(c.segmentation.window.alpha > 0 && c.segmentation.window.beta > 0)) bad("segmentation", "alpha and beta must be positive");
    c.segmentation.target_len = s.at("target_len").get<std::size_t>();
    if (c.segmentation.target_len < 64) bad("segmentation.target_len", "must be at least 64");
    c.segmentation.label_tolerance_s = positive(s.at("label_tolerance_s"), "segmentation.label_tolerance_s");
    c.segmentation.iqr_prune = s.at("iqr_prune").get<bool>();
    const auto& w = s.at("weights");
    c.segmentation.weights = {w.at("entropy").get<double>(), w.at("snr").get<double>(), w.at("energy").get<double>()};
    const auto& g = s.at("grid");
    c.segmentation.use_robust_optimum = g.at("use_robust_optimum").get<bool>();
    const int count = g.at("count").get<int>();
    if (count < 1) bad("segmentation.grid.count", "must be at least 1");
    const double step = positive(g.at("step"), "segmentation.grid.step");
    c.segmentation.alphas = seg::make_grid(positive(g.at("alpha_start"), "segmentation.grid.alpha_start"), step, count);
    c.segmentation.betas = seg::make_grid(positive(g.at("beta_start"), "segmentation.grid.beta_start"), step, count);
    c.segmentation.top_fraction = g.at("top_fraction").get<double>();
    if (!(c.segmentation.top_fraction > 0 && c.segmentation.top_fraction <= 1)) bad("segmentation.grid.top_fraction", "must lie in (0, 1]");

    const auto& gr = cfg.at("graph");
    c.graph.k = gr.at("k").get<int>();
    if (c.graph.k < 1) bad("graph.k", "must be at least 1");
    c.graph.tau = positive(gr.at("tau"), "graph.tau");
    c.graph.pagerank.damping = gr.at("damping").get<double>();
    if (!(c.graph.pagerank.damping > 0 && c.graph.pagerank.damping < 1)) bad("graph.damping", "must lie in (0, 1)");
    c.graph.hrv_half_window = gr.at("hrv_half_window").get<int>();
    if (c.graph.hrv_half_window < 1) bad("graph.hrv_half_window", "must be at least 1");

    const auto& r = cfg.at("refinement");
    c.refinement.mi_top = r.at("mi_top").get<std::size_t>();
    c.refinement.mi_bins = r.at("mi_bins").get<int>();
    c.refinement.rfe.target = r.at("rfe_target").get<std::size_t>();
    c.refinement.rfe.drop_fraction = r.at("rfe_drop_fraction").get<double>();
    c.refinement.rfe.C = positive(r.at("rfe_C"), "refinement.rfe_C");
    c.refinement.pca_components = r.at("pca_n").get<std::size_t>();
    if (c.refinement.mi_bins < 2) bad("refinement.mi_bins", "must be at least 2");
    if (c.refinement.rfe.target < 1 || c.refinement.mi_top < c.refinement.rfe.target) bad("refinement", "need 1 <= rfe_target <= mi_top");
    if (!(c.refinement.rfe.drop_fraction > 0 && c.refinement.rfe.drop_fraction < 1)) bad("refinement.rfe_drop_fraction", "must lie in (0, 1)");
    if (c.refinement.pca_components > c.refinement.rfe.target) bad("refinement.pca_n", "cannot exceed rfe_target");

    const auto& b = cfg.at("balance");
    c.balance_mode = b.at("mode").get<std::string>();
    if (c.balance_mode != "split_then_balance" && c.balance_mode != "balance_then_split" && c.balance_mode != "none")
      bad("balance.mode", "expected split_then_balance, balance_then_split or none");
    c.smote_k = b.at("smote_k").get<std::size_t>();
    c.enn_k = b.at("enn_k").get<std::size_t>();
    if (c.smote_k < 1 || c.enn_k < 1) bad("balance", "smote_k and enn_k must be at least 1");

    c.train_ratio = cfg.at("split").at("train_ratio").get<double>();
    if (!(c.train_ratio > 0 && c.train_ratio < 1)) bad("split.train_ratio", "must lie in (0, 1)");
    if (!cfg.at("split").at("stratified").get<bool>()) bad("split.stratified", "only stratified splits are supported");

    const auto& m = cfg.at("models");
    for (const auto& k : m.at("kinds").get<std::vector<std::string>>()) c.model_kinds.push_back(models::kind_from_name(k));
    if (c.model_kinds.empty()) bad("models.kinds", "list at least one model");
    c.svc_C = positive(m.at("svc_C"), "models.svc_C");
    c.lr_C = positive(m.at("lr_C"), "models.lr_C");
    c.tree_max_depth = m.at("tree_max_depth").get<int>();
    if (c.tree_max_depth < 1) bad("models.tree_max_depth", "must be at least 1");
    c.balanced_class_weights = m.at("balanced_class_weights").get<bool>();

    c.cv_enabled = cfg.at("cv").at("enabled").get<bool>();
    c.cv_folds = cfg.at("cv").at("folds").get<int>();
    if (c.cv_folds < 2) bad("cv.folds", "must be at least 2");
    c.timing_enabled = cfg.at("timing").at("enabled").get<bool>();
    c.timing_repeats = cfg.at("timing").at("repeats").get<int>();
    if (c.timing_repeats < 30) bad("timing.repeats", "must be at least 30");
    c.seed = cfg.at("seed").get<std::uint64_t>();
    c.workers = cfg.at("workers").get<unsigned>();
    c.output_dir = cfg.at("output_dir").get<std::string>();
    if (c.output_dir.empty()) bad("output_dir", "must not be empty");
  } catch (const json::exception& e) {
    throw ParameterError(std::string("invalid config: ") + e.what());
  }
  return c;
}

/// Hash of everything that can change results (output_dir and the worker
/// count cannot).
inline std::string config_hash(const json& cfg) {
  json h = cfg;
  h.erase("output_dir");
  h.erase("workers");
  return hex64(fnv1a64(h.dump()));
}

/// Subset hash for stage cache keys.
inline std::string hash_of(const json& j) { return hex64(fnv1a64(j.dump())); }

inline json provenance(const PipelineConfig& c) {
  return {{"config_hash", config_hash(c.raw)},
          {"base_registry", std::string(features::kBaseRegistryVersion) + ":" + features::base_registry_hash()},
          {"augmented_registry", std::string(augment::kAugmentedRegistryVersion) + ":" + augment::augmented_registry_hash()},
          {"tool_version", kToolVersion}};
}

/// One-line comment header for CSV outputs.
inline std::string provenance_comment(const PipelineConfig& c) {
  const auto p = provenance(c);
  return "# config_hash=" + p["config_hash"].get<std::string>() + " base_registry=" + p["base_registry"].get<std::string>() +
         " augmented_registry=" + p["augmented_registry"].get<std::string>();
}

/// Independent stream seed for a named consumer of the master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view consumer) {
  return fnv1a64(std::to_string(master) + ":" + std::string(consumer));
}

}  // namespace ecg::config
