#pragma once

// End-to-end orchestration: per-record load -> filter -> detect -> segment ->
// features, then augmentation, split, refinement, balancing, training,
// evaluation and cross-validation. Every stage caches its outputs under
// <output_dir>/cache keyed by a hash of its inputs and config.

#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ecg/augmentation.hpp"
#include "ecg/config.hpp"
#include "ecg/dsp.hpp"
#include "ecg/feature_matrix.hpp"
#include "ecg/features.hpp"
#include "ecg/linear_models.hpp"
#include "ecg/refinement.hpp"
#include "ecg/rpeak.hpp"
#include "ecg/segmentation.hpp"
#include "ecg/wfdb.hpp"

namespace ecg::pipeline {

using config::PipelineConfig;
using nlohmann::json;
namespace fs = std::filesystem;

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, std::string record, const std::string& what)
      : std::runtime_error("stage '" + stage + "'" + (record.empty() ? "" : " record '" + record + "'") + ": " + what),
        stage_(std::move(stage)),
        record_(std::move(record)) {}
  const std::string& stage() const { return stage_; }
  const std::string& record() const { return record_; }

 private:
  std::string stage_, record_;
};

// ---------------------------------------------------------------------------
// Utilities
// ---------------------------------------------------------------------------

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

inline unsigned worker_count(unsigned requested) {
  if (requested) return requested;
  return std::clamp(std::thread::hardware_concurrency(), 1u, 8u);
}

/// Runs fn(i) for i in [0, n) on a bounded pool. Results must be written to
/// per-index slots; the exception of the lowest failing index is rethrown.
template <class Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto threads = std::min<std::size_t>(worker_count(workers), n);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return json::parse(in);
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Stage outputs live under cache/<name>-<key>; the `.done` marker is
/// written last so an interrupted stage is recomputed.
struct Cache {
  fs::path root;

  fs::path stem(const std::string& name, const std::string& key) const { return root / (name + "-" + key); }
  bool has(const std::string& name, const std::string& key) const { return fs::exists(stem(name, key).string() + ".done"); }
  void commit(const std::string& name, const std::string& key) const {
    std::ofstream(stem(name, key).string() + ".done") << key << '\n';
  }
};

struct StageTime {
  std::string stage;
  double seconds = 0;
  bool cached = false;
};

// ---------------------------------------------------------------------------
// Per-record processing
// ---------------------------------------------------------------------------

inline std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

/// Channel indices for the configured leads (indices, or names matched
/// case-insensitively; "II" also matches "MLII").
inline std::vector<std::size_t> resolve_leads(const wfdb::EcgRecord& rec, const json& leads) {
  std::vector<std::size_t> out;
  for (const auto& l : leads) {
    if (l.is_number_unsigned()) {
      const auto i = l.get<std::size_t>();
      if (i >= rec.n_channels()) throw ParameterError("lead index " + std::to_string(i) + " out of range");
      out.push_back(i);
      continue;
    }
    const auto want = lower(l.get<std::string>());
    std::optional<std::size_t> hit;
    for (std::size_t c = 0; c < rec.n_channels() && !hit; ++c)
      if (lower(rec.channels[c].name) == want) hit = c;
    for (std::size_t c = 0; c < rec.n_channels() && !hit; ++c)
      if (lower(rec.channels[c].name) == "ml" + want) hit = c;
    if (!hit) throw ParameterError("lead '" + l.get<std::string>() + "' not found in record " + rec.record_id);
    out.push_back(*hit);
  }
  return out;
}

struct PreparedRecord {
  std::string id;
  double fs = 0;
  Matrix filtered;  // samples x selected leads
  std::vector<wfdb::Annotation> annotations;
  rpeak::EnsembleResult peaks;
  std::vector<std::string> warnings;
  double load_s = 0, filter_s = 0, detect_s = 0;
};

inline Signal lead(const PreparedRecord& p, std::size_t k) {
  Signal s(static_cast<std::size_t>(p.filtered.rows()));
  for (std::size_t t = 0; t < s.size(); ++t) s[t] = p.filtered(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k));
  return s;
}

/// Load, select leads, resample, band-pass, detect R peaks on the first lead.
inline PreparedRecord prepare_record(const PipelineConfig& c, const std::string& name) {
  PreparedRecord p;
  p.id = name;
  Stopwatch sw;
  wfdb::LoadOptions lo;
  lo.annotator = c.annotator;
  lo.max_seconds = c.max_record_seconds;
  lo.warnings = &p.warnings;
  const auto rec = wfdb::load_record(c.data_dir, name, lo);
  const auto leads = resolve_leads(rec, c.leads);
  p.fs = rec.fs;
  std::vector<Signal> chans;
  for (auto l : leads) chans.push_back(rec.channel(l));
  p.annotations = rec.annotations;
  if (c.fs_target > 0 && std::abs(c.fs_target - rec.fs) > 1e-9) {
    for (auto& ch : chans) ch = dsp::resample_polyphase(ch, rec.fs, c.fs_target);
    const double ratio = c.fs_target / rec.fs;
    const std::size_t n = chans.front().size();
    for (auto& a : p.annotations) a.sample = std::min(n - 1, static_cast<std::size_t>(std::llround(static_cast<double>(a.sample) * ratio)));
    p.fs = c.fs_target;
  }
  p.load_s = sw.seconds();

  Stopwatch fw;
  const auto bp = dsp::design_butterworth_bandpass(c.filter.order, c.filter.low_hz, std::min(c.filter.high_hz, 0.45 * p.fs), p.fs);
  p.filtered = Matrix(static_cast<Eigen::Index>(chans.front().size()), static_cast<Eigen::Index>(chans.size()));
  for (std::size_t k = 0; k < chans.size(); ++k) {
    const auto y = dsp::filtfilt(bp, chans[k]);
    for (std::size_t t = 0; t < y.size(); ++t) p.filtered(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = y[t];
  }
  p.filter_s = fw.seconds();

  Stopwatch dw;
  rpeak::DetectorParams dp;
  dp.refractory_s = c.refractory_s;
  const Signal lead0 = lead(p, 0);
  p.peaks = rpeak::detect_ensemble(lead0, p.fs, dp, c.merge_tolerance_s);
  for (const auto& d : p.peaks.detectors)
    if (!d.warning.empty()) p.warnings.push_back(std::string(rpeak::detector_name(d.detector)) + ": " + d.warning);
  p.detect_s = dw.seconds();
  return p;
}

struct RecordResult {
  std::string id;
  double fs = 0;
  FeatureMatrix base;
  augment::RecordRhythm rhythm;
  std::size_t n_peaks = 0, n_pruned = 0, n_unlabeled = 0, n_edge_padded = 0;
  double load_s = 0, filter_s = 0, detect_s = 0, segment_s = 0, features_s = 0;
  std::vector<std::string> warnings;
  bool cached = false;

  double segmentation_s() const { return load_s + filter_s + detect_s + segment_s; }
  double total_s() const { return segmentation_s() + features_s; }

  json meta() const {
    return {{"record", id},       {"fs", fs},
            {"beat_times_s", rhythm.beat_times_s},
            {"n_peaks", n_peaks}, {"n_pruned", n_pruned},
            {"n_unlabeled", n_unlabeled},
            {"n_edge_padded", n_edge_padded},
            {"n_segments", base.n_rows()},
            {"load_s", load_s},   {"filter_s", filter_s},
            {"detect_s", detect_s},
            {"segment_s", segment_s},
            {"features_s", features_s},
            {"warnings", warnings}};
  }

  void load_meta(const json& j) {
    id = j.at("record");
    fs = j.at("fs");
    rhythm.beat_times_s = j.at("beat_times_s").get<std::vector<double>>();
    n_peaks = j.at("n_peaks"), n_pruned = j.at("n_pruned"), n_unlabeled = j.at("n_unlabeled"), n_edge_padded = j.at("n_edge_padded");
    load_s = j.at("load_s"), filter_s = j.at("filter_s"), detect_s = j.at("detect_s");
    segment_s = j.at("segment_s"), features_s = j.at("features_s");
    warnings = j.at("warnings").get<std::vector<std::string>>();
  }
};

/// Digest of a record's header, signal and annotation files.
inline std::string record_digest(const PipelineConfig& c, const std::string& name) {
  std::string all = read_text(c.data_dir / (name + ".hea"));
  const auto header = wfdb::parse_header(all);
  std::set<std::string> files;
  for (const auto& s : header.signals) files.insert(s.file);
  std::uint64_t h = fnv1a64(all);
  for (const auto& f : files) h ^= fnv1a64(read_text(c.data_dir / f)) * 0x9E3779B97F4A7C15ull;
  const auto atr = c.data_dir / (name + "." + c.annotator);
  if (fs::exists(atr)) h ^= fnv1a64(read_text(atr)) * 0xC2B2AE3D27D4EB4Full;
  return hex64(h);
}

inline json record_stage_config(const PipelineConfig& c, const seg::WindowParams& w) {
  const auto& r = c.raw;
  return {{"leads", r["leads"]},         {"fs_target", r["fs_target"]},
          {"max_record_seconds", r["max_record_seconds"]},
          {"annotator", r["annotator"]}, {"aami_map", r["aami_map"]},
          {"filter", r["filter"]},       {"detector", r["detector"]},
          {"alpha", w.alpha},            {"beta", w.beta},
          {"target_len", r["segmentation"]["target_len"]},
          {"label_tolerance_s", r["segmentation"]["label_tolerance_s"]},
          {"iqr_prune", r["segmentation"]["iqr_prune"]},
          {"registry", features::base_registry_hash()}};
}

inline RecordResult process_record(const PipelineConfig& c, const std::string& name, const seg::WindowParams& w) {
  RecordResult r;
  std::string stage = "load";
  try {
    auto p = prepare_record(c, name);
    r.id = name;
    r.fs = p.fs;
    r.warnings = p.warnings;
    r.load_s = p.load_s, r.filter_s = p.filter_s, r.detect_s = p.detect_s;
    stage = "segment";
    Stopwatch sw;
    seg::SegmentOptions so;
    so.window = w;
    so.target_len = c.segmentation.target_len;
    so.label_tolerance_s = c.segmentation.label_tolerance_s;
    so.iqr_prune = c.segmentation.iqr_prune;
    const auto sr = seg::segment_record(name, p.filtered, p.fs, p.peaks.merged, p.annotations, so, c.aami);
    r.n_peaks = sr.n_peaks, r.n_pruned = sr.n_pruned, r.n_unlabeled = sr.n_unlabeled, r.n_edge_padded = sr.n_edge_padded;
    r.rhythm = augment::rhythm_from_peaks(p.peaks.merged, p.fs);
    r.segment_s = sw.seconds();
    stage = "features";
    Stopwatch fw;
    r.base = features::extract_matrix(sr.segments);
    r.features_s = fw.seconds();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, name, e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Segmentation grid search across records
// ---------------------------------------------------------------------------

struct BeatOptimum {
  std::string record;
  std::size_t r_peak = 0;
  seg::GridCell cell;
  double duration_ms = 0;
};

struct GridSummary {
  std::vector<double> alphas, betas;
  std::vector<double> mean_loss;  // row-major by alpha, beat-weighted over records
  std::vector<BeatOptimum> beats;
  seg::GridCell robust, exact_minimum;
  std::size_t n_beats = 0;

  double surface(std::size_t ia, std::size_t ib) const { return mean_loss[ia * betas.size() + ib]; }
};

inline std::vector<std::string> record_names(const PipelineConfig& c) {
  if (c.data_dir.empty()) throw ParameterError(std::string("no data_dir configured and ") + config::kDataDirEnv + " is unset");
  if (!fs::is_directory(c.data_dir)) throw ParameterError("data_dir " + c.data_dir.string() + " is not a directory");
  auto names = c.records.empty() ? wfdb::list_records(c.data_dir) : c.records;
  if (names.empty()) throw ParameterError("no WFDB records found in " + c.data_dir.string());
  return names;
}

inline GridSummary grid_search(const PipelineConfig& c) {
  const auto names = record_names(c);
  std::vector<std::optional<seg::GridResult>> per(names.size());
  std::vector<std::vector<std::size_t>> peaks(names.size());
  seg::LossOptions lo;
  lo.weights = c.segmentation.weights;
  parallel_for(names.size(), c.workers, [&](std::size_t i) {
    try {
      const auto p = prepare_record(c, names[i]);
      peaks[i] = p.peaks.merged;
      if (!peaks[i].empty())
        per[i] = seg::grid_search_window(lead(p, 0), p.fs, peaks[i], c.segmentation.alphas, c.segmentation.betas, lo);
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError("grid-search", names[i], e.what());
    }
  });
  GridSummary g;
  g.alphas = c.segmentation.alphas;
  g.betas = c.segmentation.betas;
  g.mean_loss.assign(g.alphas.size() * g.betas.size(), 0.0);
  g.exact_minimum.loss = std::numeric_limits<double>::infinity();
  std::vector<seg::GridCell> pooled;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!per[i]) continue;
    const auto& r = *per[i];
    const auto nb = r.beat_optimum.size();
    for (std::size_t k = 0; k < g.mean_loss.size(); ++k) g.mean_loss[k] += r.mean_loss[k] * static_cast<double>(nb);
    for (std::size_t b = 0; b < nb; ++b) {
      g.beats.push_back({names[i], peaks[i][b], r.beat_optimum[b], r.beat_duration_ms[b]});
      pooled.push_back(r.beat_optimum[b]);
    }
    if (r.exact_minimum.loss < g.exact_minimum.loss) g.exact_minimum = r.exact_minimum;
    g.n_beats += nb;
  }
  if (!g.n_beats) throw StageError("grid-search", "", "no R peaks detected in any record");
  for (double& v : g.mean_loss) v /= static_cast<double>(g.n_beats);
  g.robust = seg::robust_optimum(pooled, c.segmentation.top_fraction);
  const auto ia = static_cast<std::size_t>(std::find(g.alphas.begin(), g.alphas.end(), g.robust.alpha) - g.alphas.begin());
  const auto ib = static_cast<std::size_t>(std::find(g.betas.begin(), g.betas.end(), g.robust.beta) - g.betas.begin());
  g.robust.loss = g.surface(ia, ib);
  return g;
}

inline void write_grid(const PipelineConfig& c, const GridSummary& g, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "grid_surface.csv");
    out << config::provenance_comment(c) << "\nalpha,beta,mean_loss\n";
    for (std::size_t ia = 0; ia < g.alphas.size(); ++ia)
      for (std::size_t ib = 0; ib < g.betas.size(); ++ib)
        out << format_double(g.alphas[ia]) << ',' << format_double(g.betas[ib]) << ',' << format_double(g.surface(ia, ib)) << '\n';
  }
  {
    std::ofstream out(dir / "grid_beats.csv");
    out << config::provenance_comment(c) << "\nrecord,r_peak,alpha,beta,loss,duration_ms\n";
    for (const auto& b : g.beats)
      out << b.record << ',' << b.r_peak << ',' << format_double(b.cell.alpha) << ',' << format_double(b.cell.beta) << ','
          << format_double(b.cell.loss) << ',' << format_double(b.duration_ms) << '\n';
  }
  write_json(dir / "grid_search.json",
             {{"provenance", config::provenance(c)},
              {"n_beats", g.n_beats},
              {"top_fraction", c.segmentation.top_fraction},
              {"robust_optimum", {{"alpha", g.robust.alpha}, {"beta", g.robust.beta}, {"mean_loss", g.robust.loss}}},
              {"exact_minimum", {{"alpha", g.exact_minimum.alpha}, {"beta", g.exact_minimum.beta}, {"loss", g.exact_minimum.loss}}}});
}

/// Reads grid_beats.csv back into per-beat optima.
inline std::vector<seg::GridCell> read_beat_optima(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw std::runtime_error("cannot open " + csv.string());
  std::vector<seg::GridCell> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("record,", 0) == 0) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string t; std::getline(ss, t, ',');) f.push_back(t);
    if (f.size() != 6) throw std::runtime_error("malformed grid beat row: " + line);
    out.push_back({std::stod(f[2]), std::stod(f[3]), std::stod(f[4])});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset-level stages
// ---------------------------------------------------------------------------

inline FeatureMatrix to_feature_matrix(const refine::BalanceResult& b, const std::vector<std::string>& columns,
                                       const FeatureMatrix& source) {
  auto m = FeatureMatrix::with_columns(columns, static_cast<std::size_t>(b.x.rows()));
  m.values = b.x;
  m.labels = b.y;
  // Real rows keep provenance when they can be matched back in order.
  std::size_t cursor = 0;
  for (std::size_t r = 0; r < m.n_rows(); ++r) {
    if (b.synthetic[r]) {
      m.rows[r] = {"synthetic", 0};
      continue;
    }
    while (cursor < source.n_rows() && source.values.row(static_cast<Eigen::Index>(cursor)) != b.x.row(static_cast<Eigen::Index>(r))) ++cursor;
    if (cursor < source.n_rows()) m.rows[r] = source.rows[cursor++];
  }
  return m;
}

struct Prepared {
  refine::RefinementState state;
  FeatureMatrix train, test;
  std::size_t n_synthesized = 0, n_removed = 0, balanced_rows = 0;
  std::vector<std::size_t> balanced_counts;
  std::vector<std::string> warnings;
};

inline refine::BalanceParams balance_params(const PipelineConfig& c, std::string_view consumer) {
  return {c.smote_k, c.enn_k, config::derive_seed(c.seed, consumer)};
}

inline std::vector<std::size_t> class_counts(const std::vector<int>& y) {
  std::vector<std::size_t> n(kNumAamiClasses, 0);
  for (int v : y)
    if (v >= 0) ++n[static_cast<std::size_t>(v)];
  return n;
}

/// Split, fit refinement on training rows, balance. In balance_then_split
/// mode the whole dataset is refined and balanced first, then split.
inline Prepared prepare_dataset(const PipelineConfig& c, const FeatureMatrix& aug) {
  Prepared p;
  const auto split_seed = config::derive_seed(c.seed, "split");
  if (c.balance_mode == "balance_then_split") {
    std::vector<std::size_t> all(aug.n_rows());
    std::iota(all.begin(), all.end(), 0);
    p.state = refine::fit_refinement(aug, all, c.refinement);
    const auto refined = refine::apply_refinement(p.state, aug);
    const auto b = refine::smote_enn(refined.values, refined.labels, balance_params(c, "balance"));
    const auto balanced = to_feature_matrix(b, refined.columns, refined);
    p.n_synthesized = b.n_synthesized, p.n_removed = b.n_removed, p.balanced_rows = balanced.n_rows();
    p.balanced_counts = class_counts(balanced.labels);
    p.warnings = b.warnings;
    const auto [tr, te] = models::stratified_split(balanced.labels, 1.0 - c.train_ratio, split_seed);
    p.train = select_rows(balanced, tr);
    p.test = select_rows(balanced, te);
  } else {
    const auto [tr, te] = models::stratified_split(aug.labels, 1.0 - c.train_ratio, split_seed);
    p.state = refine::fit_refinement(aug, tr, c.refinement);
    const auto refined = refine::apply_refinement(p.state, aug);
    p.test = select_rows(refined, te);
    const auto train = select_rows(refined, tr);
    if (c.balance_mode == "split_then_balance") {
      const auto b = refine::smote_enn(train.values, train.labels, balance_params(c, "balance"));
      p.train = to_feature_matrix(b, refined.columns, train);
      p.n_synthesized = b.n_synthesized, p.n_removed = b.n_removed;
      p.warnings = b.warnings;
    } else {
      p.train = train;
    }
    p.balanced_rows = p.train.n_rows();
    p.balanced_counts = class_counts(p.train.labels);
  }
  p.warnings.insert(p.warnings.end(), p.state.warnings.begin(), p.state.warnings.end());
  return p;
}

inline models::TrainedModel train_kind(const PipelineConfig& c, models::ModelKind kind, const Matrix& x, const std::vector<int>& y) {
  std::vector<double> cw;
  if (!c.balanced_class_weights) cw.assign(kNumAamiClasses, 1.0);
  switch (kind) {
    case models::ModelKind::logistic_regression: return models::train_logistic_regression(x, y, {c.lr_C, {}, cw});
    case models::ModelKind::linear_svc: return models::train_linear_svc(x, y, {c.svc_C, {}, cw});
    case models::ModelKind::decision_tree: return models::train_decision_tree(x, y, {c.tree_max_depth, 2, cw});
  }
  throw ParameterError("unknown model kind");
}

inline constexpr double kBytesPerKb = 1024.0;

inline json class_map(const std::vector<std::optional<double>>& v) {
  json j = json::object();
  for (std::size_t k = 0; k < v.size(); ++k)
    j[std::string(1, label_char(static_cast<AamiLabel>(k)))] = v[k] ? json(*v[k]) : json(nullptr);
  return j;
}

/// Trains one model on the prepared split and evaluates it. Timing fields
/// are null when timing is disabled so the report is reproducible.
inline json train_and_evaluate(const PipelineConfig& c, models::ModelKind kind, const Prepared& p, models::TrainedModel* out_model,
                               std::size_t refinement_bytes) {
  Stopwatch sw;
  auto m = train_kind(c, kind, p.train.values, p.train.labels);
  const double train_s = sw.seconds();
  const auto pred = models::predict(m, p.test.values);
  const auto met = models::compute_metrics(p.test.labels, pred);
  const auto size = models::model_size_bytes(m);
  json r = {{"acc", met.accuracy},
            {"f1_weighted", met.f1_w},
            {"precision_weighted", met.precision_w},
            {"recall_weighted", met.recall_w},
            {"per_class_recall", class_map(met.per_class_recall)},
            {"confusion", met.confusion},
            {"size_kb", static_cast<double>(size) / kBytesPerKb},
            {"size_bytes", size},
            {"bundle_kb", static_cast<double>(size + refinement_bytes) / kBytesPerKb},
            {"converged", m.converged},
            {"n_train", p.train.n_rows()},
            {"n_test", p.test.n_rows()},
            {"warnings", met.warnings}};
  if (c.timing_enabled) {
    const auto lat = models::time_inference(m, p.test.values, c.timing_repeats);
    r["train_s"] = train_s;
    r["infer_ms"] = lat.batch_ms_per_sample;
    r["single_row_ms"] = lat.single_row_ms;
    r["efficiency"] = models::efficiency_score(met.f1_w, met.accuracy, train_s, lat.batch_ms_per_sample, r["size_kb"].get<double>());
  } else {
    r["train_s"] = r["infer_ms"] = r["single_row_ms"] = r["efficiency"] = nullptr;
  }
  if (out_model) *out_model = std::move(m);
  return r;
}

/// Stratified k-fold weighted F1 per model kind. Folds run over labelled
/// augmented rows with refinement and balancing refit inside each fold, or
/// over the balanced refined dataset in balance_then_split mode.
inline std::map<models::ModelKind, std::vector<double>> cross_validate(const PipelineConfig& c, const FeatureMatrix& aug) {
  std::map<models::ModelKind, std::vector<double>> scores;
  const auto cv_seed = config::derive_seed(c.seed, "cv");
  if (c.balance_mode == "balance_then_split") {
    std::vector<std::size_t> all(aug.n_rows());
    std::iota(all.begin(), all.end(), 0);
    const auto st = refine::fit_refinement(aug, all, c.refinement);
    const auto refined = refine::apply_refinement(st, aug);
    const auto b = refine::smote_enn(refined.values, refined.labels, balance_params(c, "balance"));
    const auto folds = models::stratified_folds(b.y, c.cv_folds, cv_seed);
    for (int f = 0; f < c.cv_folds; ++f) {
      std::vector<std::size_t> tr, te;
      for (std::size_t i = 0; i < folds.size(); ++i) (folds[i] == f ? te : tr).push_back(i);
      Matrix xtr(static_cast<Eigen::Index>(tr.size()), b.x.cols()), xte(static_cast<Eigen::Index>(te.size()), b.x.cols());
      std::vector<int> ytr, yte;
      for (std::size_t i = 0; i < tr.size(); ++i) xtr.row(static_cast<Eigen::Index>(i)) = b.x.row(static_cast<Eigen::Index>(tr[i])), ytr.push_back(b.y[tr[i]]);
      for (std::size_t i = 0; i < te.size(); ++i) xte.row(static_cast<Eigen::Index>(i)) = b.x.row(static_cast<Eigen::Index>(te[i])), yte.push_back(b.y[te[i]]);
      for (auto k : c.model_kinds) scores[k].push_back(models::compute_metrics(yte, models::predict(train_kind(c, k, xtr, ytr), xte)).f1_w);
    }
    return scores;
  }
  const auto folds = models::stratified_folds(aug.labels, c.cv_folds, cv_seed);
  for (int f = 0; f < c.cv_folds; ++f) {
    std::vector<std::size_t> tr, te;
    for (std::size_t i = 0; i < folds.size(); ++i) (folds[i] == f ? te : tr).push_back(i);
    const auto st = refine::fit_refinement(aug, tr, c.refinement);
    const auto refined = refine::apply_refinement(st, aug);
    const auto test = select_rows(refined, te);
    auto train = select_rows(refined, tr);
    Matrix xtr = train.values;
    std::vector<int> ytr = train.labels;
    if (c.balance_mode == "split_then_balance") {
      auto b = refine::smote_enn(train.values, train.labels, balance_params(c, "cv-balance-" + std::to_string(f)));
      xtr = std::move(b.x);
      ytr = std::move(b.y);
    }
    for (auto k : c.model_kinds) scores[k].push_back(models::compute_metrics(test.labels, models::predict(train_kind(c, k, xtr, ytr), test.values)).f1_w);
  }
  return scores;
}

inline json ci_json(const std::vector<double>& scores) {
  const auto ci = models::t_confidence_interval(scores);
  return {{"scores", scores}, {"mean", ci.mean}, {"std", ci.std}, {"ci_low", ci.low}, {"ci_high", ci.high}, {"t_crit", ci.t_crit}};
}

// ---------------------------------------------------------------------------
// Full run
// ---------------------------------------------------------------------------

struct RunResult {
  json metrics;
  json timing;
  std::vector<RecordResult> records;
  std::optional<GridSummary> grid;
  FeatureMatrix base, augmented;
  Prepared prepared;
  std::map<models::ModelKind, models::TrainedModel> trained;
};

struct RunOptions {
  bool stop_after_features = false;
  bool stop_after_augment = false;
  bool stop_after_refine = false;
};

inline void save_matrix(const PipelineConfig& c, const FeatureMatrix& m, const fs::path& stem) {
  fs::create_directories(stem.parent_path());
  write_binary(m, stem, config::provenance(c));
}

inline RunResult run_pipeline(const PipelineConfig& c, const RunOptions& opt = {}) {
  RunResult res;
  Stopwatch total;
  const fs::path out = c.output_dir;
  fs::create_directories(out / "cache");
  const Cache cache{out / "cache"};
  const auto prov = config::provenance(c);
  std::vector<StageTime> stages;
  auto finish_timing = [&] {
    json st = json::array();
    for (const auto& s : stages) st.push_back({{"stage", s.stage}, {"seconds", s.seconds}, {"cached", s.cached}});
    double seg_s = 0, feat_s = 0;
    for (const auto& r : res.records) seg_s += r.segmentation_s(), feat_s += r.features_s;
    auto stage_s = [&](const std::string& name) {
      for (const auto& s : stages)
        if (s.stage == name) return s.seconds;
      return 0.0;
    };
    res.timing = {{"provenance", prov},
                  {"stages", st},
                  {"segmentation_s", seg_s},
                  {"feature_extraction_s", feat_s},
                  {"augmentation_selection_balancing_s", stage_s("augment") + stage_s("refine_balance")},
                  {"training_evaluation_s", stage_s("train_evaluate")},
                  {"cross_validation_s", stage_s("cross_validate")},
                  {"total_s", total.seconds()}};
    write_json(out / "timing.json", res.timing);
  };

  // Window parameters, optionally from the grid search.
  seg::WindowParams window = c.segmentation.window;
  if (c.segmentation.use_robust_optimum) {
    Stopwatch sw;
    res.grid = grid_search(c);
    write_grid(c, *res.grid, out);
    window = {res.grid->robust.alpha, res.grid->robust.beta};
    stages.push_back({"grid_search", sw.seconds(), false});
  }

  // Per-record stages.
  std::vector<std::string> record_keys;
  {
    Stopwatch sw;
    const auto names = record_names(c);
    res.records.resize(names.size());
    const auto stage_cfg = record_stage_config(c, window);
    std::atomic<std::size_t> hits{0};
    record_keys.resize(names.size());
    parallel_for(names.size(), c.workers, [&](std::size_t i) {
      std::string digest;
      try {
        digest = record_digest(c, names[i]);
      } catch (const std::exception& e) {
        throw StageError("load", names[i], e.what());
      }
      const auto key = config::hash_of({{"cfg", stage_cfg}, {"data", digest}, {"record", names[i]}});
      record_keys[i] = key;
      const auto name = "record_" + names[i];
      const auto stem = cache.stem(name, key);
      if (cache.has(name, key)) {
        RecordResult r;
        r.base = read_binary(stem);
        r.load_meta(read_json(stem.string() + ".meta.json"));
        r.cached = true;
        res.records[i] = std::move(r);
        ++hits;
        return;
      }
      auto r = process_record(c, names[i], window);
      write_binary(r.base, stem, prov);
      write_json(stem.string() + ".meta.json", r.meta());
      cache.commit(name, key);
      res.records[i] = std::move(r);
    });
    stages.push_back({"records", sw.seconds(), hits == names.size()});
  }
  std::vector<FeatureMatrix> parts;
  std::map<std::string, augment::RecordRhythm> rhythms;
  double fs = 0;
  json record_report = json::array();
  for (const auto& r : res.records) {
    auto meta = r.meta();
    meta.erase("beat_times_s");
    record_report.push_back(meta);
    if (!r.base.n_rows()) continue;
    if (fs > 0 && std::abs(fs - r.fs) > 1e-9) throw StageError("augment", r.id, "records differ in sampling rate; set fs_target");
    fs = r.fs;
    parts.push_back(r.base);
    rhythms[r.id] = r.rhythm;
  }
  write_json(out / "records.json", {{"provenance", prov}, {"records", record_report}});
  if (parts.empty()) throw StageError("features", "", "no labelled beat segments in any record");
  res.base = vstack(parts);
  save_matrix(c, res.base, out / "features_base");
  if (opt.stop_after_features) {
    finish_timing();
    return res;
  }

  // Augmentation.
  const auto aug_key = config::hash_of({{"records", record_keys},
                                        {"graph", c.raw["graph"]},
                                        {"registry", augment::augmented_registry_hash()}});
  {
    Stopwatch sw;
    const auto stem = cache.stem("augmented", aug_key);
    const bool hit = cache.has("augmented", aug_key);
    try {
      if (hit) {
        res.augmented = read_binary(stem);
      } else {
        res.augmented = augment::augment_matrix(res.base, rhythms, fs, c.graph);
        write_binary(res.augmented, stem, prov);
        cache.commit("augmented", aug_key);
      }
    } catch (const std::exception& e) {
      throw StageError("augment", "", e.what());
    }
    save_matrix(c, res.augmented, out / "features_augmented");
    stages.push_back({"augment", sw.seconds(), hit});
  }
  if (opt.stop_after_augment) {
    finish_timing();
    return res;
  }

  // Split, refinement and balancing.
  const auto prep_key = config::hash_of({{"aug", aug_key},
                                         {"refinement", c.raw["refinement"]},
                                         {"balance", c.raw["balance"]},
                                         {"split", c.raw["split"]},
                                         {"seed", c.seed}});
  {
    Stopwatch sw;
    const auto stem = cache.stem("prepared", prep_key);
    const bool hit = cache.has("prepared", prep_key);
    try {
      if (hit) {
        const auto j = read_json(stem.string() + ".json");
        res.prepared.state = refine::from_json(j.at("refinement"));
        res.prepared.n_synthesized = j.at("n_synthesized");
        res.prepared.n_removed = j.at("n_removed");
        res.prepared.balanced_rows = j.at("balanced_rows");
        res.prepared.balanced_counts = j.at("balanced_counts").get<std::vector<std::size_t>>();
        res.prepared.warnings = j.at("warnings").get<std::vector<std::string>>();
        res.prepared.train = read_binary(stem.string() + ".train");
        res.prepared.test = read_binary(stem.string() + ".test");
      } else {
        res.prepared = prepare_dataset(c, res.augmented);
        write_binary(res.prepared.train, stem.string() + ".train", prov);
        write_binary(res.prepared.test, stem.string() + ".test", prov);
        write_json(stem.string() + ".json", {{"refinement", refine::to_json(res.prepared.state)},
                                             {"n_synthesized", res.prepared.n_synthesized},
                                             {"n_removed", res.prepared.n_removed},
                                             {"balanced_rows", res.prepared.balanced_rows},
                                             {"balanced_counts", res.prepared.balanced_counts},
                                             {"warnings", res.prepared.warnings}});
        cache.commit("prepared", prep_key);
      }
    } catch (const std::exception& e) {
      throw StageError("refine", "", e.what());
    }
    json rj = refine::to_json(res.prepared.state);
    rj["provenance"] = prov;
    write_json(out / "refinement.json", rj);
    save_matrix(c, res.prepared.train, out / "features_train");
    save_matrix(c, res.prepared.test, out / "features_test");
    stages.push_back({"refine_balance", sw.seconds(), hit});
  }
  if (opt.stop_after_refine) {
    finish_timing();
    return res;
  }
  const auto refinement_bytes = read_text(out / "refinement.json").size();

  // Training and evaluation.
  json model_reports = json::object();
  {
    Stopwatch sw;
    bool all_hit = true;
    fs::create_directories(out / "models");
    for (auto kind : c.model_kinds) {
      const std::string kn = models::kind_name(kind);
      const auto key = config::hash_of({{"prep", prep_key}, {"models", c.raw["models"]}, {"timing", c.raw["timing"]}, {"kind", kn}});
      const auto name = "model_" + kn;
      const auto stem = cache.stem(name, key);
      json report;
      models::TrainedModel m;
      try {
        if (cache.has(name, key)) {
          report = read_json(stem.string() + ".report.json");
          m = models::load_model(stem.string() + ".bin");
        } else {
          all_hit = false;
          report = train_and_evaluate(c, kind, res.prepared, &m, refinement_bytes);
          models::save_model(m, stem.string() + ".bin", res.prepared.train.columns);
          write_json(stem.string() + ".report.json", report);
          cache.commit(name, key);
        }
      } catch (const std::exception& e) {
        throw StageError("train", kn, e.what());
      }
      models::save_model(m, out / "models" / (kn + ".bin"), res.prepared.train.columns);
      {
        std::ofstream imp(out / "models" / (kn + "_importance.csv"));
        imp << config::provenance_comment(c) << "\nfeature,importance\n";
        for (const auto& [f, v] : models::importance_report(m, res.prepared.train.columns)) imp << f << ',' << format_double(v) << '\n';
      }
      model_reports[kn] = report;
      res.trained[kind] = std::move(m);
    }
    stages.push_back({"train_evaluate", sw.seconds(), all_hit});
  }

  // Cross-validation.
  if (c.cv_enabled) {
    Stopwatch sw;
    const auto key = config::hash_of({{"aug", aug_key},
                                      {"refinement", c.raw["refinement"]},
                                      {"balance", c.raw["balance"]},
                                      {"models", c.raw["models"]},
                                      {"cv", c.raw["cv"]},
                                      {"seed", c.seed}});
    const auto stem = cache.stem("cv", key);
    const bool hit = cache.has("cv", key);
    json cv;
    if (hit) {
      cv = read_json(stem.string() + ".json");
    } else {
      try {
        for (const auto& [k, s] : cross_validate(c, res.augmented)) cv[models::kind_name(k)] = ci_json(s);
      } catch (const std::exception& e) {
        cv = {{"error", e.what()}};
      }
      write_json(stem.string() + ".json", cv);
      cache.commit("cv", key);
    }
    for (auto kind : c.model_kinds) {
      const std::string kn = models::kind_name(kind);
      model_reports[kn]["cv"] = cv.contains(kn) ? cv[kn] : json{{"error", cv.value("error", std::string("not computed"))}};
    }
    stages.push_back({"cross_validate", sw.seconds(), hit});
  }

  const auto& st = res.prepared.state;
  double cum = 0;
  for (double v : st.pca.variance_ratios) cum += v;
  res.metrics = {{"provenance", prov},
                 {"models", model_reports},
                 {"dataset",
                  {{"records", res.records.size()},
                   {"segments", res.base.n_rows()},
                   {"segment_class_counts", class_counts(res.base.labels)},
                   {"base_columns", res.base.n_cols()},
                   {"augmented_columns", res.augmented.n_cols()},
                   {"final_columns", res.prepared.train.n_cols()},
                   {"selected_columns", st.selected_names()},
                   {"pca_variance_ratios", st.pca.variance_ratios},
                   {"pca_cumulative", cum},
                   {"balance_mode", c.balance_mode},
                   {"balanced_rows", res.prepared.balanced_rows},
                   {"balanced_class_counts", res.prepared.balanced_counts},
                   {"n_synthesized", res.prepared.n_synthesized},
                   {"n_removed", res.prepared.n_removed},
                   {"train_rows", res.prepared.train.n_rows()},
                   {"test_rows", res.prepared.test.n_rows()},
                   {"warnings", res.prepared.warnings}}}};
  write_json(out / "metrics.json", res.metrics);
  finish_timing();
  return res;
}

// ---------------------------------------------------------------------------
// Per-patient profile
// ---------------------------------------------------------------------------

inline constexpr double kRrBudgetMs = 800.0;

/// Per-record time is the record's own stages plus a beat-proportional share
/// of the dataset-level stages (augmentation, refinement, balancing).
inline json per_patient_profile(const fs::path& run_dir, const std::string& model = "linear_svc") {
  const auto records = read_json(run_dir / "records.json");
  const auto timing = read_json(run_dir / "timing.json");
  const auto metrics = read_json(run_dir / "metrics.json");
  double shared = 0;
  for (const auto& s : timing.at("stages"))
    if (s.at("stage") == "augment" || s.at("stage") == "refine_balance") shared += s.at("seconds").get<double>();
  std::size_t total_beats = 0;
  for (const auto& r : records.at("records")) total_beats += r.at("n_segments").get<std::size_t>();
  json cls = nullptr;
  if (metrics.at("models").contains(model)) cls = metrics["models"][model]["single_row_ms"];
  json rows = json::array();
  double sum_ms = 0;
  std::size_t counted = 0;
  for (const auto& r : records.at("records")) {
    const auto beats = r.at("n_segments").get<std::size_t>();
    double own = 0;
    for (const char* k : {"load_s", "filter_s", "detect_s", "segment_s", "features_s"}) own += r.at(k).get<double>();
    const double share = total_beats ? shared * static_cast<double>(beats) / static_cast<double>(total_beats) : 0.0;
    const double pipeline_s = own + share;
    json row = {{"record", r.at("record")}, {"beats", beats}, {"pipeline_s", pipeline_s}, {"classification_ms", cls}};
    if (beats) {
      const double per_beat = 1000.0 * pipeline_s / static_cast<double>(beats);
      row["per_beat_ms"] = per_beat;
      row["realtime_feasible"] = per_beat < kRrBudgetMs;
      sum_ms += per_beat;
      ++counted;
    } else {
      row["per_beat_ms"] = nullptr;
      row["realtime_feasible"] = nullptr;
    }
    rows.push_back(row);
  }
  const double mean = counted ? sum_ms / static_cast<double>(counted) : 0.0;
  json prof = {{"provenance", metrics.at("provenance")},
               {"model", model},
               {"rr_budget_ms", kRrBudgetMs},
               {"records", rows},
               {"mean_per_beat_ms", counted ? json(mean) : json(nullptr)},
               {"realtime_feasible", counted ? json(mean < kRrBudgetMs) : json(nullptr)}};
  write_json(run_dir / "profile.json", prof);
  return prof;
}

}  // namespace ecg::pipeline
