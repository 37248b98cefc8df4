// ecgpipe: command-line front end for the arrhythmia pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "ecg/pipeline.hpp"
#include "ecg/synthetic.hpp"

using namespace ecg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string data_dir, output_dir;
};

void add_common(CLI::App* sub, Common& co) {
  sub->add_option("-c,--config", co.config_file, "JSON config file")->check(CLI::ExistingFile);
  sub->add_option("--set", co.sets, "override key=value (dotted keys)");
  sub->add_option("-d,--data-dir", co.data_dir, "WFDB record directory");
  sub->add_option("-o,--out", co.output_dir, "output directory");
  sub->allow_extras();
}

std::pair<std::string, std::string> split_assignment(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw CLI::ValidationError("--set", "expected key=value, got '" + s + "'");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

/// Turns --a.b=v and --a.b v into overrides.
std::vector<std::pair<std::string, std::string>> extras_to_overrides(const std::vector<std::string>& rest) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < rest.size(); ++i) {
    const auto& t = rest[i];
    if (t.rfind("--", 0) != 0) throw CLI::ExtrasError({t});
    const auto body = t.substr(2);
    if (body.find('=') != std::string::npos) {
      out.push_back(split_assignment(body));
    } else if (i + 1 < rest.size() && rest[i + 1].rfind("--", 0) != 0) {
      out.emplace_back(body, rest[++i]);
    } else {
      out.emplace_back(body, "true");
    }
  }
  return out;
}

config::PipelineConfig make_config(const CLI::App* sub, const Common& co,
                                   std::vector<std::pair<std::string, std::string>> extra = {}) {
  std::vector<std::pair<std::string, std::string>> ov;
  if (!co.data_dir.empty()) ov.emplace_back("data_dir", co.data_dir);
  if (!co.output_dir.empty()) ov.emplace_back("output_dir", co.output_dir);
  for (const auto& s : co.sets) ov.push_back(split_assignment(s));
  for (auto& e : extras_to_overrides(sub->remaining())) ov.push_back(std::move(e));
  for (auto& e : extra) ov.push_back(std::move(e));
  const json file = co.config_file.empty() ? json() : config::load_file(co.config_file);
  return config::validate(config::compose(file, ov));
}

/// stdout when path is empty or "-".
struct Sink {
  explicit Sink(const std::string& path) {
    if (!path.empty() && path != "-") {
      if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
      file.open(path);
      if (!file) throw std::runtime_error("cannot write " + path);
    }
  }
  std::ostream& os() { return file.is_open() ? static_cast<std::ostream&>(file) : std::cout; }
  std::ofstream file;
};

void print_summary(const json& metrics) {
  std::printf("%-22s %8s %8s %9s %10s\n", "model", "acc", "f1_w", "size_kb", "efficiency");
  for (const auto& [kind, m] : metrics.at("models").items()) {
    auto num = [&](const char* k) { return m.contains(k) && m[k].is_number() ? m[k].get<double>() : std::nan(""); };
    std::printf("%-22s %8.4f %8.4f %9.3f %10.4f\n", kind.c_str(), num("acc"), num("f1_weighted"), num("size_kb"), num("efficiency"));
    if (m.contains("cv") && m["cv"].contains("mean"))
      std::printf("%-22s cv f1 %.4f [%.4f, %.4f]\n", "", m["cv"]["mean"].get<double>(), m["cv"]["ci_low"].get<double>(),
                  m["cv"]["ci_high"].get<double>());
  }
}

void write_matrix_csv(const config::PipelineConfig& c, const FeatureMatrix& m, const fs::path& path) {
  write_csv(m, path, config::provenance_comment(c));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ECG arrhythmia pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(config::kToolVersion));

  Common co;

  // parse
  auto* parse = app.add_subcommand("parse", "dump one record as CSV (sample_index, ch0_mV, ch1_mV)");
  add_common(parse, co);
  std::string record, csv_out;
  bool with_annotations = false;
  parse->add_option("record", record, "record name")->required();
  parse->add_option("--csv", csv_out, "output CSV (default stdout)");
  parse->add_flag("--annotations", with_annotations, "dump annotations (sample_index, symbol, aami) instead");

  // segment
  auto* segment = app.add_subcommand("segment", "detect, segment and extract base features");
  add_common(segment, co);
  std::optional<double> alpha, beta;
  std::optional<int> target_len;
  bool use_grid = false;
  segment->add_option("--alpha", alpha, "pre-peak window fraction of the local RR");
  segment->add_option("--beta", beta, "post-peak window fraction of the local RR");
  segment->add_option("--target-len", target_len, "resampled segment length");
  segment->add_flag("--grid-search", use_grid, "choose alpha/beta by grid search");

  auto* features = app.add_subcommand("features", "base feature matrix (88 columns) as CSV and binary");
  add_common(features, co);
  auto* augment = app.add_subcommand("augment", "augmented feature matrix (197 columns)");
  add_common(augment, co);
  auto* refine_cmd = app.add_subcommand("refine", "split, refine to 202 columns and balance");
  add_common(refine_cmd, co);
  auto* train = app.add_subcommand("train", "train and test-evaluate the configured models");
  add_common(train, co);

  auto* evaluate = app.add_subcommand("evaluate", "evaluate a saved model on a saved feature matrix");
  add_common(evaluate, co);
  std::string model_path, features_stem;
  int eval_repeats = 30;
  evaluate->add_option("--model", model_path, "model .bin (default <out>/models/linear_svc.bin)");
  evaluate->add_option("--features", features_stem, "feature matrix stem (default <out>/features_test)");
  evaluate->add_option("--repeats", eval_repeats, "timing repeats")->check(CLI::Range(1, 100000));

  auto* grid = app.add_subcommand("grid-search", "window grid search; writes the loss surface and per-beat optima");
  add_common(grid, co);

  auto* profile = app.add_subcommand("profile", "per-record computational profile of a finished run");
  add_common(profile, co);
  std::string profile_model = "linear_svc";
  profile->add_option("--model", profile_model, "model used for classification latency");

  auto* run_all = app.add_subcommand("run-all", "full pipeline with cross-validation and reports");
  add_common(run_all, co);

  // debugging helpers
  auto* filt = app.add_subcommand("filter-response", "bandpass magnitude response as CSV (freq_hz, magnitude_db)");
  add_common(filt, co);
  double resp_fs = 360.0;
  int resp_points = 512;
  filt->add_option("--fs", resp_fs, "sampling rate")->check(CLI::PositiveNumber);
  filt->add_option("--points", resp_points, "frequency points")->check(CLI::Range(2, 1000000));
  filt->add_option("--csv", csv_out, "output CSV (default stdout)");

  auto* peaks = app.add_subcommand("peaks", "per-detector and merged R-peaks as CSV (detector, sample_index, sqi_weight)");
  add_common(peaks, co);
  peaks->add_option("record", record, "record name")->required();
  peaks->add_option("--csv", csv_out, "output CSV (default stdout)");

  auto* graph = app.add_subcommand("graph", "beat graph edge list of one record as CSV (src, dst, weight)");
  add_common(graph, co);
  graph->add_option("record", record, "record name")->required();
  graph->add_option("--csv", csv_out, "output CSV")->required();

  auto* synth = app.add_subcommand("synth", "write a synthetic annotated WFDB corpus");
  std::string synth_dir;
  int synth_records = 4;
  double synth_seconds = 120;
  std::uint64_t synth_seed = 1;
  synth->add_option("dir", synth_dir, "target directory")->required();
  synth->add_option("--records", synth_records)->check(CLI::Range(1, 1000));
  synth->add_option("--seconds", synth_seconds)->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (parse->parsed()) {
      const auto c = make_config(parse, co);
      const auto rec = wfdb::load_record(c.data_dir, record, {c.annotator});
      Sink sink(csv_out);
      auto& os = sink.os();
      if (with_annotations) {
        os << "sample_index,symbol,aami\n";
        for (const auto& a : rec.annotations) {
          const auto cls = c.aami.map(a.symbol);
          os << a.sample << ',' << a.symbol << ',' << (cls ? std::string(1, label_char(*cls)) : std::string()) << '\n';
        }
      } else {
        os << "sample_index";
        for (std::size_t k = 0; k < rec.n_channels(); ++k) os << ",ch" << k << "_mV";
        os << '\n';
        for (Eigen::Index i = 0; i < rec.signal.rows(); ++i) {
          os << i;
          for (Eigen::Index k = 0; k < rec.signal.cols(); ++k) os << ',' << format_double(rec.signal(i, k));
          os << '\n';
        }
      }
      return 0;
    }

    if (segment->parsed() || features->parsed()) {
      const auto* sub = segment->parsed() ? segment : features;
      std::vector<std::pair<std::string, std::string>> extra;
      if (alpha) extra.emplace_back("segmentation.alpha", std::to_string(*alpha));
      if (beta) extra.emplace_back("segmentation.beta", std::to_string(*beta));
      if (target_len) extra.emplace_back("segmentation.target_len", std::to_string(*target_len));
      if (use_grid) extra.emplace_back("segmentation.grid.use_robust_optimum", "true");
      const auto c = make_config(sub, co, extra);
      const auto r = pipeline::run_pipeline(c, {.stop_after_features = true});
      write_matrix_csv(c, r.base, c.output_dir / "features_base.csv");
      std::size_t n = 0;
      for (const auto& rr : r.records) n += rr.base.n_rows();
      std::cout << r.records.size() << " records, " << n << " segments, " << r.base.n_cols() << " columns -> "
                << (c.output_dir / "features_base.csv").string() << '\n';
      return 0;
    }

    if (augment->parsed()) {
      const auto c = make_config(augment, co);
      const auto r = pipeline::run_pipeline(c, {.stop_after_augment = true});
      write_matrix_csv(c, r.augmented, c.output_dir / "features_augmented.csv");
      std::cout << r.augmented.n_rows() << " rows, " << r.augmented.n_cols() << " columns -> "
                << (c.output_dir / "features_augmented.csv").string() << '\n';
      return 0;
    }

    if (refine_cmd->parsed()) {
      const auto c = make_config(refine_cmd, co);
      const auto r = pipeline::run_pipeline(c, {.stop_after_refine = true});
      write_matrix_csv(c, r.prepared.train, c.output_dir / "features_train.csv");
      write_matrix_csv(c, r.prepared.test, c.output_dir / "features_test.csv");
      std::cout << "train " << r.prepared.train.n_rows() << " rows, test " << r.prepared.test.n_rows() << " rows, "
                << r.prepared.train.n_cols() << " columns\n";
      return 0;
    }

    if (train->parsed() || run_all->parsed()) {
      const auto* sub = train->parsed() ? train : run_all;
      std::vector<std::pair<std::string, std::string>> extra;
      if (train->parsed()) extra.emplace_back("cv.enabled", "false");
      const auto c = make_config(sub, co, extra);
      const auto r = pipeline::run_pipeline(c);
      print_summary(r.metrics);
      if (r.timing.contains("total_s")) std::printf("total %.2f s\n", r.timing["total_s"].get<double>());
      std::cout << "reports in " << c.output_dir.string() << '\n';
      return 0;
    }

    if (evaluate->parsed()) {
      const auto c = make_config(evaluate, co);
      const fs::path mp = model_path.empty() ? c.output_dir / "models" / "linear_svc.bin" : fs::path(model_path);
      const fs::path fp = features_stem.empty() ? c.output_dir / "features_test" : fs::path(features_stem);
      const auto model = models::load_model(mp);
      const auto m = read_binary(fp);
      const auto pred = models::predict(model, m.values);
      const auto met = models::compute_metrics(m.labels, pred);
      const auto t = models::time_inference(model, m.values, eval_repeats);
      json out = {{"model", mp.string()},
                  {"features", fp.string()},
                  {"rows", m.n_rows()},
                  {"acc", met.accuracy},
                  {"f1_weighted", met.f1_w},
                  {"precision_weighted", met.precision_w},
                  {"recall_weighted", met.recall_w},
                  {"confusion", met.confusion},
                  {"per_class_recall", pipeline::class_map(met.per_class_recall)},
                  {"infer_ms", t.batch_ms_per_sample},
                  {"single_row_ms", t.single_row_ms},
                  {"size_bytes", models::model_size_bytes(model)},
                  {"warnings", met.warnings}};
      std::cout << out.dump(1) << '\n';
      return 0;
    }

    if (grid->parsed()) {
      const auto c = make_config(grid, co);
      const auto g = pipeline::grid_search(c);
      fs::create_directories(c.output_dir);
      pipeline::write_grid(c, g, c.output_dir);
      std::printf("%zu beats, %zux%zu grid\nrobust optimum alpha=%.4f beta=%.4f loss=%.4f\nexact minimum alpha=%.4f beta=%.4f loss=%.4f\n",
                  g.n_beats, g.alphas.size(), g.betas.size(), g.robust.alpha, g.robust.beta, g.robust.loss,
                  g.exact_minimum.alpha, g.exact_minimum.beta, g.exact_minimum.loss);
      return 0;
    }

    if (profile->parsed()) {
      const auto c = make_config(profile, co);
      const auto p = pipeline::per_patient_profile(c.output_dir, profile_model);
      std::printf("%-10s %7s %11s %12s %14s %9s\n", "record", "beats", "pipeline_s", "per_beat_ms", "classify_ms", "feasible");
      for (const auto& r : p.at("records")) {
        const auto cls = r["classification_ms"].is_number() ? r["classification_ms"].get<double>() : std::nan("");
        std::printf("%-10s %7zu %11.3f %12.3f %14.6f %9s\n", r["record"].get<std::string>().c_str(), r["beats"].get<std::size_t>(),
                    r["pipeline_s"].get<double>(), r["per_beat_ms"].get<double>(), cls,
                    r["realtime_feasible"].get<bool>() ? "yes" : "no");
      }
      std::cout << "profile -> " << (c.output_dir / "profile.json").string() << '\n';
      return 0;
    }

    if (filt->parsed()) {
      const auto c = make_config(filt, co);
      const auto cascade = dsp::design_butterworth_bandpass(c.filter.order, c.filter.low_hz, std::min(c.filter.high_hz, 0.45 * resp_fs), resp_fs);
      Sink sink(csv_out);
      auto& os = sink.os();
      os << "freq_hz,magnitude_db\n";
      for (int i = 0; i < resp_points; ++i) {
        const double f = 0.5 * resp_fs * i / (resp_points - 1);
        const double mag = std::abs(cascade.response(f, resp_fs));
        os << format_double(f) << ',' << format_double(20.0 * std::log10(std::max(mag, 1e-300))) << '\n';
      }
      return 0;
    }

    if (peaks->parsed()) {
      const auto c = make_config(peaks, co);
      const auto p = pipeline::prepare_record(c, record);
      Sink sink(csv_out);
      auto& os = sink.os();
      os << "detector,sample_index,sqi_weight\n";
      for (const auto& d : p.peaks.detectors)
        for (auto s : d.peaks) os << rpeak::detector_name(d.detector) << ',' << s << ',' << format_double(d.weight_at(s)) << '\n';
      for (auto s : p.peaks.merged) {
        double w = 0;
        for (const auto& d : p.peaks.detectors) w += d.weight_at(s);
        os << "merged," << s << ',' << format_double(p.peaks.detectors.empty() ? 0.0 : w / p.peaks.detectors.size()) << '\n';
      }
      for (const auto& w : p.warnings) std::cerr << "warning: " << w << '\n';
      return 0;
    }

    if (graph->parsed()) {
      const auto c = make_config(graph, co);
      const auto r = pipeline::process_record(c, record, c.segmentation.window);
      std::vector<std::size_t> rows(r.base.n_rows());
      std::iota(rows.begin(), rows.end(), 0);
      const auto g = augment::build_beat_graph(augment::detail::graph_inputs(r.base, rows), c.graph.k, c.graph.tau);
      augment::write_edge_csv(g, csv_out);
      std::cout << rows.size() << " beats -> " << csv_out << '\n';
      return 0;
    }

    if (synth->parsed()) {
      const auto names = synthetic::write_corpus(synth_dir, synth_records, synth_seconds, synth_seed);
      std::cout << names.size() << " records -> " << synth_dir << '\n';
      return 0;
    }
  } catch (const pipeline::StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
