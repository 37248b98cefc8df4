// Acceptance harness: one PASS / FAIL / SKIPPED line per criterion.
// Dataset-backed criteria run only when ECG_MITDB_DIR / ECG_INCART_DIR point at
// WFDB directories; everything else runs on synthetic data.

#include <cstdio>
#include <cstdlib>
#include <random>
#include <sstream>
#include <unistd.h>

#include "ecg/pipeline.hpp"
#include "ecg/synthetic.hpp"
#include "oracles/graph_reference.hpp"
#include "oracles/jacobi_eigen.hpp"
#include "oracles/naive_dft.hpp"

using namespace ecg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace tol {
constexpr std::size_t kBaseColumns = 88, kAugmentedColumns = 197, kFinalColumns = 202;
constexpr double kFullRunMaxSeconds = 15 * 60;
constexpr double kSegmentTarget = 1173, kSegmentRelTol = 0.15;
constexpr double kLinearMinF1 = 0.94, kLinearMinAcc = 0.94, kTreeMinGap = 0.03;
constexpr double kMaxModelKb = 16.0, kMaxSingleRowMs = 0.050, kMaxBatchedMs = 0.005;
constexpr double kEfficiencyTarget = 0.553, kEfficiencyTol = 0.01;
constexpr double kDftRel = 1e-9, kPageRankAbs = 1e-8, kBarratAbs = 1e-12, kGradRel = 1e-5;
constexpr double kPcaRatioAbs = 1e-10, kPcaScoreAbs = 1e-8;
constexpr double kWaveletRel = 1e-6, kMiAbs = 1e-9, kSmoteResidual = 1e-9;
constexpr double kGridRepresentation = 5e-4;  // three-decimal rounding of the reported point
constexpr double kIncartMinF1 = 0.93;
constexpr double kReferencePcaCumulative = 0.711;
}  // namespace tol

namespace {

enum class Verdict { pass, fail, skipped };

struct Check {
  bool ok = true;
  std::ostringstream why;
  void require(bool cond, const std::string& what) {
    if (!cond) {
      if (!ok) why << "; ";
      why << what;
      ok = false;
    }
  }
};

int n_fail = 0;

void report(int id, const std::string& title, Verdict v, const std::string& detail) {
  const char* tag = v == Verdict::pass ? "PASS" : v == Verdict::fail ? "FAIL" : "SKIPPED";
  if (v == Verdict::fail) ++n_fail;
  std::printf("%-7s [%d] %s: %s\n", tag, id, title.c_str(), detail.c_str());
  std::fflush(stdout);
}

template <class Fn>
void criterion(int id, const std::string& title, Fn&& fn) {
  try {
    Check c;
    std::string info = fn(c);
    if (c.ok) report(id, title, Verdict::pass, info);
    else report(id, title, Verdict::fail, c.why.str() + (info.empty() ? "" : " | " + info));
  } catch (const std::exception& e) {
    report(id, title, Verdict::fail, std::string("exception: ") + e.what());
  }
}

std::string fmt(const char* f, auto... v) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, v...);
  return buf;
}

const char* env(const char* name) {
  const char* v = std::getenv(name);
  return v && *v ? v : nullptr;
}

fs::path scratch_root() {
  static const fs::path p = [] {
    auto d = fs::temp_directory_path() / ("ecgpipe_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

config::PipelineConfig make_config(const json& file, std::vector<std::pair<std::string, std::string>> ov) {
  return config::validate(config::compose(file, ov));
}

std::vector<double> white(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> x(n);
  for (double& v : x) v = g(rng);
  return x;
}

Matrix random_matrix(Eigen::Index n, Eigen::Index d, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  return x;
}

augment::BeatGraph from_dense(const oracle::Dense& w) {
  augment::BeatGraph g;
  g.n = w.size();
  for (std::size_t i = 0; i < w.size(); ++i)
    for (std::size_t j = 0; j < w.size(); ++j)
      if (w[i][j] > 0) g.edges.push_back({i, j, w[i][j]});
  return g;
}

oracle::Dense random_weights(std::size_t n, unsigned seed, double density, bool symmetric) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  oracle::Dense w(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = symmetric ? i + 1 : 0; j < n; ++j) {
      if (i == j || u(rng) > density) continue;
      w[i][j] = 0.05 + 0.95 * u(rng);
      if (symmetric) w[j][i] = w[i][j];
    }
  return w;
}

long xcorr_lag(const std::vector<double>& a, const std::vector<double>& b, long max_lag) {
  long best = 0;
  double best_v = -1e300;
  const long n = static_cast<long>(a.size());
  for (long lag = -max_lag; lag <= max_lag; ++lag) {
    double s = 0;
    for (long i = 0; i < n; ++i)
      if (i + lag >= 0 && i + lag < n) s += a[static_cast<std::size_t>(i)] * b[static_cast<std::size_t>(i + lag)];
    if (s > best_v) best_v = s, best = lag;
  }
  return best;
}

template <class Obj>
double max_gradient_error(Obj&& obj, const models::BinaryProblem& p, const Eigen::VectorXd& theta) {
  Eigen::VectorXd g;
  obj(p, theta, &g, nullptr);
  double worst = 0;
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd a = theta, b = theta;
    a(i) += h, b(i) -= h;
    const double fd = (obj(p, a, nullptr, nullptr) - obj(p, b, nullptr, nullptr)) / (2 * h);
    worst = std::max(worst, std::abs(g(i) - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

const json& model(const json& metrics, const char* kind) { return metrics.at("models").at(kind); }
double num(const json& m, const char* key) { return m.at(key).get<double>(); }

struct DatasetRun {
  json metrics, timing;
  double wall_s = 0;
};

DatasetRun run_dataset(const std::string& dataset, const char* dir, const std::string& tag) {
  const auto out = env("ECG_ACCEPTANCE_OUT") ? fs::path(env("ECG_ACCEPTANCE_OUT")) / tag : scratch_root() / tag;
  const auto c = make_config(json{{"dataset", dataset}}, {{"data_dir", dir}, {"output_dir", out.string()}});
  pipeline::Stopwatch sw;
  const auto r = pipeline::run_pipeline(c);
  return {r.metrics, r.timing, sw.seconds()};
}

}  // namespace

int main() {
  std::printf("ecgpipe acceptance (tool %s)\n", config::kToolVersion);

  // Synthetic corpus shared by the dataset-free criteria.
  const auto corpus = scratch_root() / "corpus";
  synthetic::write_corpus(corpus, 6, 120.0, 2024);
  auto synth_config = [&](const std::string& out, std::vector<std::pair<std::string, std::string>> extra = {}) {
    std::vector<std::pair<std::string, std::string>> ov{{"data_dir", corpus.string()}, {"output_dir", (scratch_root() / out).string()}};
    ov.insert(ov.end(), extra.begin(), extra.end());
    return make_config(nullptr, ov);
  };
  std::optional<pipeline::RunResult> synth;
  try {
    synth = pipeline::run_pipeline(synth_config("synthetic_run"));
  } catch (const std::exception& e) {
    std::printf("synthetic run failed: %s\n", e.what());
  }

  std::optional<DatasetRun> mit;
  std::string mit_error;
  if (const char* dir = env("ECG_MITDB_DIR")) {
    try {
      mit = run_dataset("mitbih", dir, "mitbih");
    } catch (const std::exception& e) {
      mit_error = e.what();
    }
  }
  auto mit_criterion = [&](int id, const std::string& title, auto&& fn) {
    if (!env("ECG_MITDB_DIR")) return report(id, title, Verdict::skipped, "set ECG_MITDB_DIR to a MIT-BIH WFDB directory");
    if (!mit) return report(id, title, Verdict::fail, "MIT-BIH run failed: " + mit_error);
    criterion(id, title, fn);
  };

  // 1. Dimension ledger (+ runtime on MIT-BIH).
  criterion(1, "dimension ledger 88 -> 197 -> 202", [&](Check& c) {
    c.require(synth.has_value(), "synthetic run failed");
    if (!synth) return std::string();
    const auto& d = synth->metrics.at("dataset");
    std::string info = fmt("synthetic %d -> %d -> %d", d["base_columns"].get<int>(), d["augmented_columns"].get<int>(),
                           d["final_columns"].get<int>());
    c.require(d["base_columns"] == tol::kBaseColumns, "base columns");
    c.require(d["augmented_columns"] == tol::kAugmentedColumns, "augmented columns");
    c.require(d["final_columns"] == tol::kFinalColumns, "final columns");
    if (env("ECG_MITDB_DIR")) {
      c.require(mit.has_value(), "MIT-BIH run failed: " + mit_error);
      if (mit) {
        const auto& md = mit->metrics.at("dataset");
        info += fmt("; MIT-BIH %d -> %d -> %d in %.1f s (limit %.0f s)", md["base_columns"].get<int>(),
                    md["augmented_columns"].get<int>(), md["final_columns"].get<int>(), mit->wall_s, tol::kFullRunMaxSeconds);
        c.require(md["base_columns"] == tol::kBaseColumns && md["augmented_columns"] == tol::kAugmentedColumns &&
                      md["final_columns"] == tol::kFinalColumns,
                  "MIT-BIH ledger");
        c.require(mit->wall_s <= tol::kFullRunMaxSeconds, "MIT-BIH runtime");
      }
    } else {
      info += "; MIT-BIH ledger/runtime not run (ECG_MITDB_DIR unset)";
    }
    return info;
  });

  // 2. Segment count.
  mit_criterion(2, "MIT-BIH segment count 1173 +-15%", [&](Check& c) {
    const double n = mit->metrics["dataset"]["segments"].get<double>();
    c.require(std::abs(n - tol::kSegmentTarget) <= tol::kSegmentRelTol * tol::kSegmentTarget, "segment count out of range");
    return fmt("%.0f segments (accepted %.0f..%.0f)", n, tol::kSegmentTarget * (1 - tol::kSegmentRelTol),
               tol::kSegmentTarget * (1 + tol::kSegmentRelTol));
  });

  // 3. Diagnostic accuracy.
  mit_criterion(3, "MIT-BIH linear models F1/acc >= 0.94, tree trails by >= 3 pts", [&](Check& c) {
    const auto& m = mit->metrics;
    const double f_svc = num(model(m, "linear_svc"), "f1_weighted"), a_svc = num(model(m, "linear_svc"), "acc");
    const double f_lr = num(model(m, "logistic_regression"), "f1_weighted"), a_lr = num(model(m, "logistic_regression"), "acc");
    const double f_dt = num(model(m, "decision_tree"), "f1_weighted");
    c.require(f_svc >= tol::kLinearMinF1 && a_svc >= tol::kLinearMinAcc, "linear SVC below threshold");
    c.require(f_lr >= tol::kLinearMinF1 && a_lr >= tol::kLinearMinAcc, "logistic regression below threshold");
    c.require(std::min(f_svc, f_lr) - f_dt >= tol::kTreeMinGap, "decision tree gap too small");
    return fmt("svc f1 %.4f acc %.4f; lr f1 %.4f acc %.4f; tree f1 %.4f", f_svc, a_svc, f_lr, a_lr, f_dt);
  });

  // 4. Statistical separation.
  mit_criterion(4, "MIT-BIH 5-fold CV CIs of linear SVC and tree do not overlap", [&](Check& c) {
    const auto& svc = model(mit->metrics, "linear_svc").at("cv");
    const auto& dt = model(mit->metrics, "decision_tree").at("cv");
    c.require(svc.contains("ci_low") && dt.contains("ci_low"), "cross-validation missing");
    if (!c.ok) return std::string();
    const double sl = num(svc, "ci_low"), sh = num(svc, "ci_high"), dl = num(dt, "ci_low"), dh = num(dt, "ci_high");
    c.require(sl > dh || dl > sh, "intervals overlap");
    return fmt("svc [%.4f, %.4f] vs tree [%.4f, %.4f]", sl, sh, dl, dh);
  });

  if (mit) {
    const auto& d = mit->metrics["dataset"];
    if (d.contains("pca_cumulative") && !d["pca_cumulative"].empty())
      std::printf("INFO    MIT-BIH PCA cumulative variance of 5 components: %.3f (reference %.3f)\n",
                  d["pca_cumulative"].back().get<double>(), tol::kReferencePcaCumulative);
    if (mit->timing.contains("total_s"))
      std::printf("INFO    MIT-BIH stage ledger: segmentation %.2f s, augmentation/selection/balancing %.2f s, total %.2f s\n",
                  mit->timing["segmentation_s"].get<double>(), mit->timing["augmentation_selection_balancing_s"].get<double>(),
                  mit->timing["total_s"].get<double>());
  }

  // 5. Resource envelope.
  criterion(5, "resource envelope (size, latency, efficiency formula)", [&](Check& c) {
    const double e = models::efficiency_score(0.9843, 0.9844, 0.177, 4.62e-4, 8.54);
    c.require(std::abs(e - tol::kEfficiencyTarget) <= tol::kEfficiencyTol, "efficiency formula");
    std::string info = fmt("E(table inputs) = %.4f", e);
    const json* metrics = mit ? &mit->metrics : synth ? &synth->metrics : nullptr;
    c.require(metrics != nullptr, "no run available");
    if (!metrics) return info;
    info += mit ? "; MIT-BIH" : "; synthetic";
    for (const char* kind : {"linear_svc", "logistic_regression"}) {
      const auto& m = model(*metrics, kind);
      const double kb = num(m, "size_kb"), single = num(m, "single_row_ms"), batch = num(m, "infer_ms");
      c.require(kb <= tol::kMaxModelKb, std::string(kind) + " size");
      c.require(single <= tol::kMaxSingleRowMs, std::string(kind) + " single-row latency");
      c.require(batch <= tol::kMaxBatchedMs, std::string(kind) + " batched latency");
      info += fmt(" %s %.2f KB, %.5f ms single, %.6f ms batched;", kind, kb, single, batch);
    }
    return info;
  });

  // 6. Oracle equivalences.
  criterion(6, "oracle equivalences", [&](Check& c) {
    pipeline::Stopwatch sw;
    double dft_worst = 0;
    for (std::size_t n = 2; n <= 128; ++n) {
      const auto x = white(n, static_cast<unsigned>(n));
      const auto fast = dsp::dft_magnitudes(x);
      const auto naive = oracle::naive_dft_magnitudes(x);
      const double scale = *std::max_element(naive.begin(), naive.end());
      for (std::size_t k = 0; k < n; ++k) dft_worst = std::max(dft_worst, std::abs(fast[k] - naive[k]) / scale);
    }
    c.require(dft_worst <= tol::kDftRel, "DFT");

    double pr_worst = 0;
    for (unsigned seed = 1; seed <= 20; ++seed) {
      const std::size_t n = 2 + seed % 9;
      const auto w = random_weights(n, seed, 0.4, false);
      const auto pr = augment::pagerank(from_dense(w), {0.85, 1e-13, 2000});
      const auto ref = oracle::pagerank_dense(w, 0.85);
      for (std::size_t i = 0; i < n; ++i) pr_worst = std::max(pr_worst, std::abs(pr.scores[i] - ref[i]));
    }
    c.require(pr_worst <= tol::kPageRankAbs, "PageRank");

    double cc_worst = 0;
    for (unsigned seed = 1; seed <= 10; ++seed) {
      const auto w = random_weights(8, seed, 0.5, true);
      const auto cc = augment::weighted_clustering(from_dense(w));
      const auto ref = oracle::barrat_bruteforce(w);
      for (std::size_t i = 0; i < 8; ++i) cc_worst = std::max(cc_worst, std::abs(cc[i] - ref[i]));
    }
    c.require(cc_worst <= tol::kBarratAbs, "clustering coefficient");

    // CART root split against literal enumeration.
    bool cart_ok = true;
    for (unsigned seed = 1; seed <= 5; ++seed) {
      const Matrix x = random_matrix(30, 4, 16 + seed);
      std::vector<int> y;
      std::mt19937_64 rng(seed);
      for (int i = 0; i < 30; ++i) y.push_back(static_cast<int>(rng() % 3));
      const auto m = models::train_decision_tree(x, y, {}, 3);
      const auto& cw = m.class_weights;
      double best = std::numeric_limits<double>::infinity(), bt = 0;
      int bf = -1;
      for (int f = 0; f < 4; ++f) {
        std::vector<double> v;
        for (int i = 0; i < 30; ++i) v.push_back(x(i, f));
        std::sort(v.begin(), v.end());
        for (std::size_t k = 0; k + 1 < v.size(); ++k) {
          if (v[k] == v[k + 1]) continue;
          const double t = 0.5 * (v[k] + v[k + 1]);
          std::vector<double> l(3, 0), r(3, 0);
          for (int i = 0; i < 30; ++i) {
            const auto cls = static_cast<std::size_t>(y[static_cast<std::size_t>(i)]);
            (x(i, f) <= t ? l : r)[cls] += cw[cls];
          }
          auto imp = [](const std::vector<double>& q) {
            const double s = q[0] + q[1] + q[2];
            return s * (1 - (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]) / (s * s));
          };
          const double cost = imp(l) + imp(r);
          if (cost < best - 1e-12) best = cost, bf = f, bt = t;
        }
      }
      cart_ok = cart_ok && m.nodes[0].feature == bf && std::abs(m.nodes[0].threshold - bt) <= 1e-12;
    }
    c.require(cart_ok, "CART root split");

    // Gradients against central differences.
    const Matrix gx = random_matrix(20, 4, 3);
    models::BinaryProblem p{gx, {}, {}};
    for (int i = 0; i < 20; ++i) p.y.push_back(i % 3 ? 1.0 : -1.0), p.cost.push_back(0.5 + (i % 4) * 0.25);
    Eigen::VectorXd theta(5);
    theta << 0.31, -0.17, 0.52, 0.13, -0.07;
    const double lr_err = max_gradient_error(
        [](const models::BinaryProblem& q, const Eigen::VectorXd& t, Eigen::VectorXd* g, Eigen::MatrixXd* h) {
          return models::logistic_objective(q, t, g, h);
        },
        p, theta);
    const double hinge_err = max_gradient_error(
        [](const models::BinaryProblem& q, const Eigen::VectorXd& t, Eigen::VectorXd* g, Eigen::MatrixXd* h) {
          return models::squared_hinge_objective(q, t, g, h);
        },
        p, theta);
    c.require(lr_err <= tol::kGradRel, "logistic gradient");
    c.require(hinge_err <= tol::kGradRel, "squared hinge gradient");

    // PCA against Jacobi on an explicit covariance.
    const Matrix px = random_matrix(120, 30, 9) * random_matrix(30, 30, 10);
    const auto pca = refine::fit_pca(px, 5);
    const auto n = px.rows(), d = px.cols();
    std::vector<double> mu(static_cast<std::size_t>(d), 0.0);
    for (Eigen::Index col = 0; col < d; ++col)
      for (Eigen::Index r = 0; r < n; ++r) mu[static_cast<std::size_t>(col)] += px(r, col) / static_cast<double>(n);
    std::vector<std::vector<double>> cov(static_cast<std::size_t>(d), std::vector<double>(static_cast<std::size_t>(d), 0.0));
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index b = 0; b < d; ++b) {
        double s = 0;
        for (Eigen::Index r = 0; r < n; ++r) s += (px(r, a) - mu[static_cast<std::size_t>(a)]) * (px(r, b) - mu[static_cast<std::size_t>(b)]);
        cov[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = s / static_cast<double>(n - 1);
      }
    const auto ref = oracle::jacobi_eigen(cov);
    double total = 0;
    for (double v : ref.values) total += v;
    const Matrix scores = refine::pca_scores(pca, px);
    double ratio_err = 0, score_err = 0;
    for (std::size_t k = 0; k < 5; ++k) {
      ratio_err = std::max(ratio_err, std::abs(pca.variance_ratios[k] - ref.values[k] / total));
      for (Eigen::Index r = 0; r < n; ++r) {
        double s = 0;
        for (Eigen::Index j = 0; j < d; ++j) s += (px(r, j) - mu[static_cast<std::size_t>(j)]) * ref.vectors[k][static_cast<std::size_t>(j)];
        score_err = std::max(score_err, std::abs(std::abs(scores(r, static_cast<Eigen::Index>(k))) - std::abs(s)));
      }
    }
    c.require(ratio_err <= tol::kPcaRatioAbs && score_err <= tol::kPcaScoreAbs, "PCA");
    return fmt("dft %.1e, pagerank %.1e, barrat %.1e, cart %s, grad lr %.1e hinge %.1e, pca ratio %.1e score %.1e (%.2f s)",
               dft_worst, pr_worst, cc_worst, cart_ok ? "ok" : "mismatch", lr_err, hinge_err, ratio_err, score_err, sw.seconds());
  });

  // 7. Property suites.
  criterion(7, "property suites", [&](Check& c) {
    const auto bp = dsp::design_butterworth_bandpass(4, 0.5, 40, 360);
    bool zero_phase = true;
    for (double f : {2.0, 10.0, 20.0, 35.0}) {
      std::vector<double> x(3600);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2 * std::numbers::pi * f * static_cast<double>(i) / 360.0);
      zero_phase = zero_phase && xcorr_lag(x, dsp::filtfilt(bp, x), 20) == 0;
    }
    c.require(zero_phase, "filtfilt lag");

    double max_pole = 0;
    for (int order : {2, 4, 6, 8})
      for (auto [lo, hi] : {std::pair{0.5, 40.0}, {5.0, 15.0}, {1.0, 100.0}})
        max_pole = std::max(max_pole, dsp::design_butterworth_bandpass(order, lo, hi, 360).max_pole_modulus());
    c.require(max_pole < 1.0, "Butterworth stability");

    double wp_err = 0;
    for (unsigned seed : {1u, 2u, 3u}) {
      const auto r = dsp::wavelet_packet_energies(white(250, seed), 4, 3);
      wp_err = std::max(wp_err, std::abs(r.leaf_energy - r.input_energy) / r.input_energy);
    }
    c.require(wp_err <= tol::kWaveletRel, "wavelet packet energy");

    // MI: non-negative; I(X;X) = H(X) when the label is the binned variable.
    double mi_min = 1e300, self_err = 0;
    std::mt19937_64 rng(4);
    for (int t = 0; t < 30; ++t) {
      const auto x = white(500, 100 + static_cast<unsigned>(t));
      std::vector<int> y(500);
      for (auto& v : y) v = static_cast<int>(rng() % 5);
      mi_min = std::min(mi_min, refine::mutual_information(x, y, 16));
      const auto bins = refine::equal_frequency_bins(x, 5);
      std::vector<double> counts(5, 0.0);
      for (int b : bins) counts[static_cast<std::size_t>(b)] += 1;
      double h = 0;
      for (double k : counts)
        if (k > 0) h -= k / 500 * std::log(k / 500);
      self_err = std::max(self_err, std::abs(refine::mutual_information(x, bins, 5) - h));
    }
    c.require(mi_min >= 0.0, "negative MI");
    c.require(self_err <= tol::kMiAbs, "I(X;X) != H(X)");

    // SMOTE convexity.
    Matrix sx(40, 2);
    std::vector<int> sy;
    std::normal_distribution<double> g;
    for (int i = 0; i < 40; ++i) {
      const int cls = i < 30 ? 0 : 1;
      sx(i, 0) = g(rng) + 8.0 * cls, sx(i, 1) = g(rng);
      sy.push_back(cls);
    }
    const auto bal = refine::smote_enn(sx, sy, {5, 3, 99}, 2);
    double residual = 0;
    for (Eigen::Index i = 0; i < bal.x.rows(); ++i) {
      if (!bal.synthetic[static_cast<std::size_t>(i)]) continue;
      const Eigen::RowVector2d q = bal.x.row(i);
      double best = std::numeric_limits<double>::infinity();
      for (int a = 30; a < 40; ++a)
        for (int b = 30; b < 40; ++b) {
          if (a == b) continue;
          const Eigen::RowVector2d u = sx.row(a), v = sx.row(b);
          const double t = std::clamp((q - u).dot(v - u) / (v - u).squaredNorm(), 0.0, 1.0);
          best = std::min(best, (u + t * (v - u) - q).norm());
        }
      residual = std::max(residual, best);
    }
    c.require(residual < tol::kSmoteResidual, "SMOTE convexity");

    // Serialization round trip.
    const Matrix rx = random_matrix(150, 6, 31);
    std::vector<int> ry;
    for (Eigen::Index i = 0; i < rx.rows(); ++i) ry.push_back(static_cast<int>(i % 5));
    bool roundtrip = true;
    const auto dir = scratch_root() / "roundtrip";
    fs::create_directories(dir);
    for (const auto& m : {models::train_linear_svc(rx, ry), models::train_logistic_regression(rx, ry), models::train_decision_tree(rx, ry)}) {
      const auto bin = dir / (std::string(models::kind_name(m.kind)) + ".bin");
      models::save_model(m, bin, std::vector<std::string>(6, "f"));
      roundtrip = roundtrip && models::predict(models::load_model(bin), rx) == models::predict(m, rx);
    }
    c.require(roundtrip, "serialization round trip");

    // Full-run determinism: fresh directories, timing disabled.
    auto det = [&](const std::string& name, const char* workers) {
      pipeline::run_pipeline(synth_config(name, {{"timing.enabled", "false"}, {"cv.folds", "3"}, {"workers", workers}}));
      return pipeline::read_text(scratch_root() / name / "metrics.json");
    };
    const auto a = det("determinism_a", "1"), b = det("determinism_b", "4");
    c.require(!a.empty() && a == b, "metrics.json differs between runs");
    return fmt("max pole %.4f, wp rel %.1e, min MI %.2e, I(X;X)-H %.1e, smote residual %.1e, roundtrip %s, metrics.json %zu bytes identical",
               max_pole, wp_err, mi_min, self_err, residual, roundtrip ? "ok" : "mismatch", a.size());
  });

  // 8. Hyperparameter harness.
  criterion(8, "grid-search harness", [&](Check& c) {
    const auto gc = synth_config("grid", {{"records", "s100,s101"}, {"segmentation.grid.count", "5"}});
    const auto g = pipeline::grid_search(gc);
    pipeline::write_grid(gc, g, gc.output_dir);
    const auto optima = pipeline::read_beat_optima(gc.output_dir / "grid_beats.csv");
    std::vector<std::size_t> idx(optima.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto x, auto y) { return optima[x].loss < optima[y].loss; });
    const auto top = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(optima.size()))));
    std::vector<double> al, be;
    for (std::size_t k = 0; k < top; ++k) al.push_back(optima[idx[k]].alpha), be.push_back(optima[idx[k]].beta);
    std::sort(al.begin(), al.end());
    std::sort(be.begin(), be.end());
    const double ra = al[(al.size() - 1) / 2], rb = be[(be.size() - 1) / 2];
    const auto j = pipeline::read_json(gc.output_dir / "grid_search.json");
    c.require(j["robust_optimum"]["alpha"].get<double>() == ra && j["robust_optimum"]["beta"].get<double>() == rb,
              "robust optimum differs from recomputation");
    c.require(optima.size() == g.n_beats, "per-beat optima count");

    const auto dflt = config::validate(config::default_config());
    auto nearest = [](const std::vector<double>& grid, double v) {
      double best = 1e300;
      for (double x : grid) best = std::min(best, std::abs(x - v));
      return best;
    };
    const double da = nearest(dflt.segmentation.alphas, 0.233), db = nearest(dflt.segmentation.betas, 0.367);
    c.require(da <= tol::kGridRepresentation && db <= tol::kGridRepresentation, "default grid misses the reported point");
    const auto one = pipeline::grid_search(synth_config("grid1", {{"records", "s102"},
                                                                   {"segmentation.grid.count", "1"},
                                                                   {"segmentation.grid.alpha_start", "0.233"},
                                                                   {"segmentation.grid.beta_start", "0.367"}}));
    c.require(one.robust.alpha == 0.233 && one.robust.beta == 0.367, "1x1 grid optimum");
    return fmt("%zu beats, robust (%.4f, %.4f) == recomputed (%.4f, %.4f); default grid hits (0.233, 0.367) within %.1e/%.1e",
               g.n_beats, j["robust_optimum"]["alpha"].get<double>(), j["robust_optimum"]["beta"].get<double>(), ra, rb, da, db);
  });

  // 9. INCART stretch run.
  if (const char* dir = env("ECG_INCART_DIR")) {
    criterion(9, "INCART logistic regression F1 >= 0.93", [&](Check& c) {
      const auto r = run_dataset("incart", dir, "incart");
      const double f = num(model(r.metrics, "logistic_regression"), "f1_weighted");
      c.require(f >= tol::kIncartMinF1, "below threshold");
      return fmt("lr f1 %.4f, balanced rows %zu", f, r.metrics["dataset"]["balanced_rows"].get<std::size_t>());
    });
  } else {
    report(9, "INCART logistic regression F1 >= 0.93", Verdict::skipped, "optional; set ECG_INCART_DIR to run");
  }

  if (!env("ECG_ACCEPTANCE_KEEP")) fs::remove_all(scratch_root());
  std::printf("%d criteria failed\n", n_fail);
  return n_fail == 0 ? 0 : 1;
}
