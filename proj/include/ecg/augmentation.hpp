#pragma once

// Inter-beat context appended to the base feature matrix: windowed and
// record-level HRV, a beat-similarity kNN graph with centrality and
// clustering, and lagged copies of selected base columns.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ecg/common.hpp"
#include "ecg/dsp.hpp"
#include "ecg/feature_matrix.hpp"
#include "ecg/features.hpp"

namespace ecg::augment {

// ---------------------------------------------------------------------------
// HRV
// ---------------------------------------------------------------------------

struct HrvTime {
  std::optional<double> sdnn_ms, pnn50, rmssd_ms;
};

/// SDNN (sample std, ms), pNN50 and RMSSD of an RR sequence in seconds.
inline HrvTime hrv_time_domain(std::span<const double> rr_s) {
  HrvTime h;
  if (rr_s.size() < 2) return h;
  std::vector<double> ms(rr_s.begin(), rr_s.end());
  for (double& v : ms) v *= 1000.0;
  h.sdnn_ms = stats::stddev(ms, 1);
  std::size_t over = 0;
  double sq = 0;
  for (std::size_t i = 1; i < ms.size(); ++i) {
    const double d = ms[i] - ms[i - 1];
    over += std::abs(d) > 50.0;
    sq += d * d;
  }
  const double nd = static_cast<double>(ms.size() - 1);
  h.pnn50 = static_cast<double>(over) / nd;
  h.rmssd_ms = std::sqrt(sq / nd);
  return h;
}

struct LfHf {
  std::optional<double> ratio;  // missing when the tachogram is too short
  double lf = 0, hf = 0;
  bool degenerate = false;      // no HRV power; ratio reported as 0
};

struct LfHfParams {
  double resample_hz = 4.0;
  std::size_t welch_length = 256;
  double welch_overlap = 0.5;
  double min_duration_s = 60.0;
  double lf_lo = 0.04, lf_hi = 0.15, hf_hi = 0.40;
};

/// Evenly resamples the RR tachogram (value RR_k placed at the time of the
/// beat closing the interval) by linear interpolation.
inline Signal tachogram(std::span<const double> beat_times_s, double fs_out) {
  Signal out;
  if (beat_times_s.size() < 3) return out;
  std::vector<double> t, rr;
  for (std::size_t i = 1; i < beat_times_s.size(); ++i) {
    t.push_back(beat_times_s[i]);
    rr.push_back(beat_times_s[i] - beat_times_s[i - 1]);
  }
  std::size_t k = 0;
  for (double ti = t.front(); ti <= t.back(); ti += 1.0 / fs_out) {
    while (k + 2 < t.size() && t[k + 1] < ti) ++k;
    const double u = (ti - t[k]) / (t[k + 1] - t[k]);
    out.push_back(rr[k] + std::clamp(u, 0.0, 1.0) * (rr[k + 1] - rr[k]));
  }
  return out;
}

inline LfHf hrv_lf_hf(std::span<const double> beat_times_s, const LfHfParams& p = {}) {
  LfHf r;
  if (beat_times_s.size() < 3 || beat_times_s.back() - beat_times_s.front() < p.min_duration_s) return r;
  const auto x = tachogram(beat_times_s, p.resample_hz);
  if (x.size() < 16) return r;
  const auto psd = dsp::welch_psd(x, p.resample_hz, std::min(p.welch_length, x.size()), p.welch_overlap);
  r.lf = psd.band_power(p.lf_lo, p.lf_hi);
  r.hf = psd.band_power(p.lf_hi, p.hf_hi + 1e-9);
  const double total = psd.band_power(0.0, p.resample_hz);
  const double guard = std::numeric_limits<double>::epsilon() * std::max(1.0, total) * 1e3;
  if (r.lf + r.hf <= guard || r.hf <= guard) {
    r.degenerate = true;
    r.ratio = 0.0;
    return r;
  }
  r.ratio = r.lf / r.hf;
  return r;
}

// ---------------------------------------------------------------------------
// Beat graph
// ---------------------------------------------------------------------------

struct Edge {
  std::size_t src, dst;
  double weight;
};

struct BeatGraph {
  std::size_t n = 0;
  std::vector<Edge> edges;
  int k = 4;
  double tau = 1.0;

  std::vector<std::vector<std::pair<std::size_t, double>>> out_lists() const {
    std::vector<std::vector<std::pair<std::size_t, double>>> out(n);
    for (const auto& e : edges) out[e.src].emplace_back(e.dst, e.weight);
    return out;
  }
};

/// Columns z-scored in place; constant columns become 0.
inline Matrix standardize_columns(Matrix x) {
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double m = x.col(c).mean();
    const double sd = x.rows() > 1 ? std::sqrt((x.col(c).array() - m).square().sum() / static_cast<double>(x.rows() - 1)) : 0.0;
    if (sd > 0) x.col(c) = (x.col(c).array() - m) / sd;
    else x.col(c).setZero();
  }
  return x;
}

inline double cosine(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0 || nb == 0) return 0.0;
  return a.dot(b) / (na * nb);
}

inline double edge_weight(double cos_sim, std::size_t i, std::size_t j, double tau) {
  const double gap = static_cast<double>(i > j ? i - j : j - i);
  return std::max(0.0, cos_sim) * std::exp(-gap / tau);
}

/// Directed kNN graph over rows of `features` (already standardized). Each
/// node keeps its k heaviest positive out-edges; ties go to the lower index.
inline BeatGraph build_beat_graph(const Matrix& features, int k = 4, double tau = 1.0) {
  if (k < 1) throw ParameterError("graph needs k >= 1");
  if (!(tau > 0)) throw ParameterError("temporal decay tau must be positive");
  BeatGraph g;
  g.n = static_cast<std::size_t>(features.rows());
  g.k = k;
  g.tau = tau;
  std::vector<double> norms(g.n);
  for (std::size_t i = 0; i < g.n; ++i) norms[i] = features.row(static_cast<Eigen::Index>(i)).norm();
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t i = 0; i < g.n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < g.n; ++j) {
      if (j == i || norms[i] == 0 || norms[j] == 0) continue;
      const double c = features.row(static_cast<Eigen::Index>(i)).dot(features.row(static_cast<Eigen::Index>(j))) /
                       (norms[i] * norms[j]);
      const double w = edge_weight(c, i, j, tau);
      if (w > 0) cand.emplace_back(w, j);
    }
    const auto keep = std::min<std::size_t>(static_cast<std::size_t>(k), cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<long>(keep), cand.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (std::size_t m = 0; m < keep; ++m) g.edges.push_back({i, cand[m].second, std::min(1.0, cand[m].first)});
  }
  return g;
}

struct PageRankParams {
  double damping = 0.85;
  double tol = 1e-8;
  int max_iter = 200;
};

struct PageRankResult {
  std::vector<double> scores;  // sums to n
  int iterations = 0;
  bool converged = false;
};

/// Power iteration of PR = (1-d)1 + d M PR with M the out-weight-normalized
/// transition matrix; dangling nodes spread uniformly.
inline PageRankResult pagerank(const BeatGraph& g, const PageRankParams& p = {}) {
  if (!(p.damping > 0 && p.damping < 1)) throw ParameterError("damping must lie in (0, 1)");
  PageRankResult r;
  const std::size_t n = g.n;
  if (n == 0) return r;
  std::vector<double> out_w(n, 0.0);
  for (const auto& e : g.edges) out_w[e.src] += e.weight;
  std::vector<double> pr(n, 1.0), next(n);
  const double nd = static_cast<double>(n);
  for (r.iterations = 1; r.iterations <= p.max_iter; ++r.iterations) {
    double dangling = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (out_w[i] <= 0) dangling += pr[i];
    std::fill(next.begin(), next.end(), (1.0 - p.damping) + p.damping * dangling / nd);
    for (const auto& e : g.edges) next[e.dst] += p.damping * pr[e.src] * e.weight / out_w[e.src];
    double delta = 0;
    for (std::size_t i = 0; i < n; ++i) delta += std::abs(next[i] - pr[i]);
    pr.swap(next);
    if (delta < p.tol) {
      r.converged = true;
      break;
    }
  }
  r.iterations = std::min(r.iterations, p.max_iter);
  const double s = std::accumulate(pr.begin(), pr.end(), 0.0);
  for (double& v : pr) v *= nd / s;
  r.scores = std::move(pr);
  return r;
}

/// Undirected weights max(w_ij, w_ji) as adjacency lists.
inline std::vector<std::vector<std::pair<std::size_t, double>>> symmetrize(const BeatGraph& g) {
  std::vector<std::vector<std::pair<std::size_t, double>>> adj(g.n);
  auto upsert = [&](std::size_t a, std::size_t b, double w) {
    for (auto& [j, wj] : adj[a])
      if (j == b) {
        wj = std::max(wj, w);
        return;
      }
    adj[a].emplace_back(b, w);
  };
  for (const auto& e : g.edges) {
    if (e.src == e.dst) continue;
    upsert(e.src, e.dst, e.weight);
    upsert(e.dst, e.src, e.weight);
  }
  for (auto& l : adj) std::sort(l.begin(), l.end());
  return adj;
}

/// Barrat weighted clustering coefficient on the symmetrized graph.
inline std::vector<double> weighted_clustering(const BeatGraph& g) {
  const auto adj = symmetrize(g);
  std::vector<double> c(g.n, 0.0);
  auto linked = [&](std::size_t a, std::size_t b) {
    return std::binary_search(adj[a].begin(), adj[a].end(), std::pair<std::size_t, double>{b, -1.0},
                              [](const auto& x, const auto& y) { return x.first < y.first; });
  };
  for (std::size_t i = 0; i < g.n; ++i) {
    const auto& nb = adj[i];
    if (nb.size() < 2) continue;
    double s = 0;
    for (const auto& [j, w] : nb) s += w;
    double acc = 0;
    for (std::size_t a = 0; a < nb.size(); ++a)
      for (std::size_t b = 0; b < nb.size(); ++b)
        if (a != b && linked(nb[a].first, nb[b].first)) acc += 0.5 * (nb[a].second + nb[b].second);
    c[i] = acc / (s * static_cast<double>(nb.size() - 1));
  }
  return c;
}

inline void write_edge_csv(const BeatGraph& g, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "src,dst,weight\n";
  for (const auto& e : g.edges) out << e.src << ',' << e.dst << ',' << format_double(e.weight) << '\n';
}

// ---------------------------------------------------------------------------
// Registry and matrix augmentation
// ---------------------------------------------------------------------------

inline constexpr const char* kAugmentedRegistryVersion = "aug-v1";

inline const std::vector<std::string>& hrv_feature_names() {
  static const std::vector<std::string> n{"sdnn",     "pnn50",     "rmssd",     "local_rr_mean", "rr_delta",
                                          "rr_dev_local", "sdnn_rec", "pnn50_rec", "rmssd_rec",     "lf_hf"};
  return n;
}

inline const std::vector<std::string>& graph_feature_names() {
  static const std::vector<std::string> n{"pagerank",    "clustering", "wdeg",  "deg",   "in_strength", "out_strength",
                                          "in_degree",   "out_degree", "max_w", "nbr_mean_cos", "nbr_pagerank"};
  return n;
}

/// Base columns copied from the previous one and two beats.
inline const std::vector<std::string>& lagged_base_columns() {
  static const std::vector<std::string> n = [] {
    auto v = features::channel_block(0);
    for (const char* m : {"qrs_dur_ms", "r_amp_mV", "q_amp_mV", "s_amp_mV", "p_amp_mV", "pr_ms", "t_amp_mV", "rt_ms",
                          "qt_ms", "st_dev_mV", "qrs_area_mVms"})
      v.push_back(m);
    return v;
  }();
  return n;
}

inline constexpr int kMaxLag = 2;

inline std::vector<std::string> augmentation_columns() {
  std::vector<std::string> v = hrv_feature_names();
  v.insert(v.end(), graph_feature_names().begin(), graph_feature_names().end());
  for (int lag = 1; lag <= kMaxLag; ++lag)
    for (const auto& c : lagged_base_columns()) v.push_back(c + "_lag" + std::to_string(lag));
  return v;
}

inline const std::vector<std::string>& augmented_registry() {
  static const std::vector<std::string> reg = [] {
    auto r = features::base_registry();
    const auto a = augmentation_columns();
    r.insert(r.end(), a.begin(), a.end());
    return r;
  }();
  return reg;
}

inline std::string augmented_registry_hash() { return layout_hash(augmented_registry(), kAugmentedRegistryVersion); }

/// All detected beat times of one record (including beats later pruned).
struct RecordRhythm {
  std::vector<double> beat_times_s;
};

struct AugmentParams {
  int k = 4;
  double tau = 1.0;
  PageRankParams pagerank;
  int hrv_half_window = 10;  // beats on each side
  LfHfParams lf_hf;
};

namespace detail {

/// Base rows of one record with missing cells replaced by the record's column
/// median (0 when the whole column is missing), then z-scored.
inline Matrix graph_inputs(const FeatureMatrix& m, const std::vector<std::size_t>& rows) {
  Matrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m.n_cols()));
  for (std::size_t c = 0; c < m.n_cols(); ++c) {
    std::vector<double> present;
    for (auto r : rows)
      if (!m.is_missing(r, c)) present.push_back(m.at(r, c));
    const double fill = present.empty() ? 0.0 : stats::median(present);
    for (std::size_t i = 0; i < rows.size(); ++i)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = m.is_missing(rows[i], c) ? fill : m.at(rows[i], c);
  }
  return standardize_columns(std::move(x));
}

inline std::size_t nearest_beat(const std::vector<double>& times, double t) {
  const auto it = std::lower_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 0;
  if (it == times.end()) return times.size() - 1;
  const auto hi = static_cast<std::size_t>(it - times.begin());
  return (t - times[hi - 1] <= times[hi] - t) ? hi - 1 : hi;
}

}  // namespace detail

/// Appends the 109 augmentation columns to an 88-column base matrix. Rows are
/// grouped by record (in order of first appearance) and keep their order.
/// `rhythms` and `fs` supply each record's full beat sequence for HRV.
inline FeatureMatrix augment_matrix(const FeatureMatrix& base, const std::map<std::string, RecordRhythm>& rhythms,
                                    double fs, const AugmentParams& p = {}) {
  if (base.columns != features::base_registry()) throw ParameterError("augmentation expects the base feature layout");
  const auto extra_cols = augmentation_columns();
  auto extra = FeatureMatrix::with_columns(extra_cols, base.n_rows());
  for (std::size_t r = 0; r < base.n_rows(); ++r)
    for (std::size_t c = 0; c < extra_cols.size(); ++c) extra.set_missing(r, c);

  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> by_record;
  for (std::size_t r = 0; r < base.n_rows(); ++r) {
    auto& v = by_record[base.rows[r].record_id];
    if (v.empty()) order.push_back(base.rows[r].record_id);
    v.push_back(r);
  }

  const std::size_t n_hrv = hrv_feature_names().size(), n_graph = graph_feature_names().size();
  std::vector<std::size_t> lag_src;
  for (const auto& c : lagged_base_columns()) lag_src.push_back(base.column_index(c));

  for (const auto& rec : order) {
    const auto& rows = by_record[rec];
    auto put = [&](std::size_t r, std::size_t c, std::optional<double> v) {
      if (v && std::isfinite(*v)) extra.set(r, c, *v);
    };

    // HRV.
    const auto it = rhythms.find(rec);
    if (it != rhythms.end() && it->second.beat_times_s.size() >= 3) {
      const auto& times = it->second.beat_times_s;
      std::vector<double> rr;
      for (std::size_t i = 1; i < times.size(); ++i) rr.push_back(times[i] - times[i - 1]);
      const auto global = hrv_time_domain(rr);
      const auto lfhf = hrv_lf_hf(times, p.lf_hf);
      for (auto r : rows) {
        // Interval i ends at beat i+1; beat b is flanked by intervals b-1 and b.
        const auto b = static_cast<long>(detail::nearest_beat(times, static_cast<double>(base.rows[r].r_peak) / fs));
        const long lo = std::max(0L, b - p.hrv_half_window);
        const long hi = std::min(static_cast<long>(rr.size()), b + p.hrv_half_window);
        std::span<const double> win(rr.data() + lo, static_cast<std::size_t>(std::max(0L, hi - lo)));
        const auto h = hrv_time_domain(win);
        put(r, 0, h.sdnn_ms);
        put(r, 1, h.pnn50);
        put(r, 2, h.rmssd_ms);
        const std::optional<double> local = win.empty() ? std::nullopt : std::optional(stats::mean(win));
        put(r, 3, local);
        const double rp = base.at(r, base.column_index("rr_prev")), rn = base.at(r, base.column_index("rr_next"));
        put(r, 4, rn - rp);
        if (local) put(r, 5, rp - *local);
        put(r, 6, global.sdnn_ms);
        put(r, 7, global.pnn50);
        put(r, 8, global.rmssd_ms);
        put(r, 9, lfhf.ratio);
      }
    }

    // Graph.
    const auto x = detail::graph_inputs(base, rows);
    const auto g = build_beat_graph(x, p.k, p.tau);
    const auto pr = pagerank(g, p.pagerank).scores;
    const auto cc = weighted_clustering(g);
    const auto adj = symmetrize(g);
    std::vector<double> in_s(g.n, 0), out_s(g.n, 0), in_d(g.n, 0), out_d(g.n, 0), max_w(g.n, 0), cos_sum(g.n, 0),
        pr_sum(g.n, 0);
    for (const auto& e : g.edges) {
      out_s[e.src] += e.weight, in_s[e.dst] += e.weight;
      out_d[e.src] += 1, in_d[e.dst] += 1;
      max_w[e.src] = std::max(max_w[e.src], e.weight);
      cos_sum[e.src] += cosine(x.row(static_cast<Eigen::Index>(e.src)), x.row(static_cast<Eigen::Index>(e.dst)));
      pr_sum[e.src] += pr[e.dst];
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto r = rows[i];
      double wdeg = 0;
      for (const auto& [j, w] : adj[i]) wdeg += w;
      const std::size_t c0 = n_hrv;
      put(r, c0 + 0, pr[i]);
      put(r, c0 + 1, cc[i]);
      put(r, c0 + 2, wdeg);
      put(r, c0 + 3, static_cast<double>(adj[i].size()));
      put(r, c0 + 4, in_s[i]);
      put(r, c0 + 5, out_s[i]);
      put(r, c0 + 6, in_d[i]);
      put(r, c0 + 7, out_d[i]);
      put(r, c0 + 8, max_w[i]);
      put(r, c0 + 9, out_d[i] > 0 ? std::optional(cos_sum[i] / out_d[i]) : std::optional(0.0));
      put(r, c0 + 10, out_d[i] > 0 ? std::optional(pr_sum[i] / out_d[i]) : std::optional(0.0));
    }

    // Lagged context from earlier beats of the same record.
    const std::size_t c_lag = n_hrv + n_graph;
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (int lag = 1; lag <= kMaxLag; ++lag) {
        if (i < static_cast<std::size_t>(lag)) continue;
        const auto src = rows[i - static_cast<std::size_t>(lag)];
        for (std::size_t k = 0; k < lag_src.size(); ++k)
          if (!base.is_missing(src, lag_src[k]))
            extra.set(rows[i], c_lag + static_cast<std::size_t>(lag - 1) * lag_src.size() + k, base.at(src, lag_src[k]));
      }
  }
  return hstack(base, extra);
}

/// Beat times of every detected peak, per record.
inline RecordRhythm rhythm_from_peaks(const std::vector<std::size_t>& peaks, double fs) {
  RecordRhythm r;
  for (auto pk : peaks) r.beat_times_s.push_back(static_cast<double>(pk) / fs);
  return r;
}

}  // namespace ecg::augment
