#pragma once

// Beat windows around R peaks: composite window loss, (alpha, beta) grid
// search, IQR length pruning and fixed-length resampling.

#include <limits>
#include <type_traits>
#include <optional>
#include <string>
#include <vector>

#include "ecg/common.hpp"
#include "ecg/dsp.hpp"
#include "ecg/wfdb.hpp"

namespace ecg::seg {

struct WindowParams {
  double alpha = 0.233;  // fraction of the preceding RR interval
  double beta = 0.367;   // fraction of the following RR interval
};

struct LossWeights {
  double entropy = 0.5;
  double snr = 0.3;
  double energy = 0.2;
};

struct LossOptions {
  LossWeights weights;
  double qrs_lo_hz = 5.0;
  double qrs_hi_hz = 15.0;
  int histogram_bins = 32;
  double min_len_ms = 250.0;
  double max_len_ms = 1500.0;
  double penalty_per_100ms = 1.0;
};

struct SegmentLoss {
  double entropy_term = 0.0;  // H, nats
  double snr_term = 0.0;      // 1 - SNR/(1+SNR)
  double energy_term = 0.0;   // 1 - E_r
  double length_penalty = 0.0;
  double total = 0.0;
  bool degenerate = false;
};

/// Shannon entropy (nats) of an equal-width amplitude histogram spanning the
/// segment's min..max.
inline double histogram_entropy(std::span<const double> x, int bins) {
  if (x.empty() || bins < 1) return 0.0;
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return 0.0;
  std::vector<double> p(static_cast<std::size_t>(bins), 0.0);
  const double width = (hi - lo) / bins;
  for (double v : x) {
    auto b = static_cast<long>((v - lo) / width);
    b = std::clamp(b, 0L, static_cast<long>(bins) - 1);
    p[static_cast<std::size_t>(b)] += 1.0;
  }
  for (double& v : p) v /= static_cast<double>(x.size());
  return stats::shannon_entropy(p);
}

inline double length_penalty(double duration_ms, const LossOptions& o = {}) {
  if (duration_ms < o.min_len_ms) {
    const double u = (o.min_len_ms - duration_ms) / 100.0;
    return o.penalty_per_100ms * u * u;
  }
  if (duration_ms > o.max_len_ms) {
    const double u = (duration_ms - o.max_len_ms) / 100.0;
    return o.penalty_per_100ms * u * u;
  }
  return 0.0;
}

/// One-sided spectral energy inside [lo, hi] Hz and in total.
inline std::pair<double, double> band_energy(std::span<const double> x, double fs, double lo, double hi) {
  const auto X = dsp::fft(x);
  const std::size_t n = x.size();
  double band = 0.0, total = 0.0;
  for (std::size_t k = 0; k <= n / 2; ++k) {
    const double f = static_cast<double>(k) * fs / static_cast<double>(n);
    const double e = std::norm(X[k]);
    total += e;
    if (f >= lo && f <= hi) band += e;
  }
  return {band, total};
}

inline SegmentLoss composite_loss(std::span<const double> x, double fs, const LossOptions& o = {}) {
  if (x.size() < 32) throw ParameterError("composite loss needs at least 32 samples");
  SegmentLoss L;
  const auto [band, total] = band_energy(x, fs, o.qrs_lo_hz, o.qrs_hi_hz);
  L.length_penalty = length_penalty(1000.0 * static_cast<double>(x.size()) / fs, o);
  double snr_clipped = 0.0, energy_ratio = 0.0;
  if (total <= 0.0) {
    L.degenerate = true;
  } else {
    L.entropy_term = histogram_entropy(x, o.histogram_bins);
    const double out_band = total - band;
    snr_clipped = out_band > 0.0 ? (band / out_band) / (1.0 + band / out_band) : 1.0;
    energy_ratio = band / total;
  }
  L.snr_term = 1.0 - snr_clipped;
  L.energy_term = 1.0 - energy_ratio;
  L.total = o.weights.entropy * L.entropy_term + o.weights.snr * L.snr_term + o.weights.energy * L.energy_term +
            L.length_penalty;
  return L;
}

/// Grid of fractions start, start + step, ... (count values).
inline std::vector<double> make_grid(double start, double step, int count) {
  std::vector<double> g;
  for (int k = 0; k < count; ++k) g.push_back(start + step * k);
  return g;
}

inline std::vector<double> default_alpha_grid() { return make_grid(0.10, 1.0 / 15.0, 9); }
inline std::vector<double> default_beta_grid() { return make_grid(0.30, 1.0 / 15.0, 9); }

/// Preceding / following RR interval (samples) for each peak; the first and
/// last beats borrow the record-median RR.
inline std::vector<std::pair<double, double>> rr_context(const std::vector<std::size_t>& peaks, double fs) {
  std::vector<double> rr;
  for (std::size_t i = 1; i < peaks.size(); ++i) rr.push_back(static_cast<double>(peaks[i] - peaks[i - 1]));
  const double med = rr.empty() ? fs : stats::median(rr);
  std::vector<std::pair<double, double>> out(peaks.size());
  for (std::size_t i = 0; i < peaks.size(); ++i) {
    out[i].first = i > 0 ? rr[i - 1] : med;
    out[i].second = i + 1 < peaks.size() ? rr[i] : med;
  }
  return out;
}

struct RawWindow {
  long start = 0;  // may be negative / past the end before clamping
  long end = 0;    // exclusive
  bool clipped = false;
};

inline RawWindow window_for(std::size_t r, double rr_prev, double rr_next, const WindowParams& w, std::size_t n) {
  RawWindow rw;
  rw.start = static_cast<long>(r) - std::lround(w.alpha * rr_prev);
  rw.end = static_cast<long>(r) + std::lround(w.beta * rr_next) + 1;
  rw.clipped = rw.start < 0 || rw.end > static_cast<long>(n);
  return rw;
}

/// Copies [start, end) out of x, padding with the edge value outside.
inline Signal extract_window(std::span<const double> x, const RawWindow& rw) {
  Signal out;
  out.reserve(static_cast<std::size_t>(std::max(0L, rw.end - rw.start)));
  const long n = static_cast<long>(x.size());
  for (long i = rw.start; i < rw.end; ++i) out.push_back(x[static_cast<std::size_t>(std::clamp(i, 0L, n - 1))]);
  return out;
}

struct GridCell {
  double alpha = 0, beta = 0;
  double loss = 0;
};

struct GridResult {
  std::vector<double> alphas, betas;
  std::vector<double> mean_loss;          // alphas.size() x betas.size(), row-major by alpha
  std::vector<GridCell> beat_optimum;     // per beat
  GridCell exact_minimum;                 // lowest single (beat, cell) loss
  std::size_t exact_minimum_beat = 0;
  GridCell robust_optimum;                // median parameters of the top-5% beats
  std::vector<double> beat_duration_ms;   // at the per-beat optimum

  double surface(std::size_t ia, std::size_t ib) const { return mean_loss[ia * betas.size() + ib]; }
};

/// Median of grid values, taking the lower middle element so the result
/// stays on the grid.
inline double lower_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

/// Lower-median (alpha, beta) over the `top_fraction` lowest-loss per-beat
/// optima (at least one beat; loss ties keep beat order).
inline GridCell robust_optimum(const std::vector<GridCell>& beat_optima, double top_fraction = 0.05) {
  if (beat_optima.empty()) throw ParameterError("robust optimum needs at least one beat");
  std::vector<std::size_t> order(beat_optima.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return beat_optima[a].loss < beat_optima[b].loss; });
  const auto top = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(top_fraction * static_cast<double>(beat_optima.size()))));
  std::vector<double> ta, tb;
  for (std::size_t k = 0; k < top; ++k) {
    ta.push_back(beat_optima[order[k]].alpha);
    tb.push_back(beat_optima[order[k]].beta);
  }
  return {lower_median(ta), lower_median(tb), 0.0};
}

/// Evaluates `loss(segment) -> double` for every beat and every (alpha, beta).
/// Per-beat ties go to the cell nearest the grid centre.
template <class LossFn>
  requires std::is_invocable_r_v<double, LossFn, std::span<const double>>
GridResult grid_search_window(std::span<const double> x, double fs, const std::vector<std::size_t>& peaks,
                              const std::vector<double>& alphas, const std::vector<double>& betas, LossFn&& loss,
                              double top_fraction = 0.05) {
  if (alphas.empty() || betas.empty()) throw ParameterError("grid search needs non-empty alpha and beta grids");
  if (peaks.empty()) throw ParameterError("grid search needs at least one R peak");
  GridResult g;
  g.alphas = alphas;
  g.betas = betas;
  g.mean_loss.assign(alphas.size() * betas.size(), 0.0);
  const auto rr = rr_context(peaks, fs);
  const double ca = 0.5 * static_cast<double>(alphas.size() - 1), cb = 0.5 * static_cast<double>(betas.size() - 1);
  g.exact_minimum.loss = std::numeric_limits<double>::infinity();

  for (std::size_t b = 0; b < peaks.size(); ++b) {
    GridCell best{0, 0, std::numeric_limits<double>::infinity()};
    double best_dist = std::numeric_limits<double>::infinity();
    double best_len = 0;
    for (std::size_t ia = 0; ia < alphas.size(); ++ia)
      for (std::size_t ib = 0; ib < betas.size(); ++ib) {
        const auto rw = window_for(peaks[b], rr[b].first, rr[b].second, {alphas[ia], betas[ib]}, x.size());
        const Signal s = extract_window(x, rw);
        const double l = loss(std::span<const double>(s));
        g.mean_loss[ia * betas.size() + ib] += l;
        const double dist = std::hypot(static_cast<double>(ia) - ca, static_cast<double>(ib) - cb);
        if (l < best.loss || (l == best.loss && dist < best_dist)) {
          best = {alphas[ia], betas[ib], l};
          best_dist = dist;
          best_len = 1000.0 * static_cast<double>(s.size()) / fs;
        }
        if (l < g.exact_minimum.loss) {
          g.exact_minimum = {alphas[ia], betas[ib], l};
          g.exact_minimum_beat = b;
        }
      }
    g.beat_optimum.push_back(best);
    g.beat_duration_ms.push_back(best_len);
  }
  for (double& v : g.mean_loss) v /= static_cast<double>(peaks.size());

  g.robust_optimum = robust_optimum(g.beat_optimum, top_fraction);
  const auto ia = static_cast<std::size_t>(std::find(alphas.begin(), alphas.end(), g.robust_optimum.alpha) - alphas.begin());
  const auto ib = static_cast<std::size_t>(std::find(betas.begin(), betas.end(), g.robust_optimum.beta) - betas.begin());
  g.robust_optimum.loss = g.surface(ia, ib);
  return g;
}

inline GridResult grid_search_window(std::span<const double> x, double fs, const std::vector<std::size_t>& peaks,
                                     const std::vector<double>& alphas, const std::vector<double>& betas,
                                     const LossOptions& o = {}) {
  return grid_search_window(x, fs, peaks, alphas, betas,
                            [&](std::span<const double> s) { return composite_loss(s, fs, o).total; });
}

struct BeatSegment {
  std::string record_id;
  std::size_t r_peak = 0;
  WindowParams window;
  std::vector<Signal> channels;  // each target_len samples, mV
  std::optional<AamiLabel> label;
  double rr_prev_s = 0, rr_next_s = 0;
  std::size_t raw_length = 0;  // samples before resampling
  std::size_t r_offset = 0;    // R position inside the resampled segment
  double fs_effective = 0;     // fs * target_len / raw_length
  bool edge_padded = false;
};

struct SegmentOptions {
  WindowParams window;
  std::size_t target_len = 324;
  double label_tolerance_s = 0.075;
  bool drop_unlabeled = true;
  bool iqr_prune = true;
};

struct SegmentationResult {
  std::vector<BeatSegment> segments;
  std::size_t n_peaks = 0;
  std::size_t n_pruned = 0;
  std::size_t n_unlabeled = 0;
  std::size_t n_edge_padded = 0;
};

/// Nearest beat annotation within `tol` samples, mapped to AAMI.
inline std::optional<AamiLabel> nearest_label(const std::vector<wfdb::Annotation>& beats, std::size_t r, std::size_t tol,
                                              const wfdb::AamiMap& map) {
  auto it = std::lower_bound(beats.begin(), beats.end(), r, [](const wfdb::Annotation& a, std::size_t v) { return a.sample < v; });
  const wfdb::Annotation* best = nullptr;
  std::size_t best_d = tol + 1;
  for (auto c : {it, it == beats.begin() ? it : std::prev(it)}) {
    if (c == beats.end()) continue;
    const std::size_t d = c->sample > r ? c->sample - r : r - c->sample;
    if (d < best_d) best_d = d, best = &*c;
  }
  if (!best) return std::nullopt;
  return map.map(best->symbol);
}

/// Cuts one window per R peak from every channel of `signal` (rows = samples),
/// prunes raw lengths outside the record's 1.5*IQR fences, resamples
/// survivors to target_len and attaches annotation labels.
inline SegmentationResult segment_record(const std::string& record_id, const Matrix& signal, double fs,
                                         const std::vector<std::size_t>& peaks,
                                         const std::vector<wfdb::Annotation>& annotations, const SegmentOptions& opt = {},
                                         const wfdb::AamiMap& map = {}) {
  if (opt.target_len < 64) throw ParameterError("target segment length must be at least 64");
  SegmentationResult res;
  res.n_peaks = peaks.size();
  if (peaks.empty()) return res;
  const auto n = static_cast<std::size_t>(signal.rows());
  const auto n_ch = static_cast<std::size_t>(signal.cols());
  std::vector<Signal> chans(n_ch, Signal(n));
  for (std::size_t c = 0; c < n_ch; ++c)
    for (std::size_t t = 0; t < n; ++t) chans[c][t] = signal(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c));

  const auto rr = rr_context(peaks, fs);
  std::vector<RawWindow> windows;
  std::vector<double> lengths;
  for (std::size_t i = 0; i < peaks.size(); ++i) {
    windows.push_back(window_for(peaks[i], rr[i].first, rr[i].second, opt.window, n));
    lengths.push_back(static_cast<double>(windows.back().end - windows.back().start));
  }
  double lo_fence = -std::numeric_limits<double>::infinity(), hi_fence = std::numeric_limits<double>::infinity();
  if (opt.iqr_prune && peaks.size() >= 3) {
    const double q1 = stats::quantile(lengths, 0.25), q3 = stats::quantile(lengths, 0.75);
    lo_fence = q1 - 1.5 * (q3 - q1);
    hi_fence = q3 + 1.5 * (q3 - q1);
  }

  std::vector<wfdb::Annotation> beats;
  for (const auto& a : annotations)
    if (map.map(a.symbol)) beats.push_back(a);
  const auto tol = static_cast<std::size_t>(std::llround(opt.label_tolerance_s * fs));

  for (std::size_t i = 0; i < peaks.size(); ++i) {
    if (lengths[i] < lo_fence || lengths[i] > hi_fence) {
      ++res.n_pruned;
      continue;
    }
    BeatSegment s;
    s.label = nearest_label(beats, peaks[i], tol, map);
    if (!s.label) {
      ++res.n_unlabeled;
      if (opt.drop_unlabeled) continue;
    }
    s.record_id = record_id;
    s.r_peak = peaks[i];
    s.window = opt.window;
    s.rr_prev_s = rr[i].first / fs;
    s.rr_next_s = rr[i].second / fs;
    s.raw_length = static_cast<std::size_t>(lengths[i]);
    s.edge_padded = windows[i].clipped;
    res.n_edge_padded += s.edge_padded;
    s.fs_effective = fs * static_cast<double>(opt.target_len) / static_cast<double>(s.raw_length);
    const double r_raw = static_cast<double>(static_cast<long>(peaks[i]) - windows[i].start);
    s.r_offset = std::min(opt.target_len - 1, static_cast<std::size_t>(std::lround(r_raw * s.fs_effective / fs)));
    for (const auto& ch : chans) s.channels.push_back(dsp::resample_to_length(extract_window(ch, windows[i]), opt.target_len));
    res.segments.push_back(std::move(s));
  }
  return res;
}

}  // namespace ecg::seg
