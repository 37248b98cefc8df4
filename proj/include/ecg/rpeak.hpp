#pragma once

// R-peak detection: Pan-Tompkins, Mexican-hat CWT energy and a running
// mean+k*sigma threshold, merged by a kurtosis-weighted vote.

#include <algorithm>
#include <future>
#include <string>
#include <vector>

#include "ecg/common.hpp"
#include "ecg/dsp.hpp"

namespace ecg::rpeak {

enum class DetectorId : std::uint8_t { pan_tompkins = 0, cwt = 1, adaptive_threshold = 2 };

inline const char* detector_name(DetectorId d) {
  switch (d) {
    case DetectorId::pan_tompkins: return "pan_tompkins";
    case DetectorId::cwt: return "cwt";
    case DetectorId::adaptive_threshold: return "adaptive_threshold";
  }
  return "?";
}

struct PeakSet {
  DetectorId detector = DetectorId::pan_tompkins;
  std::vector<std::size_t> peaks;
  double sqi_weight = 0.0;               // mean of the per-window weights
  std::vector<double> window_sqi;        // one weight per SQI window
  std::size_t sqi_window_samples = 0;
  std::string warning;

  double weight_at(std::size_t sample) const {
    if (window_sqi.empty() || sqi_window_samples == 0) return sqi_weight;
    return window_sqi[std::min(sample / sqi_window_samples, window_sqi.size() - 1)];
  }
};

struct DetectorParams {
  double refractory_s = 0.200;
  double refine_s = 0.050;
  double sqi_window_s = 5.0;
  std::vector<double> cwt_scales{4, 8, 16, 32};  // samples at 360 Hz
  double cwt_threshold_sigmas = 2.0;
  double adaptive_window_s = 2.0;
  double adaptive_threshold_sigmas = 1.5;
};

/// max(0, excess kurtosis); 0 for fewer than 4 samples or zero variance.
inline double sqi_kurtosis(std::span<const double> x) {
  if (x.size() < 4) return 0.0;
  return std::max(0.0, stats::excess_kurtosis(x));
}

namespace detail {

inline bool is_flat(std::span<const double> x) {
  if (x.empty()) return true;
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  return *lo == *hi;
}

inline void check_length(std::span<const double> x, double fs) {
  if (!(fs > 0)) throw ParameterError("fs must be positive");
  if (static_cast<double>(x.size()) < 2.0 * fs) throw ParameterError("detection needs at least 2 s of signal");
}

inline void attach_sqi(PeakSet& ps, std::span<const double> detection_signal, double fs, double window_s) {
  ps.sqi_window_samples = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(window_s * fs)));
  ps.window_sqi.clear();
  for (std::size_t s = 0; s < detection_signal.size(); s += ps.sqi_window_samples) {
    const auto len = std::min(ps.sqi_window_samples, detection_signal.size() - s);
    ps.window_sqi.push_back(sqi_kurtosis(detection_signal.subspan(s, len)));
  }
  ps.sqi_weight = stats::mean(ps.window_sqi);
}

// Moves each candidate to the largest |x| within +/- radius.
inline std::vector<std::size_t> refine(std::span<const double> x, const std::vector<std::size_t>& cand, std::size_t radius) {
  std::vector<std::size_t> out;
  out.reserve(cand.size());
  for (auto c : cand) {
    const std::size_t lo = c > radius ? c - radius : 0, hi = std::min(x.size() - 1, c + radius);
    std::size_t best = lo;
    for (std::size_t i = lo; i <= hi; ++i)
      if (std::abs(x[i]) > std::abs(x[best])) best = i;
    out.push_back(best);
  }
  return out;
}

// Sorts, then drops the smaller-|x| member of any pair closer than `gap`.
inline std::vector<std::size_t> enforce_refractory(std::span<const double> x, std::vector<std::size_t> p, std::size_t gap) {
  std::sort(p.begin(), p.end());
  std::vector<std::size_t> out;
  for (auto v : p) {
    if (!out.empty() && v - out.back() < gap) {
      if (std::abs(x[v]) > std::abs(x[out.back()])) out.back() = v;
      continue;
    }
    out.push_back(v);
  }
  return out;
}

// Greedy non-maximum suppression: strongest local maxima above `threshold[i]`
// first, each suppressing neighbours within `gap`.
inline std::vector<std::size_t> suppress_nonmax(std::span<const double> env, std::span<const double> threshold,
                                                std::size_t gap) {
  std::vector<std::size_t> cand;
  for (std::size_t i = 1; i + 1 < env.size(); ++i)
    if (env[i] > threshold[i] && env[i] > env[i - 1] && env[i] >= env[i + 1]) cand.push_back(i);
  std::sort(cand.begin(), cand.end(), [&](auto a, auto b) { return env[a] > env[b] || (env[a] == env[b] && a < b); });
  std::vector<std::size_t> kept;
  std::vector<char> blocked(env.size(), 0);
  for (auto c : cand) {
    if (blocked[c]) continue;
    kept.push_back(c);
    const std::size_t lo = c >= gap ? c - gap + 1 : 0, hi = std::min(env.size(), c + gap);
    std::fill(blocked.begin() + static_cast<long>(lo), blocked.begin() + static_cast<long>(hi), 1);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

inline std::size_t samples(double seconds, double fs) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(seconds * fs)));
}

// 5-15 Hz bandpass used by the Pan-Tompkins and adaptive-threshold detectors.
inline Signal qrs_band(std::span<const double> x, double fs) {
  const double hi = std::min(15.0, 0.45 * fs);
  return dsp::filtfilt(dsp::design_butterworth_bandpass(2, 5.0, hi, fs), x);
}

}  // namespace detail

inline PeakSet detect_pan_tompkins(std::span<const double> x, double fs, const DetectorParams& p = {}) {
  detail::check_length(x, fs);
  PeakSet ps;
  ps.detector = DetectorId::pan_tompkins;
  if (detail::is_flat(x)) {
    ps.warning = "flat signal: no peaks";
    detail::attach_sqi(ps, x, fs, p.sqi_window_s);
    return ps;
  }
  const std::size_t n = x.size();
  const Signal bp = detail::qrs_band(x, fs);

  // Five-point derivative, squaring, centred 150 ms moving-window integration.
  Signal d(n, 0.0);
  for (std::size_t i = 2; i + 2 < n; ++i) d[i] = (-bp[i - 2] - 2 * bp[i - 1] + 2 * bp[i + 1] + bp[i + 2]) * fs / 8.0;
  Signal sq(n);
  for (std::size_t i = 0; i < n; ++i) sq[i] = d[i] * d[i];
  const std::size_t win = detail::samples(0.150, fs);
  Signal prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + sq[i];
  Signal mwi(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= win / 2 ? i - win / 2 : 0, hi = std::min(n, lo + win);
    mwi[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(win);
  }

  const std::size_t refractory = detail::samples(p.refractory_s, fs);
  const Signal zero(n, 0.0);
  const auto cand = detail::suppress_nonmax(mwi, zero, refractory);

  // Dual thresholds learned from the first 2 s.
  const std::size_t learn = std::min(n, detail::samples(2.0, fs));
  const double learn_max = *std::max_element(mwi.begin(), mwi.begin() + static_cast<long>(learn));
  double spki = 0.25 * learn_max;
  double npki = 0.5 * stats::mean(std::span(mwi).first(learn));
  auto thr1 = [&] { return npki + 0.25 * (spki - npki); };

  const std::size_t slope_r = detail::samples(0.075, fs), t_wave = detail::samples(0.360, fs);
  auto slope_at = [&](std::size_t c) {
    double m = 0;
    for (std::size_t i = c > slope_r ? c - slope_r : 0; i <= std::min(n - 1, c + slope_r); ++i) m = std::max(m, std::abs(d[i]));
    return m;
  };

  std::vector<std::size_t> qrs;
  std::vector<double> rr_hist;
  double last_slope = 0.0;
  std::size_t ci = 0, last_qrs_ci = 0;
  bool have_qrs = false;
  auto accept = [&](std::size_t c, std::size_t idx, double weight) {
    spki = weight * mwi[c] + (1 - weight) * spki;
    if (!qrs.empty()) {
      rr_hist.push_back(static_cast<double>(c - qrs.back()));
      if (rr_hist.size() > 8) rr_hist.erase(rr_hist.begin());
    }
    qrs.push_back(c);
    last_slope = slope_at(c);
    last_qrs_ci = idx;
    have_qrs = true;
  };
  for (; ci < cand.size(); ++ci) {
    const std::size_t c = cand[ci];
    // Search-back: a long gap since the last beat re-examines the skipped
    // candidates against the lower threshold.
    if (have_qrs && rr_hist.size() >= 2) {
      const double rr_avg = stats::mean(rr_hist);
      if (static_cast<double>(c - qrs.back()) > 1.66 * rr_avg) {
        std::size_t best = 0;
        bool found = false;
        for (std::size_t k = last_qrs_ci + 1; k < ci; ++k) {
          const auto s = cand[k];
          if (s - qrs.back() < refractory) continue;
          if (mwi[s] > 0.5 * thr1() && (!found || mwi[s] > mwi[best])) best = s, found = true;
        }
        if (found) {
          const auto idx = static_cast<std::size_t>(std::find(cand.begin(), cand.end(), best) - cand.begin());
          accept(best, idx, 0.25);
        }
      }
    }
    if (have_qrs && c <= qrs.back()) continue;
    if (mwi[c] > thr1()) {
      if (have_qrs && c - qrs.back() < t_wave && slope_at(c) < 0.5 * last_slope) {
        npki = 0.125 * mwi[c] + 0.875 * npki;  // T wave
        continue;
      }
      accept(c, ci, 0.125);
    } else {
      npki = 0.125 * mwi[c] + 0.875 * npki;
    }
  }

  auto refined = detail::refine(x, qrs, detail::samples(p.refine_s, fs));
  ps.peaks = detail::enforce_refractory(x, std::move(refined), refractory);
  detail::attach_sqi(ps, bp, fs, p.sqi_window_s);
  return ps;
}

/// Squared Mexican-hat coefficients summed over the QRS scales (given in
/// samples at 360 Hz and rescaled to `fs`).
inline Signal cwt_energy(std::span<const double> x, double fs, const std::vector<double>& scales_360) {
  std::vector<double> scales;
  for (double s : scales_360) scales.push_back(s * fs / 360.0);
  const auto rows = dsp::cwt_mexican_hat(x, scales);
  Signal e(x.size(), 0.0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < x.size(); ++i) e[i] += r[i] * r[i];
  return e;
}

inline PeakSet detect_cwt(std::span<const double> x, double fs, const DetectorParams& p = {}) {
  detail::check_length(x, fs);
  PeakSet ps;
  ps.detector = DetectorId::cwt;
  if (detail::is_flat(x)) {
    ps.warning = "flat signal: no peaks";
    detail::attach_sqi(ps, x, fs, p.sqi_window_s);
    return ps;
  }
  const Signal centred = [&] {
    Signal c(x.begin(), x.end());
    const double m = stats::mean(x);
    for (double& v : c) v -= m;
    return c;
  }();
  Signal e = cwt_energy(centred, fs, p.cwt_scales);
  for (double& v : e) v = std::sqrt(v);
  const double thr = stats::mean(e) + p.cwt_threshold_sigmas * stats::stddev(e, 0);
  const std::size_t refractory = detail::samples(p.refractory_s, fs);
  const Signal thr_v(e.size(), thr);
  auto cand = detail::suppress_nonmax(e, thr_v, refractory);

  // T waves respond at the coarse scales; reject a candidate trailing a
  // stronger beat within 360 ms by less than half its energy.
  const std::size_t t_wave = detail::samples(0.360, fs);
  std::vector<std::size_t> kept;
  for (auto c : cand) {
    if (!kept.empty() && c - kept.back() < t_wave && e[c] < 0.5 * e[kept.back()]) continue;
    kept.push_back(c);
  }
  auto refined = detail::refine(centred, kept, detail::samples(p.refine_s, fs));
  ps.peaks = detail::enforce_refractory(centred, std::move(refined), refractory);
  // SQI on the finest-but-one scale row, which tracks QRS morphology.
  const std::vector<double> mid{p.cwt_scales.size() > 1 ? p.cwt_scales[1] * fs / 360.0 : p.cwt_scales[0] * fs / 360.0};
  detail::attach_sqi(ps, dsp::cwt_mexican_hat(centred, mid)[0], fs, p.sqi_window_s);
  return ps;
}

inline PeakSet detect_adaptive_threshold(std::span<const double> x, double fs, const DetectorParams& p = {}) {
  detail::check_length(x, fs);
  PeakSet ps;
  ps.detector = DetectorId::adaptive_threshold;
  if (detail::is_flat(x)) {
    ps.warning = "flat signal: no peaks";
    detail::attach_sqi(ps, x, fs, p.sqi_window_s);
    return ps;
  }
  const std::size_t n = x.size();
  const Signal bp = detail::qrs_band(x, fs);
  Signal e(n);
  for (std::size_t i = 0; i < n; ++i) e[i] = bp[i] * bp[i];

  // Centred running mean and std over the window, from prefix sums.
  const std::size_t w = detail::samples(p.adaptive_window_s, fs);
  Signal s1(n + 1, 0.0), s2(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) s1[i + 1] = s1[i] + e[i], s2[i + 1] = s2[i] + e[i] * e[i];
  Signal thr(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= w / 2 ? i - w / 2 : 0, hi = std::min(n, lo + w);
    const double cnt = static_cast<double>(hi - lo);
    const double mu = (s1[hi] - s1[lo]) / cnt;
    const double var = std::max(0.0, (s2[hi] - s2[lo]) / cnt - mu * mu);
    thr[i] = mu + p.adaptive_threshold_sigmas * std::sqrt(var);
  }
  const std::size_t refractory = detail::samples(p.refractory_s, fs);
  auto cand = detail::suppress_nonmax(e, thr, refractory);
  auto refined = detail::refine(x, cand, detail::samples(p.refine_s, fs));
  ps.peaks = detail::enforce_refractory(x, std::move(refined), refractory);
  detail::attach_sqi(ps, bp, fs, p.sqi_window_s);
  return ps;
}

/// Single-linkage clustering of all candidates at `tolerance_s`; a cluster
/// whose SQI vote reaches half the total detector weight emits its weighted
/// median sample. When every detector has zero weight in a window, votes
/// count equally.
inline std::vector<std::size_t> ensemble_merge(const std::vector<PeakSet>& sets, double fs, double tolerance_s = 0.05) {
  if (!(tolerance_s > 0)) throw ParameterError("merge tolerance must be positive");
  const auto tol = static_cast<std::size_t>(std::llround(tolerance_s * fs));
  struct Cand {
    std::size_t sample;
    std::uint8_t det;
    std::size_t set;
  };
  std::vector<Cand> all;
  for (std::size_t s = 0; s < sets.size(); ++s)
    for (auto v : sets[s].peaks) all.push_back({v, static_cast<std::uint8_t>(sets[s].detector), s});
  std::sort(all.begin(), all.end(), [](const Cand& a, const Cand& b) {
    return a.sample != b.sample ? a.sample < b.sample : a.det < b.det;
  });

  std::vector<std::size_t> out;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i + 1;
    while (j < all.size() && all[j].sample - all[j - 1].sample <= tol) ++j;
    const std::size_t anchor = all[i + (j - i - 1) / 2].sample;

    std::vector<double> w(sets.size());
    double total = 0.0;
    for (std::size_t s = 0; s < sets.size(); ++s) total += (w[s] = sets[s].weight_at(anchor));
    if (total <= 0.0) {
      std::fill(w.begin(), w.end(), 1.0);
      total = static_cast<double>(sets.size());
    }
    std::vector<char> voted(sets.size(), 0);
    double vote = 0.0, cluster_w = 0.0;
    for (std::size_t k = i; k < j; ++k) {
      cluster_w += w[all[k].set];
      if (!voted[all[k].set]) voted[all[k].set] = 1, vote += w[all[k].set];
    }
    if (vote >= 0.5 * total - 1e-12 * total) {
      // Lower weighted median over the (sorted) cluster members.
      double acc = 0.0;
      std::size_t loc = all[j - 1].sample;
      if (cluster_w > 0.0) {
        for (std::size_t k = i; k < j; ++k) {
          acc += w[all[k].set];
          if (acc >= 0.5 * cluster_w) {
            loc = all[k].sample;
            break;
          }
        }
      } else {
        loc = anchor;
      }
      out.push_back(loc);
    }
    i = j;
  }
  return out;
}

struct EnsembleResult {
  std::vector<PeakSet> detectors;
  std::vector<std::size_t> merged;
};

/// Runs the three detectors concurrently on one channel and merges them.
inline EnsembleResult detect_ensemble(std::span<const double> x, double fs, const DetectorParams& p = {},
                                      double tolerance_s = 0.05, bool parallel = true) {
  EnsembleResult r;
  if (parallel) {
    auto a = std::async(std::launch::async, [&] { return detect_pan_tompkins(x, fs, p); });
    auto b = std::async(std::launch::async, [&] { return detect_cwt(x, fs, p); });
    auto c = detect_adaptive_threshold(x, fs, p);
    r.detectors = {a.get(), b.get(), std::move(c)};
  } else {
    r.detectors = {detect_pan_tompkins(x, fs, p), detect_cwt(x, fs, p), detect_adaptive_threshold(x, fs, p)};
  }
  r.merged = ensemble_merge(r.detectors, fs, tolerance_s);
  return r;
}

/// Fraction of reference beats matched by a detection within `tol` samples
/// (greedy one-to-one, in time order).
struct MatchScore {
  std::size_t tp = 0, fn = 0, fp = 0;
  double sensitivity() const { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
  double ppv() const { return tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0; }
};

inline MatchScore match_peaks(const std::vector<std::size_t>& reference, const std::vector<std::size_t>& detected,
                              std::size_t tol) {
  MatchScore m;
  std::size_t j = 0;
  for (auto r : reference) {
    while (j < detected.size() && detected[j] + tol < r) ++j, ++m.fp;
    if (j < detected.size() && detected[j] <= r + tol) {
      ++m.tp;
      ++j;
    } else {
      ++m.fn;
    }
  }
  m.fp += detected.size() - j;
  return m;
}

}  // namespace ecg::rpeak
