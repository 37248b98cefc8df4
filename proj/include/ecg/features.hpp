#pragma once

// Per-beat base features: time-domain statistics, spectral band powers,
// wavelet-packet and CWT energies per channel, lead-II delineation, RR
// context and cross-lead terms. Column layout is fixed by base_registry().

#include <optional>
#include <string>
#include <vector>

#include "ecg/common.hpp"
#include "ecg/dsp.hpp"
#include "ecg/feature_matrix.hpp"
#include "ecg/segmentation.hpp"

namespace ecg::features {

inline constexpr const char* kBaseRegistryVersion = "base-v1";

inline const std::vector<std::string>& time_feature_names() {
  static const std::vector<std::string> n{"mean", "std", "skew", "kurt", "rms", "zcr", "max", "min", "ptp", "mad"};
  return n;
}

inline const std::vector<std::string>& freq_feature_names() {
  static const std::vector<std::string> n{"low_band_0_5Hz", "mid_band_5_15Hz", "high_band_15_40Hz",
                                          "spec_entropy",   "dominant_freq",   "total_power"};
  return n;
}

inline const std::vector<std::string>& morph_feature_names() {
  static const std::vector<std::string> n{"qrs_dur_ms", "qrs_onset_ms", "qrs_offset_ms", "r_amp_mV", "q_amp_mV",
                                          "s_amp_mV",   "p_amp_mV",     "pr_ms",         "t_amp_mV", "rt_ms",
                                          "qt_ms",      "st_dev_mV",    "qrs_area_mVms", "cwt_energy"};
  return n;
}

inline constexpr std::array<int, 4> kCwtFeatureScales{4, 8, 16, 32};
inline constexpr int kPacketLevels = 3;
inline constexpr int kPacketWavelet = 4;

/// Per-channel block names in registry order. Spectral names carry no suffix
/// on channel 0.
inline std::vector<std::string> channel_block(int ch) {
  const std::string sfx = "_ch" + std::to_string(ch);
  std::vector<std::string> out;
  for (const auto& n : time_feature_names()) out.push_back(n + sfx);
  for (const char* n : {"hjorth_mob", "hjorth_cmp", "max_slope", "min_slope"}) out.push_back(n + sfx);
  for (const auto& n : freq_feature_names()) out.push_back(ch == 0 ? n : n + sfx);
  for (int k = 0; k < (1 << kPacketLevels); ++k) out.push_back("wp_e" + std::to_string(k) + sfx);
  out.push_back("wp_entropy" + sfx);
  for (int s : kCwtFeatureScales) out.push_back("cwt_e" + std::to_string(s) + sfx);
  return out;
}

inline const std::vector<std::string>& base_registry() {
  static const std::vector<std::string> reg = [] {
    std::vector<std::string> r = channel_block(0);
    const auto c1 = channel_block(1);
    r.insert(r.end(), c1.begin(), c1.end());
    r.insert(r.end(), morph_feature_names().begin(), morph_feature_names().end());
    for (const char* n : {"rr_prev", "rr_next", "rr_ratio", "rr_prev_norm", "rr_next_norm"}) r.push_back(n);
    for (const char* n : {"xcorr_ch01", "xcorr_lag_ms", "rms_ratio_ch10"}) r.push_back(n);
    return r;
  }();
  return reg;
}

inline std::string base_registry_hash() { return layout_hash(base_registry(), kBaseRegistryVersion); }

/// A feature value or "missing".
using Value = std::optional<double>;

// ---------------------------------------------------------------------------
// Time domain
// ---------------------------------------------------------------------------

struct TimeFeatures {
  double mean = 0, std = 0, skew = 0, kurt = 0, rms = 0, zcr = 0, max = 0, min = 0, ptp = 0, mad = 0;
  bool zero_variance = false;
  std::vector<double> as_vector() const { return {mean, std, skew, kurt, rms, zcr, max, min, ptp, mad}; }
};

inline TimeFeatures time_domain_features(std::span<const double> x) {
  if (x.empty()) throw ParameterError("time-domain features need a non-empty segment");
  TimeFeatures f;
  const double n = static_cast<double>(x.size());
  f.mean = stats::mean(x);
  f.std = stats::stddev(x, 1);
  f.zero_variance = stats::central_moment(x, 2) <= 0.0;
  f.skew = stats::skewness(x);
  f.kurt = stats::excess_kurtosis(x);
  double ss = 0;
  for (double v : x) ss += v * v;
  f.rms = std::sqrt(ss / n);
  std::size_t crossings = 0;
  for (std::size_t i = 1; i < x.size(); ++i) crossings += (x[i - 1] < 0.0) != (x[i] < 0.0);
  f.zcr = x.size() > 1 ? static_cast<double>(crossings) / (n - 1) : 0.0;
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  f.max = *hi;
  f.min = *lo;
  f.ptp = f.max - f.min;
  const double med = stats::median(std::vector<double>(x.begin(), x.end()));
  std::vector<double> dev;
  dev.reserve(x.size());
  for (double v : x) dev.push_back(std::abs(v - med));
  f.mad = stats::median(dev);
  return f;
}

struct HjorthSlopes {
  double mobility = 0, complexity = 0, max_slope = 0, min_slope = 0;
};

inline HjorthSlopes hjorth_and_slopes(std::span<const double> x, double fs) {
  HjorthSlopes h;
  if (x.size() < 3) return h;
  std::vector<double> d1(x.size() - 1), d2(x.size() - 2);
  for (std::size_t i = 0; i + 1 < x.size(); ++i) d1[i] = x[i + 1] - x[i];
  for (std::size_t i = 0; i + 1 < d1.size(); ++i) d2[i] = d1[i + 1] - d1[i];
  const double v0 = stats::variance(x, 0), v1 = stats::variance(d1, 0), v2 = stats::variance(d2, 0);
  if (v0 > 0 && v1 > 0) {
    h.mobility = std::sqrt(v1 / v0);
    h.complexity = std::sqrt(v2 / v1) / h.mobility;
  }
  const auto [lo, hi] = std::minmax_element(d1.begin(), d1.end());
  h.max_slope = *hi * fs;
  h.min_slope = *lo * fs;
  return h;
}

// ---------------------------------------------------------------------------
// Frequency domain
// ---------------------------------------------------------------------------

struct FreqFeatures {
  double low_band = 0, mid_band = 0, high_band = 0, residual = 0;
  double spec_entropy = 0, dominant_freq = 0, total_power = 0;
  bool zero_energy = false;
  std::vector<double> as_vector() const { return {low_band, mid_band, high_band, spec_entropy, dominant_freq, total_power}; }
};

/// Band fractions of the one-sided power |X(k)|^2 of the mean-removed
/// segment over [0,5), [5,15), [15,40) Hz; the rest is `residual`.
inline FreqFeatures frequency_domain_features(std::span<const double> x, double fs) {
  if (x.size() < 64) throw ParameterError("frequency features need at least 64 samples");
  FreqFeatures f;
  const double m = stats::mean(x);
  std::vector<double> c(x.begin(), x.end());
  for (double& v : c) v -= m;
  const auto X = dsp::fft(c);
  const std::size_t n = c.size(), half = n / 2;
  std::vector<double> p(half + 1);
  double total = 0;
  for (std::size_t k = 0; k <= half; ++k) total += (p[k] = std::norm(X[k]));
  if (total <= 0.0) {
    f.zero_energy = true;
    return f;
  }
  double lo = 0, mid = 0, hi = 0;
  std::size_t dom = 1;
  for (std::size_t k = 0; k <= half; ++k) {
    const double fk = static_cast<double>(k) * fs / static_cast<double>(n);
    if (fk < 5.0) lo += p[k];
    else if (fk < 15.0) mid += p[k];
    else if (fk < 40.0) hi += p[k];
    if (k >= 1 && p[k] > p[dom]) dom = k;
  }
  f.low_band = lo / total;
  f.mid_band = mid / total;
  f.high_band = hi / total;
  f.residual = 1.0 - f.low_band - f.mid_band - f.high_band;
  double pos = 0;
  for (std::size_t k = 1; k <= half; ++k) pos += p[k];
  std::vector<double> q;
  for (std::size_t k = 1; k <= half; ++k) q.push_back(p[k] / pos);
  f.spec_entropy = stats::shannon_entropy(q);
  f.dominant_freq = static_cast<double>(dom) * fs / static_cast<double>(n);
  double ms = 0;
  for (double v : c) ms += v * v;
  f.total_power = ms / static_cast<double>(n);
  return f;
}

// ---------------------------------------------------------------------------
// Morphology (CWT delineation)
// ---------------------------------------------------------------------------

struct Morphology {
  Value qrs_dur_ms, qrs_onset_ms, qrs_offset_ms, r_amp, q_amp, s_amp, p_amp, pr_ms, t_amp, rt_ms, qt_ms, st_dev,
      qrs_area, cwt_energy;
  std::size_t onset = 0, offset = 0;  // sample indices within the segment
  bool delineated = false;

  std::vector<Value> as_vector() const {
    return {qrs_dur_ms, qrs_onset_ms, qrs_offset_ms, r_amp, q_amp, s_amp, p_amp,
            pr_ms,      t_amp,        rt_ms,         qt_ms, st_dev, qrs_area, cwt_energy};
  }
};

namespace detail {

inline double window_mean(std::span<const double> x, long a, long b) {
  a = std::max(0L, a);
  b = std::min(static_cast<long>(x.size()), b);
  if (b <= a) return std::numeric_limits<double>::quiet_NaN();
  double s = 0;
  for (long i = a; i < b; ++i) s += x[static_cast<std::size_t>(i)];
  return s / static_cast<double>(b - a);
}

// Index of the sample furthest from `ref` in [a, b); -1 when empty.
inline long extreme_index(std::span<const double> x, long a, long b, double ref) {
  a = std::max(0L, a);
  b = std::min(static_cast<long>(x.size()), b);
  long best = -1;
  for (long i = a; i < b; ++i)
    if (best < 0 || std::abs(x[static_cast<std::size_t>(i)] - ref) > std::abs(x[static_cast<std::size_t>(best)] - ref))
      best = i;
  return best;
}

// Walks from R outward through the main lobe of the polarity-corrected CWT
// response and the opposite-sign side lobe, stopping where the side lobe
// decays below `frac` of the R response or changes sign again.
inline std::optional<long> walk_boundary(std::span<const double> w, long r, int dir, long limit, double frac) {
  const double peak = w[static_cast<std::size_t>(r)];
  if (!(peak > 0)) return std::nullopt;
  long i = r;
  const long n = static_cast<long>(w.size());
  auto inside = [&](long k) { return k >= 0 && k < n && std::abs(k - r) <= limit; };
  while (inside(i + dir) && w[static_cast<std::size_t>(i)] > 0) i += dir;
  if (!inside(i + dir)) return std::nullopt;
  // Side lobe: descend to its extreme, then climb back to near zero.
  while (inside(i + dir) && w[static_cast<std::size_t>(i + dir)] <= w[static_cast<std::size_t>(i)]) i += dir;
  while (inside(i + dir) && w[static_cast<std::size_t>(i)] < -frac * peak) i += dir;
  if (!inside(i + dir)) return std::nullopt;
  return i;
}

}  // namespace detail

struct MorphologyParams {
  double delineation_scale_s = 0.010;
  double boundary_fraction = 0.05;
  double search_limit_s = 0.150;
};

/// Lead-II delineation around the R sample `r`. Baseline is the mean of
/// [R-90, R-60] ms; T is the extreme in [offset+80, offset+400] ms; ST is the
/// mean of [offset+40, offset+80] ms; P is the extreme in [R-250 ms, onset-20 ms].
inline Morphology morphological_features(std::span<const double> x, double fs, std::size_t r,
                                         const MorphologyParams& mp = {}) {
  Morphology m;
  if (x.size() < 8 || r >= x.size()) return m;
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  if (*lo_it == *hi_it) return m;

  auto samples = [&](double ms) { return static_cast<long>(std::lround(ms * fs / 1000.0)); };
  auto to_ms = [&](double s) { return 1000.0 * s / fs; };
  const long R = static_cast<long>(r);
  double baseline = detail::window_mean(x, R - samples(90), R - samples(60));
  if (std::isnan(baseline)) baseline = x.front();

  const double polarity = x[r] - baseline >= 0 ? 1.0 : -1.0;
  const std::vector<double> scale{std::max(1.0, mp.delineation_scale_s * fs)};
  auto w = dsp::cwt_mexican_hat(x, scale)[0];
  for (double& v : w) v *= polarity;
  // The CWT maximum may sit a sample or two off the signal extreme.
  long rc = R;
  for (long k = std::max(0L, R - samples(20)); k <= std::min(static_cast<long>(x.size()) - 1, R + samples(20)); ++k)
    if (w[static_cast<std::size_t>(k)] > w[static_cast<std::size_t>(rc)]) rc = k;

  const long limit = samples(mp.search_limit_s * 1000.0);
  const auto on = detail::walk_boundary(w, rc, -1, limit, mp.boundary_fraction);
  const auto off = detail::walk_boundary(w, rc, +1, limit, mp.boundary_fraction);

  m.r_amp = x[r] - baseline;
  if (!on || !off) return m;  // delineation failed: leave the rest missing
  m.delineated = true;
  m.onset = static_cast<std::size_t>(*on);
  m.offset = static_cast<std::size_t>(*off);
  const long onset = *on, offset = *off;
  m.qrs_dur_ms = to_ms(static_cast<double>(offset - onset));
  m.qrs_onset_ms = to_ms(static_cast<double>(R - onset));
  m.qrs_offset_ms = to_ms(static_cast<double>(offset - R));

  double qmin = x[r], smin = x[r], area = 0, en = 0;
  for (long i = onset; i <= R; ++i) qmin = std::min(qmin, x[static_cast<std::size_t>(i)]);
  for (long i = R; i <= offset; ++i) smin = std::min(smin, x[static_cast<std::size_t>(i)]);
  for (long i = onset; i <= offset; ++i) {
    area += std::abs(x[static_cast<std::size_t>(i)] - baseline);
    en += w[static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(i)];
  }
  m.q_amp = qmin - baseline;
  m.s_amp = smin - baseline;
  m.qrs_area = area * 1000.0 / fs;
  m.cwt_energy = en;

  const long p = detail::extreme_index(x, R - samples(250), onset - samples(20), baseline);
  if (p >= 0) {
    m.p_amp = x[static_cast<std::size_t>(p)] - baseline;
    m.pr_ms = to_ms(static_cast<double>(onset - p));
  }
  const long t = detail::extreme_index(x, offset + samples(80), offset + samples(400), baseline);
  if (t >= 0) {
    m.t_amp = x[static_cast<std::size_t>(t)] - baseline;
    m.rt_ms = to_ms(static_cast<double>(t - R));
    m.qt_ms = to_ms(static_cast<double>(t - onset));
  }
  const double st = detail::window_mean(x, offset + samples(40), offset + samples(80));
  if (!std::isnan(st)) m.st_dev = st - baseline;
  return m;
}

// ---------------------------------------------------------------------------
// Row assembly
// ---------------------------------------------------------------------------

struct RecordContext {
  double mean_rr_s = 0.0;  // record mean RR used by the *_norm columns
};

/// Appends the 33 per-channel values for one lead.
inline void channel_values(std::span<const double> x, double fs, std::vector<Value>& out) {
  const auto t = time_domain_features(x);
  for (double v : t.as_vector()) out.emplace_back(v);
  const auto h = hjorth_and_slopes(x, fs);
  for (double v : {h.mobility, h.complexity, h.max_slope, h.min_slope}) out.emplace_back(v);
  const auto f = frequency_domain_features(x, fs);
  for (double v : f.as_vector()) out.emplace_back(v);
  const double m = t.mean;
  std::vector<double> c(x.begin(), x.end());
  for (double& v : c) v -= m;
  const auto wp = dsp::wavelet_packet_energies(c, kPacketWavelet, kPacketLevels);
  for (double v : wp.energies) out.emplace_back(v);
  out.emplace_back(stats::shannon_entropy(wp.energies));
  std::vector<double> scales;
  for (int s : kCwtFeatureScales) scales.push_back(s * fs / 360.0);
  const auto rows = dsp::cwt_mexican_hat(c, scales);
  for (const auto& r : rows) {
    double e = 0;
    for (double v : r) e += v * v;
    out.emplace_back(e / static_cast<double>(r.size()));
  }
}

inline void cross_channel_values(std::span<const double> a, std::span<const double> b, double fs, std::vector<Value>& out) {
  const double ma = stats::mean(a), mb = stats::mean(b);
  double na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) na += (a[i] - ma) * (a[i] - ma), nb += (b[i] - mb) * (b[i] - mb);
  if (na <= 0 || nb <= 0) {
    out.emplace_back(std::nullopt);
    out.emplace_back(std::nullopt);
  } else {
    const long max_lag = static_cast<long>(std::lround(0.05 * fs));
    const long n = static_cast<long>(a.size());
    double best = 0;
    long best_lag = 0;
    bool first = true;
    for (long lag = -max_lag; lag <= max_lag; ++lag) {
      double s = 0;
      for (long i = std::max(0L, -lag); i < std::min(n, n - lag); ++i)
        s += (a[static_cast<std::size_t>(i)] - ma) * (b[static_cast<std::size_t>(i + lag)] - mb);
      const double r = s / std::sqrt(na * nb);
      if (first || std::abs(r) > std::abs(best) || (std::abs(r) == std::abs(best) && std::abs(lag) < std::abs(best_lag))) {
        best = r;
        best_lag = lag;
        first = false;
      }
    }
    out.emplace_back(best);
    out.emplace_back(1000.0 * static_cast<double>(best_lag) / fs);
  }
  double ra = 0, rb = 0;
  for (double v : a) ra += v * v;
  for (double v : b) rb += v * v;
  if (ra > 0) out.emplace_back(std::sqrt(rb / ra));
  else out.emplace_back(std::nullopt);
}

/// One registry-ordered row for a segment. Channel 1 columns are missing for
/// single-lead segments.
inline std::vector<Value> extract_base_features(const seg::BeatSegment& s, const RecordContext& ctx) {
  if (s.channels.empty()) throw ParameterError("segment has no channels");
  const double fs = s.fs_effective;
  std::vector<Value> row;
  row.reserve(base_registry().size());
  channel_values(s.channels[0], fs, row);
  if (s.channels.size() > 1) channel_values(s.channels[1], fs, row);
  else row.insert(row.end(), channel_block(1).size(), std::nullopt);

  const auto m = morphological_features(s.channels[0], fs, s.r_offset);
  for (const auto& v : m.as_vector()) row.push_back(v);

  row.emplace_back(s.rr_prev_s);
  row.emplace_back(s.rr_next_s);
  row.push_back(s.rr_next_s > 0 ? Value(s.rr_prev_s / s.rr_next_s) : std::nullopt);
  row.push_back(ctx.mean_rr_s > 0 ? Value(s.rr_prev_s / ctx.mean_rr_s) : std::nullopt);
  row.push_back(ctx.mean_rr_s > 0 ? Value(s.rr_next_s / ctx.mean_rr_s) : std::nullopt);

  if (s.channels.size() > 1) cross_channel_values(s.channels[0], s.channels[1], fs, row);
  else row.insert(row.end(), 3, std::nullopt);
  if (row.size() != base_registry().size()) throw std::logic_error("base feature row does not match the registry");
  return row;
}

inline RecordContext record_context(const std::vector<seg::BeatSegment>& segs) {
  RecordContext ctx;
  if (segs.empty()) return ctx;
  double s = 0;
  for (const auto& b : segs) s += b.rr_prev_s;
  ctx.mean_rr_s = s / static_cast<double>(segs.size());
  return ctx;
}

/// Base feature matrix for one record's segments.
inline FeatureMatrix extract_matrix(const std::vector<seg::BeatSegment>& segs) {
  auto fm = FeatureMatrix::with_columns(base_registry(), segs.size());
  const auto ctx = record_context(segs);
  for (std::size_t r = 0; r < segs.size(); ++r) {
    const auto row = extract_base_features(segs[r], ctx);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (row[c] && std::isfinite(*row[c])) fm.set(r, c, *row[c]);
      else fm.set_missing(r, c);
    }
    fm.rows[r] = {segs[r].record_id, segs[r].r_peak};
    fm.labels[r] = segs[r].label ? class_index(*segs[r].label) : -1;
  }
  return fm;
}

}  // namespace ecg::features
