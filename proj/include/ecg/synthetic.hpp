#pragma once

// Synthetic two-lead ECG with AAMI-labelled beats, for demos, fixtures and
// tests when no PhysioNet data is at hand. Beats are sums of Gaussian waves
// (P, Q, R, S, T) whose shapes and timing differ per class.

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ecg/common.hpp"
#include "ecg/wfdb.hpp"

namespace ecg::synthetic {

struct Wave {
  double amp;     // mV
  double center;  // s relative to R
  double width;   // s (Gaussian sigma)
};

struct BeatShape {
  std::vector<Wave> lead_ii;
  std::vector<Wave> lead_v1;
};

struct RecordOptions {
  double fs = 360.0;
  double duration_s = 60.0;
  double heart_rate_bpm = 72.0;
  double rr_jitter = 0.03;      // relative std of sinus RR
  double rr_modulation = 0.08;  // relative amplitude of 0.1 Hz and 0.25 Hz RR oscillations
  // Relative frequencies of N, S, V, F, Q beats.
  std::array<double, kNumAamiClasses> class_mix{0.70, 0.08, 0.10, 0.06, 0.06};
  double noise_mV = 0.02;
  double baseline_wander_mV = 0.10;
  double amplitude_scale = 1.0;
  bool bundle_branch_block = false;  // sinus beats drawn as 'L' (wide QRS, still class N)
  unsigned seed = 1;
};

struct SyntheticRecord {
  double fs = 360.0;
  std::vector<Signal> channels;  // mV, lead II then V1
  std::vector<wfdb::Annotation> annotations;
  std::vector<std::size_t> r_peaks;
  std::vector<AamiLabel> labels;
};

inline BeatShape beat_shape(AamiLabel label, bool bbb) {
  switch (label) {
    case AamiLabel::N:
      if (bbb)
        return {{{0.12, -0.20, 0.025}, {0.95, 0.0, 0.022}, {0.35, 0.045, 0.020}, {-0.25, 0.30, 0.055}},
                {{0.08, -0.20, 0.025}, {-0.9, 0.02, 0.030}, {-0.2, 0.30, 0.06}}};
      return {{{0.15, -0.20, 0.025}, {-0.10, -0.028, 0.010}, {1.10, 0.0, 0.011}, {-0.25, 0.028, 0.011}, {0.30, 0.28, 0.050}},
              {{0.06, -0.20, 0.025}, {0.30, -0.005, 0.010}, {-0.80, 0.025, 0.013}, {0.12, 0.28, 0.050}}};
    case AamiLabel::S:
      return {{{-0.10, -0.14, 0.018}, {-0.10, -0.028, 0.010}, {1.05, 0.0, 0.011}, {-0.28, 0.028, 0.011}, {0.26, 0.26, 0.045}},
              {{-0.08, -0.14, 0.018}, {0.32, -0.005, 0.010}, {-0.82, 0.025, 0.013}, {0.10, 0.26, 0.045}}};
    case AamiLabel::V:
      return {{{1.55, 0.0, 0.032}, {-0.55, 0.075, 0.028}, {-0.45, 0.33, 0.070}},
              {{1.10, 0.01, 0.035}, {-0.30, 0.08, 0.030}, {-0.35, 0.33, 0.070}}};
    case AamiLabel::F:
      return {{{0.10, -0.19, 0.022}, {1.30, 0.0, 0.020}, {-0.42, 0.05, 0.020}, {-0.08, 0.30, 0.060}},
              {{0.05, -0.19, 0.022}, {0.70, 0.005, 0.022}, {-0.55, 0.05, 0.020}, {-0.05, 0.30, 0.060}}};
    case AamiLabel::Q:
      return {{{1.6, -0.045, 0.0025}, {0.85, 0.0, 0.038}, {-0.20, 0.08, 0.030}, {-0.32, 0.32, 0.070}},
              {{1.2, -0.045, 0.0025}, {-0.70, 0.01, 0.040}, {0.25, 0.32, 0.070}}};
  }
  return {};
}

inline const char* beat_symbol(AamiLabel label, bool bbb) {
  switch (label) {
    case AamiLabel::N: return bbb ? "L" : "N";
    case AamiLabel::S: return "A";
    case AamiLabel::V: return "V";
    case AamiLabel::F: return "F";
    case AamiLabel::Q: return "/";
  }
  return "Q";
}

inline SyntheticRecord generate_record(const RecordOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::discrete_distribution<int> pick_class(opt.class_mix.begin(), opt.class_mix.end());

  SyntheticRecord rec;
  rec.fs = opt.fs;
  const auto n = static_cast<std::size_t>(std::llround(opt.duration_s * opt.fs));
  rec.channels.assign(2, Signal(n, 0.0));
  const double rr0 = 60.0 / opt.heart_rate_bpm;

  // Beat times: a sinus schedule with ectopic prematurity and compensatory pauses.
  std::vector<std::pair<double, AamiLabel>> beats;
  double t = 0.4 + 0.3 * unif(rng);
  AamiLabel prev = AamiLabel::N;
  const double mayer_phase = 2 * std::numbers::pi * unif(rng), resp_phase = 2 * std::numbers::pi * unif(rng);
  while (t < opt.duration_s - 0.4) {
    auto label = static_cast<AamiLabel>(pick_class(rng));
    if (label != AamiLabel::N && prev != AamiLabel::N && label != AamiLabel::Q) label = AamiLabel::N;
    beats.emplace_back(t, label);
    const double mod = std::sin(2 * std::numbers::pi * 0.1 * t + mayer_phase) +
                       std::sin(2 * std::numbers::pi * 0.25 * t + resp_phase);
    double rr = rr0 * (1.0 + 0.5 * opt.rr_modulation * mod + opt.rr_jitter * gauss(rng));
    // Prematurity applies to the interval preceding the ectopic beat, so
    // shift it retroactively by shortening the gap we just placed.
    if (beats.size() >= 2) {
      auto& cur = beats.back();
      const double prev_t = beats[beats.size() - 2].first;
      double factor = 1.0;
      if (label == AamiLabel::S) factor = 0.62 + 0.06 * unif(rng);
      if (label == AamiLabel::V) factor = 0.60 + 0.08 * unif(rng);
      if (label == AamiLabel::F) factor = 0.90 + 0.06 * unif(rng);
      cur.first = prev_t + (cur.first - prev_t) * factor;
      if (label == AamiLabel::V) rr *= 2.0 - factor;  // full compensatory pause
    }
    if (label == AamiLabel::S) rr *= 1.15;
    prev = label;
    t = beats.back().first + rr;
  }

  const double fs = opt.fs;
  for (const auto& [bt, label] : beats) {
    const auto shape = beat_shape(label, opt.bundle_branch_block);
    const double amp_j = opt.amplitude_scale * (1.0 + 0.05 * gauss(rng));
    const double wid_j = 1.0 + 0.05 * gauss(rng);
    const auto r_idx = static_cast<std::size_t>(std::llround(bt * fs));
    for (int lead = 0; lead < 2; ++lead) {
      const auto& waves = lead == 0 ? shape.lead_ii : shape.lead_v1;
      auto& ch = rec.channels[static_cast<std::size_t>(lead)];
      for (const auto& w : waves) {
        const double sigma = w.width * (w.width > 0.005 ? wid_j : 1.0);
        const double c = bt + w.center;
        const long lo = std::max(0L, static_cast<long>((c - 5 * sigma) * fs));
        const long hi = std::min(static_cast<long>(n) - 1, static_cast<long>((c + 5 * sigma) * fs));
        for (long i = lo; i <= hi; ++i) {
          const double dt = static_cast<double>(i) / fs - c;
          ch[static_cast<std::size_t>(i)] += amp_j * w.amp * std::exp(-0.5 * dt * dt / (sigma * sigma));
        }
      }
    }
    rec.r_peaks.push_back(r_idx);
    rec.labels.push_back(label);
    rec.annotations.push_back({r_idx, beat_symbol(label, opt.bundle_branch_block)});
  }

  // Baseline wander (respiration-like) and white noise.
  const double f_bw = 0.15 + 0.2 * unif(rng), ph = 2 * std::numbers::pi * unif(rng);
  for (int lead = 0; lead < 2; ++lead) {
    auto& ch = rec.channels[static_cast<std::size_t>(lead)];
    for (std::size_t i = 0; i < n; ++i) {
      const double ti = static_cast<double>(i) / fs;
      ch[i] += opt.baseline_wander_mV * std::sin(2 * std::numbers::pi * f_bw * ti + ph + lead) +
               opt.noise_mV * gauss(rng);
    }
  }
  if (!rec.annotations.empty() && rec.annotations.front().sample > 0)
    rec.annotations.insert(rec.annotations.begin(), {0, "+"});  // rhythm marker, not a beat
  return rec;
}

/// Quantizes to 12-bit ADC units (gain 200/mV, baseline 1024) and writes a
/// format-212 WFDB record.
inline void write_wfdb(const SyntheticRecord& rec, const std::filesystem::path& dir, const std::string& name) {
  constexpr double gain = 200.0;
  constexpr int baseline = 1024;
  std::vector<std::vector<int>> raw;
  for (const auto& ch : rec.channels) {
    std::vector<int> r(ch.size());
    for (std::size_t i = 0; i < ch.size(); ++i)
      r[i] = std::clamp(static_cast<int>(std::lround(ch[i] * gain)) + baseline, -2048, 2047);
    raw.push_back(std::move(r));
  }
  wfdb::write_record(dir, name, rec.fs, raw, {"MLII", "V1"}, gain, baseline, rec.annotations, 212);
}

/// Writes a deterministic corpus of `n_records` records with varied rate,
/// amplitude, noise and class mix. Returns the record names.
inline std::vector<std::string> write_corpus(const std::filesystem::path& dir, int n_records, double duration_s,
                                             unsigned seed) {
  std::vector<std::string> names;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int r = 0; r < n_records; ++r) {
    RecordOptions o;
    o.duration_s = duration_s;
    o.seed = seed * 7919u + static_cast<unsigned>(r);
    o.heart_rate_bpm = 62 + 26 * unif(rng);
    o.amplitude_scale = 0.75 + 0.5 * unif(rng);
    o.noise_mV = 0.01 + 0.03 * unif(rng);
    o.baseline_wander_mV = 0.05 + 0.2 * unif(rng);
    o.bundle_branch_block = (r % 7) == 3;
    const double v = 0.05 + 0.15 * unif(rng), s = 0.04 + 0.12 * unif(rng), f = 0.03 + 0.08 * unif(rng);
    const double q = (r % 5 == 0) ? 0.25 : 0.02;
    o.class_mix = {1.0 - v - s - f - q, s, v, f, q};
    const auto rec = generate_record(o);
    char name[16];
    std::snprintf(name, sizeof name, "s%03d", r + 100);
    write_wfdb(rec, dir, name);
    names.emplace_back(name);
  }
  return names;
}

}  // namespace ecg::synthetic
