#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>

#include "ecg/dsp.hpp"
#include "ecg/feature_matrix.hpp"
#include "ecg/features.hpp"
#include "ecg/synthetic.hpp"
#include "oracles/moments.hpp"

using namespace ecg;
using namespace ecg::features;

namespace {

constexpr double kFs = 360.0;

Signal tone(double f, std::size_t n, double amp = 1.0) {
  Signal x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2 * std::numbers::pi * f * static_cast<double>(i) / kFs);
  return x;
}

// Piecewise-linear QRS of the given width with Gaussian P and T waves; R at 25% of 324 samples.
Signal qrs_template(double qrs_ms) {
  Signal x(324, 0.0);
  const double r = 81, h = qrs_ms / 2;
  const std::vector<std::pair<double, double>> pts{{-h, 0}, {-0.6 * h, -0.1}, {0, 1.0}, {0.6 * h, -0.25}, {h, 0}};
  for (int i = 0; i < 324; ++i) {
    const double t = (i - r) / kFs * 1000;
    for (std::size_t k = 0; k + 1 < pts.size(); ++k)
      if (t >= pts[k].first && t <= pts[k + 1].first) {
        const double u = (t - pts[k].first) / (pts[k + 1].first - pts[k].first);
        x[static_cast<std::size_t>(i)] = pts[k].second + u * (pts[k + 1].second - pts[k].second);
      }
    x[static_cast<std::size_t>(i)] += 0.15 * std::exp(-0.5 * std::pow((t + 180) / 25, 2)) +
                                      0.3 * std::exp(-0.5 * std::pow((t - h - 200) / 45, 2));
  }
  return x;
}

std::vector<seg::BeatSegment> segments_for(unsigned seed, double seconds = 60) {
  synthetic::RecordOptions o;
  o.duration_s = seconds;
  o.seed = seed;
  const auto rec = synthetic::generate_record(o);
  const auto sos = dsp::design_butterworth_bandpass(4, 0.5, 40, kFs);
  Matrix m(static_cast<Eigen::Index>(rec.channels[0].size()), 2);
  for (int c = 0; c < 2; ++c) {
    const auto f = dsp::filtfilt(sos, rec.channels[static_cast<std::size_t>(c)]);
    for (std::size_t t = 0; t < f.size(); ++t) m(static_cast<Eigen::Index>(t), c) = f[t];
  }
  return seg::segment_record("syn" + std::to_string(seed), m, kFs, rec.r_peaks, rec.annotations).segments;
}

}  // namespace

TEST(Registry, HasEightyEightUniqueNames) {
  const auto& reg = base_registry();
  EXPECT_EQ(reg.size(), 88u);
  EXPECT_EQ(std::set<std::string>(reg.begin(), reg.end()).size(), reg.size());
  for (const char* n : {"std_ch0", "skew_ch0", "mid_band_5_15Hz", "low_band_0_5Hz", "spec_entropy", "qrs_dur_ms"})
    EXPECT_NE(std::find(reg.begin(), reg.end(), n), reg.end()) << n;
}

TEST(Registry, HashIsStable) {
  EXPECT_EQ(base_registry_hash(), base_registry_hash());
  EXPECT_EQ(base_registry_hash(), layout_hash(base_registry(), "base-v1"));
  auto shuffled = base_registry();
  std::swap(shuffled[0], shuffled[1]);
  EXPECT_NE(layout_hash(shuffled, "base-v1"), base_registry_hash());
}

TEST(TimeDomain, SinusoidHasZeroSkew) {
  const auto f = time_domain_features(tone(6, 360));
  EXPECT_NEAR(f.skew, 0.0, 1e-6);
}

TEST(TimeDomain, ConstantSegment) {
  const Signal x(200, 2.0);
  const auto f = time_domain_features(x);
  EXPECT_DOUBLE_EQ(f.mean, 2.0);
  EXPECT_DOUBLE_EQ(f.std, 0.0);
  EXPECT_DOUBLE_EQ(f.zcr, 0.0);
  EXPECT_DOUBLE_EQ(f.skew, 0.0);
  EXPECT_DOUBLE_EQ(f.kurt, 0.0);
  EXPECT_TRUE(f.zero_variance);
}

TEST(TimeDomain, MatchesPowerSumOracleOnFixtureBeat) {
  const auto segs = segments_for(2, 20);
  ASSERT_FALSE(segs.empty());
  for (std::size_t i = 0; i < std::min<std::size_t>(segs.size(), 5); ++i) {
    const auto& x = segs[i].channels[0];
    const auto f = time_domain_features(x);
    const auto o = oracle::power_sum_moments(x);
    EXPECT_NEAR(f.mean, o.mean, 1e-9);
    EXPECT_NEAR(f.std, o.std, 1e-9);
    EXPECT_NEAR(f.skew, o.skew, 1e-9);
    EXPECT_NEAR(f.kurt, o.kurt, 1e-9);
    EXPECT_NEAR(f.rms, o.rms, 1e-9);
    EXPECT_NEAR(f.mad, o.mad, 1e-9);
    EXPECT_NEAR(f.ptp, f.max - f.min, 1e-12);
  }
}

TEST(TimeDomain, ZeroCrossingRate) {
  const Signal x{1, -1, 1, -1, 1};
  EXPECT_DOUBLE_EQ(time_domain_features(x).zcr, 1.0);
  const Signal y{1, 2, -1, -2, 3};
  EXPECT_DOUBLE_EQ(time_domain_features(y).zcr, 0.5);
}

TEST(Hjorth, SinusoidMobilityMatchesAngularStep) {
  const double f0 = 5;
  const auto h = hjorth_and_slopes(tone(f0, 720), kFs);
  const double w = 2 * std::numbers::pi * f0 / kFs;
  EXPECT_NEAR(h.mobility, 2 * std::sin(w / 2), 1e-3);
  EXPECT_NEAR(h.complexity, 1.0, 1e-2);
  EXPECT_NEAR(h.max_slope, 2 * std::numbers::pi * f0, 0.5);
}

TEST(FrequencyDomain, TenHertzToneIsMidBand) {
  const auto f = frequency_domain_features(tone(10, 360), kFs);
  EXPECT_GT(f.mid_band, 0.95);
  EXPECT_LT(f.low_band, 0.05);
  EXPECT_LT(f.high_band, 0.05);
  EXPECT_NEAR(f.dominant_freq, 10.0, 1.0);
}

TEST(FrequencyDomain, BandsPartitionUnity) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  Signal x(324);
  for (auto& v : x) v = g(rng);
  const auto f = frequency_domain_features(x, kFs);
  EXPECT_NEAR(f.low_band + f.mid_band + f.high_band + f.residual, 1.0, 1e-9);
}

TEST(FrequencyDomain, WhiteNoiseEntropyNearFlat) {
  // Normalized exponential periodogram ordinates have entropy ~ log(n) - (1 - euler_gamma).
  for (unsigned seed = 1; seed <= 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Signal x(324);
    for (auto& v : x) v = g(rng);
    const auto f = frequency_domain_features(x, kFs);
    const double n_bins = 324 / 2;
    EXPECT_GE(f.spec_entropy, std::log(n_bins) - 0.5) << seed;
    EXPECT_LE(f.spec_entropy, std::log(n_bins) + 1e-12);
  }
}

TEST(FrequencyDomain, ZeroEnergyFlagged) {
  const auto f = frequency_domain_features(Signal(128, 3.0), kFs);
  EXPECT_TRUE(f.zero_energy);
  EXPECT_EQ(f.low_band + f.mid_band + f.high_band + f.spec_entropy, 0.0);
}

TEST(FrequencyDomain, RejectsShortSegments) {
  EXPECT_THROW(frequency_domain_features(Signal(63, 1.0), kFs), ParameterError);
}

TEST(Morphology, HundredMsQrsMeasured) {
  const auto m = morphological_features(qrs_template(100), kFs, 81);
  ASSERT_TRUE(m.delineated);
  EXPECT_NEAR(*m.qrs_dur_ms, 100.0, 20.0);
  EXPECT_NEAR(*m.r_amp, 1.0, 0.05);
  EXPECT_NEAR(*m.t_amp, 0.3, 0.05);
  EXPECT_NEAR(*m.p_amp, 0.15, 0.05);
}

TEST(Morphology, WidthOrderingPreserved) {
  double prev = 0;
  for (double w : {60.0, 80.0, 100.0, 120.0, 160.0}) {
    const auto m = morphological_features(qrs_template(w), kFs, 81);
    ASSERT_TRUE(m.delineated) << w;
    EXPECT_GT(*m.qrs_dur_ms, prev) << w;
    prev = *m.qrs_dur_ms;
  }
}

TEST(Morphology, ZeroSegmentAllMissing) {
  const auto m = morphological_features(Signal(324, 0.0), kFs, 81);
  EXPECT_FALSE(m.delineated);
  for (const auto& v : m.as_vector()) EXPECT_FALSE(v.has_value());
}

TEST(Morphology, VentricularBeatsAreWider) {
  std::vector<double> n_dur, v_dur;
  for (unsigned seed : {3u, 5u, 8u}) {
    for (const auto& s : segments_for(seed)) {
      const auto m = morphological_features(s.channels[0], s.fs_effective, s.r_offset);
      if (!m.qrs_dur_ms) continue;
      if (*s.label == AamiLabel::N) n_dur.push_back(*m.qrs_dur_ms);
      if (*s.label == AamiLabel::V) v_dur.push_back(*m.qrs_dur_ms);
    }
  }
  ASSERT_GE(v_dur.size(), 5u);
  EXPECT_GT(stats::median(v_dur), stats::median(n_dur));
}

TEST(BaseFeatures, RowLengthIsRegistryLength) {
  const auto segs = segments_for(1, 30);
  ASSERT_FALSE(segs.empty());
  const auto ctx = record_context(segs);
  for (const auto& s : segs) EXPECT_EQ(extract_base_features(s, ctx).size(), 88u);
  const auto fm = extract_matrix(segs);
  EXPECT_EQ(fm.n_cols(), 88u);
  EXPECT_EQ(fm.n_rows(), segs.size());
}

TEST(BaseFeatures, IdenticalSegmentsGiveIdenticalRows) {
  const auto segs = segments_for(6, 20);
  ASSERT_FALSE(segs.empty());
  const auto ctx = record_context(segs);
  auto copy = segs[0];
  copy.record_id = "other";
  const auto a = extract_base_features(segs[0], ctx), b = extract_base_features(copy, ctx);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].has_value(), b[i].has_value());
    if (a[i]) EXPECT_EQ(std::bit_cast<std::uint64_t>(*a[i]), std::bit_cast<std::uint64_t>(*b[i]));
  }
}

TEST(BaseFeatures, SingleLeadLeavesChannelOneMissing) {
  auto s = segments_for(7, 20).at(0);
  s.channels.resize(1);
  const auto row = extract_base_features(s, {0.8});
  const auto& reg = base_registry();
  for (std::size_t i = 0; i < reg.size(); ++i) {
    const bool ch1 = reg[i].ends_with("_ch1") || reg[i] == "xcorr_ch01" || reg[i] == "xcorr_lag_ms" ||
                     reg[i] == "rms_ratio_ch10";
    if (ch1) EXPECT_FALSE(row[i].has_value()) << reg[i];
  }
  EXPECT_TRUE(row[0].has_value());
}

TEST(BaseFeatures, ScaleCovariance) {
  const auto segs = segments_for(9, 20);
  ASSERT_FALSE(segs.empty());
  const auto ctx = record_context(segs);
  auto scaled = segs[0];
  const double c = 3.7;
  for (auto& ch : scaled.channels)
    for (auto& v : ch) v *= c;
  const auto a = extract_base_features(segs[0], ctx), b = extract_base_features(scaled, ctx);
  const auto& reg = base_registry();
  auto col = [&](const std::string& n) { return static_cast<std::size_t>(std::find(reg.begin(), reg.end(), n) - reg.begin()); };
  for (const char* n : {"std_ch0", "rms_ch0", "std_ch1", "rms_ch1", "t_amp_mV"}) {
    const auto i = col(n);
    ASSERT_TRUE(a[i] && b[i]) << n;
    EXPECT_NEAR(*b[i], c * *a[i], 1e-9 * std::max(1.0, std::abs(c * *a[i]))) << n;
  }
  for (const char* n : {"skew_ch0", "zcr_ch0", "spec_entropy", "low_band_0_5Hz", "mid_band_5_15Hz",
                        "high_band_15_40Hz", "kurt_ch1", "spec_entropy_ch1"}) {
    const auto i = col(n);
    ASSERT_TRUE(a[i] && b[i]) << n;
    EXPECT_NEAR(*b[i], *a[i], 1e-9) << n;
  }
}

TEST(FeatureMatrixIo, CsvRoundTrip) {
  auto fm = extract_matrix(segments_for(10, 20));
  fm.set_missing(0, 3);
  const auto dir = std::filesystem::temp_directory_path() / "ecg_feat_csv";
  std::filesystem::create_directories(dir);
  write_csv(fm, dir / "f.csv");
  const auto back = read_csv(dir / "f.csv");
  ASSERT_EQ(back.columns, fm.columns);
  ASSERT_EQ(back.n_rows(), fm.n_rows());
  EXPECT_EQ(back.labels, fm.labels);
  EXPECT_EQ(back.missing, fm.missing);
  for (std::size_t r = 0; r < fm.n_rows(); ++r) {
    EXPECT_EQ(back.rows[r].record_id, fm.rows[r].record_id);
    EXPECT_EQ(back.rows[r].r_peak, fm.rows[r].r_peak);
    for (std::size_t c = 0; c < fm.n_cols(); ++c)
      if (!fm.is_missing(r, c)) EXPECT_EQ(back.at(r, c), fm.at(r, c));
  }
  std::filesystem::remove_all(dir);
}

TEST(FeatureMatrixIo, BinaryRoundTrip) {
  auto fm = extract_matrix(segments_for(11, 20));
  fm.set_missing(1, 5);
  const auto dir = std::filesystem::temp_directory_path() / "ecg_feat_bin";
  std::filesystem::create_directories(dir);
  write_binary(fm, dir / "f", {{"stage", "base"}});
  EXPECT_EQ(std::filesystem::file_size(dir / "f.bin"), fm.n_rows() * fm.n_cols() * 8);
  const auto back = read_binary(dir / "f");
  EXPECT_EQ(back.columns, fm.columns);
  EXPECT_EQ(back.missing, fm.missing);
  EXPECT_EQ(back.labels, fm.labels);
  for (std::size_t r = 0; r < fm.n_rows(); ++r)
    for (std::size_t c = 0; c < fm.n_cols(); ++c)
      if (!fm.is_missing(r, c)) EXPECT_EQ(back.at(r, c), fm.at(r, c));
  std::filesystem::remove_all(dir);
}

TEST(FeatureMatrixOps, StackAndSelect) {
  const auto a = extract_matrix(segments_for(12, 15));
  const auto both = vstack({a, a});
  EXPECT_EQ(both.n_rows(), 2 * a.n_rows());
  const auto sel = select_rows(both, {a.n_rows()});
  EXPECT_EQ(sel.rows[0].r_peak, a.rows[0].r_peak);
  auto extra = FeatureMatrix::with_columns({"x"}, a.n_rows());
  const auto wide = hstack(a, extra);
  EXPECT_EQ(wide.n_cols(), 89u);
  EXPECT_EQ(wide.column_index("x"), 88u);
  EXPECT_THROW(wide.column_index("nope"), ParameterError);
}
