#include <gtest/gtest.h>

#include <random>

#include "ecg/rpeak.hpp"
#include "ecg/segmentation.hpp"
#include "ecg/synthetic.hpp"
#include "oracles/segment_loss.hpp"

using namespace ecg;
using namespace ecg::seg;

namespace {

constexpr double kFs = 360.0;

Signal tone(double f, std::size_t n) {
  Signal x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(2 * std::numbers::pi * f * static_cast<double>(i) / kFs);
  return x;
}

synthetic::SyntheticRecord make_record(unsigned seed, double seconds = 30) {
  synthetic::RecordOptions o;
  o.duration_s = seconds;
  o.seed = seed;
  return synthetic::generate_record(o);
}

Matrix to_matrix(const std::vector<Signal>& ch) {
  Matrix m(static_cast<Eigen::Index>(ch[0].size()), static_cast<Eigen::Index>(ch.size()));
  for (std::size_t c = 0; c < ch.size(); ++c)
    for (std::size_t t = 0; t < ch[c].size(); ++t) m(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) = ch[c][t];
  return m;
}

}  // namespace

TEST(CompositeLoss, TenHertzToneIsAllQrsBand) {
  const auto L = composite_loss(tone(10, 324), kFs);
  EXPECT_LT(L.energy_term, 0.1);
  EXPECT_GT(1.0 - L.energy_term, 0.9);
}

TEST(CompositeLoss, UniformNoiseEntropyNearLog32) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  Signal x(5000);
  for (double& v : x) v = u(rng);
  EXPECT_NEAR(composite_loss(x, kFs).entropy_term, std::log(32.0), 0.1);
}

TEST(CompositeLoss, TwoSecondSegmentPenalty) {
  const auto L = composite_loss(tone(10, 720), kFs);
  EXPECT_DOUBLE_EQ(L.length_penalty, 25.0);
  EXPECT_DOUBLE_EQ(length_penalty(900), 0.0);
  EXPECT_DOUBLE_EQ(length_penalty(150), 1.0);
}

TEST(CompositeLoss, ZeroSegmentDegenerate) {
  const auto L = composite_loss(Signal(100, 0.0), kFs);
  EXPECT_TRUE(L.degenerate);
  EXPECT_EQ(L.entropy_term, 0.0);
  EXPECT_EQ(L.snr_term, 1.0);
  EXPECT_EQ(L.energy_term, 1.0);
  EXPECT_THROW(composite_loss(Signal(31, 1.0), kFs), ParameterError);
}

TEST(CompositeLoss, TotalIsWeightedSum) {
  const auto rec = make_record(2, 5);
  const std::span<const double> s(rec.channels[0].data() + 100, 300);
  const auto L = composite_loss(s, kFs);
  EXPECT_NEAR(L.total, 0.5 * L.entropy_term + 0.3 * L.snr_term + 0.2 * L.energy_term + L.length_penalty, 1e-12);
  // The clipped SNR equals the QRS energy fraction, so the two terms coincide.
  EXPECT_NEAR(L.snr_term, L.energy_term, 1e-12);
}

TEST(CompositeLoss, MatchesOracle) {
  const auto rec = make_record(3, 5);
  for (std::size_t len : {64u, 200u, 333u, 700u}) {
    const std::vector<double> s(rec.channels[0].begin() + 50, rec.channels[0].begin() + 50 + static_cast<long>(len));
    EXPECT_NEAR(composite_loss(s, kFs).total, oracle::window_loss(s, kFs), 1e-9) << len;
  }
}

TEST(Grid, DefaultGridCoversStatedRangesAndReportedPoints) {
  const auto a = default_alpha_grid(), b = default_beta_grid();
  EXPECT_EQ(a.size(), 9u);
  EXPECT_EQ(b.size(), 9u);
  auto has = [](const std::vector<double>& g, double v) {
    return std::any_of(g.begin(), g.end(), [v](double x) { return std::abs(x - v) < 1e-3; });
  };
  EXPECT_TRUE(has(a, 0.100));
  EXPECT_TRUE(has(a, 0.233));
  EXPECT_TRUE(has(b, 0.367));
  EXPECT_TRUE(has(b, 0.833));
  EXPECT_LE(a.front(), 0.2);
  EXPECT_GE(a.back(), 0.6);
  EXPECT_LE(b.front(), 0.4);
  EXPECT_GE(b.back(), 0.8);
}

TEST(Grid, ConstantSurfaceGivesGridMedian) {
  const auto rec = make_record(4, 20);
  const auto a = default_alpha_grid(), b = default_beta_grid();
  const auto g = grid_search_window(rec.channels[0], kFs, rec.r_peaks, a, b, [](std::span<const double>) { return 1.0; });
  EXPECT_DOUBLE_EQ(g.robust_optimum.alpha, a[4]);
  EXPECT_DOUBLE_EQ(g.robust_optimum.beta, b[4]);
  for (double v : g.mean_loss) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Grid, ThreeByThreeArgminMatchesBruteForce) {
  const auto rec = make_record(5, 15);
  const std::vector<double> a{0.1, 0.233, 0.367}, b{0.3, 0.367, 0.5};
  const auto g = grid_search_window(rec.channels[0], kFs, rec.r_peaks, a, b);
  const auto rr = rr_context(rec.r_peaks, kFs);
  for (std::size_t k = 0; k < rec.r_peaks.size(); ++k) {
    double best = 1e300, ba = 0, bb = 0;
    for (double al : a)
      for (double be : b) {
        const auto r = static_cast<long>(rec.r_peaks[k]);
        const long start = r - std::lround(al * rr[k].first), end = r + std::lround(be * rr[k].second) + 1;
        std::vector<double> s;
        for (long i = start; i < end; ++i)
          s.push_back(rec.channels[0][static_cast<std::size_t>(std::clamp(i, 0L, static_cast<long>(rec.channels[0].size()) - 1))]);
        const double l = oracle::window_loss(s, kFs);
        if (l < best - 1e-12) best = l, ba = al, bb = be;
      }
    EXPECT_NEAR(g.beat_optimum[k].loss, best, 1e-9) << k;
    EXPECT_DOUBLE_EQ(g.beat_optimum[k].alpha, ba) << k;
    EXPECT_DOUBLE_EQ(g.beat_optimum[k].beta, bb) << k;
  }
}

TEST(Grid, EntropyOnlyWeightsMinimizeEntropy) {
  const auto rec = make_record(6, 15);
  const auto a = make_grid(0.1, 0.1, 5), b = make_grid(0.3, 0.1, 5);
  LossOptions o;
  o.weights = {1.0, 0.0, 0.0};
  const auto g = grid_search_window(rec.channels[0], kFs, rec.r_peaks, a, b, o);
  const auto rr = rr_context(rec.r_peaks, kFs);
  for (std::size_t k = 0; k < rec.r_peaks.size(); ++k) {
    double best = 1e300;
    for (double al : a)
      for (double be : b) {
        const auto s = extract_window(rec.channels[0], window_for(rec.r_peaks[k], rr[k].first, rr[k].second, {al, be},
                                                                  rec.channels[0].size()));
        const double ms = 1000.0 * static_cast<double>(s.size()) / kFs;
        best = std::min(best, histogram_entropy(s, 32) + length_penalty(ms));
      }
    EXPECT_NEAR(g.beat_optimum[k].loss, best, 1e-12);
  }
}

TEST(Grid, ReportsExactMinimumAndRobustPointOnGrid) {
  const auto rec = make_record(7, 20);
  const auto a = default_alpha_grid(), b = default_beta_grid();
  const auto g = grid_search_window(rec.channels[0], kFs, rec.r_peaks, a, b);
  for (const auto& c : g.beat_optimum) EXPECT_GE(c.loss, g.exact_minimum.loss);
  EXPECT_NE(std::find(a.begin(), a.end(), g.robust_optimum.alpha), a.end());
  EXPECT_NE(std::find(b.begin(), b.end(), g.robust_optimum.beta), b.end());
  EXPECT_THROW(grid_search_window(rec.channels[0], kFs, rec.r_peaks, {}, b), ParameterError);
}

TEST(Segment, EqualRrNothingPruned) {
  Signal x(3600, 0.0);
  std::vector<std::size_t> peaks;
  std::vector<wfdb::Annotation> anns;
  for (std::size_t r = 300; r < 3400; r += 300) {
    peaks.push_back(r);
    anns.push_back({r, "N"});
    x[r] = 1.0;
  }
  const auto res = segment_record("eq", to_matrix({x}), kFs, peaks, anns);
  EXPECT_EQ(res.n_pruned, 0u);
  EXPECT_EQ(res.segments.size(), peaks.size());
}

TEST(Segment, FixedLengthAndResample900ms) {
  Signal x(3600, 0.0);
  const std::vector<std::size_t> peaks{1000, 1500, 2000};
  const std::vector<wfdb::Annotation> anns{{1000, "N"}, {1500, "V"}, {2002, "A"}};
  // RR = 500 samples; alpha 0.25 + beta 0.396 gives 125 + 198 + 1 = 324 raw samples (900 ms).
  SegmentOptions o;
  o.window = {0.25, 0.396};
  const auto rw = window_for(1500, 500, 500, o.window, 3600);
  EXPECT_EQ(rw.end - rw.start, 324);
  const auto res = segment_record("r", to_matrix({x, x}), kFs, peaks, anns, o);
  ASSERT_EQ(res.segments.size(), 3u);
  for (const auto& s : res.segments) {
    ASSERT_EQ(s.channels.size(), 2u);
    EXPECT_EQ(s.channels[0].size(), 324u);
    EXPECT_EQ(s.raw_length, 324u);
    EXPECT_DOUBLE_EQ(s.fs_effective, kFs);
  }
  EXPECT_EQ(res.segments[1].label, AamiLabel::V);
  EXPECT_EQ(res.segments[2].label, AamiLabel::S);
  o.window = {0.4, 0.6};
  for (const auto& s : segment_record("r", to_matrix({x}), kFs, peaks, anns, o).segments) EXPECT_EQ(s.channels[0].size(), 324u);
}

TEST(Segment, OutlierLengthPruned) {
  Signal x(20000, 0.1);
  std::vector<std::size_t> peaks;
  std::vector<wfdb::Annotation> anns;
  for (std::size_t r = 400; r <= 4000; r += 300) peaks.push_back(r);
  peaks.push_back(9000);  // long pause on both sides of this beat
  peaks.push_back(14000);
  for (std::size_t r = 14300; r <= 17000; r += 300) peaks.push_back(r);
  for (auto p : peaks) anns.push_back({p, "N"});
  const auto res = segment_record("o", to_matrix({x}), kFs, peaks, anns);
  EXPECT_GE(res.n_pruned, 1u);
  for (const auto& s : res.segments) EXPECT_NE(s.r_peak, 9000u);
}

TEST(Segment, FewerThanThreeBeatsSkipPruning) {
  Signal x(5000, 0.1);
  const std::vector<std::size_t> peaks{500, 3000};
  const std::vector<wfdb::Annotation> anns{{500, "N"}, {3000, "N"}};
  EXPECT_EQ(segment_record("s", to_matrix({x}), kFs, peaks, anns).segments.size(), 2u);
}

TEST(Segment, EdgeWindowsPaddedAndFlagged) {
  Signal x(1000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  const std::vector<std::size_t> peaks{20, 400, 990};
  const std::vector<wfdb::Annotation> anns{{20, "N"}, {400, "N"}, {990, "N"}};
  SegmentOptions o;
  o.iqr_prune = false;
  const auto res = segment_record("e", to_matrix({x}), kFs, peaks, anns, o);
  ASSERT_EQ(res.segments.size(), 3u);
  EXPECT_TRUE(res.segments[0].edge_padded);
  EXPECT_FALSE(res.segments[1].edge_padded);
  EXPECT_TRUE(res.segments[2].edge_padded);
  const auto w = extract_window(x, {-3, 2, true});
  EXPECT_EQ(w, (Signal{0, 0, 0, 0, 1}));
}

TEST(Segment, UnlabeledDroppedByDefault) {
  Signal x(4000, 0.1);
  const std::vector<std::size_t> peaks{500, 800, 1100, 1400};
  const std::vector<wfdb::Annotation> anns{{500, "N"}, {800, "+"}, {1100, "N"}, {1500, "N"}};
  const auto res = segment_record("u", to_matrix({x}), kFs, peaks, anns);
  EXPECT_EQ(res.segments.size(), 2u);
  EXPECT_EQ(res.n_unlabeled, 2u);
  SegmentOptions keep;
  keep.drop_unlabeled = false;
  EXPECT_EQ(segment_record("u", to_matrix({x}), kFs, peaks, anns, keep).segments.size(), 4u);
}

TEST(Segment, RPeakOffsetTracksResampling) {
  const auto rec = make_record(8, 20);
  const auto m = to_matrix(rec.channels);
  const auto res = segment_record("s", m, kFs, rec.r_peaks, rec.annotations);
  ASSERT_FALSE(res.segments.empty());
  for (const auto& s : res.segments) {
    const double expect = 0.233 * s.rr_prev_s * kFs * 324.0 / static_cast<double>(s.raw_length);
    EXPECT_NEAR(static_cast<double>(s.r_offset), expect, 1.5);
    EXPECT_TRUE(s.label.has_value());
  }
}
