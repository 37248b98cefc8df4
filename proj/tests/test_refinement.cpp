#include <gtest/gtest.h>

#include <random>

#include "ecg/refinement.hpp"
#include "oracles/jacobi_eigen.hpp"

using namespace ecg;
using namespace ecg::refine;

namespace {

Matrix gaussian(Eigen::Index n, Eigen::Index d, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  return x;
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

FeatureMatrix as_features(const Matrix& x, const std::vector<int>& y) {
  std::vector<std::string> names;
  for (Eigen::Index c = 0; c < x.cols(); ++c) names.push_back("c" + std::to_string(c));
  auto m = FeatureMatrix::with_columns(names, static_cast<std::size_t>(x.rows()));
  m.values = x;
  m.labels = y;
  return m;
}

// Class signal in a few columns; the rest noise.
void planted(std::size_t n, std::size_t d, unsigned seed, Matrix& x, std::vector<int>& y, std::size_t planted_col) {
  x = gaussian(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d), seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> g;
  y.clear();
  for (std::size_t i = 0; i < n; ++i) {
    y.push_back(static_cast<int>(i % 5));
    x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(planted_col)) = y.back() + 0.05 * g(rng);
  }
}

}  // namespace

TEST(Impute, MissingTakesFitMedian) {
  auto m = FeatureMatrix::with_columns({"a"}, 3);
  m.set(0, 0, 1.0), m.set_missing(1, 0), m.set(2, 0, 3.0);
  const auto s = fit_scaler(m, {0, 1, 2});
  EXPECT_DOUBLE_EQ(s.medians[0], 2.0);
  const auto z = apply_scaler(s, m);
  EXPECT_NEAR(z(1, 0), 0.0, 1e-12);  // imputed 2 equals the mean
}

TEST(Impute, FitRowsStandardized) {
  const auto x = gaussian(50, 6, 3);
  auto m = as_features(x * 3.0 + Matrix::Constant(50, 6, 7.0), std::vector<int>(50, 0));
  m.set_missing(4, 2);
  const auto fit = iota_n(50);
  const auto z = apply_scaler(fit_scaler(m, fit), m);
  for (Eigen::Index c = 0; c < 6; ++c) {
    const double mu = z.col(c).mean();
    const double sd = std::sqrt((z.col(c).array() - mu).square().sum() / 49.0);
    EXPECT_NEAR(mu, 0.0, 1e-9);
    EXPECT_NEAR(sd, 1.0, 1e-9);
  }
}

TEST(Impute, TestRowsUseTrainStatistics) {
  const auto x = gaussian(40, 3, 4);
  const auto m = as_features(x, std::vector<int>(40, 0));
  std::vector<std::size_t> train(30);
  std::iota(train.begin(), train.end(), 0);
  const auto s = fit_scaler(m, train);
  const auto z = apply_scaler(s, m);
  for (Eigen::Index r = 30; r < 40; ++r)
    for (Eigen::Index c = 0; c < 3; ++c) EXPECT_NEAR(z(r, c), (x(r, c) - s.means[static_cast<std::size_t>(c)]) / s.stds[static_cast<std::size_t>(c)], 1e-12);
}

TEST(Impute, ConstantAndAllMissingColumnsZeroed) {
  auto m = FeatureMatrix::with_columns({"const", "gone"}, 4);
  for (std::size_t r = 0; r < 4; ++r) m.set(r, 0, 5.0), m.set_missing(r, 1);
  const auto s = fit_scaler(m, iota_n(4));
  EXPECT_TRUE(s.constant[0]);
  EXPECT_FALSE(s.warnings.empty());
  const auto z = apply_scaler(s, m);
  EXPECT_EQ(z.cwiseAbs().maxCoeff(), 0.0);
}

TEST(MutualInformation, IndependentColumnNearZero) {
  // Permutation null: 20 shuffles of an independent column stay under 0.05 nats at n = 2000.
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  std::vector<int> y;
  std::vector<double> x;
  for (int i = 0; i < 2000; ++i) y.push_back(i % 5), x.push_back(g(rng));
  for (int t = 0; t < 20; ++t) {
    std::shuffle(x.begin(), x.end(), rng);
    const double mi = mutual_information(x, y);
    EXPECT_LT(mi, 0.05);
    EXPECT_GE(mi, 0.0);
  }
}

TEST(MutualInformation, ColumnEqualToLabelGivesLabelEntropy) {
  std::vector<int> y;
  std::vector<double> x;
  for (int i = 0; i < 1000; ++i) y.push_back(i % 5), x.push_back(static_cast<double>(i % 5));
  EXPECT_NEAR(mutual_information(x, y), std::log(5.0), 1e-9);
}

TEST(MutualInformation, ConstantColumnIsZero) {
  const std::vector<double> x(100, 2.0);
  std::vector<int> y;
  for (int i = 0; i < 100; ++i) y.push_back(i % 2);
  EXPECT_EQ(mutual_information(x, y), 0.0);
}

TEST(MutualInformation, EqualFrequencyBins) {
  std::vector<double> x;
  for (int i = 0; i < 160; ++i) x.push_back(i);
  const auto b = equal_frequency_bins(x, 16);
  std::vector<int> count(16, 0);
  for (int v : b) ++count[static_cast<std::size_t>(v)];
  for (int c : count) EXPECT_NEAR(c, 10, 1);
}

TEST(Rfe, TargetEqualToCountIsIdentity) {
  Matrix x;
  std::vector<int> y;
  planted(100, 8, 1, x, y, 3);
  const auto r = rfe_select(x, y, {0, 2, 4, 6}, {4, 0.1, 0.1});
  EXPECT_EQ(r.selected, (std::vector<std::size_t>{0, 2, 4, 6}));
  EXPECT_TRUE(r.history.empty());
}

TEST(Rfe, PlantedFeatureSurvives) {
  Matrix x;
  std::vector<int> y;
  planted(300, 80, 5, x, y, 37);
  const auto r = rfe_select(x, y, iota_n(80), {10, 0.1, 0.1});
  ASSERT_EQ(r.selected.size(), 10u);
  EXPECT_NE(std::find(r.selected.begin(), r.selected.end(), 37u), r.selected.end());
  EXPECT_EQ(r.selected, rfe_select(x, y, iota_n(80), {10, 0.1, 0.1}).selected);
  // Each round drops 10% (at least one) and never undershoots.
  for (std::size_t i = 1; i < r.history.size(); ++i) {
    const auto before = r.history[i - 1].size(), after = r.history[i].size();
    EXPECT_EQ(before - after, std::max<std::size_t>(1, before / 10));
  }
}

TEST(Rfe, TooFewColumnsWarns) {
  Matrix x;
  std::vector<int> y;
  planted(50, 5, 2, x, y, 1);
  const auto r = rfe_select(x, y, iota_n(5), {50, 0.1, 0.1});
  EXPECT_EQ(r.selected.size(), 5u);
  EXPECT_FALSE(r.warnings.empty());
}

TEST(Pca, ExactLineHasSingleComponent) {
  Matrix x(20, 2);
  for (int i = 0; i < 20; ++i) x(i, 0) = i, x(i, 1) = 2.0 * i + 1;
  const auto p = fit_pca(x, 2);
  EXPECT_NEAR(p.variance_ratios[0], 1.0, 1e-12);
  EXPECT_NEAR(p.variance_ratios[1], 0.0, 1e-12);
  EXPECT_TRUE(p.padded);
}

TEST(Pca, MatchesJacobiOracleUpToSign) {
  const Matrix x = gaussian(120, 50, 9) * gaussian(50, 50, 10);  // correlated columns
  const auto p = fit_pca(x, 5);
  // Oracle: explicit covariance and Jacobi rotations.
  const auto n = x.rows();
  std::vector<double> mu(50, 0.0);
  for (Eigen::Index c = 0; c < 50; ++c)
    for (Eigen::Index r = 0; r < n; ++r) mu[static_cast<std::size_t>(c)] += x(r, c) / static_cast<double>(n);
  std::vector<std::vector<double>> cov(50, std::vector<double>(50, 0.0));
  for (std::size_t a = 0; a < 50; ++a)
    for (std::size_t b = 0; b < 50; ++b) {
      double s = 0;
      for (Eigen::Index r = 0; r < n; ++r) s += (x(r, static_cast<Eigen::Index>(a)) - mu[a]) * (x(r, static_cast<Eigen::Index>(b)) - mu[b]);
      cov[a][b] = s / static_cast<double>(n - 1);
    }
  const auto ref = oracle::jacobi_eigen(cov);
  double total = 0;
  for (double v : ref.values) total += v;
  const auto scores = pca_scores(p, x);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_NEAR(p.variance_ratios[k], ref.values[k] / total, 1e-10);
    for (Eigen::Index r = 0; r < n; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 50; ++j) s += (x(r, static_cast<Eigen::Index>(j)) - mu[j]) * ref.vectors[k][j];
      EXPECT_NEAR(std::abs(scores(r, static_cast<Eigen::Index>(k))), std::abs(s), 1e-8);
    }
  }
}

TEST(Pca, BasisOrthonormalRatiosOrderedAndSignFixed) {
  const Matrix x = gaussian(200, 12, 11) * gaussian(12, 12, 12);
  const auto p = fit_pca(x, 5);
  const Matrix gram = p.basis * p.basis.transpose();
  EXPECT_LT((gram - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-8);
  double sum = 0;
  for (std::size_t k = 0; k < 5; ++k) {
    sum += p.variance_ratios[k];
    EXPECT_GT(p.variance_ratios[k], 0.0);
    if (k) EXPECT_LE(p.variance_ratios[k], p.variance_ratios[k - 1]);
    Eigen::Index arg = 0;
    p.basis.row(static_cast<Eigen::Index>(k)).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(p.basis(static_cast<Eigen::Index>(k), arg), 0.0);
  }
  EXPECT_LE(sum, 1.0 + 1e-12);
}

TEST(Refinement, DimensionLedgerAndNoLeakage) {
  Matrix x;
  std::vector<int> y;
  planted(400, 197, 13, x, y, 120);
  auto m = as_features(x, y);
  m.set_missing(3, 4);
  std::vector<std::size_t> train(320);
  std::iota(train.begin(), train.end(), 0);
  const auto st = fit_refinement(m, train);
  EXPECT_EQ(st.mi_candidates.size(), 100u);
  EXPECT_EQ(st.selected.size(), 50u);
  EXPECT_NE(std::find(st.selected.begin(), st.selected.end(), 120u), st.selected.end());
  for (auto s : st.selected) EXPECT_NE(std::find(st.mi_candidates.begin(), st.mi_candidates.end(), s), st.mi_candidates.end());
  const auto out = apply_refinement(st, m);
  EXPECT_EQ(out.n_cols(), 202u);
  EXPECT_EQ(out.columns.back(), "pca_4");
  EXPECT_FALSE(out.values.hasNaN());
  EXPECT_EQ(out.missing_count(), 0u);
  // Changing test rows leaves the fitted state untouched.
  auto m2 = m;
  for (std::size_t r = 320; r < 400; ++r) m2.set(r, 0, 1e6);
  const auto st2 = fit_refinement(m2, train);
  EXPECT_EQ(st2.scaler.means, st.scaler.means);
  EXPECT_EQ(st2.selected, st.selected);
}

TEST(Refinement, JsonRoundTrip) {
  Matrix x;
  std::vector<int> y;
  planted(150, 60, 17, x, y, 10);
  const auto m = as_features(x, y);
  const auto st = fit_refinement(m, iota_n(150), {30, 16, {20, 0.1, 0.1}, 5});
  const auto back = from_json(nlohmann::json::parse(to_json(st).dump()));
  const auto a = apply_refinement(st, m), b = apply_refinement(back, m);
  EXPECT_LT((a.values - b.values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SmoteEnn, BalancedSeparatedClustersUnchanged) {
  Matrix x(60, 2);
  std::vector<int> y;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0, 0.1);
  for (int i = 0; i < 60; ++i) {
    const int c = i / 20;
    x(i, 0) = 10.0 * c + g(rng), x(i, 1) = g(rng);
    y.push_back(c);
  }
  const auto r = smote_enn(x, y, {}, 3);
  EXPECT_EQ(r.n_synthesized, 0u);
  EXPECT_EQ(r.n_removed, 0u);
  EXPECT_EQ(r.y, y);
}

TEST(SmoteEnn, SyntheticRowsLieOnSameClassSegments) {
  Matrix x(40, 2);
  std::vector<int> y;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  for (int i = 0; i < 40; ++i) {
    const int c = i < 30 ? 0 : 1;
    x(i, 0) = g(rng) + 8.0 * c, x(i, 1) = g(rng);
    y.push_back(c);
  }
  const auto r = smote_enn(x, y, {5, 3, 99}, 2);
  EXPECT_EQ(r.n_synthesized, 20u);
  for (Eigen::Index i = 0; i < r.x.rows(); ++i) {
    if (!r.synthetic[static_cast<std::size_t>(i)]) continue;
    const Eigen::RowVector2d p = r.x.row(i);
    double best = std::numeric_limits<double>::infinity();
    for (int a = 30; a < 40; ++a)
      for (int b = 30; b < 40; ++b) {
        if (a == b) continue;
        const Eigen::RowVector2d u = x.row(a), v = x.row(b);
        const double t = std::clamp((p - u).dot(v - u) / (v - u).squaredNorm(), 0.0, 1.0);
        best = std::min(best, (u + t * (v - u) - p).norm());
      }
    EXPECT_LT(best, 1e-9);
  }
}

TEST(SmoteEnn, DeterministicUnderSeed) {
  Matrix x;
  std::vector<int> y;
  planted(80, 4, 21, x, y, 0);
  y[0] = 1;  // unbalance
  const auto a = smote_enn(x, y, {5, 3, 7}), b = smote_enn(x, y, {5, 3, 7});
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.x, b.x);
}

TEST(SmoteEnn, SingletonClassDuplicated) {
  Matrix x = gaussian(11, 2, 3);
  std::vector<int> y(11, 0);
  y[10] = 1;
  const auto r = smote_enn(x, y, {5, 3, 1}, 2);
  EXPECT_EQ(r.n_synthesized, 9u);
  EXPECT_FALSE(r.warnings.empty());
}

TEST(SmoteEnn, EnnRemovesMislabelledPoint) {
  Matrix x(21, 1);
  std::vector<int> y;
  for (int i = 0; i < 21; ++i) x(i, 0) = i, y.push_back(i < 10 ? 0 : 1);
  y[3] = 1;  // isolated among class 0
  const auto r = smote_enn(x, y, {5, 3, 1}, 2);
  for (Eigen::Index i = 0; i < r.x.rows(); ++i)
    if (!r.synthetic[static_cast<std::size_t>(i)] && r.x(i, 0) == 3.0) ADD_FAILURE() << "mislabelled point survived";
}
