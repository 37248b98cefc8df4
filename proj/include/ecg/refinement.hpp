#pragma once

// Median imputation, z-scoring, mutual-information ranking, recursive
// feature elimination with a linear SVC, PCA scores appended to the matrix,
// and SMOTE oversampling followed by edited-nearest-neighbour cleaning.

#include <map>
#include <set>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecg/common.hpp"
#include "ecg/feature_matrix.hpp"
#include "ecg/linear_models.hpp"

namespace ecg::refine {

// ---------------------------------------------------------------------------
// Imputation and standardization
// ---------------------------------------------------------------------------

struct Scaler {
  std::vector<std::string> columns;
  std::vector<double> medians, means, stds;
  std::vector<std::uint8_t> constant;
  std::vector<std::string> warnings;
};

/// Fits medians on the non-missing fit-row values of each column, then
/// mean/std (ddof 1) of the imputed fit rows.
inline Scaler fit_scaler(const FeatureMatrix& m, const std::vector<std::size_t>& fit_rows) {
  if (fit_rows.empty()) throw ParameterError("imputation needs at least one fit row");
  Scaler s;
  s.columns = m.columns;
  const std::size_t d = m.n_cols();
  s.medians.assign(d, 0.0), s.means.assign(d, 0.0), s.stds.assign(d, 0.0), s.constant.assign(d, 0);
  for (std::size_t c = 0; c < d; ++c) {
    std::vector<double> present;
    for (auto r : fit_rows)
      if (!m.is_missing(r, c) && std::isfinite(m.at(r, c))) present.push_back(m.at(r, c));
    if (present.empty()) s.warnings.push_back("column " + m.columns[c] + " is missing on every fit row; zeroed");
    s.medians[c] = present.empty() ? 0.0 : stats::median(present);
    std::vector<double> col;
    for (auto r : fit_rows) col.push_back(m.is_missing(r, c) || !std::isfinite(m.at(r, c)) ? s.medians[c] : m.at(r, c));
    s.means[c] = stats::mean(col);
    s.stds[c] = col.size() > 1 ? stats::stddev(col, 1) : 0.0;
    s.constant[c] = !(s.stds[c] > 0);
  }
  return s;
}

/// Imputed, standardized copy; constant columns become 0.
inline Matrix apply_scaler(const Scaler& s, const FeatureMatrix& m) {
  if (m.columns != s.columns) throw ParameterError("matrix columns do not match the fitted scaler");
  Matrix out(static_cast<Eigen::Index>(m.n_rows()), static_cast<Eigen::Index>(m.n_cols()));
  for (std::size_t r = 0; r < m.n_rows(); ++r)
    for (std::size_t c = 0; c < m.n_cols(); ++c) {
      const double v = m.is_missing(r, c) || !std::isfinite(m.at(r, c)) ? s.medians[c] : m.at(r, c);
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = s.constant[c] ? 0.0 : (v - s.means[c]) / s.stds[c];
    }
  return out;
}

// ---------------------------------------------------------------------------
// Mutual information
// ---------------------------------------------------------------------------

/// Equal-frequency bin index per value: edges are the unique interior
/// quantiles k/n_bins, a value's bin is the number of edges below it.
inline std::vector<int> equal_frequency_bins(std::span<const double> x, int n_bins = 16) {
  std::vector<double> edges;
  for (int k = 1; k < n_bins; ++k) edges.push_back(stats::quantile({x.begin(), x.end()}, static_cast<double>(k) / n_bins));
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  std::vector<int> b;
  b.reserve(x.size());
  for (double v : x) b.push_back(static_cast<int>(std::lower_bound(edges.begin(), edges.end(), v) - edges.begin()));
  return b;
}

/// Plug-in MI (nats) between a binned column and class labels.
inline double mutual_information(std::span<const double> x, const std::vector<int>& y, int n_bins = 16) {
  if (x.size() != y.size()) throw ParameterError("column and labels differ in length");
  if (x.empty()) return 0.0;
  const auto b = equal_frequency_bins(x, n_bins);
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> px, py;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) joint[{b[i], y[i]}] += 1, px[b[i]] += 1, py[y[i]] += 1;
  double mi = 0;
  for (const auto& [k, c] : joint) mi += c / n * std::log(c * n / (px[k.first] * py[k.second]));
  return std::max(0.0, mi);
}

// ---------------------------------------------------------------------------
// Recursive feature elimination
// ---------------------------------------------------------------------------

struct RfeParams {
  std::size_t target = 50;
  double drop_fraction = 0.10;
  double C = 0.1;
};

struct RfeResult {
  std::vector<std::size_t> selected;  // ascending column indices
  std::vector<std::vector<std::size_t>> history;
  std::vector<std::string> warnings;
};

/// Fits the squared-hinge SVC on the candidate columns, drops the share with
/// the smallest summed |weight| over heads, and repeats until `target` remain.
inline RfeResult rfe_select(const Matrix& x, const std::vector<int>& y, std::vector<std::size_t> candidates, const RfeParams& p = {}) {
  RfeResult r;
  std::sort(candidates.begin(), candidates.end());
  if (candidates.size() <= p.target) {
    if (candidates.size() < p.target) r.warnings.push_back("fewer columns than the RFE target; all kept");
    r.selected = candidates;
    return r;
  }
  while (candidates.size() > p.target) {
    r.history.push_back(candidates);
    Matrix sub(x.rows(), static_cast<Eigen::Index>(candidates.size()));
    for (std::size_t j = 0; j < candidates.size(); ++j) sub.col(static_cast<Eigen::Index>(j)) = x.col(static_cast<Eigen::Index>(candidates[j]));
    const auto m = models::train_linear_svc(sub, y, {p.C, {}, {}});
    std::vector<std::pair<double, std::size_t>> score;
    for (std::size_t j = 0; j < candidates.size(); ++j)
      score.emplace_back(m.weights.col(static_cast<Eigen::Index>(j)).cwiseAbs().sum(), j);
    std::stable_sort(score.begin(), score.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    const auto step = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(p.drop_fraction * static_cast<double>(candidates.size()))));
    const auto drop = std::min(step, candidates.size() - p.target);
    std::vector<std::uint8_t> gone(candidates.size(), 0);
    for (std::size_t k = 0; k < drop; ++k) gone[score[k].second] = 1;
    std::vector<std::size_t> next;
    for (std::size_t j = 0; j < candidates.size(); ++j)
      if (!gone[j]) next.push_back(candidates[j]);
    candidates.swap(next);
  }
  r.selected = candidates;
  return r;
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

struct Pca {
  Matrix basis;                  // n_components x n_inputs, orthonormal rows
  std::vector<double> center;    // fit-row means of the inputs
  std::vector<double> variance_ratios;
  std::vector<double> eigenvalues;
  bool padded = false;           // rank below n_components
};

/// Covariance (ddof 1) eigendecomposition of the fit rows. Each component's
/// largest-|loading| entry is made positive.
inline Pca fit_pca(const Matrix& x, std::size_t n_components) {
  if (static_cast<std::size_t>(x.cols()) < n_components) throw ParameterError("fewer inputs than PCA components");
  if (x.rows() < 2) throw ParameterError("PCA needs at least 2 rows");
  Pca p;
  const Eigen::RowVectorXd mu = x.colwise().mean();
  p.center.assign(mu.data(), mu.data() + mu.size());
  const Eigen::MatrixXd xc = x.rowwise() - mu;
  const Eigen::MatrixXd cov = (xc.transpose() * xc) / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const auto& ev = es.eigenvalues();
  const Eigen::Index d = cov.rows();
  double total = 0;
  for (Eigen::Index i = 0; i < d; ++i) total += std::max(0.0, ev(i));
  const double tiny = 1e-12 * std::max(1.0, total);
  p.basis = Matrix::Zero(static_cast<Eigen::Index>(n_components), d);
  for (std::size_t k = 0; k < n_components; ++k) {
    const Eigen::Index i = d - 1 - static_cast<Eigen::Index>(k);  // ascending order from Eigen
    const double lam = std::max(0.0, ev(i));
    if (lam <= tiny) {
      p.padded = true;
      p.eigenvalues.push_back(0.0);
      p.variance_ratios.push_back(0.0);
      continue;
    }
    Eigen::VectorXd v = es.eigenvectors().col(i);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    p.basis.row(static_cast<Eigen::Index>(k)) = v.transpose();
    p.eigenvalues.push_back(lam);
    p.variance_ratios.push_back(total > 0 ? lam / total : 0.0);
  }
  return p;
}

inline Matrix pca_scores(const Pca& p, const Matrix& x) {
  const Eigen::Map<const Eigen::RowVectorXd> mu(p.center.data(), static_cast<Eigen::Index>(p.center.size()));
  return (x.rowwise() - mu) * p.basis.transpose();
}

// ---------------------------------------------------------------------------
// Fitted refinement
// ---------------------------------------------------------------------------

struct RefineParams {
  std::size_t mi_top = 100;
  int mi_bins = 16;
  RfeParams rfe;
  std::size_t pca_components = 5;
};

struct RefinementState {
  Scaler scaler;
  std::vector<double> mi_scores;           // per input column
  std::vector<std::size_t> mi_candidates;  // top mi_top by MI, ascending index
  std::vector<std::size_t> selected;       // RFE survivors, ascending index
  Pca pca;
  RefineParams params;
  std::vector<std::string> warnings;

  std::vector<std::string> selected_names() const {
    std::vector<std::string> n;
    for (auto i : selected) n.push_back(scaler.columns[i]);
    return n;
  }

  std::vector<std::string> output_columns() const {
    auto c = scaler.columns;
    for (std::size_t k = 0; k < params.pca_components; ++k) c.push_back("pca_" + std::to_string(k));
    return c;
  }
};

/// Everything is fitted on `fit_rows` only; labels must be set on those rows.
inline RefinementState fit_refinement(const FeatureMatrix& m, const std::vector<std::size_t>& fit_rows, const RefineParams& p = {}) {
  RefinementState st;
  st.params = p;
  st.scaler = fit_scaler(m, fit_rows);
  st.warnings = st.scaler.warnings;
  const Matrix all = apply_scaler(st.scaler, m);
  Matrix x(static_cast<Eigen::Index>(fit_rows.size()), all.cols());
  std::vector<int> y;
  for (std::size_t i = 0; i < fit_rows.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = all.row(static_cast<Eigen::Index>(fit_rows[i]));
    if (m.labels[fit_rows[i]] < 0) throw ParameterError("fit rows must be labelled");
    y.push_back(m.labels[fit_rows[i]]);
  }
  std::set<int> distinct(y.begin(), y.end());
  if (distinct.size() < 2) throw ParameterError("refinement needs at least 2 distinct labels");

  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const Eigen::VectorXd col = x.col(c);
    st.mi_scores.push_back(st.scaler.constant[static_cast<std::size_t>(c)] ? 0.0 : mutual_information({col.data(), static_cast<std::size_t>(col.size())}, y, p.mi_bins));
  }
  std::vector<std::size_t> order(st.mi_scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return st.mi_scores[a] > st.mi_scores[b]; });
  order.resize(std::min(p.mi_top, order.size()));
  std::sort(order.begin(), order.end());
  st.mi_candidates = order;

  auto rfe = rfe_select(x, y, st.mi_candidates, p.rfe);
  st.selected = rfe.selected;
  st.warnings.insert(st.warnings.end(), rfe.warnings.begin(), rfe.warnings.end());

  Matrix sub(x.rows(), static_cast<Eigen::Index>(st.selected.size()));
  for (std::size_t j = 0; j < st.selected.size(); ++j) sub.col(static_cast<Eigen::Index>(j)) = x.col(static_cast<Eigen::Index>(st.selected[j]));
  st.pca = fit_pca(sub, p.pca_components);
  if (st.pca.padded) st.warnings.push_back("selected subset has rank below the PCA component count; zero-padded");
  return st;
}

/// Imputed and standardized input columns followed by pca_0..pca_{k-1}.
inline FeatureMatrix apply_refinement(const RefinementState& st, const FeatureMatrix& m) {
  const Matrix z = apply_scaler(st.scaler, m);
  Matrix sub(z.rows(), static_cast<Eigen::Index>(st.selected.size()));
  for (std::size_t j = 0; j < st.selected.size(); ++j) sub.col(static_cast<Eigen::Index>(j)) = z.col(static_cast<Eigen::Index>(st.selected[j]));
  const Matrix scores = pca_scores(st.pca, sub);
  auto out = FeatureMatrix::with_columns(st.output_columns(), m.n_rows());
  out.values.leftCols(z.cols()) = z;
  out.values.rightCols(scores.cols()) = scores;
  out.rows = m.rows;
  out.labels = m.labels;
  return out;
}

inline nlohmann::json to_json(const RefinementState& st) {
  nlohmann::json j;
  j["columns"] = st.scaler.columns;
  j["medians"] = st.scaler.medians;
  j["means"] = st.scaler.means;
  j["stds"] = st.scaler.stds;
  j["mi_scores"] = st.mi_scores;
  j["mi_candidates"] = st.mi_candidates;
  j["selected"] = st.selected_names();
  j["selected_index"] = st.selected;
  std::vector<double> basis(st.pca.basis.data(), st.pca.basis.data() + st.pca.basis.size());
  j["pca_basis_row_major"] = basis;
  j["pca_shape"] = {st.pca.basis.rows(), st.pca.basis.cols()};
  j["pca_center"] = st.pca.center;
  j["pca_variance_ratios"] = st.pca.variance_ratios;
  j["params"] = {{"mi_top", st.params.mi_top}, {"mi_bins", st.params.mi_bins}, {"rfe_target", st.params.rfe.target},
                 {"rfe_drop_fraction", st.params.rfe.drop_fraction}, {"rfe_C", st.params.rfe.C}, {"pca_components", st.params.pca_components}};
  j["warnings"] = st.warnings;
  return j;
}

inline RefinementState from_json(const nlohmann::json& j) {
  RefinementState st;
  st.scaler.columns = j.at("columns").get<std::vector<std::string>>();
  st.scaler.medians = j.at("medians").get<std::vector<double>>();
  st.scaler.means = j.at("means").get<std::vector<double>>();
  st.scaler.stds = j.at("stds").get<std::vector<double>>();
  for (double s : st.scaler.stds) st.scaler.constant.push_back(!(s > 0));
  st.mi_scores = j.at("mi_scores").get<std::vector<double>>();
  st.mi_candidates = j.at("mi_candidates").get<std::vector<std::size_t>>();
  st.selected = j.at("selected_index").get<std::vector<std::size_t>>();
  const auto shape = j.at("pca_shape").get<std::vector<Eigen::Index>>();
  const auto basis = j.at("pca_basis_row_major").get<std::vector<double>>();
  st.pca.basis = Eigen::Map<const Matrix>(basis.data(), shape[0], shape[1]);
  st.pca.center = j.at("pca_center").get<std::vector<double>>();
  st.pca.variance_ratios = j.at("pca_variance_ratios").get<std::vector<double>>();
  const auto& p = j.at("params");
  st.params.mi_top = p.at("mi_top");
  st.params.mi_bins = p.at("mi_bins");
  st.params.rfe.target = p.at("rfe_target");
  st.params.rfe.drop_fraction = p.at("rfe_drop_fraction");
  st.params.rfe.C = p.at("rfe_C");
  st.params.pca_components = p.at("pca_components");
  return st;
}

// ---------------------------------------------------------------------------
// SMOTE + ENN
// ---------------------------------------------------------------------------

/// Indices of the k nearest rows (squared Euclidean) among `pool` for each
/// query row, excluding the query itself. Ties go to the lower index.
inline std::vector<std::vector<std::size_t>> knn(const Matrix& x, const std::vector<std::size_t>& queries,
                                                 const std::vector<std::size_t>& pool, std::size_t k) {
  std::vector<std::vector<std::size_t>> out(queries.size());
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const auto q = queries[qi];
    d.clear();
    for (auto j : pool) {
      if (j == q) continue;
      d.emplace_back((x.row(static_cast<Eigen::Index>(q)) - x.row(static_cast<Eigen::Index>(j))).squaredNorm(), j);
    }
    const auto kk = std::min(k, d.size());
    std::partial_sort(d.begin(), d.begin() + static_cast<long>(kk), d.end());
    for (std::size_t m = 0; m < kk; ++m) out[qi].push_back(d[m].second);
  }
  return out;
}

struct BalanceParams {
  std::size_t smote_k = 5;
  std::size_t enn_k = 3;
  std::uint64_t seed = 42;
};

struct BalanceResult {
  Matrix x;
  std::vector<int> y;
  std::vector<std::uint8_t> synthetic;  // 1 for SMOTE rows
  std::size_t n_synthesized = 0, n_removed = 0;
  std::vector<std::string> warnings;
};

/// SMOTE every class up to the majority count, then drop rows whose enn_k
/// nearest neighbours do not hold a majority of the row's own label.
inline BalanceResult smote_enn(const Matrix& x, const std::vector<int>& y, const BalanceParams& p = {},
                               std::size_t n_classes = kNumAamiClasses) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw ParameterError("label count differs from row count");
  std::mt19937_64 rng(p.seed);
  std::vector<std::vector<std::size_t>> by(n_classes);
  for (std::size_t i = 0; i < y.size(); ++i) by[static_cast<std::size_t>(y[i])].push_back(i);
  std::size_t majority = 0;
  for (const auto& v : by) majority = std::max(majority, v.size());

  std::vector<Eigen::RowVectorXd> extra;
  std::vector<int> extra_y;
  BalanceResult r;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const auto& members = by[c];
    if (members.empty() || members.size() == majority) continue;
    const std::size_t need = majority - members.size();
    if (members.size() == 1) {
      r.warnings.push_back(std::string("class ") + label_char(static_cast<AamiLabel>(c)) + " has one sample; duplicated");
      for (std::size_t s = 0; s < need; ++s) extra.push_back(x.row(static_cast<Eigen::Index>(members[0]))), extra_y.push_back(static_cast<int>(c));
      continue;
    }
    const auto nn = knn(x, members, members, std::min(p.smote_k, members.size() - 1));
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
    std::uniform_real_distribution<double> gap(0.0, 1.0);
    for (std::size_t s = 0; s < need; ++s) {
      const auto i = pick(rng);
      std::uniform_int_distribution<std::size_t> pick_nn(0, nn[i].size() - 1);
      const auto j = nn[i][pick_nn(rng)];
      const double u = gap(rng);
      const auto a = x.row(static_cast<Eigen::Index>(members[i]));
      extra.push_back(a + u * (x.row(static_cast<Eigen::Index>(j)) - a));
      extra_y.push_back(static_cast<int>(c));
    }
  }
  r.n_synthesized = extra.size();
  Matrix all(x.rows() + static_cast<Eigen::Index>(extra.size()), x.cols());
  all.topRows(x.rows()) = x;
  for (std::size_t i = 0; i < extra.size(); ++i) all.row(x.rows() + static_cast<Eigen::Index>(i)) = extra[i];
  std::vector<int> ally = y;
  ally.insert(ally.end(), extra_y.begin(), extra_y.end());

  std::vector<std::size_t> idx(ally.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto nn = knn(all, idx, idx, p.enn_k);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::size_t agree = 0;
    for (auto j : nn[i]) agree += ally[j] == ally[i];
    if (2 * agree > nn[i].size() || nn[i].empty()) keep.push_back(i);
  }
  r.n_removed = idx.size() - keep.size();
  r.x.resize(static_cast<Eigen::Index>(keep.size()), x.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    r.x.row(static_cast<Eigen::Index>(i)) = all.row(static_cast<Eigen::Index>(keep[i]));
    r.y.push_back(ally[keep[i]]);
    r.synthetic.push_back(keep[i] >= static_cast<std::size_t>(x.rows()));
  }
  return r;
}

}  // namespace ecg::refine
