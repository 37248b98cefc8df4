#pragma once

// One-vs-rest logistic regression and squared-hinge linear SVC (Newton
// solvers), a class-weighted CART tree, evaluation metrics, CV confidence
// intervals, the compact model binary and latency measurement.

#include <bit>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "ecg/common.hpp"

namespace ecg::models {

enum class ModelKind : std::uint8_t { logistic_regression = 1, linear_svc = 2, decision_tree = 3 };

inline const char* kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::logistic_regression: return "logistic_regression";
    case ModelKind::linear_svc: return "linear_svc";
    case ModelKind::decision_tree: return "decision_tree";
  }
  return "unknown";
}

inline ModelKind kind_from_name(const std::string& s) {
  if (s == "logistic_regression" || s == "lr") return ModelKind::logistic_regression;
  if (s == "linear_svc" || s == "svc") return ModelKind::linear_svc;
  if (s == "decision_tree" || s == "tree") return ModelKind::decision_tree;
  throw ParameterError("unknown model kind '" + s + "'");
}

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0;
  int left = -1, right = -1;
  std::vector<double> distribution;  // weighted class mass
  int depth = 0;
};

struct TrainedModel {
  ModelKind kind = ModelKind::linear_svc;
  std::size_t n_features = 0;
  std::size_t n_classes = kNumAamiClasses;
  Matrix weights;               // n_classes x n_features (linear kinds)
  std::vector<double> intercepts;
  std::vector<TreeNode> nodes;  // tree kind; node 0 is the root
  std::vector<double> class_weights;
  nlohmann::json hyperparams;
  bool converged = true;
  int iterations = 0;
  std::vector<std::vector<double>> objective_trace;  // per head, objective after each accepted step
};

// ---------------------------------------------------------------------------
// Class weights
// ---------------------------------------------------------------------------

/// n / (K n_c) for present classes, 0 for absent ones, then rescaled so the
/// present weights average 1.
inline std::vector<double> balanced_class_weights(const std::vector<int>& y, std::size_t n_classes) {
  std::vector<double> count(n_classes, 0.0), w(n_classes, 0.0);
  for (int v : y) count[static_cast<std::size_t>(v)] += 1;
  std::size_t present = 0;
  for (double c : count) present += c > 0;
  for (std::size_t k = 0; k < n_classes; ++k)
    if (count[k] > 0) w[k] = static_cast<double>(y.size()) / (static_cast<double>(present) * count[k]);
  return w;
}

inline std::vector<double> normalize_weights(std::vector<double> w) {
  double s = 0;
  std::size_t m = 0;
  for (double v : w)
    if (v > 0) s += v, ++m;
  if (m == 0) return w;
  for (double& v : w) v *= static_cast<double>(m) / s;
  return w;
}

// ---------------------------------------------------------------------------
// Binary objectives (labels in {-1, +1}, per-sample cost c_i)
// ---------------------------------------------------------------------------

struct BinaryProblem {
  const Matrix& x;
  std::vector<double> y;  // +-1
  std::vector<double> cost;
};

/// [X 1]^T diag(curv) [X 1] + I on the weight block.
inline void weighted_gram(const Matrix& x, const Eigen::VectorXd& curv, Eigen::MatrixXd& hess) {
  const auto d = x.cols();
  Eigen::Index active = 0;
  for (Eigen::Index i = 0; i < curv.size(); ++i) active += curv(i) > 0;
  Eigen::MatrixXd xa(active, d + 1);
  for (Eigen::Index i = 0, r = 0; i < curv.size(); ++i) {
    if (curv(i) <= 0) continue;
    const double s = std::sqrt(curv(i));
    xa.row(r).head(d) = s * x.row(i);
    xa(r++, d) = s;
  }
  hess.setZero(d + 1, d + 1);
  hess.selfadjointView<Eigen::Lower>().rankUpdate(xa.transpose());
  hess.triangularView<Eigen::StrictlyUpper>() = hess.transpose();
  hess.topLeftCorner(d, d).diagonal().array() += 1.0;
}

/// 0.5|w|^2 + sum c_i log(1 + exp(-y_i (w.x_i + b))); theta = [w; b].
inline double logistic_objective(const BinaryProblem& p, const Eigen::VectorXd& theta, Eigen::VectorXd* grad = nullptr,
                                 Eigen::MatrixXd* hess = nullptr) {
  const auto d = static_cast<Eigen::Index>(p.x.cols());
  const Eigen::VectorXd w = theta.head(d);
  const double b = theta(d);
  const Eigen::VectorXd s = (p.x * w).array() + b;
  double f = 0.5 * w.squaredNorm();
  Eigen::VectorXd coef(s.size()), curv(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double m = p.y[static_cast<std::size_t>(i)] * s(i);
    const double c = p.cost[static_cast<std::size_t>(i)];
    f += c * (m > 0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m)));
    const double sig = 1.0 / (1.0 + std::exp(m));  // sigma(-m)
    coef(i) = -c * p.y[static_cast<std::size_t>(i)] * sig;
    curv(i) = c * sig * (1.0 - sig);
  }
  if (grad) {
    grad->resize(d + 1);
    grad->head(d) = w + p.x.transpose() * coef;
    (*grad)(d) = coef.sum();
  }
  if (hess) weighted_gram(p.x, curv, *hess);
  return f;
}

/// 0.5|w|^2 + sum c_i max(0, 1 - y_i (w.x_i + b))^2; generalized Hessian.
inline double squared_hinge_objective(const BinaryProblem& p, const Eigen::VectorXd& theta, Eigen::VectorXd* grad = nullptr,
                                      Eigen::MatrixXd* hess = nullptr) {
  const auto d = static_cast<Eigen::Index>(p.x.cols());
  const Eigen::VectorXd w = theta.head(d);
  const double b = theta(d);
  const Eigen::VectorXd s = (p.x * w).array() + b;
  double f = 0.5 * w.squaredNorm();
  Eigen::VectorXd coef = Eigen::VectorXd::Zero(s.size()), curv = Eigen::VectorXd::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double yi = p.y[static_cast<std::size_t>(i)], c = p.cost[static_cast<std::size_t>(i)];
    const double viol = 1.0 - yi * s(i);
    if (viol > 0) {
      f += c * viol * viol;
      coef(i) = -2.0 * c * yi * viol;
      curv(i) = 2.0 * c;
    }
  }
  if (grad) {
    grad->resize(d + 1);
    grad->head(d) = w + p.x.transpose() * coef;
    (*grad)(d) = coef.sum();
  }
  if (hess) weighted_gram(p.x, curv, *hess);
  return f;
}

struct SolverOptions {
  double grad_tol = 1e-4;
  int max_iter = 1000;
};

struct SolveResult {
  Eigen::VectorXd theta;
  bool converged = false;
  int iterations = 0;
  std::vector<double> trace;
};

/// Damped Newton with Armijo backtracking. A small ridge on the Hessian keeps
/// the intercept direction solvable when no sample is active.
template <class Objective>
SolveResult newton_minimize(const BinaryProblem& p, Objective&& obj, const SolverOptions& o) {
  const auto dim = p.x.cols() + 1;
  SolveResult r;
  r.theta = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd g;
  Eigen::MatrixXd h;
  double f = obj(p, r.theta, &g, &h);
  r.trace.push_back(f);
  for (r.iterations = 0; r.iterations < o.max_iter; ++r.iterations) {
    if (g.norm() < o.grad_tol) {
      r.converged = true;
      break;
    }
    h.diagonal().array() += 1e-10;
    Eigen::VectorXd step = h.ldlt().solve(-g);
    if (!step.allFinite() || step.dot(g) >= 0) step = -g;
    double t = 1.0, f_new = 0;
    const double slope = step.dot(g);
    Eigen::VectorXd cand;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      cand = r.theta + t * step;
      f_new = obj(p, cand, nullptr, nullptr);
      if (f_new <= f + 1e-4 * t * slope) break;
    }
    if (!(f_new <= f)) break;  // no further descent possible in floating point
    r.theta = cand;
    f = obj(p, r.theta, &g, &h);
    r.trace.push_back(f);
  }
  if (!r.converged && g.norm() < o.grad_tol) r.converged = true;
  return r;
}

// ---------------------------------------------------------------------------
// Linear training
// ---------------------------------------------------------------------------

struct LinearOptions {
  double C = 0.1;
  SolverOptions solver;
  std::vector<double> class_weights;  // empty = balanced
};

namespace detail {

inline void check_training(const Matrix& x, const std::vector<int>& y, std::size_t n_classes) {
  if (x.rows() == 0) throw ParameterError("training set is empty");
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw ParameterError("label count differs from row count");
  std::vector<int> seen(n_classes, 0);
  for (int v : y) {
    if (v < 0 || static_cast<std::size_t>(v) >= n_classes) throw ParameterError("label outside the class range");
    seen[static_cast<std::size_t>(v)] = 1;
  }
  if (std::accumulate(seen.begin(), seen.end(), 0) < 2) throw ParameterError("training needs at least 2 classes");
}

template <class Objective>
TrainedModel train_ovr(ModelKind kind, const Matrix& x, const std::vector<int>& y, const LinearOptions& opt,
                       std::size_t n_classes, Objective&& obj) {
  check_training(x, y, n_classes);
  TrainedModel m;
  m.kind = kind;
  m.n_features = static_cast<std::size_t>(x.cols());
  m.n_classes = n_classes;
  m.class_weights = normalize_weights(opt.class_weights.empty() ? balanced_class_weights(y, n_classes) : opt.class_weights);
  m.weights = Matrix::Zero(static_cast<Eigen::Index>(n_classes), x.cols());
  m.intercepts.assign(n_classes, 0.0);
  m.hyperparams = {{"C", opt.C}, {"grad_tol", opt.solver.grad_tol}, {"max_iter", opt.solver.max_iter}};
  for (std::size_t k = 0; k < n_classes; ++k) {
    if (std::find(y.begin(), y.end(), static_cast<int>(k)) == y.end()) {
      m.intercepts[k] = -1e6;  // class never seen: never predicted
      continue;
    }
    BinaryProblem p{x, {}, {}};
    for (int v : y) {
      p.y.push_back(v == static_cast<int>(k) ? 1.0 : -1.0);
      p.cost.push_back(opt.C * m.class_weights[static_cast<std::size_t>(v)]);
    }
    const auto r = newton_minimize(p, obj, opt.solver);
    m.weights.row(static_cast<Eigen::Index>(k)) = r.theta.head(x.cols()).transpose();
    m.intercepts[k] = r.theta(x.cols());
    m.converged = m.converged && r.converged;
    m.iterations += r.iterations;
    m.objective_trace.push_back(r.trace);
  }
  return m;
}

}  // namespace detail

inline TrainedModel train_logistic_regression(const Matrix& x, const std::vector<int>& y, LinearOptions opt = {1.0, {}, {}},
                                              std::size_t n_classes = kNumAamiClasses) {
  return detail::train_ovr(ModelKind::logistic_regression, x, y, opt, n_classes,
                           [](const BinaryProblem& p, const Eigen::VectorXd& t, Eigen::VectorXd* g, Eigen::MatrixXd* h) {
                             return logistic_objective(p, t, g, h);
                           });
}

inline TrainedModel train_linear_svc(const Matrix& x, const std::vector<int>& y, LinearOptions opt = {},
                                     std::size_t n_classes = kNumAamiClasses) {
  return detail::train_ovr(ModelKind::linear_svc, x, y, opt, n_classes,
                           [](const BinaryProblem& p, const Eigen::VectorXd& t, Eigen::VectorXd* g, Eigen::MatrixXd* h) {
                             return squared_hinge_objective(p, t, g, h);
                           });
}

// ---------------------------------------------------------------------------
// Decision tree
// ---------------------------------------------------------------------------

struct TreeOptions {
  int max_depth = 5;
  std::size_t min_samples_split = 2;
  std::vector<double> class_weights;  // empty = balanced
};

inline double gini(const std::vector<double>& mass) {
  double tot = 0, sq = 0;
  for (double m : mass) tot += m;
  if (tot <= 0) return 0;
  for (double m : mass) sq += (m / tot) * (m / tot);
  return 1.0 - sq;
}

struct Split {
  int feature = -1;
  double threshold = 0;
  double gain = 0;  // weighted impurity decrease (mass-weighted)
};

/// Best (feature, threshold) by weighted Gini decrease over midpoints of
/// sorted unique values. Ties keep the lowest feature, then lowest threshold.
inline Split best_split(const Matrix& x, const std::vector<int>& y, const std::vector<double>& cw,
                        const std::vector<std::size_t>& idx, std::size_t n_classes) {
  Split best;
  std::vector<double> total(n_classes, 0.0);
  for (auto i : idx) total[static_cast<std::size_t>(y[i])] += cw[static_cast<std::size_t>(y[i])];
  const double w_all = std::accumulate(total.begin(), total.end(), 0.0);
  const double parent = w_all * gini(total);
  std::vector<std::size_t> order(idx);
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double va = x(static_cast<Eigen::Index>(a), f), vb = x(static_cast<Eigen::Index>(b), f);
      return va != vb ? va < vb : a < b;
    });
    std::vector<double> left(n_classes, 0.0);
    for (std::size_t m = 0; m + 1 < order.size(); ++m) {
      const auto i = order[m];
      left[static_cast<std::size_t>(y[i])] += cw[static_cast<std::size_t>(y[i])];
      const double v = x(static_cast<Eigen::Index>(i), f), vn = x(static_cast<Eigen::Index>(order[m + 1]), f);
      if (v == vn) continue;
      std::vector<double> right(n_classes);
      double wl = 0;
      for (std::size_t k = 0; k < n_classes; ++k) right[k] = total[k] - left[k], wl += left[k];
      const double gain = parent - wl * gini(left) - (w_all - wl) * gini(right);
      if (gain > best.gain + 1e-12 * std::max(1.0, parent)) best = {static_cast<int>(f), 0.5 * (v + vn), gain};
    }
  }
  return best;
}

inline TrainedModel train_decision_tree(const Matrix& x, const std::vector<int>& y, const TreeOptions& opt = {},
                                        std::size_t n_classes = kNumAamiClasses) {
  detail::check_training(x, y, n_classes);
  if (opt.max_depth < 0) throw ParameterError("max_depth must be non-negative");
  TrainedModel m;
  m.kind = ModelKind::decision_tree;
  m.n_features = static_cast<std::size_t>(x.cols());
  m.n_classes = n_classes;
  m.class_weights = normalize_weights(opt.class_weights.empty() ? balanced_class_weights(y, n_classes) : opt.class_weights);
  m.hyperparams = {{"max_depth", opt.max_depth}, {"min_samples_split", opt.min_samples_split}};

  struct Work {
    int node;
    std::vector<std::size_t> idx;
  };
  std::vector<std::size_t> all(y.size());
  std::iota(all.begin(), all.end(), 0);
  m.nodes.push_back({});
  std::vector<Work> stack{{0, all}};
  while (!stack.empty()) {
    auto w = std::move(stack.back());
    stack.pop_back();
    auto& node = m.nodes[static_cast<std::size_t>(w.node)];
    node.distribution.assign(n_classes, 0.0);
    for (auto i : w.idx) node.distribution[static_cast<std::size_t>(y[i])] += m.class_weights[static_cast<std::size_t>(y[i])];
    if (node.depth >= opt.max_depth || w.idx.size() < opt.min_samples_split || gini(node.distribution) == 0.0) continue;
    const auto s = best_split(x, y, m.class_weights, w.idx, n_classes);
    if (s.feature < 0) continue;
    std::vector<std::size_t> li, ri;
    for (auto i : w.idx) (x(static_cast<Eigen::Index>(i), s.feature) <= s.threshold ? li : ri).push_back(i);
    const int depth = node.depth;
    node.feature = s.feature;
    node.threshold = s.threshold;
    node.left = static_cast<int>(m.nodes.size());
    node.right = node.left + 1;
    m.nodes.push_back({-1, 0, -1, -1, {}, depth + 1});
    m.nodes.push_back({-1, 0, -1, -1, {}, depth + 1});
    const int l = m.nodes[static_cast<std::size_t>(w.node)].left;
    stack.push_back({l + 1, std::move(ri)});
    stack.push_back({l, std::move(li)});
  }
  return m;
}

inline int tree_depth(const TrainedModel& m) {
  int d = 0;
  for (const auto& n : m.nodes) d = std::max(d, n.depth);
  return d;
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

inline int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  return best;
}

inline std::vector<double> decision_scores(const TrainedModel& m, std::span<const double> row) {
  if (row.size() != m.n_features) throw ParameterError("row dimension does not match the model");
  std::vector<double> s(m.n_classes, 0.0);
  if (m.kind == ModelKind::decision_tree) {
    if (m.nodes.empty()) return s;
    const TreeNode* n = &m.nodes[0];
    while (n->feature >= 0) n = &m.nodes[static_cast<std::size_t>(row[static_cast<std::size_t>(n->feature)] <= n->threshold ? n->left : n->right)];
    return n->distribution;
  }
  for (std::size_t k = 0; k < m.n_classes; ++k) {
    double v = m.intercepts[k];
    for (std::size_t j = 0; j < m.n_features; ++j) v += m.weights(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) * row[j];
    s[k] = v;
  }
  return s;
}

inline int predict_row(const TrainedModel& m, std::span<const double> row) {
  const auto s = decision_scores(m, row);
  return argmax_lowest(s);
}

inline std::vector<int> predict(const TrainedModel& m, const Matrix& x) {
  if (static_cast<std::size_t>(x.cols()) != m.n_features) throw ParameterError("matrix width does not match the model");
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  if (m.kind != ModelKind::decision_tree) {
    Matrix s = x * m.weights.transpose();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      int best = 0;
      double bv = s(i, 0) + m.intercepts[0];
      for (std::size_t k = 1; k < m.n_classes; ++k) {
        const double v = s(i, static_cast<Eigen::Index>(k)) + m.intercepts[k];
        if (v > bv) bv = v, best = static_cast<int>(k);
      }
      out[static_cast<std::size_t>(i)] = best;
    }
    return out;
  }
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    out[static_cast<std::size_t>(i)] = predict_row(m, std::span<const double>(x.row(i).data(), m.n_features));
  return out;
}

// ---------------------------------------------------------------------------
// Feature importance
// ---------------------------------------------------------------------------

/// Linear kinds: max |coefficient| over heads. Tree: impurity decrease totals
/// normalized to sum 1 (all zero for a stump).
inline std::vector<double> feature_importance(const TrainedModel& m) {
  std::vector<double> imp(m.n_features, 0.0);
  if (m.kind != ModelKind::decision_tree) {
    for (std::size_t j = 0; j < m.n_features; ++j)
      for (std::size_t k = 0; k < m.n_classes; ++k)
        imp[j] = std::max(imp[j], std::abs(m.weights(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j))));
    return imp;
  }
  auto mass = [](const TreeNode& n) { return std::accumulate(n.distribution.begin(), n.distribution.end(), 0.0); };
  for (const auto& n : m.nodes) {
    if (n.feature < 0) continue;
    const auto& l = m.nodes[static_cast<std::size_t>(n.left)];
    const auto& r = m.nodes[static_cast<std::size_t>(n.right)];
    imp[static_cast<std::size_t>(n.feature)] += mass(n) * gini(n.distribution) - mass(l) * gini(l.distribution) - mass(r) * gini(r.distribution);
  }
  const double s = std::accumulate(imp.begin(), imp.end(), 0.0);
  if (s > 0)
    for (double& v : imp) v /= s;
  return imp;
}

inline std::vector<std::pair<std::string, double>> importance_report(const TrainedModel& m, const std::vector<std::string>& names) {
  const auto imp = feature_importance(m);
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t j = 0; j < imp.size(); ++j) out.emplace_back(j < names.size() ? names[j] : "f" + std::to_string(j), imp[j]);
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct Metrics {
  double accuracy = 0, precision_w = 0, recall_w = 0, f1_w = 0;
  std::vector<std::optional<double>> per_class_recall;  // missing when the class is absent from the truth
  std::vector<std::vector<std::size_t>> confusion;     // [truth][predicted]
  std::vector<std::string> warnings;
};

/// Support-weighted precision/recall/F1; a class never predicted gets
/// precision 0.
inline Metrics compute_metrics(const std::vector<int>& truth, const std::vector<int>& pred, std::size_t n_classes = kNumAamiClasses) {
  if (truth.empty()) throw ParameterError("evaluation set is empty");
  if (truth.size() != pred.size()) throw ParameterError("prediction count differs from truth count");
  Metrics r;
  r.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    r.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])] += 1;
    correct += truth[i] == pred[i];
  }
  const double n = static_cast<double>(truth.size());
  r.accuracy = static_cast<double>(correct) / n;
  r.per_class_recall.assign(n_classes, std::nullopt);
  for (std::size_t k = 0; k < n_classes; ++k) {
    double support = 0, predicted = 0;
    for (std::size_t j = 0; j < n_classes; ++j) support += static_cast<double>(r.confusion[k][j]), predicted += static_cast<double>(r.confusion[j][k]);
    if (support == 0) {
      if (predicted > 0) r.warnings.push_back(std::string("class ") + label_char(static_cast<AamiLabel>(k)) + " absent from test set");
      continue;
    }
    const double tp = static_cast<double>(r.confusion[k][k]);
    const double rec = tp / support, prec = predicted > 0 ? tp / predicted : 0.0;
    const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    r.per_class_recall[k] = rec;
    r.precision_w += support / n * prec;
    r.recall_w += support / n * rec;
    r.f1_w += support / n * f1;
  }
  return r;
}

inline constexpr double kEfficiencyEpsilon = 1e-6;

/// (0.6 F1 + 0.4 Acc) / (0.4 T_train[s] + 0.4 T_infer[ms/sample] + 0.2 S[KB] + eps).
inline double efficiency_score(double f1, double acc, double train_s, double infer_ms, double size_kb) {
  return (0.6 * f1 + 0.4 * acc) / (0.4 * train_s + 0.4 * infer_ms + 0.2 * size_kb + kEfficiencyEpsilon);
}

struct ConfidenceInterval {
  double mean = 0, std = 0, low = 0, high = 0, t_crit = 0;
};

/// mean +- t_{n-1,0.975} s / sqrt(n) with the sample standard deviation.
inline ConfidenceInterval t_confidence_interval(const std::vector<double>& scores, double level = 0.95) {
  if (scores.size() < 2) throw ParameterError("confidence interval needs at least 2 scores");
  ConfidenceInterval ci;
  ci.mean = stats::mean(scores);
  ci.std = stats::stddev(scores, 1);
  const boost::math::students_t dist(static_cast<double>(scores.size() - 1));
  ci.t_crit = boost::math::quantile(dist, 0.5 + level / 2);
  const double half = ci.t_crit * ci.std / std::sqrt(static_cast<double>(scores.size()));
  ci.low = ci.mean - half;
  ci.high = ci.mean + half;
  return ci;
}

/// Per-class shuffled round-robin fold assignment.
inline std::vector<int> stratified_folds(const std::vector<int>& y, int n_folds, std::uint64_t seed,
                                         std::size_t n_classes = kNumAamiClasses) {
  if (n_folds < 2) throw ParameterError("need at least 2 folds");
  std::vector<std::vector<std::size_t>> by(n_classes);
  for (std::size_t i = 0; i < y.size(); ++i) by[static_cast<std::size_t>(y[i])].push_back(i);
  for (std::size_t k = 0; k < n_classes; ++k)
    if (!by[k].empty() && by[k].size() < static_cast<std::size_t>(n_folds))
      throw ParameterError(std::string("class ") + label_char(static_cast<AamiLabel>(k)) + " has " + std::to_string(by[k].size()) +
                           " samples, fewer than " + std::to_string(n_folds) + " folds");
  std::mt19937_64 rng(seed);
  std::vector<int> fold(y.size(), 0);
  int offset = 0;
  for (auto& v : by) {
    std::shuffle(v.begin(), v.end(), rng);
    for (std::size_t m = 0; m < v.size(); ++m) fold[v[m]] = static_cast<int>((m + static_cast<std::size_t>(offset)) % static_cast<std::size_t>(n_folds));
    offset += static_cast<int>(v.size() % static_cast<std::size_t>(n_folds));
  }
  return fold;
}

/// Stratified holdout: per class, the first round(test_fraction * n_c) of a
/// shuffled order go to test. Returns (train, test) row indices, sorted.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(const std::vector<int>& y, double test_fraction,
                                                                                      std::uint64_t seed,
                                                                                      std::size_t n_classes = kNumAamiClasses) {
  if (!(test_fraction > 0 && test_fraction < 1)) throw ParameterError("test fraction must lie in (0, 1)");
  std::vector<std::vector<std::size_t>> by(n_classes);
  for (std::size_t i = 0; i < y.size(); ++i) by[static_cast<std::size_t>(y[i])].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train, test;
  for (auto& v : by) {
    std::shuffle(v.begin(), v.end(), rng);
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(v.size())));
    if (v.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, v.size() - 1);
    for (std::size_t m = 0; m < v.size(); ++m) (m < n_test ? test : train).push_back(v[m]);
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 4> kModelMagic{'E', 'C', 'G', 'M'};
inline constexpr std::uint16_t kModelFormatVersion = 1;
inline constexpr std::size_t kModelHeaderBytes = 16;

namespace detail {

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

template <class T>
T get_le(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw std::runtime_error("model binary is truncated");
  std::uint8_t b[sizeof(T)];
  std::memcpy(b, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  pos += sizeof(T);
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace detail

/// Header: magic(4) version u16, kind u8, reserved u8, n_features u32,
/// n_classes u32. Linear body: weights row-major then intercepts, float32.
/// Tree body: u32 node count, then per node i32 feature, f32 threshold,
/// i32 left, i32 right, n_classes f32 distribution.
inline std::vector<std::uint8_t> serialize(const TrainedModel& m) {
  std::vector<std::uint8_t> out(kModelMagic.begin(), kModelMagic.end());
  detail::put_le<std::uint16_t>(out, kModelFormatVersion);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(m.kind));
  detail::put_le<std::uint8_t>(out, 0);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.n_features));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.n_classes));
  if (m.kind == ModelKind::decision_tree) {
    if (m.nodes.empty()) return out;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.nodes.size()));
    for (const auto& n : m.nodes) {
      detail::put_le<std::int32_t>(out, n.feature);
      detail::put_le<float>(out, static_cast<float>(n.threshold));
      detail::put_le<std::int32_t>(out, n.left);
      detail::put_le<std::int32_t>(out, n.right);
      for (std::size_t k = 0; k < m.n_classes; ++k) detail::put_le<float>(out, static_cast<float>(n.distribution[k]));
    }
    return out;
  }
  for (std::size_t k = 0; k < m.n_classes; ++k)
    for (std::size_t j = 0; j < m.n_features; ++j)
      detail::put_le<float>(out, static_cast<float>(m.weights(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j))));
  for (std::size_t k = 0; k < m.n_classes; ++k) detail::put_le<float>(out, static_cast<float>(m.intercepts[k]));
  return out;
}

inline TrainedModel deserialize(const std::vector<std::uint8_t>& in) {
  if (in.size() < kModelHeaderBytes || !std::equal(kModelMagic.begin(), kModelMagic.end(), in.begin()))
    throw std::runtime_error("not a model binary");
  std::size_t pos = 4;
  if (detail::get_le<std::uint16_t>(in, pos) != kModelFormatVersion) throw std::runtime_error("unsupported model format version");
  TrainedModel m;
  m.kind = static_cast<ModelKind>(detail::get_le<std::uint8_t>(in, pos));
  detail::get_le<std::uint8_t>(in, pos);
  m.n_features = detail::get_le<std::uint32_t>(in, pos);
  m.n_classes = detail::get_le<std::uint32_t>(in, pos);
  if (m.kind == ModelKind::decision_tree) {
    if (pos == in.size()) return m;
    const auto count = detail::get_le<std::uint32_t>(in, pos);
    for (std::uint32_t i = 0; i < count; ++i) {
      TreeNode n;
      n.feature = detail::get_le<std::int32_t>(in, pos);
      n.threshold = detail::get_le<float>(in, pos);
      n.left = detail::get_le<std::int32_t>(in, pos);
      n.right = detail::get_le<std::int32_t>(in, pos);
      for (std::size_t k = 0; k < m.n_classes; ++k) n.distribution.push_back(detail::get_le<float>(in, pos));
      m.nodes.push_back(std::move(n));
    }
    for (std::size_t i = 0; i < m.nodes.size(); ++i)
      if (m.nodes[i].feature >= 0)
        for (int c : {m.nodes[i].left, m.nodes[i].right}) m.nodes[static_cast<std::size_t>(c)].depth = m.nodes[i].depth + 1;
    return m;
  }
  m.weights = Matrix::Zero(static_cast<Eigen::Index>(m.n_classes), static_cast<Eigen::Index>(m.n_features));
  for (std::size_t k = 0; k < m.n_classes; ++k)
    for (std::size_t j = 0; j < m.n_features; ++j)
      m.weights(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = detail::get_le<float>(in, pos);
  for (std::size_t k = 0; k < m.n_classes; ++k) m.intercepts.push_back(detail::get_le<float>(in, pos));
  return m;
}

inline std::size_t model_size_bytes(const TrainedModel& m) { return serialize(m).size(); }

inline nlohmann::json model_schema(const TrainedModel& m, const std::vector<std::string>& feature_names) {
  return {{"kind", kind_name(m.kind)},
          {"format_version", kModelFormatVersion},
          {"n_features", m.n_features},
          {"n_classes", m.n_classes},
          {"classes", {"N", "S", "V", "F", "Q"}},
          {"features", feature_names},
          {"class_weights", m.class_weights},
          {"hyperparams", m.hyperparams},
          {"converged", m.converged},
          {"dtype", "float32"},
          {"endianness", "little"}};
}

inline void save_model(const TrainedModel& m, const std::filesystem::path& bin, const std::vector<std::string>& feature_names) {
  const auto bytes = serialize(m);
  std::ofstream(bin, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  auto side = bin;
  side.replace_extension(".json");
  std::ofstream(side) << model_schema(m, feature_names).dump(1);
}

inline TrainedModel load_model(const std::filesystem::path& bin) {
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + bin.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

// ---------------------------------------------------------------------------
// Latency
// ---------------------------------------------------------------------------

struct Latency {
  double batch_ms_per_sample = 0;  // median over repeats of batch time / rows
  double single_row_ms = 0;        // median single-row prediction time
};

inline Latency time_inference(const TrainedModel& m, const Matrix& x, int repeats = 30) {
  if (x.rows() == 0) return {};
  using clock = std::chrono::steady_clock;
  repeats = std::max(repeats, 30);
  volatile int sink = 0;
  for (int w = 0; w < 3; ++w) sink = sink + predict(m, x).front();
  std::vector<double> batch, single;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = clock::now();
    const auto p = predict(m, x);
    const auto t1 = clock::now();
    sink = sink + p.front();
    batch.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count() / static_cast<double>(x.rows()));
    const auto row = static_cast<Eigen::Index>(r % x.rows());
    const auto t2 = clock::now();
    sink = sink + predict_row(m, std::span<const double>(x.row(row).data(), m.n_features));
    const auto t3 = clock::now();
    single.push_back(std::chrono::duration<double, std::milli>(t3 - t2).count());
  }
  return {stats::median(batch), stats::median(single)};
}

}  // namespace ecg::models
