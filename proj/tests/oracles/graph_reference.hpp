#pragma once

// Dense reference implementations of the beat-graph metrics.

#include <cmath>
#include <vector>

namespace oracle {

using Dense = std::vector<std::vector<double>>;

/// Solves (I - d M) pr = (1 - d) 1 by Gaussian elimination, where column j of
/// M is row j of `w` divided by its sum, or uniform when the row is empty.
inline std::vector<double> pagerank_dense(const Dense& w, double d) {
  const std::size_t n = w.size();
  Dense a(n, std::vector<double>(n + 1, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0;
    for (double v : w[j]) s += v;
    for (std::size_t i = 0; i < n; ++i) {
      const double m = s > 0 ? w[j][i] / s : 1.0 / static_cast<double>(n);
      a[i][j] -= d * m;
    }
  }
  for (std::size_t i = 0; i < n; ++i) a[i][i] += 1.0, a[i][n] = 1.0 - d;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k <= n; ++k) a[r][k] -= f * a[c][k];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = a[i][n] / a[i][i];
  return x;
}

/// Barrat coefficient by literal enumeration over all ordered (j, h) pairs of a
/// symmetric weight matrix.
inline std::vector<double> barrat_bruteforce(const Dense& w) {
  const std::size_t n = w.size();
  std::vector<double> c(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0, k = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && w[i][j] > 0) s += w[i][j], k += 1;
    if (k < 2) continue;
    double acc = 0;
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t h = 0; h < n; ++h) {
        if (j == i || h == i || j == h) continue;
        const double aij = w[i][j] > 0, aih = w[i][h] > 0, ajh = w[j][h] > 0;
        acc += 0.5 * (w[i][j] + w[i][h]) * aij * aih * ajh;
      }
    c[i] = acc / (s * (k - 1));
  }
  return c;
}

}  // namespace oracle
