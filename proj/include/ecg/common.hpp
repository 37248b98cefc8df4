#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace ecg {

using Signal = std::vector<double>;

/// Dense real matrix used for feature tables and model weights.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised when a caller violates an operation's documented precondition.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// AAMI EC57 beat classes, in canonical column/class-index order.
enum class AamiLabel : std::uint8_t { N = 0, S = 1, V = 2, F = 3, Q = 4 };

inline constexpr std::size_t kNumAamiClasses = 5;
inline constexpr std::array<AamiLabel, kNumAamiClasses> kAamiLabels{
    AamiLabel::N, AamiLabel::S, AamiLabel::V, AamiLabel::F, AamiLabel::Q};

inline constexpr int class_index(AamiLabel l) { return static_cast<int>(l); }

inline constexpr char label_char(AamiLabel l) {
  constexpr std::array<char, kNumAamiClasses> chars{'N', 'S', 'V', 'F', 'Q'};
  return chars[static_cast<std::size_t>(l)];
}

inline std::optional<AamiLabel> label_from_char(char c) {
  switch (c) {
    case 'N': return AamiLabel::N;
    case 'S': return AamiLabel::S;
    case 'V': return AamiLabel::V;
    case 'F': return AamiLabel::F;
    case 'Q': return AamiLabel::Q;
    default: return std::nullopt;
  }
}

namespace stats {

inline double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Sample variance with `ddof` delta degrees of freedom.
inline double variance(std::span<const double> x, int ddof = 1) {
  const auto n = static_cast<double>(x.size());
  if (n - ddof <= 0) return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / (n - ddof);
}

inline double stddev(std::span<const double> x, int ddof = 1) { return std::sqrt(variance(x, ddof)); }

/// Linear-interpolated quantile (the usual "type 7" definition).
inline double quantile(std::vector<double> x, double q) {
  if (x.empty()) throw ParameterError("quantile of empty sequence");
  std::sort(x.begin(), x.end());
  const double pos = q * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, x.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return x[lo] + frac * (x[hi] - x[lo]);
}

inline double median(std::vector<double> x) { return quantile(std::move(x), 0.5); }

/// Central moment of order k about the mean (population normalization).
inline double central_moment(std::span<const double> x, int k) {
  if (x.empty()) return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += std::pow(v - m, k);
  return s / static_cast<double>(x.size());
}

/// Moment-based excess kurtosis m4/m2^2 - 3; 0 for zero-variance input.
inline double excess_kurtosis(std::span<const double> x) {
  const double m2 = central_moment(x, 2);
  if (m2 <= 0.0) return 0.0;
  return central_moment(x, 4) / (m2 * m2) - 3.0;
}

inline double skewness(std::span<const double> x) {
  const double m2 = central_moment(x, 2);
  if (m2 <= 0.0) return 0.0;
  return central_moment(x, 3) / std::pow(m2, 1.5);
}

inline double shannon_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

}  // namespace stats

/// 64-bit FNV-1a, used for config and registry fingerprints.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

}  // namespace ecg
