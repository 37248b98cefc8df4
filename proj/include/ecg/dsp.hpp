#pragma once

// Signal-processing kernels shared by the detection, segmentation and
// feature stages.

#include <complex>
#include <map>
#include <mutex>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "ecg/common.hpp"

namespace ecg::dsp {

using cplx = std::complex<double>;

// ---------------------------------------------------------------------------
// Biquad cascades
// ---------------------------------------------------------------------------

struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0;
  double a0 = 1, a1 = 0, a2 = 0;

  cplx response(double omega) const {
    const cplx z1 = std::polar(1.0, -omega), z2 = z1 * z1;
    return (b0 + b1 * z1 + b2 * z2) / (a0 + a1 * z1 + a2 * z2);
  }

  /// Roots of a0 z^2 + a1 z + a2.
  std::array<cplx, 2> poles() const {
    const cplx disc = std::sqrt(cplx(a1 * a1 - 4 * a0 * a2));
    return {(-a1 + disc) / (2 * a0), (-a1 - disc) / (2 * a0)};
  }
};

struct BiquadCascade {
  std::vector<Biquad> sections;

  std::size_t order() const { return 2 * sections.size(); }

  cplx response(double freq_hz, double fs) const {
    const double omega = 2 * std::numbers::pi * freq_hz / fs;
    cplx h = 1.0;
    for (const auto& s : sections) h *= s.response(omega);
    return h;
  }

  double magnitude(double freq_hz, double fs) const { return std::abs(response(freq_hz, fs)); }

  double max_pole_modulus() const {
    double m = 0.0;
    for (const auto& s : sections)
      for (auto p : s.poles()) m = std::max(m, std::abs(p));
    return m;
  }

  /// Normalizes every section so a0 == 1.
  void normalize() {
    for (auto& s : sections) {
      if (s.a0 == 0.0) throw ParameterError("biquad section with a0 == 0");
      s.b0 /= s.a0, s.b1 /= s.a0, s.b2 /= s.a0, s.a1 /= s.a0, s.a2 /= s.a0;
      s.a0 = 1.0;
    }
  }
};

/// Butterworth bandpass: analog prototype of `order` poles, prewarped band
/// edges, lowpass-to-bandpass mapping, bilinear transform, one biquad per
/// conjugate pole pair. The result has `order` sections (2*order poles).
inline BiquadCascade design_butterworth_bandpass(int order, double f_low, double f_high, double fs) {
  if (order != 2 && order != 4 && order != 6 && order != 8)
    throw ParameterError("Butterworth order must be one of 2, 4, 6, 8");
  if (!(fs > 0) || !(f_low > 0) || !(f_low < f_high) || !(f_high < fs / 2))
    throw ParameterError("band edges must satisfy 0 < f_low < f_high < fs/2");

  const double fs2 = 2.0 * fs;
  const double w_lo = fs2 * std::tan(std::numbers::pi * f_low / fs);
  const double w_hi = fs2 * std::tan(std::numbers::pi * f_high / fs);
  const double bw = w_hi - w_lo;
  const double w0sq = w_lo * w_hi;

  std::vector<cplx> zpoles;
  for (int k = 0; k < order; ++k) {
    const cplx p = std::polar(1.0, std::numbers::pi * (2.0 * k + order + 1) / (2.0 * order));
    const cplx a = p * bw / 2.0;
    const cplx d = std::sqrt(a * a - w0sq);
    for (cplx s : {a + d, a - d}) {
      const cplx z = (fs2 + s) / (fs2 - s);
      if (z.imag() > 0) zpoles.push_back(z);
    }
  }
  if (zpoles.size() != static_cast<std::size_t>(order))
    throw ParameterError("band too wide for a complex-pole bandpass design");
  std::sort(zpoles.begin(), zpoles.end(), [](cplx x, cplx y) { return std::arg(x) < std::arg(y); });

  // Passband centre (geometric mean of the prewarped edges) mapped back to z.
  const double omega_c = 2.0 * std::atan(std::sqrt(w0sq) / fs2);
  BiquadCascade cascade;
  for (cplx z : zpoles) {
    Biquad s{1.0, 0.0, -1.0, 1.0, -2.0 * z.real(), std::norm(z)};
    const double g = std::abs(s.response(omega_c));
    s.b0 /= g;
    s.b2 /= g;
    cascade.sections.push_back(s);
  }
  if (cascade.max_pole_modulus() >= 1.0) throw ParameterError("unstable filter design");
  return cascade;
}

namespace detail {

// Transposed direct form II, state (z0, z1) per section.
inline void run_cascade(const BiquadCascade& c, std::vector<double>& x, std::vector<std::array<double, 2>> state) {
  for (std::size_t k = 0; k < c.sections.size(); ++k) {
    const auto& s = c.sections[k];
    double z0 = state[k][0], z1 = state[k][1];
    for (double& v : x) {
      const double in = v;
      const double y = s.b0 * in + z0;
      z0 = s.b1 * in - s.a1 * y + z1;
      z1 = s.b2 * in - s.a2 * y;
      v = y;
    }
  }
}

// Steady-state section states for a constant input of value 1 entering the cascade.
inline std::vector<std::array<double, 2>> step_state(const BiquadCascade& c) {
  std::vector<std::array<double, 2>> zi;
  double level = 1.0;
  for (const auto& s : c.sections) {
    const double g = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    const double y = g * level;
    const double z1 = s.b2 * level - s.a2 * y;
    const double z0 = s.b1 * level - s.a1 * y + z1;
    zi.push_back({z0, z1});
    level = y;
  }
  return zi;
}

}  // namespace detail

/// Single forward pass through the cascade with zero initial state.
inline Signal sosfilt(const BiquadCascade& cascade, std::span<const double> x) {
  Signal y(x.begin(), x.end());
  detail::run_cascade(cascade, y, std::vector<std::array<double, 2>>(cascade.sections.size(), {0.0, 0.0}));
  return y;
}

/// Zero-phase forward-backward filtering with odd reflection padding of
/// 3 * (filter order) samples and step-response initial conditions.
inline Signal filtfilt(const BiquadCascade& cascade, std::span<const double> x) {
  const std::size_t pad = 3 * cascade.order();
  if (x.size() <= pad)
    throw ParameterError("filtfilt needs more than " + std::to_string(pad) + " samples, got " +
                         std::to_string(x.size()));
  if (cascade.sections.empty()) return Signal(x.begin(), x.end());
  const std::size_t n = x.size();
  std::vector<double> ext(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) ext[i] = 2 * x[0] - x[pad - i];
  std::copy(x.begin(), x.end(), ext.begin() + static_cast<std::ptrdiff_t>(pad));
  for (std::size_t i = 0; i < pad; ++i) ext[pad + n + i] = 2 * x[n - 1] - x[n - 2 - i];

  const auto zi = detail::step_state(cascade);
  auto scaled = [&](double v) {
    auto z = zi;
    for (auto& s : z) s[0] *= v, s[1] *= v;
    return z;
  };
  detail::run_cascade(cascade, ext, scaled(ext.front()));
  std::reverse(ext.begin(), ext.end());
  detail::run_cascade(cascade, ext, scaled(ext.front()));
  std::reverse(ext.begin(), ext.end());
  return Signal(ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.begin() + static_cast<std::ptrdiff_t>(pad + n));
}

// ---------------------------------------------------------------------------
// Polyphase resampling
// ---------------------------------------------------------------------------

namespace detail {

inline std::pair<long, long> rational_ratio(double fs_out, double fs_in) {
  const double r = fs_out / fs_in;
  if (std::abs(fs_out - std::round(fs_out)) < 1e-9 && std::abs(fs_in - std::round(fs_in)) < 1e-9) {
    long up = std::lround(fs_out), down = std::lround(fs_in);
    const long g = std::gcd(up, down);
    return {up / g, down / g};
  }
  // Continued-fraction approximation with bounded denominator.
  long h0 = 0, h1 = 1, k0 = 1, k1 = 0;
  double v = r;
  for (int i = 0; i < 32; ++i) {
    const long a = static_cast<long>(std::floor(v));
    const long h2 = a * h1 + h0, k2 = a * k1 + k0;
    if (k2 > 1000) break;
    h0 = h1, h1 = h2, k0 = k1, k1 = k2;
    if (std::abs(v - a) < 1e-12) break;
    v = 1.0 / (v - a);
  }
  return {h1, k1};
}

// Kaiser-windowed sinc lowpass (beta 5, 10 zero crossings per side at the
// slower rate), unit DC gain scaled by `up`.
inline const std::vector<double>& polyphase_filter(long up, long down) {
  static std::mutex mu;
  static std::map<std::pair<long, long>, std::vector<double>> cache;
  std::lock_guard lock(mu);
  auto& h = cache[{up, down}];
  if (!h.empty()) return h;
  const long max_rate = std::max(up, down);
  const long half = 10 * max_rate;
  const std::size_t len = static_cast<std::size_t>(2 * half + 1);
  h.resize(len);
  const double beta = 5.0;
  const double i0b = std::cyl_bessel_i(0.0, beta);
  const double fc = 1.0 / static_cast<double>(max_rate);
  double sum = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    const double t = static_cast<double>(static_cast<long>(i) - half);
    const double arg = fc * t;
    const double sinc = arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
    const double r = t / static_cast<double>(half);
    const double w = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
    h[i] = fc * sinc * w;
    sum += h[i];
  }
  for (double& v : h) v *= static_cast<double>(up) / sum;
  return h;
}

inline Signal upfirdn_resample(std::span<const double> x, long up, long down, std::size_t n_out) {
  const auto& h = polyphase_filter(up, down);
  const long delay = static_cast<long>(h.size() - 1) / 2;
  const long n_in = static_cast<long>(x.size());
  const long taps = static_cast<long>(h.size());
  Signal y(n_out);
  for (std::size_t m = 0; m < n_out; ++m) {
    const long t = static_cast<long>(m) * down + delay;
    double acc = 0.0;
    for (long k = t % up; k < taps; k += up) {
      long idx = (t - k) / up;
      idx = std::clamp(idx, 0L, n_in - 1);
      acc += h[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(idx)];
    }
    y[m] = acc;
  }
  return y;
}

}  // namespace detail

/// Rational-rate resampling with an anti-aliasing filter at
/// min(fs_in, fs_out)/2. Output length round(len * fs_out / fs_in).
inline Signal resample_polyphase(std::span<const double> x, double fs_in, double fs_out) {
  if (x.empty()) throw ParameterError("cannot resample an empty signal");
  if (!(fs_in > 0) || !(fs_out > 0)) throw ParameterError("sampling rates must be positive");
  if (fs_in == fs_out) return Signal(x.begin(), x.end());
  const auto [up, down] = detail::rational_ratio(fs_out, fs_in);
  const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(x.size()) * fs_out / fs_in));
  return detail::upfirdn_resample(x, up, down, std::max<std::size_t>(n_out, 1));
}

/// Resamples a finite window to exactly `n_out` samples.
inline Signal resample_to_length(std::span<const double> x, std::size_t n_out) {
  if (x.empty() || n_out == 0) throw ParameterError("cannot resample an empty signal");
  if (x.size() == n_out) return Signal(x.begin(), x.end());
  long up = static_cast<long>(n_out), down = static_cast<long>(x.size());
  const long g = std::gcd(up, down);
  return detail::upfirdn_resample(x, up / g, down / g, n_out);
}

// ---------------------------------------------------------------------------
// Fourier transforms
// ---------------------------------------------------------------------------

namespace detail {

inline void fft_pow2(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1 : -1);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const cplx w = std::polar(1.0, ang * static_cast<double>(k));
        const cplx u = a[i + k], v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
  if (inverse)
    for (auto& v : a) v /= static_cast<double>(n);
}

}  // namespace detail

/// Forward DFT X(k) = sum_n x(n) exp(-j 2 pi k n / N) for any N
/// (radix-2 when N is a power of two, Bluestein otherwise).
inline std::vector<cplx> fft(std::vector<cplx> a) {
  const std::size_t n = a.size();
  if (n <= 1) return a;
  if ((n & (n - 1)) == 0) {
    detail::fft_pow2(a, false);
    return a;
  }
  std::size_t m = 1;
  while (m < 2 * n - 1) m <<= 1;
  std::vector<cplx> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the phase argument small and exact.
    const auto k2 = static_cast<double>((k * k) % (2 * n));
    chirp[k] = std::polar(1.0, -std::numbers::pi * k2 / static_cast<double>(n));
  }
  std::vector<cplx> fa(m), fb(m);
  for (std::size_t k = 0; k < n; ++k) fa[k] = a[k] * chirp[k];
  fb[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) fb[k] = fb[m - k] = std::conj(chirp[k]);
  detail::fft_pow2(fa, false);
  detail::fft_pow2(fb, false);
  for (std::size_t i = 0; i < m; ++i) fa[i] *= fb[i];
  detail::fft_pow2(fa, true);
  for (std::size_t k = 0; k < n; ++k) a[k] = fa[k] * chirp[k];
  return a;
}

inline std::vector<cplx> fft(std::span<const double> x) {
  return fft(std::vector<cplx>(x.begin(), x.end()));
}

/// |X(k)| for k = 0..N-1.
inline std::vector<double> dft_magnitudes(std::span<const double> x) {
  if (x.size() < 2) throw ParameterError("DFT needs at least 2 samples");
  const auto X = fft(x);
  std::vector<double> mag(X.size());
  std::transform(X.begin(), X.end(), mag.begin(), [](cplx v) { return std::abs(v); });
  return mag;
}

// ---------------------------------------------------------------------------
// Welch power spectral density
// ---------------------------------------------------------------------------

struct PsdEstimate {
  std::vector<double> freqs;
  std::vector<double> power;
  std::size_t n_segments = 0;
  std::size_t window_length = 0;

  /// Rectangle-rule integral of the density over [f_lo, f_hi).
  double band_power(double f_lo, double f_hi) const {
    if (freqs.size() < 2) return 0.0;
    const double df = freqs[1] - freqs[0];
    double p = 0.0;
    for (std::size_t i = 0; i < freqs.size(); ++i)
      if (freqs[i] >= f_lo && freqs[i] < f_hi) p += power[i];
    return p * df;
  }
};

inline std::vector<double> hann_periodic(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

/// Averaged Hann-windowed periodograms, one-sided density scaling, each
/// segment mean-detrended.
inline PsdEstimate welch_psd(std::span<const double> x, double fs, std::size_t window_length, double overlap) {
  if (window_length < 2 || window_length > x.size())
    throw ParameterError("Welch window must fit at least one full segment");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ParameterError("overlap must lie in [0, 1)");
  if (!(fs > 0)) throw ParameterError("fs must be positive");
  const std::size_t L = window_length;
  const auto noverlap = static_cast<std::size_t>(std::floor(overlap * static_cast<double>(L)));
  const std::size_t step = std::max<std::size_t>(1, L - noverlap);
  const auto w = hann_periodic(L);
  double wss = 0.0;
  for (double v : w) wss += v * v;
  const double scale = 1.0 / (fs * wss);

  const std::size_t nbins = L / 2 + 1;
  PsdEstimate est;
  est.window_length = L;
  est.power.assign(nbins, 0.0);
  for (std::size_t i = 0; i < nbins; ++i) est.freqs.push_back(static_cast<double>(i) * fs / static_cast<double>(L));

  std::vector<double> seg(L);
  for (std::size_t start = 0; start + L <= x.size(); start += step) {
    const double m = stats::mean(x.subspan(start, L));
    for (std::size_t i = 0; i < L; ++i) seg[i] = (x[start + i] - m) * w[i];
    const auto X = fft(seg);
    for (std::size_t k = 0; k < nbins; ++k) {
      double p = std::norm(X[k]) * scale;
      const bool unpaired = k == 0 || (L % 2 == 0 && k == L / 2);
      if (!unpaired) p *= 2.0;
      est.power[k] += p;
    }
    ++est.n_segments;
  }
  for (double& p : est.power) p /= static_cast<double>(est.n_segments);
  return est;
}

// ---------------------------------------------------------------------------
// Continuous wavelet transform (Mexican hat)
// ---------------------------------------------------------------------------

/// Sampled Mexican-hat kernel of width `scale` samples, unit L2 norm,
/// support +/- ceil(5 * scale).
inline std::vector<double> mexican_hat_kernel(double scale) {
  if (!(scale > 0)) throw ParameterError("wavelet scale must be positive");
  const auto half = static_cast<long>(std::ceil(5.0 * scale));
  std::vector<double> k(static_cast<std::size_t>(2 * half + 1));
  double norm = 0.0;
  for (long i = -half; i <= half; ++i) {
    const double t = static_cast<double>(i) / scale;
    const double v = (1.0 - t * t) * std::exp(-0.5 * t * t);
    k[static_cast<std::size_t>(i + half)] = v;
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (double& v : k) v /= norm;
  return k;
}

/// Centred ("same") convolution with each scaled kernel; zero outside the
/// signal. Row s of the result corresponds to scales[s].
inline std::vector<Signal> cwt_mexican_hat(std::span<const double> x, std::span<const double> scales) {
  std::vector<Signal> rows;
  rows.reserve(scales.size());
  const long n = static_cast<long>(x.size());
  for (double s : scales) {
    const auto k = mexican_hat_kernel(s);
    const long half = static_cast<long>(k.size() / 2);
    Signal row(x.size(), 0.0);
    for (long i = 0; i < n; ++i) {
      const long lo = std::max(-half, i - (n - 1)), hi = std::min(half, i);
      double acc = 0.0;
      // Symmetric kernel: convolution equals correlation.
      for (long j = lo; j <= hi; ++j) acc += k[static_cast<std::size_t>(j + half)] * x[static_cast<std::size_t>(i - j)];
      row[static_cast<std::size_t>(i)] = acc;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Daubechies wavelet packets
// ---------------------------------------------------------------------------

/// Orthonormal Daubechies scaling filter with `order` vanishing moments
/// (db1..db4).
inline std::vector<double> daubechies_lowpass(int order) {
  switch (order) {
    case 1: return {0.7071067811865476, 0.7071067811865476};
    case 2: return {0.48296291314469025, 0.836516303737469, 0.22414386804185735, -0.12940952255092145};
    case 3:
      return {0.3326705529509569,   0.8068915093133388,   0.4598775021193313,
              -0.13501102001039084, -0.08544127388224149, 0.035226291882100656};
    case 4:
      return {0.23037781330885523, 0.7148465705525415,   0.6308807679295904,  -0.02798376941698385,
              -0.18703481171888114, 0.030841381835986965, 0.032883011666982945, -0.010597401784997278};
    default: throw ParameterError("supported Daubechies orders are 1..4");
  }
}

struct WaveletPacketResult {
  std::vector<double> energies;  // frequency-ordered leaves, normalized to sum 1
  double leaf_energy = 0.0;      // pre-normalization leaf sum
  double input_energy = 0.0;
  bool degenerate = false;  // zero input: all-zero energies
};

namespace detail {

// One periodized analysis step: approximation and detail halves.
inline std::pair<Signal, Signal> dwt_step(const Signal& x, const std::vector<double>& lo) {
  const std::size_t n = x.size(), L = lo.size(), half = n / 2;
  Signal a(half, 0.0), d(half, 0.0);
  for (std::size_t k = 0; k < half; ++k) {
    double sa = 0.0, sd = 0.0;
    for (std::size_t m = 0; m < L; ++m) {
      const double v = x[(2 * k + m) % n];
      sa += lo[m] * v;
      const double hi = ((m & 1) ? -1.0 : 1.0) * lo[L - 1 - m];
      sd += hi * v;
    }
    a[k] = sa;
    d[k] = sd;
  }
  return {std::move(a), std::move(d)};
}

}  // namespace detail

/// Full packet tree to depth `levels` with periodized orthonormal Daubechies
/// filters. The input is zero-padded to a multiple of 2^levels, which keeps
/// the transform energy-preserving.
inline WaveletPacketResult wavelet_packet_energies(std::span<const double> x, int wavelet_order, int levels) {
  if (levels < 1 || levels > 10) throw ParameterError("packet depth must be in 1..10");
  const auto lo = daubechies_lowpass(wavelet_order);
  const std::size_t leaves = std::size_t{1} << levels;
  if (x.size() < lo.size() * leaves)
    throw ParameterError("signal too short for wavelet packet depth: need " + std::to_string(lo.size() * leaves) +
                         " samples, got " + std::to_string(x.size()));
  Signal padded(x.begin(), x.end());
  padded.resize((x.size() + leaves - 1) / leaves * leaves, 0.0);

  std::vector<Signal> nodes{padded};
  for (int l = 0; l < levels; ++l) {
    std::vector<Signal> next;
    next.reserve(nodes.size() * 2);
    for (const auto& node : nodes) {
      auto [a, d] = detail::dwt_step(node, lo);
      next.push_back(std::move(a));
      next.push_back(std::move(d));
    }
    nodes = std::move(next);
  }

  WaveletPacketResult r;
  for (double v : x) r.input_energy += v * v;
  std::vector<double> natural(leaves);
  for (std::size_t i = 0; i < leaves; ++i) {
    double e = 0.0;
    for (double v : nodes[i]) e += v * v;
    natural[i] = e;
    r.leaf_energy += e;
  }
  r.energies.assign(leaves, 0.0);
  if (r.leaf_energy <= 0.0) {
    r.degenerate = true;
    return r;
  }
  // High-pass branches mirror the spectrum; Gray-code order gives frequency order.
  for (std::size_t f = 0; f < leaves; ++f) r.energies[f] = natural[f ^ (f >> 1)] / r.leaf_energy;
  return r;
}

}  // namespace ecg::dsp
