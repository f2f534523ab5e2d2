#pragma once

// Empirical Mode Decomposition and CEEMDAN over Eigen column vectors.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include <spdlog/spdlog.h>

#include "pvf/error.hpp"

namespace pvf::emd {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct SiftConfig {
  int max_iterations = 100;
  /// Cauchy-type stop: sum (h_prev - h)^2 / sum h_prev^2 below this value.
  double sd_threshold = 0.2;
  /// Extrema mirrored beyond each end of the signal before spline fitting.
  int boundary_extrema = 2;
};

enum class NoiseMode {
  /// Stage k perturbs the shared residual with the k-th EMD mode of each
  /// white-noise realization (scaled by eps * std(residual)); stage 1 uses
  /// eps * std(x) * w_i directly.
  NoiseModes,
  /// Fresh eps * std(x) * w_{i,k} white noise at every stage on per-realization
  /// residuals. Needs a stage cap to terminate; see `CeemdanConfig::max_imfs`.
  FreshWhite,
};

struct CeemdanConfig {
  std::size_t ensemble_size = 50;
  double noise_factor = 0.2;
  SiftConfig sift{};
  std::uint64_t seed = 0;
  /// 0 means "until the residual is no longer decomposable". FreshWhite mode
  /// with noise falls back to floor(log2(n)) when this is 0.
  std::size_t max_imfs = 0;
  NoiseMode noise_mode = NoiseMode::NoiseModes;
  /// Worker threads for the ensemble; 0 picks hardware concurrency.
  unsigned threads = 0;
};

template <typename Scalar>
struct Imf {
  Vector<Scalar> values;
  /// 1-based mode number.
  std::size_t index = 0;
};

template <typename Scalar>
struct DecompositionResult {
  std::vector<Imf<Scalar>> imfs;
  Vector<Scalar> residual;
  CeemdanConfig config{};

  std::size_t size() const { return imfs.size(); }

  /// Sum of all modes (ascending index) plus the residual.
  Vector<Scalar> reconstruct() const {
    Vector<Scalar> sum = Vector<Scalar>::Zero(residual.size());
    for (const auto& m : imfs) sum += m.values;
    return sum + residual;
  }
};

struct Extrema {
  std::vector<Eigen::Index> maxima;
  std::vector<Eigen::Index> minima;
};

/// Interior local extrema. A flat run counts once (at its centre) and only
/// when both neighbours lie on the same side of it.
template <typename Derived>
Extrema find_extrema(const Eigen::MatrixBase<Derived>& x) {
  Extrema out;
  const Eigen::Index n = x.size();
  Eigen::Index i = 1;
  while (i < n - 1) {
    Eigen::Index j = i;
    while (j + 1 < n - 1 && x[j + 1] == x[i]) ++j;
    if (j + 1 < n) {
      const auto left = x[i - 1], here = x[i], right = x[j + 1];
      if (here > left && here > right) out.maxima.push_back((i + j) / 2);
      else if (here < left && here < right) out.minima.push_back((i + j) / 2);
    }
    i = j + 1;
  }
  return out;
}

template <typename Derived>
std::size_t count_zero_crossings(const Eigen::MatrixBase<Derived>& x) {
  std::size_t count = 0;
  int last = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const int s = (x[i] > 0) - (x[i] < 0);
    if (s == 0) continue;
    if (last != 0 && s != last) ++count;
    last = s;
  }
  return count;
}

/// Extrema count and zero-crossing count differ by at most one.
template <typename Derived>
bool satisfies_imf_condition(const Eigen::MatrixBase<Derived>& x) {
  const Extrema e = find_extrema(x);
  const auto n_ext = static_cast<long>(e.maxima.size() + e.minima.size());
  const auto n_zc = static_cast<long>(count_zero_crossings(x));
  return std::abs(n_ext - n_zc) <= 1;
}

/// At least two maxima and two minima.
template <typename Derived>
bool is_decomposable(const Eigen::MatrixBase<Derived>& x) {
  if (x.size() < 4) return false;
  const Extrema e = find_extrema(x);
  return e.maxima.size() >= 2 && e.minima.size() >= 2;
}

/// Natural cubic spline through (knot_x, knot_y), evaluated at 0, 1, ..., n-1.
/// Knots must be strictly increasing and bracket [0, n-1].
template <typename Scalar>
Vector<Scalar> natural_cubic_spline(const std::vector<Scalar>& kx, const std::vector<Scalar>& ky, Eigen::Index n) {
  const std::size_t m = kx.size();
  require(m >= 2 && ky.size() == m, "spline: need at least two knots");
  Vector<Scalar> out(n);
  if (m == 2) {
    for (Eigen::Index t = 0; t < n; ++t) {
      const Scalar u = (Scalar(t) - kx[0]) / (kx[1] - kx[0]);
      out[t] = ky[0] + u * (ky[1] - ky[0]);
    }
    return out;
  }
  // Second derivatives via the Thomas algorithm, natural end conditions.
  std::vector<Scalar> h(m - 1), second(m, Scalar(0)), c(m, Scalar(0)), d(m, Scalar(0));
  for (std::size_t i = 0; i + 1 < m; ++i) h[i] = kx[i + 1] - kx[i];
  for (std::size_t i = 1; i + 1 < m; ++i) {
    const Scalar a = h[i - 1];
    const Scalar b = Scalar(2) * (h[i - 1] + h[i]);
    const Scalar cc = h[i];
    const Scalar rhs = Scalar(6) * ((ky[i + 1] - ky[i]) / h[i] - (ky[i] - ky[i - 1]) / h[i - 1]);
    const Scalar denom = b - a * c[i - 1];
    c[i] = cc / denom;
    d[i] = (rhs - a * d[i - 1]) / denom;
  }
  for (std::size_t i = m - 2; i >= 1; --i) {
    second[i] = d[i] - c[i] * second[i + 1];
    if (i == 1) break;
  }

  std::size_t seg = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const Scalar xt = Scalar(t);
    while (seg + 2 < m && xt > kx[seg + 1]) ++seg;
    const Scalar hi = h[seg];
    const Scalar a = (kx[seg + 1] - xt) / hi;
    const Scalar b = (xt - kx[seg]) / hi;
    out[t] = a * ky[seg] + b * ky[seg + 1] +
             ((a * a * a - a) * second[seg] + (b * b * b - b) * second[seg + 1]) * hi * hi / Scalar(6);
  }
  return out;
}

/// Spline envelope through the given extrema, with `mirror` extrema reflected
/// about each end sample.
template <typename Derived>
Vector<typename Derived::Scalar> envelope(const Eigen::MatrixBase<Derived>& x, const std::vector<Eigen::Index>& idx,
                                          int mirror) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = x.size();
  const auto last = static_cast<Scalar>(n - 1);
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(mirror), idx.size());
  std::vector<Scalar> kx, ky;
  kx.reserve(idx.size() + 2 * k);
  ky.reserve(idx.size() + 2 * k);
  for (std::size_t j = k; j-- > 0;) {
    kx.push_back(-static_cast<Scalar>(idx[j]));
    ky.push_back(x[idx[j]]);
  }
  for (Eigen::Index i : idx) {
    kx.push_back(static_cast<Scalar>(i));
    ky.push_back(x[i]);
  }
  for (std::size_t j = 0; j < k; ++j) {
    const Eigen::Index i = idx[idx.size() - 1 - j];
    kx.push_back(Scalar(2) * last - static_cast<Scalar>(i));
    ky.push_back(x[i]);
  }
  return natural_cubic_spline(kx, ky, n);
}

template <typename Scalar>
struct SiftResult {
  /// Empty when the input had too few extrema to extract a mode.
  std::optional<Vector<Scalar>> imf;
  Vector<Scalar> remainder;
  int iterations = 0;
};

/// Extracts the highest-frequency intrinsic mode by repeated envelope-mean subtraction.
template <typename Derived>
SiftResult<typename Derived::Scalar> sift(const Eigen::MatrixBase<Derived>& signal, const SiftConfig& cfg = {}) {
  using Scalar = typename Derived::Scalar;
  SiftResult<Scalar> out;
  Vector<Scalar> h = signal;
  if (!is_decomposable(h)) {
    out.remainder = h;
    return out;
  }
  for (int it = 0; it < cfg.max_iterations; ++it) {
    const Extrema e = find_extrema(h);
    if (e.maxima.size() < 2 || e.minima.size() < 2) break;
    const Vector<Scalar> upper = envelope(h, e.maxima, cfg.boundary_extrema);
    const Vector<Scalar> lower = envelope(h, e.minima, cfg.boundary_extrema);
    Vector<Scalar> next = h - (upper + lower) / Scalar(2);
    const Scalar denom = h.squaredNorm();
    const Scalar sd = denom > Scalar(0) ? (h - next).squaredNorm() / denom : Scalar(0);
    h = std::move(next);
    out.iterations = it + 1;
    if (sd < static_cast<Scalar>(cfg.sd_threshold) && satisfies_imf_condition(h)) break;
  }
  out.remainder = signal - h;
  out.imf = std::move(h);
  return out;
}

/// Plain EMD: sift successive remainders until the remainder has fewer than
/// two maxima or two minima.
template <typename Derived>
DecompositionResult<typename Derived::Scalar> emd(const Eigen::MatrixBase<Derived>& signal, const SiftConfig& cfg = {},
                                                  std::size_t max_imfs = 0) {
  using Scalar = typename Derived::Scalar;
  require(signal.allFinite(), "emd: signal contains missing or non-finite values");
  DecompositionResult<Scalar> result;
  result.config.sift = cfg;
  result.config.ensemble_size = 1;
  result.config.noise_factor = 0.0;
  result.config.max_imfs = max_imfs;
  Vector<Scalar> r = signal;
  while (max_imfs == 0 || result.imfs.size() < max_imfs) {
    SiftResult<Scalar> s = sift(r, cfg);
    if (!s.imf) break;
    r -= *s.imf;
    result.imfs.push_back({std::move(*s.imf), result.imfs.size() + 1});
  }
  result.residual = std::move(r);
  return result;
}

namespace detail {

inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t realization, std::uint64_t stage) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(realization), static_cast<std::uint32_t>(realization >> 32),
                    static_cast<std::uint32_t>(stage), 0x5eedu};
  return std::mt19937_64(seq);
}

template <typename Scalar>
Vector<Scalar> white_noise(Eigen::Index n, std::uint64_t seed, std::uint64_t realization, std::uint64_t stage) {
  auto rng = stream_rng(seed, realization, stage);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector<Scalar> w(n);
  for (Eigen::Index t = 0; t < n; ++t) w[t] = static_cast<Scalar>(normal(rng));
  return w;
}

template <typename Scalar>
Scalar population_std(const Vector<Scalar>& x) {
  return std::sqrt((x.array() - x.mean()).square().mean());
}

/// Runs fn(i) for i in [0, count) on up to `threads` workers.
template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  for (unsigned w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += threads) fn(i);
    });
}

}  // namespace detail

/// Standard Gaussian white noise scaled by eps * std(x); deterministic per
/// (seed, realization, stage).
template <typename Derived>
Vector<typename Derived::Scalar> adaptive_noise(const Eigen::MatrixBase<Derived>& x, std::size_t realization,
                                                double eps, std::uint64_t seed, std::size_t stage = 0) {
  using Scalar = typename Derived::Scalar;
  require(eps >= 0.0, "adaptive_noise: noise factor must be non-negative");
  Vector<Scalar> noise = Vector<Scalar>::Zero(x.size());
  if (eps == 0.0) return noise;
  const Scalar sigma = detail::population_std(Vector<Scalar>(x));
  if (!(sigma > Scalar(0))) {
    spdlog::warn("adaptive_noise: constant signal, noise amplitude is zero");
    return noise;
  }
  return static_cast<Scalar>(eps) * sigma * detail::white_noise<Scalar>(x.size(), seed, realization, stage);
}

namespace detail {

template <typename Scalar>
DecompositionResult<Scalar> ceemdan_noise_modes(const Vector<Scalar>& x, const CeemdanConfig& cfg) {
  const std::size_t N = cfg.ensemble_size;
  const Eigen::Index n = x.size();
  const bool noisy = cfg.noise_factor > 0.0;

  // EMD modes of each unit white-noise realization, computed once.
  std::vector<DecompositionResult<Scalar>> noise_modes(noisy ? N : 0);
  if (noisy) {
    parallel_for(N, cfg.threads, [&](std::size_t i) {
      Vector<Scalar> w = white_noise<Scalar>(n, cfg.seed, i, 0);
      noise_modes[i] = emd(w, cfg.sift);
      noise_modes[i].residual = std::move(w);  // stage-1 perturbation is the raw noise
    });
  }
  const Scalar sigma_x = population_std(x);

  DecompositionResult<Scalar> result;
  result.config = cfg;
  Vector<Scalar> r = x;
  std::vector<std::optional<Vector<Scalar>>> extracted(N);
  while (cfg.max_imfs == 0 || result.imfs.size() < cfg.max_imfs) {
    if (!is_decomposable(r)) break;
    const std::size_t k = result.imfs.size();  // 0-based stage
    const Scalar beta = static_cast<Scalar>(cfg.noise_factor) * (k == 0 ? sigma_x : population_std(r));
    parallel_for(N, cfg.threads, [&](std::size_t i) {
      Vector<Scalar> xk = r;
      if (noisy) {
        const auto& nm = noise_modes[i];
        if (k == 0) xk += beta * nm.residual;
        else if (k - 1 < nm.imfs.size()) xk += beta * nm.imfs[k - 1].values;
      }
      extracted[i] = sift(xk, cfg.sift).imf;
    });
    Vector<Scalar> sum = Vector<Scalar>::Zero(n);
    bool any = false;
    for (std::size_t i = 0; i < N; ++i) {
      if (!extracted[i]) continue;
      sum += *extracted[i];
      any = true;
    }
    if (!any) break;
    Vector<Scalar> mode = sum / static_cast<Scalar>(N);
    r -= mode;
    result.imfs.push_back({std::move(mode), k + 1});
  }
  result.residual = std::move(r);
  return result;
}

template <typename Scalar>
DecompositionResult<Scalar> ceemdan_fresh_white(const Vector<Scalar>& x, const CeemdanConfig& cfg) {
  const std::size_t N = cfg.ensemble_size;
  const Eigen::Index n = x.size();
  std::size_t cap = cfg.max_imfs;
  if (cap == 0 && cfg.noise_factor > 0.0) cap = static_cast<std::size_t>(std::floor(std::log2(static_cast<double>(std::max<Eigen::Index>(n, 2)))));

  std::vector<Vector<Scalar>> residuals(N, x);
  std::vector<bool> active(N, true);
  std::vector<std::optional<Vector<Scalar>>> extracted(N);
  DecompositionResult<Scalar> result;
  result.config = cfg;

  auto mean_residual = [&] {
    Vector<Scalar> avg = Vector<Scalar>::Zero(n);
    for (const auto& r : residuals) avg += r;
    return Vector<Scalar>(avg / static_cast<Scalar>(N));
  };

  while (cap == 0 || result.imfs.size() < cap) {
    if (!is_decomposable(mean_residual())) break;
    const std::size_t k = result.imfs.size();
    parallel_for(N, cfg.threads, [&](std::size_t i) {
      extracted[i].reset();
      if (!active[i]) return;
      if (!is_decomposable(residuals[i])) {
        active[i] = false;
        return;
      }
      const Vector<Scalar> xk = residuals[i] + adaptive_noise(x, i, cfg.noise_factor, cfg.seed, k + 1);
      extracted[i] = sift(xk, cfg.sift).imf;
      if (!extracted[i]) active[i] = false;
    });
    Vector<Scalar> sum = Vector<Scalar>::Zero(n);
    bool any = false;
    for (std::size_t i = 0; i < N; ++i) {
      if (!extracted[i]) continue;
      residuals[i] -= *extracted[i];
      sum += *extracted[i];
      any = true;
    }
    if (!any) break;
    result.imfs.push_back({Vector<Scalar>(sum / static_cast<Scalar>(N)), k + 1});
  }
  result.residual = mean_residual();
  return result;
}

}  // namespace detail

/// Complete ensemble EMD with adaptive noise.
///
/// Each stage extracts the ensemble average of the first mode of the noisy
/// residual and subtracts it, so the modes plus the final residual telescope
/// back to the input. With ensemble_size 1 and noise_factor 0 the result is
/// bitwise identical to `emd`.
template <typename Derived>
DecompositionResult<typename Derived::Scalar> ceemdan(const Eigen::MatrixBase<Derived>& signal,
                                                      const CeemdanConfig& cfg = {}) {
  using Scalar = typename Derived::Scalar;
  require(cfg.ensemble_size >= 1, "ceemdan: ensemble size must be >= 1");
  require(cfg.noise_factor >= 0.0, "ceemdan: noise factor must be >= 0");
  require(signal.allFinite(), "ceemdan: signal contains missing or non-finite values; repair it first");
  const Vector<Scalar> x = signal;
  if (cfg.noise_mode == NoiseMode::FreshWhite) return detail::ceemdan_fresh_white(x, cfg);
  return detail::ceemdan_noise_modes(x, cfg);
}

}  // namespace pvf::emd
