#pragma once

// Spectral profiling of IMFs and frequency-threshold reconstruction into
// high- and low-frequency components.

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>
#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <vector>

#include "pvf/emd.hpp"
#include "pvf/error.hpp"

namespace pvf::spectral {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// 1 / (4 h) in Hz: oscillations faster than a four-hour period count as high frequency.
inline constexpr double kDefaultHighThresholdHz = 1.0 / (4.0 * 60.0 * 60.0);

/// Sampling frequency of 5-minute data.
inline constexpr double kFiveMinuteHz = 1.0 / 300.0;

/// Positive-frequency power spectrum, bins m = 1 .. floor(N/2).
template <typename Scalar>
struct Spectrum {
  Vector<Scalar> freqs;
  Vector<Scalar> psd;
  Scalar fs = Scalar(1);
};

/// |X(k)|^2 for all N DFT bins.
template <typename Derived>
Vector<typename Derived::Scalar> power_spectrum(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  Eigen::FFT<Scalar> fft;
  std::vector<Scalar> in(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) in[static_cast<std::size_t>(i)] = x[i];
  std::vector<std::complex<Scalar>> out;
  fft.fwd(out, in);
  Vector<Scalar> s(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) s[k] = std::norm(out[static_cast<std::size_t>(k)]);
  return s;
}

template <typename Derived>
Spectrum<typename Derived::Scalar> fft_psd(const Eigen::MatrixBase<Derived>& x, typename Derived::Scalar fs) {
  using Scalar = typename Derived::Scalar;
  require(x.size() >= 4, "fft_psd: need at least 4 samples");
  require(fs > Scalar(0), "fft_psd: sampling frequency must be positive");
  const Vector<Scalar> full = power_spectrum(Vector<Scalar>(x));
  const Eigen::Index n = x.size();
  const Eigen::Index half = n / 2;
  Spectrum<Scalar> s;
  s.fs = fs;
  s.psd = full.segment(1, half);
  s.freqs.resize(half);
  for (Eigen::Index m = 1; m <= half; ++m) s.freqs[m - 1] = static_cast<Scalar>(m) * fs / static_cast<Scalar>(n);
  return s;
}

/// Frequency of the largest positive-frequency bin; lowest bin wins ties.
/// Empty for an all-zero spectrum.
template <typename Scalar>
std::optional<Scalar> dominant_frequency(const Spectrum<Scalar>& s) {
  if (s.psd.size() == 0 || !(s.psd.maxCoeff() > Scalar(0))) return std::nullopt;
  Eigen::Index best = 0;
  for (Eigen::Index m = 1; m < s.psd.size(); ++m)
    if (s.psd[m] > s.psd[best]) best = m;
  return s.freqs[best];
}

/// Power-weighted mean frequency. Empty when total power is zero.
template <typename Scalar>
std::optional<Scalar> frequency_centroid(const Spectrum<Scalar>& s) {
  const Scalar total = s.psd.sum();
  if (!(total > Scalar(0))) return std::nullopt;
  return s.freqs.dot(s.psd) / total;
}

/// Replaces the dominant frequency with the centroid when they differ by
/// more than 10%; the 0.9 and 1.1 boundaries keep the dominant frequency.
template <typename Scalar>
Scalar resolve_dominant(Scalar f_dom, Scalar f_cen) {
  require(std::isfinite(static_cast<double>(f_dom)) && std::isfinite(static_cast<double>(f_cen)) && f_dom >= 0 &&
              f_cen >= 0,
          "resolve_dominant: frequencies must be finite and non-negative");
  if (f_cen < Scalar(0.9) * f_dom || f_cen > Scalar(1.1) * f_dom) return f_cen;
  return f_dom;
}

enum class Group { High, Low };

inline const char* to_string(Group g) { return g == Group::High ? "high" : "low"; }

template <typename Scalar>
struct FrequencyProfile {
  Scalar f_dom = 0;
  Scalar f_cen = 0;
  Scalar f_dominant = 0;
  Group group = Group::Low;
  /// No spectral energy outside DC; frequencies are reported as 0.
  bool zero_energy = false;
};

/// Strictly above the threshold is High; equal or below is Low.
template <typename Scalar>
Group classify(Scalar f_dominant, Scalar f_high) {
  return f_dominant > f_high ? Group::High : Group::Low;
}

template <typename Derived>
FrequencyProfile<typename Derived::Scalar> profile(const Eigen::MatrixBase<Derived>& imf, typename Derived::Scalar fs,
                                                   typename Derived::Scalar f_high) {
  using Scalar = typename Derived::Scalar;
  const Spectrum<Scalar> s = fft_psd(imf, fs);
  FrequencyProfile<Scalar> p;
  const auto dom = dominant_frequency(s);
  const auto cen = frequency_centroid(s);
  if (!dom || !cen) {
    p.zero_energy = true;
    return p;
  }
  p.f_dom = *dom;
  p.f_cen = *cen;
  p.f_dominant = resolve_dominant(p.f_dom, p.f_cen);
  p.group = classify(p.f_dominant, f_high);
  return p;
}

/// 1-based IMF index sets.
struct Grouping {
  std::vector<std::size_t> high;
  std::vector<std::size_t> low;
};

template <typename Scalar>
Grouping group_imfs(const std::vector<FrequencyProfile<Scalar>>& profiles, Scalar f_high) {
  require(f_high > Scalar(0), "group_imfs: threshold frequency must be positive");
  Grouping g;
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    const auto& p = profiles[i];
    const bool high = !p.zero_energy && classify(p.f_dominant, f_high) == Group::High;
    (high ? g.high : g.low).push_back(i + 1);
  }
  return g;
}

template <typename Scalar>
struct ReconstructedSignals {
  Vector<Scalar> high;
  Vector<Scalar> low;
  Grouping groups;
};

/// S_high sums the High modes; S_low sums the Low modes plus the residual.
/// Both sums run in ascending mode index.
template <typename Scalar>
ReconstructedSignals<Scalar> reconstruct(const emd::DecompositionResult<Scalar>& decomp, const Grouping& groups) {
  const std::size_t K = decomp.size();
  std::vector<int> seen(K + 1, 0);
  for (auto i : groups.high) {
    require(i >= 1 && i <= K, "reconstruct: IMF index out of range");
    ++seen[i];
  }
  for (auto i : groups.low) {
    require(i >= 1 && i <= K, "reconstruct: IMF index out of range");
    ++seen[i];
  }
  for (std::size_t i = 1; i <= K; ++i) require(seen[i] == 1, "reconstruct: groups must partition the IMFs");

  const Eigen::Index n = decomp.residual.size();
  ReconstructedSignals<Scalar> out{Vector<Scalar>::Zero(n), Vector<Scalar>::Zero(n), groups};
  std::sort(out.groups.high.begin(), out.groups.high.end());
  std::sort(out.groups.low.begin(), out.groups.low.end());
  for (auto i : out.groups.high) out.high += decomp.imfs[i - 1].values;
  for (auto i : out.groups.low) out.low += decomp.imfs[i - 1].values;
  out.low += decomp.residual;
  return out;
}

/// Profiles every IMF of a decomposition.
template <typename Scalar>
std::vector<FrequencyProfile<Scalar>> profile_all(const emd::DecompositionResult<Scalar>& decomp, Scalar fs,
                                                  Scalar f_high) {
  std::vector<FrequencyProfile<Scalar>> out;
  out.reserve(decomp.size());
  for (const auto& m : decomp.imfs) out.push_back(profile(m.values, fs, f_high));
  return out;
}

}  // namespace pvf::spectral
