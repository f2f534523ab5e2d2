#pragma once

// Deterministic and probabilistic forecast scores.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <span>

#include "pvf/error.hpp"

namespace pvf::metrics {

namespace detail {
template <typename DA, typename DB>
void same_length(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b, const char* what) {
  require(a.size() == b.size(), std::string(what) + ": length mismatch");
  require(a.size() >= 1, std::string(what) + ": empty input");
}
}  // namespace detail

/// Mean absolute error as a percentage of mean(y). Empty when mean(y) <= 0.
template <typename DY, typename DP>
std::optional<typename DY::Scalar> nmae(const Eigen::MatrixBase<DY>& y, const Eigen::MatrixBase<DP>& yhat) {
  using S = typename DY::Scalar;
  detail::same_length(y, yhat, "nmae");
  const S mean_y = y.mean();
  if (!(mean_y > S(0))) return std::nullopt;
  return (y - yhat).cwiseAbs().mean() / mean_y * S(100);
}

/// Root-mean-square error as a percentage of mean(y). Empty when mean(y) <= 0.
template <typename DY, typename DP>
std::optional<typename DY::Scalar> nrmse(const Eigen::MatrixBase<DY>& y, const Eigen::MatrixBase<DP>& yhat) {
  using S = typename DY::Scalar;
  detail::same_length(y, yhat, "nrmse");
  const S mean_y = y.mean();
  if (!(mean_y > S(0))) return std::nullopt;
  return std::sqrt((y - yhat).squaredNorm() / static_cast<S>(y.size())) / mean_y * S(100);
}

/// Coefficient of determination. Empty for constant y.
template <typename DY, typename DP>
std::optional<typename DY::Scalar> r2(const Eigen::MatrixBase<DY>& y, const Eigen::MatrixBase<DP>& yhat) {
  using S = typename DY::Scalar;
  detail::same_length(y, yhat, "r2");
  const S ss_tot = (y.array() - y.mean()).square().sum();
  if (!(ss_tot > S(0))) return std::nullopt;
  return S(1) - (y - yhat).squaredNorm() / ss_tot;
}

/// rho_tau(u) = u (tau - 1[u < 0]).
template <typename S>
constexpr S pinball(S u, S tau) {
  return u >= S(0) ? tau * u : (tau - S(1)) * u;
}

/// CRPS estimated from a quantile forecast as twice the level-averaged
/// pinball loss, averaged over samples. `q` is n x Q, columns matching `levels`.
template <typename DQ, typename DY>
typename DQ::Scalar crps(const Eigen::MatrixBase<DQ>& q, const Eigen::MatrixBase<DY>& y, std::span<const double> levels) {
  using S = typename DQ::Scalar;
  require(q.rows() == y.size() && q.rows() >= 1, "crps: sample count mismatch");
  require(q.cols() == static_cast<Eigen::Index>(levels.size()) && !levels.empty(), "crps: level count mismatch");
  S total = 0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    S row = 0;
    for (Eigen::Index j = 0; j < q.cols(); ++j) row += pinball<S>(y[i] - q(i, j), static_cast<S>(levels[static_cast<std::size_t>(j)]));
    total += S(2) * row / static_cast<S>(q.cols());
  }
  return total / static_cast<S>(q.rows());
}

/// Empirical coverage of [lower, upper] minus the nominal confidence level.
template <typename DY, typename DL, typename DU>
typename DY::Scalar ace(const Eigen::MatrixBase<DY>& y, const Eigen::MatrixBase<DL>& lower,
                        const Eigen::MatrixBase<DU>& upper, double confidence) {
  using S = typename DY::Scalar;
  detail::same_length(y, lower, "ace");
  detail::same_length(y, upper, "ace");
  require(confidence > 0.0 && confidence < 1.0, "ace: confidence must lie in (0, 1)");
  Eigen::Index covered = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (y[i] >= lower[i] && y[i] <= upper[i]) ++covered;
  return static_cast<S>(covered) / static_cast<S>(y.size()) - static_cast<S>(confidence);
}

enum class WinklerConvention {
  /// Penalty scale 2 / confidence.
  AsPrinted,
  /// Penalty scale 2 / (1 - confidence), the textbook Winkler score.
  Classical,
};

/// Mean interval width plus scaled distance of misses outside the interval.
template <typename DY, typename DL, typename DU>
typename DY::Scalar winkler(const Eigen::MatrixBase<DY>& y, const Eigen::MatrixBase<DL>& lower,
                            const Eigen::MatrixBase<DU>& upper, double confidence,
                            WinklerConvention convention = WinklerConvention::AsPrinted) {
  using S = typename DY::Scalar;
  detail::same_length(y, lower, "winkler");
  detail::same_length(y, upper, "winkler");
  require(confidence > 0.0 && confidence < 1.0, "winkler: confidence must lie in (0, 1)");
  const S scale = S(2) / static_cast<S>(convention == WinklerConvention::AsPrinted ? confidence : 1.0 - confidence);
  S total = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    require(lower[i] <= upper[i], "winkler: lower bound above upper bound");
    const S miss = std::max({lower[i] - y[i], y[i] - upper[i], S(0)});
    total += (upper[i] - lower[i]) + scale * miss;
  }
  return total / static_cast<S>(y.size());
}

/// Test-split scores. Deterministic scores use the median forecast.
struct EvalReport {
  std::optional<double> nmae;   // percent
  std::optional<double> nrmse;  // percent
  std::optional<double> r2;
  double crps = 0.0;
  double ace = 0.0;
  double ws = 0.0;
  double ws_classical = 0.0;
  std::size_t n = 0;
  double confidence = 0.9;
};

}  // namespace pvf::metrics
