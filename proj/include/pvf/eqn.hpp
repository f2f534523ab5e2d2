#pragma once

// Evidential quantile head, uncertainty split and the three-part loss.

#include <vector>

#include "pvf/nets.hpp"

namespace pvf::eqn {

using ad::Index;
using ad::Tensor;

/// Strictly increasing levels in (0, 1) that include the median.
class QuantileLevels {
 public:
  QuantileLevels();
  explicit QuantileLevels(std::vector<double> tau);

  std::size_t size() const { return tau_.size(); }
  double operator[](std::size_t j) const { return tau_[j]; }
  const std::vector<double>& values() const { return tau_; }
  /// Column of level `tau`; throws if absent.
  std::size_t index_of(double tau) const;
  std::size_t median() const { return index_of(0.5); }

 private:
  std::vector<double> tau_;
};

/// Central interval of nominal `confidence` between two configured levels.
struct Interval {
  double confidence = 0.9;
  double weight = 1.0;
  /// Width above which the hinge activates, in power units.
  double theta = 0.0;
  std::size_t lower = 0;
  std::size_t upper = 0;
};

struct WidthSpec {
  std::vector<Interval> intervals;

  /// Intervals with confidences {0.6, 0.8, 0.9}, weights {1, 1, 2}, theta 0.
  static WidthSpec defaults(const QuantileLevels& levels);
  static WidthSpec make(const QuantileLevels& levels, const std::vector<double>& confidences,
                        const std::vector<double>& weights);
  double total_weight() const;
  void validate() const;
};

struct LossWeights {
  double quantile = 1.0;
  double evidence = 0.01;
  double width = 0.5;

  void validate() const;
};

struct EqnOutput {
  /// [B, Q] in power units, non-decreasing along each row.
  Tensor quantiles;
  /// [B, Q], non-negative.
  Tensor evidence;

  Eigen::MatrixXd alpha() const;
};

/// Shared hidden layer feeding a linear quantile head and a softplus evidence
/// head. Raw quantiles are mapped to power units by `scale` and `shift`, then
/// sorted per sample.
class EqnHead {
 public:
  EqnHead() = default;
  EqnHead(Index input, Index hidden, std::size_t levels, nets::Rng& rng);

  EqnOutput operator()(const Tensor& features, double scale = 1.0, double shift = 0.0) const;
  nets::Linear& shared() { return shared_; }
  nets::Linear& quantile_head() { return quantile_; }
  nets::Linear& evidence_head() { return evidence_; }
  void collect(nets::ParamRefs& refs, const std::string& prefix);

 private:
  nets::Linear shared_, quantile_, evidence_;
};

/// 1 / (mean_j e_ij + eps) per sample.
Eigen::VectorXd epistemic(const Eigen::MatrixXd& evidence, double eps = 1e-6);
/// 1 / (e_ij + eps) per sample and level.
Eigen::MatrixXd epistemic_per_level(const Eigen::MatrixXd& evidence, double eps = 1e-6);
/// q(upper) - q(lower) per sample.
Eigen::VectorXd aleatoric(const Eigen::MatrixXd& quantiles, std::size_t lower, std::size_t upper);

/// (1/B) sum_i sum_j rho_tau_j(y_i - q_ij).
Tensor pinball_loss(const Eigen::VectorXd& y, const Tensor& quantiles, const QuantileLevels& levels);
/// (1/B) sum_i sum_j e_ij.
Tensor evidence_loss(const Tensor& evidence);
/// (1/W) sum_k w_k mean_i max(q_upper - q_lower - theta_k, 0).
Tensor width_loss(const Tensor& quantiles, const WidthSpec& spec);

struct LossParts {
  Tensor total;
  double quantile = 0.0;
  double evidence = 0.0;
  double width = 0.0;
};

LossParts total_loss(const Eigen::VectorXd& y, const EqnOutput& out, const QuantileLevels& levels,
                     const WidthSpec& spec, const LossWeights& lambda);

}  // namespace pvf::eqn
