#include "pvf/eqn.hpp"

#include <cmath>

#include "pvf/error.hpp"

namespace pvf::eqn {

QuantileLevels::QuantileLevels() : QuantileLevels({0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95}) {}

QuantileLevels::QuantileLevels(std::vector<double> tau) : tau_(std::move(tau)) {
  require(!tau_.empty(), "quantile levels: empty list");
  for (std::size_t j = 0; j < tau_.size(); ++j) {
    require(tau_[j] > 0.0 && tau_[j] < 1.0, "quantile levels: every level must lie in (0, 1)");
    require(j == 0 || tau_[j] > tau_[j - 1], "quantile levels: levels must be strictly increasing");
  }
  index_of(0.5);
}

std::size_t QuantileLevels::index_of(double tau) const {
  for (std::size_t j = 0; j < tau_.size(); ++j)
    if (std::abs(tau_[j] - tau) < 1e-9) return j;
  throw ValidationError("quantile levels: level " + std::to_string(tau) + " is not configured");
}

WidthSpec WidthSpec::defaults(const QuantileLevels& levels) { return make(levels, {0.6, 0.8, 0.9}, {1.0, 1.0, 2.0}); }

WidthSpec WidthSpec::make(const QuantileLevels& levels, const std::vector<double>& confidences,
                          const std::vector<double>& weights) {
  require(confidences.size() == weights.size(), "width spec: one weight per interval required");
  WidthSpec spec;
  for (std::size_t k = 0; k < confidences.size(); ++k) {
    const double c = confidences[k];
    require(c > 0.0 && c < 1.0, "width spec: interval confidence must lie in (0, 1)");
    Interval iv;
    iv.confidence = c;
    iv.weight = weights[k];
    iv.lower = levels.index_of((1.0 - c) / 2.0);
    iv.upper = levels.index_of((1.0 + c) / 2.0);
    spec.intervals.push_back(iv);
  }
  spec.validate();
  return spec;
}

double WidthSpec::total_weight() const {
  double w = 0.0;
  for (const auto& iv : intervals) w += iv.weight;
  return w;
}

void WidthSpec::validate() const {
  for (const auto& iv : intervals) {
    require(iv.weight >= 0.0, "width spec: weights must be non-negative");
    require(iv.theta >= 0.0 && std::isfinite(iv.theta), "width spec: thresholds must be finite and non-negative");
    require(iv.lower < iv.upper, "width spec: interval bounds out of order");
  }
}

void LossWeights::validate() const {
  require(quantile >= 0.0 && evidence >= 0.0 && width >= 0.0, "loss weights must be non-negative");
}

Eigen::MatrixXd EqnOutput::alpha() const {
  return evidence.matrix().array() + 1.0;
}

EqnHead::EqnHead(Index input, Index hidden, std::size_t levels, nets::Rng& rng)
    : shared_(input, hidden, rng),
      quantile_(hidden, static_cast<Index>(levels), rng),
      evidence_(hidden, static_cast<Index>(levels), rng) {}

EqnOutput EqnHead::operator()(const Tensor& features, double scale, double shift) const {
  require(features.rank() == 2 && features.dim(1) == shared_.in(),
          "eqn: expected features [B, " + std::to_string(shared_.in()) + "], got " + ad::to_string(features.shape()));
  require(scale > 0.0, "eqn: output scale must be positive");
  const Tensor h = ad::relu(shared_(features));
  EqnOutput out{ad::sort_last(ad::affine(quantile_(h), scale, shift)), ad::softplus(evidence_(h))};
  if (!out.quantiles.value().allFinite() || !out.evidence.value().allFinite())
    throw NumericError("eqn: non-finite activations in the output heads");
  return out;
}

void EqnHead::collect(nets::ParamRefs& refs, const std::string& prefix) {
  shared_.collect(refs, prefix + ".shared");
  quantile_.collect(refs, prefix + ".quantile");
  evidence_.collect(refs, prefix + ".evidence");
}

Eigen::VectorXd epistemic(const Eigen::MatrixXd& evidence, double eps) {
  require(eps > 0.0, "epistemic: stabilizer must be positive");
  return (evidence.rowwise().mean().array() + eps).inverse().matrix();
}

Eigen::MatrixXd epistemic_per_level(const Eigen::MatrixXd& evidence, double eps) {
  require(eps > 0.0, "epistemic: stabilizer must be positive");
  return (evidence.array() + eps).inverse().matrix();
}

Eigen::VectorXd aleatoric(const Eigen::MatrixXd& quantiles, std::size_t lower, std::size_t upper) {
  require(upper < static_cast<std::size_t>(quantiles.cols()) && lower < upper, "aleatoric: invalid level indices");
  return quantiles.col(static_cast<Index>(upper)) - quantiles.col(static_cast<Index>(lower));
}

Tensor pinball_loss(const Eigen::VectorXd& y, const Tensor& quantiles, const QuantileLevels& levels) {
  require(quantiles.rank() == 2 && quantiles.dim(0) == y.size() &&
              quantiles.dim(1) == static_cast<Index>(levels.size()),
          "pinball: expected quantiles [" + std::to_string(y.size()) + ", " + std::to_string(levels.size()) + "], got " +
              ad::to_string(quantiles.shape()));
  const Index B = y.size(), Q = quantiles.dim(1);
  require(B >= 1, "pinball: empty batch");
  const auto q = quantiles.matrix();
  ad::RowMatrix slope(B, Q);
  double total = 0.0;
  for (Index i = 0; i < B; ++i)
    for (Index j = 0; j < Q; ++j) {
      const double tau = levels[static_cast<std::size_t>(j)];
      const double u = y[i] - q(i, j);
      total += u >= 0.0 ? tau * u : (tau - 1.0) * u;
      slope(i, j) = -(u >= 0.0 ? tau : tau - 1.0) / static_cast<double>(B);
    }
  return ad::make_result({}, Eigen::VectorXd::Constant(1, total / static_cast<double>(B)), {quantiles},
                         [slope = std::move(slope)](ad::detail::Node& n) {
                           if (auto* g = ad::parent_grad(n, 0))
                             *g += n.grad[0] * Eigen::Map<const Eigen::VectorXd>(slope.data(), slope.size());
                         });
}

Tensor evidence_loss(const Tensor& evidence) {
  require(evidence.rank() == 2 && evidence.dim(0) >= 1, "evidence loss: expected [B, Q]");
  return ad::affine(ad::sum_all(evidence), 1.0 / static_cast<double>(evidence.dim(0)), 0.0);
}

Tensor width_loss(const Tensor& quantiles, const WidthSpec& spec) {
  spec.validate();
  require(quantiles.rank() == 2 && quantiles.dim(0) >= 1, "width loss: expected [B, Q]");
  const double W = spec.total_weight();
  require(W > 0.0, "width loss: total interval weight must be positive");
  const Index B = quantiles.dim(0), Q = quantiles.dim(1);
  const auto q = quantiles.matrix();
  ad::RowMatrix slope = ad::RowMatrix::Zero(B, Q);
  double total = 0.0;
  for (const auto& iv : spec.intervals) {
    require(static_cast<Index>(iv.upper) < Q, "width loss: interval refers to a missing level");
    const double c = iv.weight / (W * static_cast<double>(B));
    const auto lo = static_cast<Index>(iv.lower), hi = static_cast<Index>(iv.upper);
    for (Index i = 0; i < B; ++i) {
      const double excess = q(i, hi) - q(i, lo) - iv.theta;
      if (excess > 0.0) {
        total += c * excess;
        slope(i, hi) += c;
        slope(i, lo) -= c;
      }
    }
  }
  return ad::make_result({}, Eigen::VectorXd::Constant(1, total), {quantiles},
                         [slope = std::move(slope)](ad::detail::Node& n) {
                           if (auto* g = ad::parent_grad(n, 0))
                             *g += n.grad[0] * Eigen::Map<const Eigen::VectorXd>(slope.data(), slope.size());
                         });
}

LossParts total_loss(const Eigen::VectorXd& y, const EqnOutput& out, const QuantileLevels& levels,
                     const WidthSpec& spec, const LossWeights& lambda) {
  lambda.validate();
  const Tensor lq = pinball_loss(y, out.quantiles, levels);
  const Tensor le = evidence_loss(out.evidence);
  Tensor total = ad::affine(lq, lambda.quantile, 0.0) + ad::affine(le, lambda.evidence, 0.0);
  LossParts parts{Tensor{}, lq.item(), le.item(), 0.0};
  if (!spec.intervals.empty()) {
    const Tensor lw = width_loss(out.quantiles, spec);
    parts.width = lw.item();
    total = total + ad::affine(lw, lambda.width, 0.0);
  }
  parts.total = total;
  return parts;
}

}  // namespace pvf::eqn
