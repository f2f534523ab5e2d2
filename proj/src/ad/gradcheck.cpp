#include "pvf/ad/gradcheck.hpp"

#include <cmath>

#include "pvf/error.hpp"

namespace pvf::ad {

GradCheckReport grad_check(const std::function<Tensor()>& loss, const std::vector<NamedTensor>& params,
                           const GradCheckOptions& options) {
  for (const auto& p : params) {
    require(p.tensor.requires_grad(), "grad_check: parameter '" + p.name + "' does not require a gradient");
    const_cast<Tensor&>(p.tensor).zero_grad();
  }
  const Tensor root = loss();
  require(root.size() == 1, "grad_check: loss must be a scalar");
  root.backward();

  GradCheckReport report;
  for (const auto& p : params) {
    Eigen::VectorXd analytic = p.tensor.grad().size() == p.tensor.size() ? p.tensor.grad()
                                                                          : Eigen::VectorXd::Zero(p.tensor.size());
    if (!analytic.allFinite()) throw NumericError("grad_check: non-finite gradient for parameter '" + p.name + "'");
    if (options.tamper) options.tamper(p.name, analytic);

    Tensor t = p.tensor;
    Eigen::VectorXd numeric(t.size());
    for (Index i = 0; i < t.size(); ++i) {
      const double saved = t.value()[i];
      t.mutable_value()[i] = saved + options.step;
      const double up = loss().item();
      t.mutable_value()[i] = saved - options.step;
      const double down = loss().item();
      t.mutable_value()[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("grad_check: non-finite loss while perturbing parameter '" + p.name + "'");
      numeric[i] = (up - down) / (2.0 * options.step);
    }

    const double denom = std::max(analytic.norm() + numeric.norm(), 1e-6);
    GradCheckEntry entry{p.name, t.size(), (analytic - numeric).norm() / denom};
    if (report.entries.empty() || entry.rel_error > report.max_rel_error) {
      report.max_rel_error = entry.rel_error;
      report.worst = p.name;
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace pvf::ad
