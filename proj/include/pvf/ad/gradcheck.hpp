#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pvf/ad/tensor.hpp"

namespace pvf::ad {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GradCheckEntry {
  std::string name;
  Index size = 0;
  /// ||analytic - numeric|| / max(||analytic|| + ||numeric||, 1e-6)
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  std::string worst;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Applied to each analytic gradient before comparison (negative controls).
  std::function<void(const std::string&, Eigen::VectorXd&)> tamper;
};

/// Central finite differences of `loss` against reverse-mode gradients for
/// every tensor in `params`. `loss` must rebuild the graph on each call and
/// be deterministic. Throws NumericError naming the parameter when a
/// gradient or a perturbed loss is not finite.
GradCheckReport grad_check(const std::function<Tensor()>& loss, const std::vector<NamedTensor>& params,
                           const GradCheckOptions& options = {});

}  // namespace pvf::ad
