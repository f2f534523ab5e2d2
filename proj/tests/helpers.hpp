#pragma once

#include <random>

#include "pvf/ad/gradcheck.hpp"
#include "pvf/ad/ops.hpp"

namespace testing {

using pvf::ad::Index;
using pvf::ad::Shape;
using pvf::ad::Tensor;

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Eigen::VectorXd v(pvf::ad::numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// Fixed random projection to a scalar so every output element matters.
inline Tensor probe(const Tensor& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  const Tensor w = random_tensor(y.shape(), rng, false);
  return pvf::ad::sum_all(pvf::ad::mul(y, w));
}

}  // namespace testing
