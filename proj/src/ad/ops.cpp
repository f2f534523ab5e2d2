#include "pvf/ad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pvf/error.hpp"

namespace pvf::ad {
namespace {

using Eigen::VectorXd;

MatrixMap as_matrix(VectorXd& v, Index rows, Index cols) { return {v.data(), rows, cols}; }
ConstMatrixMap as_matrix(const VectorXd& v, Index rows, Index cols) { return {v.data(), rows, cols}; }

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ValidationError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

void expect_rank(const Tensor& x, int rank, const char* op) {
  if (x.rank() != rank)
    throw ValidationError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                          to_string(x.shape()));
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  VectorXd y = x.value().unaryExpr(fwd);
  return make_result(x.shape(), std::move(y), {x}, [deriv](detail::Node& n) {
    if (auto* gx = parent_grad(n, 0)) {
      const VectorXd& xv = n.parents[0]->value;
      for (Index i = 0; i < xv.size(); ++i) (*gx)[i] += n.grad[i] * deriv(xv[i], n.value[i]);
    }
  });
}

}  // namespace

Tensor matmul(const Tensor& x, const Tensor& w) {
  expect_rank(w, 2, "matmul");
  require(x.rank() >= 1 && x.dim(-1) == w.dim(0),
          "matmul: inner dimensions differ, " + to_string(x.shape()) + " x " + to_string(w.shape()));
  const Index K = w.dim(0), N = w.dim(1), M = x.size() / K;
  Shape shape = x.shape();
  shape.back() = N;
  VectorXd y(M * N);
  as_matrix(y, M, N).noalias() = as_matrix(x.value(), M, K) * as_matrix(w.value(), K, N);
  return make_result(std::move(shape), std::move(y), {x, w}, [M, K, N](detail::Node& n) {
    const auto g = as_matrix(n.grad, M, N);
    if (auto* gx = parent_grad(n, 0))
      as_matrix(*gx, M, K).noalias() += g * as_matrix(n.parents[1]->value, K, N).transpose();
    if (auto* gw = parent_grad(n, 1))
      as_matrix(*gw, K, N).noalias() += as_matrix(n.parents[0]->value, M, K).transpose() * g;
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  expect_rank(bias, 1, "add_bias");
  require(x.rank() >= 1 && x.dim(-1) == bias.dim(0), "add_bias: bias length does not match last dimension");
  const Index N = bias.dim(0), M = x.size() / N;
  VectorXd y = x.value();
  as_matrix(y, M, N).rowwise() += bias.value().transpose();
  return make_result(x.shape(), std::move(y), {x, bias}, [M, N](detail::Node& n) {
    if (auto* gx = parent_grad(n, 0)) *gx += n.grad;
    if (auto* gb = parent_grad(n, 1)) *gb += as_matrix(n.grad, M, N).colwise().sum().transpose();
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "add");
  return make_result(a.shape(), a.value() + b.value(), {a, b}, [](detail::Node& n) {
    if (auto* ga = parent_grad(n, 0)) *ga += n.grad;
    if (auto* gb = parent_grad(n, 1)) *gb += n.grad;
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "sub");
  return make_result(a.shape(), a.value() - b.value(), {a, b}, [](detail::Node& n) {
    if (auto* ga = parent_grad(n, 0)) *ga += n.grad;
    if (auto* gb = parent_grad(n, 1)) *gb -= n.grad;
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "mul");
  return make_result(a.shape(), a.value().cwiseProduct(b.value()), {a, b}, [](detail::Node& n) {
    if (auto* ga = parent_grad(n, 0)) *ga += n.grad.cwiseProduct(n.parents[1]->value);
    if (auto* gb = parent_grad(n, 1)) *gb += n.grad.cwiseProduct(n.parents[0]->value);
  });
}

Tensor affine(const Tensor& x, double scale, double shift) {
  VectorXd y = (x.value().array() * scale + shift).matrix();
  return make_result(x.shape(), std::move(y), {x}, [scale](detail::Node& n) {
    if (auto* gx = parent_grad(n, 0)) *gx += scale * n.grad;
  });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log1p(std::exp(-std::abs(v))) + std::max(v, 0.0); },
      [](double v, double) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(numel(shape) == x.size(), "reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  return make_result(std::move(shape), x.value(), {x}, [](detail::Node& n) {
    if (auto* gx = parent_grad(n, 0)) *gx += n.grad;
  });
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_last: no inputs");
  Shape lead = parts.front().shape();
  lead.pop_back();
  std::vector<Index> widths;
  Index total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    const Index w = s.back();
    s.pop_back();
    require(s == lead, "concat_last: leading dimensions differ");
    widths.push_back(w);
    total += w;
  }
  const Index M = numel(lead);
  VectorXd y(M * total);
  auto Y = as_matrix(y, M, total);
  Index off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    Y.middleCols(off, widths[i]) = as_matrix(parts[i].value(), M, widths[i]);
    off += widths[i];
  }
  Shape shape = lead;
  shape.push_back(total);
  return make_result(std::move(shape), std::move(y), parts, [M, total, widths](detail::Node& n) {
    const auto G = as_matrix(n.grad, M, total);
    Index o = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (auto* g = parent_grad(n, i)) as_matrix(*g, M, widths[i]) += G.middleCols(o, widths[i]);
      o += widths[i];
    }
  });
}

Tensor slice_last(const Tensor& x, Index start, Index length) {
  const Index W = x.dim(-1);
  require(start >= 0 && length >= 0 && start + length <= W, "slice_last: range out of bounds");
  const Index M = x.size() / W;
  VectorXd y(M * length);
  as_matrix(y, M, length) = as_matrix(x.value(), M, W).middleCols(start, length);
  Shape shape = x.shape();
  shape.back() = length;
  return make_result(std::move(shape), std::move(y), {x}, [M, W, start, length](detail::Node& n) {
    if (auto* gx = parent_grad(n, 0)) as_matrix(*gx, M, W).middleCols(start, length) += as_matrix(n.grad, M, length);
  });
}

Tensor select_axis1(const Tensor& x, Index t) {
  expect_rank(x, 3, "select_axis1");
  const Index B = x.dim(0), T = x.dim(1), F = x.dim(2);
  require(t >= 0 && t < T, "select_axis1: index out of range");
  VectorXd y(B * F);
  for (Index b = 0; b < B; ++b) y.segment(b * F, F) = x.value().segment((b * T + t) * F, F);
  return make_result({B, F}, std::move(y), {x}, [B, T, F, t](detail::Node& n) {
    if (auto* gx = parent_grad(n, 0))
      for (Index b = 0; b < B; ++b) gx->segment((b * T + t) * F, F) += n.grad.segment(b * F, F);
  });
}

Tensor stack_axis1(const std::vector<Tensor>& steps) {
  require(!steps.empty(), "stack_axis1: no inputs");
  const Index B = steps.front().dim(0), F = steps.front().dim(1);
  const auto T = static_cast<Index>(steps.size());
  for (const auto& s : steps) require(s.rank() == 2 && s.dim(0) == B && s.dim(1) == F, "stack_axis1: shape mismatch");
  VectorXd y(B * T * F);
  for (Index t = 0; t < T; ++t)
    for (Index b = 0; b < B; ++b) y.segment((b * T + t) * F, F) = steps[static_cast<std::size_t>(t)].value().segment(b * F, F);
  return make_result({B, T, F}, std::move(y), steps, [B, T, F](detail::Node& n) {
    for (Index t = 0; t < T; ++t)
      if (auto* g = parent_grad(n, static_cast<std::size_t>(t)))
        for (Index b = 0; b < B; ++b) g->segment(b * F, F) += n.grad.segment((b * T + t) * F, F);
  });
}

Tensor swap_last2(const Tensor& x) {
  expect_rank(x, 3, "swap_last2");
  const Index B = x.dim(0), A = x.dim(1), C = x.dim(2);
  VectorXd y(x.size());
  for (Index b = 0; b < B; ++b)
    as_matrix(y, B * C, A).middleRows(b * C, C) = as_matrix(x.value(), B * A, C).middleRows(b * A, A).transpose();
  return make_result({B, C, A}, std::move(y), {x}, [B, A, C](detail::Node& n) {
    if (auto* gx = parent_grad(n, 0))
      for (Index b = 0; b < B; ++b)
        as_matrix(*gx, B * A, C).middleRows(b * A, A) += as_matrix(n.grad, B * C, A).middleRows(b * C, C).transpose();
  });
}

Tensor sum_all(const Tensor& x) {
  return make_result({}, VectorXd::Constant(1, x.value().sum()), {x}, [](detail::Node& n) {
    if (auto* gx = parent_grad(n, 0)) gx->array() += n.grad[0];
  });
}

Tensor mean_all(const Tensor& x) {
  const auto count = static_cast<double>(x.size());
  return make_result({}, VectorXd::Constant(1, x.value().sum() / count), {x}, [count](detail::Node& n) {
    if (auto* gx = parent_grad(n, 0)) gx->array() += n.grad[0] / count;
  });
}

Tensor mean_last(const Tensor& x) {
  const Index T = x.dim(-1), M = x.size() / T;
  VectorXd y = as_matrix(x.value(), M, T).rowwise().mean();
  Shape shape = x.shape();
  shape.pop_back();
  return make_result(std::move(shape), std::move(y), {x}, [M, T](detail::Node& n) {
    if (auto* gx = parent_grad(n, 0))
      as_matrix(*gx, M, T).colwise() += n.grad / static_cast<double>(T);
  });
}

Tensor mean_axis1(const Tensor& x) {
  expect_rank(x, 3, "mean_axis1");
  const Index B = x.dim(0), S = x.dim(1), D = x.dim(2);
  VectorXd y(B * D);
  for (Index b = 0; b < B; ++b)
    y.segment(b * D, D) = as_matrix(x.value(), B * S, D).middleRows(b * S, S).colwise().mean().transpose();
  return make_result({B, D}, std::move(y), {x}, [B, S, D](detail::Node& n) {
    if (auto* gx = parent_grad(n, 0))
      for (Index b = 0; b < B; ++b)
        as_matrix(*gx, B * S, D).middleRows(b * S, S).rowwise() +=
            n.grad.segment(b * D, D).transpose() / static_cast<double>(S);
  });
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, Index stride, Index padding) {
  expect_rank(x, 3, "conv1d");
  expect_rank(weight, 3, "conv1d");
  expect_rank(bias, 1, "conv1d");
  const Index B = x.dim(0), C = x.dim(1), T = x.dim(2);
  const Index Co = weight.dim(0), K = weight.dim(2);
  require(weight.dim(1) == C, "conv1d: weight expects " + std::to_string(weight.dim(1)) + " input channels, got " +
                                  std::to_string(C));
  require(bias.dim(0) == Co, "conv1d: bias length mismatch");
  require(stride >= 1 && padding >= 0, "conv1d: invalid stride/padding");
  require(T + 2 * padding >= K, "conv1d: kernel of size " + std::to_string(K) + " does not fit padded input of length " +
                                    std::to_string(T + 2 * padding));
  const Index To = (T + 2 * padding - K) / stride + 1;

  // im2col: row (b, t) holds the receptive field, column (c, k).
  RowMatrix cols = RowMatrix::Zero(B * To, C * K);
  const VectorXd& xv = x.value();
  for (Index b = 0; b < B; ++b)
    for (Index t = 0; t < To; ++t)
      for (Index c = 0; c < C; ++c)
        for (Index k = 0; k < K; ++k) {
          const Index src = t * stride + k - padding;
          if (src >= 0 && src < T) cols(b * To + t, c * K + k) = xv[(b * C + c) * T + src];
        }
  const auto W = as_matrix(weight.value(), Co, C * K);
  RowMatrix out = cols * W.transpose();
  out.rowwise() += bias.value().transpose();

  VectorXd y(B * Co * To);
  for (Index b = 0; b < B; ++b) as_matrix(y, B * Co, To).middleRows(b * Co, Co) = out.middleRows(b * To, To).transpose();

  return make_result({B, Co, To}, std::move(y), {x, weight, bias},
                     [B, C, T, Co, K, To, stride, padding, cols = std::move(cols)](detail::Node& n) {
                       RowMatrix G(B * To, Co);
                       for (Index b = 0; b < B; ++b)
                         G.middleRows(b * To, To) = as_matrix(n.grad, B * Co, To).middleRows(b * Co, Co).transpose();
                       if (auto* gb = parent_grad(n, 2)) *gb += G.colwise().sum().transpose();
                       if (auto* gw = parent_grad(n, 1)) as_matrix(*gw, Co, C * K).noalias() += G.transpose() * cols;
                       if (auto* gx = parent_grad(n, 0)) {
                         const RowMatrix gcols = G * as_matrix(n.parents[1]->value, Co, C * K);
                         for (Index b = 0; b < B; ++b)
                           for (Index t = 0; t < To; ++t)
                             for (Index c = 0; c < C; ++c)
                               for (Index k = 0; k < K; ++k) {
                                 const Index src = t * stride + k - padding;
                                 if (src >= 0 && src < T) (*gx)[(b * C + c) * T + src] += gcols(b * To + t, c * K + k);
                               }
                       }
                     });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState* state, bool training,
                  double eps, double momentum) {
  require(x.rank() == 2 || x.rank() == 3, "batch_norm: expected [B, C] or [B, C, T], got " + to_string(x.shape()));
  const Index B = x.dim(0), C = x.dim(1), T = x.rank() == 3 ? x.dim(2) : 1;
  require(gamma.size() == C && beta.size() == C, "batch_norm: affine parameters must have one entry per channel");
  const Index count = B * T;
  const VectorXd& xv = x.value();
  auto at = [T, C](Index b, Index c, Index t) { return (b * C + c) * T + t; };

  VectorXd mean(C), var(C);
  if (training) {
    require(count >= 1, "batch_norm: empty batch");
    for (Index c = 0; c < C; ++c) {
      double s = 0.0;
      for (Index b = 0; b < B; ++b)
        for (Index t = 0; t < T; ++t) s += xv[at(b, c, t)];
      const double m = s / static_cast<double>(count);
      double v = 0.0;
      for (Index b = 0; b < B; ++b)
        for (Index t = 0; t < T; ++t) v += (xv[at(b, c, t)] - m) * (xv[at(b, c, t)] - m);
      mean[c] = m;
      var[c] = v / static_cast<double>(count);
    }
    if (state) {
      if (state->running_mean.size() != C) state->running_mean = VectorXd::Zero(C);
      if (state->running_var.size() != C) state->running_var = VectorXd::Ones(C);
      const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
      state->running_mean = (1.0 - momentum) * state->running_mean + momentum * mean;
      state->running_var = (1.0 - momentum) * state->running_var + momentum * unbias * var;
    }
  } else {
    require(state && state->running_mean.size() == C && state->running_var.size() == C,
            "batch_norm: eval mode needs running statistics");
    mean = state->running_mean;
    var = state->running_var;
  }
  const VectorXd inv_std = (var.array() + eps).rsqrt().matrix();

  VectorXd xhat(x.size()), y(x.size());
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c)
      for (Index t = 0; t < T; ++t) {
        const Index i = at(b, c, t);
        xhat[i] = (xv[i] - mean[c]) * inv_std[c];
        y[i] = gamma.value()[c] * xhat[i] + beta.value()[c];
      }

  return make_result(x.shape(), std::move(y), {x, gamma, beta},
                     [B, C, T, count, training, inv_std, xhat = std::move(xhat), at](detail::Node& n) {
                       const VectorXd& g = n.grad;
                       const VectorXd& gam = n.parents[1]->value;
                       VectorXd sum_g = VectorXd::Zero(C), sum_gx = VectorXd::Zero(C);
                       for (Index b = 0; b < B; ++b)
                         for (Index c = 0; c < C; ++c)
                           for (Index t = 0; t < T; ++t) {
                             const Index i = at(b, c, t);
                             sum_g[c] += g[i];
                             sum_gx[c] += g[i] * xhat[i];
                           }
                       if (auto* gg = parent_grad(n, 1)) *gg += sum_gx;
                       if (auto* gb = parent_grad(n, 2)) *gb += sum_g;
                       if (auto* gx = parent_grad(n, 0)) {
                         const auto N = static_cast<double>(count);
                         for (Index b = 0; b < B; ++b)
                           for (Index c = 0; c < C; ++c)
                             for (Index t = 0; t < T; ++t) {
                               const Index i = at(b, c, t);
                               if (training)
                                 (*gx)[i] += gam[c] * inv_std[c] / N * (N * g[i] - sum_g[c] - xhat[i] * sum_gx[c]);
                               else
                                 (*gx)[i] += gam[c] * inv_std[c] * g[i];
                             }
                       }
                     });
}

Tensor max_pool1d(const Tensor& x, Index kernel, Index stride) {
  expect_rank(x, 3, "max_pool1d");
  const Index B = x.dim(0), C = x.dim(1), T = x.dim(2);
  require(kernel >= 1 && stride >= 1, "max_pool1d: invalid kernel/stride");
  require(T >= kernel, "max_pool1d: input length " + std::to_string(T) + " shorter than kernel " + std::to_string(kernel));
  const Index To = (T - kernel) / stride + 1;
  VectorXd y(B * C * To);
  std::vector<Index> arg(static_cast<std::size_t>(y.size()));
  const VectorXd& xv = x.value();
  for (Index r = 0; r < B * C; ++r)
    for (Index t = 0; t < To; ++t) {
      Index best = r * T + t * stride;
      for (Index k = 1; k < kernel; ++k)
        if (xv[r * T + t * stride + k] > xv[best]) best = r * T + t * stride + k;
      y[r * To + t] = xv[best];
      arg[static_cast<std::size_t>(r * To + t)] = best;
    }
  return make_result({B, C, To}, std::move(y), {x}, [arg = std::move(arg)](detail::Node& n) {
    if (auto* gx = parent_grad(n, 0))
      for (std::size_t i = 0; i < arg.size(); ++i) (*gx)[arg[i]] += n.grad[static_cast<Index>(i)];
  });
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64* rng, bool training) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  require(rng != nullptr, "dropout: training mode needs a random generator");
  std::bernoulli_distribution keep(1.0 - rate);
  VectorXd mask(x.size());
  const double scale = 1.0 / (1.0 - rate);
  for (Index i = 0; i < mask.size(); ++i) mask[i] = keep(*rng) ? scale : 0.0;
  VectorXd y = x.value().cwiseProduct(mask);
  return make_result(x.shape(), std::move(y), {x}, [mask = std::move(mask)](detail::Node& n) {
    if (auto* gx = parent_grad(n, 0)) *gx += n.grad.cwiseProduct(mask);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Index D = x.dim(-1), M = x.size() / D;
  require(gamma.size() == D && beta.size() == D, "layer_norm: affine parameters must match the last dimension");
  const auto X = as_matrix(x.value(), M, D);
  VectorXd mean = X.rowwise().mean();
  RowMatrix centered = X.colwise() - mean;
  VectorXd inv_std = ((centered.array().square().rowwise().sum() / static_cast<double>(D)) + eps).rsqrt().matrix();
  RowMatrix xhat = centered.array().colwise() * inv_std.array();
  VectorXd y(x.size());
  auto Y = as_matrix(y, M, D);
  Y = (xhat.array().rowwise() * gamma.value().transpose().array()).rowwise() + beta.value().transpose().array();
  return make_result(x.shape(), std::move(y), {x, gamma, beta},
                     [M, D, inv_std = std::move(inv_std), xhat = std::move(xhat)](detail::Node& n) {
                       const auto G = as_matrix(n.grad, M, D);
                       if (auto* gg = parent_grad(n, 1)) *gg += (G.array() * xhat.array()).colwise().sum().transpose().matrix();
                       if (auto* gb = parent_grad(n, 2)) *gb += G.colwise().sum().transpose();
                       if (auto* gx = parent_grad(n, 0)) {
                         const RowMatrix dxhat = G.array().rowwise() * n.parents[1]->value.transpose().array();
                         const VectorXd s1 = dxhat.rowwise().sum();
                         const VectorXd s2 = (dxhat.array() * xhat.array()).rowwise().sum();
                         const auto Dd = static_cast<double>(D);
                         RowMatrix dx = (Dd * dxhat.array() - s1.replicate(1, D).array() -
                                         xhat.array() * s2.replicate(1, D).array());
                         dx.array().colwise() *= inv_std.array() / Dd;
                         as_matrix(*gx, M, D) += dx;
                       }
                     });
}

namespace {

void softmax_rows(RowMatrix& z) {
  for (Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    z.row(r) = (z.row(r).array() - m).exp();
    z.row(r) /= z.row(r).sum();
  }
}

}  // namespace

Tensor softmax_last(const Tensor& x) {
  const Index D = x.dim(-1), M = x.size() / D;
  RowMatrix z = as_matrix(x.value(), M, D);
  softmax_rows(z);
  VectorXd y = Eigen::Map<const VectorXd>(z.data(), z.size());
  return make_result(x.shape(), std::move(y), {x}, [M, D](detail::Node& n) {
    if (auto* gx = parent_grad(n, 0)) {
      const auto Y = as_matrix(n.value, M, D);
      const auto G = as_matrix(n.grad, M, D);
      const VectorXd dot = (Y.array() * G.array()).rowwise().sum();
      as_matrix(*gx, M, D).array() += Y.array() * (G.array().colwise() - dot.array());
    }
  });
}

Tensor multi_head_scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v, Index heads,
                                   std::vector<RowMatrix>* weights) {
  expect_rank(q, 3, "attention");
  same_shape(q, k, "attention");
  same_shape(q, v, "attention");
  const Index B = q.dim(0), S = q.dim(1), D = q.dim(2);
  require(heads >= 1 && D % heads == 0,
          "attention: model dimension " + std::to_string(D) + " is not divisible by " + std::to_string(heads) + " heads");
  const Index dk = D / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  std::vector<RowMatrix> probs(static_cast<std::size_t>(B * heads));
  VectorXd y(q.size());
  auto Y = as_matrix(y, B * S, D);
  const auto Q = as_matrix(q.value(), B * S, D), K = as_matrix(k.value(), B * S, D), V = as_matrix(v.value(), B * S, D);
  for (Index b = 0; b < B; ++b)
    for (Index h = 0; h < heads; ++h) {
      RowMatrix a = scale * Q.block(b * S, h * dk, S, dk) * K.block(b * S, h * dk, S, dk).transpose();
      softmax_rows(a);
      Y.block(b * S, h * dk, S, dk).noalias() = a * V.block(b * S, h * dk, S, dk);
      probs[static_cast<std::size_t>(b * heads + h)] = std::move(a);
    }
  if (weights) *weights = probs;

  return make_result(q.shape(), std::move(y), {q, k, v},
                     [B, S, D, heads, dk, scale, probs = std::move(probs)](detail::Node& n) {
                       const auto G = as_matrix(n.grad, B * S, D);
                       const auto Q = as_matrix(n.parents[0]->value, B * S, D);
                       const auto K = as_matrix(n.parents[1]->value, B * S, D);
                       const auto V = as_matrix(n.parents[2]->value, B * S, D);
                       auto* gq = parent_grad(n, 0);
                       auto* gk = parent_grad(n, 1);
                       auto* gv = parent_grad(n, 2);
                       for (Index b = 0; b < B; ++b)
                         for (Index h = 0; h < heads; ++h) {
                           const RowMatrix& A = probs[static_cast<std::size_t>(b * heads + h)];
                           const auto Gb = G.block(b * S, h * dk, S, dk);
                           if (gv) as_matrix(*gv, B * S, D).block(b * S, h * dk, S, dk).noalias() += A.transpose() * Gb;
                           if (!gq && !gk) continue;
                           const RowMatrix dA = Gb * V.block(b * S, h * dk, S, dk).transpose();
                           const VectorXd dot = (dA.array() * A.array()).rowwise().sum();
                           const RowMatrix dS = scale * (A.array() * (dA.array().colwise() - dot.array())).matrix();
                           if (gq) as_matrix(*gq, B * S, D).block(b * S, h * dk, S, dk).noalias() += dS * K.block(b * S, h * dk, S, dk);
                           if (gk)
                             as_matrix(*gk, B * S, D).block(b * S, h * dk, S, dk).noalias() +=
                                 dS.transpose() * Q.block(b * S, h * dk, S, dk);
                         }
                     });
}

Tensor sort_last(const Tensor& x) {
  const Index Qn = x.dim(-1), M = x.size() / Qn;
  std::vector<Index> perm(static_cast<std::size_t>(x.size()));
  VectorXd y(x.size());
  const VectorXd& xv = x.value();
  for (Index r = 0; r < M; ++r) {
    auto first = perm.begin() + r * Qn;
    std::iota(first, first + Qn, r * Qn);
    std::stable_sort(first, first + Qn, [&](Index a, Index b) { return xv[a] < xv[b]; });
    for (Index j = 0; j < Qn; ++j) y[r * Qn + j] = xv[perm[static_cast<std::size_t>(r * Qn + j)]];
  }
  return make_result(x.shape(), std::move(y), {x}, [perm = std::move(perm)](detail::Node& n) {
    if (auto* gx = parent_grad(n, 0))
      for (std::size_t i = 0; i < perm.size(); ++i) (*gx)[perm[i]] += n.grad[static_cast<Index>(i)];
  });
}

}  // namespace pvf::ad
