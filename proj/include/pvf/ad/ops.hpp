#pragma once

#include <random>
#include <vector>

#include "pvf/ad/tensor.hpp"

namespace pvf::ad {

// Linear algebra -------------------------------------------------------------

/// x [..., K] times w [K, N] -> [..., N].
Tensor matmul(const Tensor& x, const Tensor& w);
/// x [..., N] plus bias [N] broadcast over leading dimensions.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// Elementwise ------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// x * scale + shift with constant scalars.
Tensor affine(const Tensor& x, double scale, double shift);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor softplus(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& x) { return affine(x, s, 0.0); }

// Shape manipulation -----------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
/// Concatenation along the last axis; leading dimensions must agree.
Tensor concat_last(const std::vector<Tensor>& parts);
Tensor slice_last(const Tensor& x, Index start, Index length);
/// x [B, T, F] -> x[:, t, :] as [B, F].
Tensor select_axis1(const Tensor& x, Index t);
/// T tensors of shape [B, F] -> [B, T, F].
Tensor stack_axis1(const std::vector<Tensor>& steps);
/// [B, A, C] -> [B, C, A].
Tensor swap_last2(const Tensor& x);

// Reductions -------------------------------------------------------------------

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
/// Mean over the last axis: [..., T] -> [...].
Tensor mean_last(const Tensor& x);
/// Mean over axis 1: [B, S, D] -> [B, D].
Tensor mean_axis1(const Tensor& x);

// Layers -----------------------------------------------------------------------

/// x [B, C, T], weight [C_out, C, K], bias [C_out] -> [B, C_out, T_out].
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, Index stride, Index padding);

/// Running statistics for batch normalization.
struct BatchNormState {
  Eigen::VectorXd running_mean;
  Eigen::VectorXd running_var;
};

/// Per-channel normalization of x [B, C] or [B, C, T]. Training mode uses
/// batch statistics and updates `state` (if given) with `momentum`; eval mode
/// uses the running statistics.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState* state, bool training,
                  double eps = 1e-5, double momentum = 0.1);

/// x [B, C, T] -> [B, C, (T - kernel) / stride + 1]; first maximum wins ties.
Tensor max_pool1d(const Tensor& x, Index kernel, Index stride);

/// Inverted dropout. Identity (same handle) when not training or rate == 0.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64* rng, bool training);

/// Normalizes each row over the last axis, then applies gamma/beta [D].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor softmax_last(const Tensor& x);

/// Scaled dot-product attention on q, k, v [B, S, D] split into `heads`
/// contiguous slices of D / heads. Returns the concatenated head outputs
/// [B, S, D]. When `weights` is given it receives the B * heads attention
/// matrices (S x S, rows sum to one), batch-major.
Tensor multi_head_scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v, Index heads,
                                   std::vector<RowMatrix>* weights = nullptr);

/// Ascending sort of every row of x [..., Q]; gradients follow the permutation.
Tensor sort_last(const Tensor& x);

}  // namespace pvf::ad
