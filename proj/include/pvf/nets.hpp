#pragma once

// Layers and the three feature extractors on top of the autodiff engine.

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pvf/ad/gradcheck.hpp"
#include "pvf/ad/ops.hpp"

namespace pvf::nets {

using ad::Index;
using ad::Shape;
using ad::Tensor;
using Rng = std::mt19937_64;

struct ForwardContext {
  bool training = false;
  /// Required in training mode when dropout is active.
  Rng* rng = nullptr;
};

/// Named references to a module's trainable tensors and running statistics.
/// Pointers stay valid as long as the owning module is not moved.
struct ParamRefs {
  std::vector<std::pair<std::string, Tensor*>> params;
  std::vector<std::pair<std::string, Eigen::VectorXd*>> buffers;

  void param(const std::string& name, Tensor& t) { params.emplace_back(name, &t); }
  void buffer(const std::string& name, Eigen::VectorXd& v) { buffers.emplace_back(name, &v); }
  Index count() const;
  std::vector<ad::NamedTensor> named() const;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor uniform_init(Shape shape, Index fan_in, Rng& rng);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(Index in, Index out, Rng& rng);
  Index in() const { return weight.dim(0); }
  Index out() const { return weight.dim(1); }
  Tensor operator()(const Tensor& x) const { return ad::add_bias(ad::matmul(x, weight), bias); }
  void collect(ParamRefs& refs, const std::string& prefix);
};

struct Conv1d {
  Tensor weight;  // [out, in, kernel]
  Tensor bias;    // [out]
  Index padding = 0;

  Conv1d() = default;
  Conv1d(Index in, Index out, Index kernel, Index padding, Rng& rng);
  Tensor operator()(const Tensor& x) const { return ad::conv1d(x, weight, bias, 1, padding); }
  void collect(ParamRefs& refs, const std::string& prefix);
};

struct BatchNorm1d {
  Tensor gamma;
  Tensor beta;
  ad::BatchNormState state;
  double eps = 1e-5;
  double momentum = 0.1;

  BatchNorm1d() = default;
  explicit BatchNorm1d(Index channels);
  Tensor operator()(const Tensor& x, const ForwardContext& ctx);
  void collect(ParamRefs& refs, const std::string& prefix);
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(Index dim);
  Tensor operator()(const Tensor& x) const { return ad::layer_norm(x, gamma, beta, eps); }
  void collect(ParamRefs& refs, const std::string& prefix);
};

struct FeedForward {
  Linear up, down;

  FeedForward() = default;
  FeedForward(Index dim, Index hidden, Rng& rng);
  Tensor operator()(const Tensor& x) const { return down(ad::relu(up(x))); }
  void collect(ParamRefs& refs, const std::string& prefix);
};

/// softmax(Q K^T / sqrt(d_k)) V per head, heads concatenated, then W^O.
struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  Index heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(Index dim, Index heads, Rng& rng);
  /// query, context: [B, S, D].
  Tensor operator()(const Tensor& query, const Tensor& context,
                    std::vector<ad::RowMatrix>* weights = nullptr) const;
  void collect(ParamRefs& refs, const std::string& prefix);
};

struct LstmState {
  Tensor h, c;
};

/// Gates act on the concatenation [h_prev, x_t].
struct LstmCell {
  Tensor w_f, w_i, w_u, w_o;  // [(hidden + in), hidden]
  Tensor b_f, b_i, b_u, b_o;  // [hidden]

  LstmCell() = default;
  LstmCell(Index in, Index hidden, Rng& rng);
  Index hidden() const { return b_f.dim(0); }
  Index in() const { return w_f.dim(0) - hidden(); }
  LstmState operator()(const Tensor& x, const LstmState& prev) const;
  LstmState zero_state(Index batch) const;
  void collect(ParamRefs& refs, const std::string& prefix);
};

// Extractors ------------------------------------------------------------------

struct CnnConfig {
  Index filters = 64;
  Index layers = 2;
  Index kernel = 3;
  double dropout = 0.1;
};

/// [conv -> BN -> ReLU -> maxpool] x layers, dropout, adaptive average pool,
/// linear projection. Input [B, T, C], output [B, d].
class CnnExtractor {
 public:
  CnnExtractor() = default;
  CnnExtractor(Index channels, Index d, const CnnConfig& cfg, Rng& rng);

  Tensor operator()(const Tensor& x, const ForwardContext& ctx);
  /// Shortest input length that survives every pooling stage.
  Index min_length() const;
  void collect(ParamRefs& refs, const std::string& prefix);

 private:
  std::vector<Conv1d> convs_;
  std::vector<BatchNorm1d> norms_;
  Linear proj_;
  double dropout_ = 0.0;
};

struct ITransformerConfig {
  Index dim = 128;
  Index depth = 4;
  Index heads = 8;
  Index ff_hidden = 256;
};

struct TransformerBlock {
  LayerNorm ln_attn, ln_ff;
  MultiHeadAttention attn;
  FeedForward ff;

  TransformerBlock() = default;
  TransformerBlock(const ITransformerConfig& cfg, Rng& rng);
  /// z + Attn(LN(z)), then + FFN(LN(.)). z: [B, N, D].
  Tensor operator()(const Tensor& z) const;
  void collect(ParamRefs& refs, const std::string& prefix);
};

/// Each variable's whole lookback series becomes one token; attention runs
/// across variables. Input [B, T, N_v], output [B, d].
class ITransformer {
 public:
  ITransformer() = default;
  ITransformer(Index lookback, Index d, const ITransformerConfig& cfg, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  /// Token states after the final LayerNorm, [B, N_v, dim].
  Tensor tokens(const Tensor& x) const;
  void collect(ParamRefs& refs, const std::string& prefix);

 private:
  Linear embed_;
  LayerNorm ln_embed_, ln_out_;
  std::vector<TransformerBlock> blocks_;
  Linear proj_;
};

struct BiLstmConfig {
  Index hidden = 64;
  Index layers = 2;
};

/// Stacked bidirectional LSTM; the last step's [h_fwd, h_bwd] is projected
/// to d. Input [B, T, F], output [B, d].
class BiLstm {
 public:
  BiLstm() = default;
  BiLstm(Index features, Index d, const BiLstmConfig& cfg, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  /// Per-step [h_fwd, h_bwd] of the top layer, each [B, 2 * hidden].
  std::vector<Tensor> sequence(const Tensor& x) const;
  LstmCell& forward_cell(std::size_t layer) { return fwd_[layer]; }
  LstmCell& backward_cell(std::size_t layer) { return bwd_[layer]; }
  void collect(ParamRefs& refs, const std::string& prefix);

 private:
  std::vector<LstmCell> fwd_, bwd_;
  Linear proj_;
};

/// Stacks the branch features as tokens, self-attention, mean over tokens.
class AttentionFusion {
 public:
  AttentionFusion() = default;
  AttentionFusion(Index d, Index heads, Rng& rng);

  /// Each input [B, d]; output [B, d].
  Tensor operator()(const std::vector<Tensor>& features, std::vector<ad::RowMatrix>* weights = nullptr) const;
  void collect(ParamRefs& refs, const std::string& prefix);

 private:
  MultiHeadAttention attn_;
};

}  // namespace pvf::nets
