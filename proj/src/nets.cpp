#include "pvf/nets.hpp"

#include <cmath>

#include "pvf/error.hpp"

namespace pvf::nets {

Index ParamRefs::count() const {
  Index n = 0;
  for (const auto& [name, t] : params) n += t->size();
  return n;
}

std::vector<ad::NamedTensor> ParamRefs::named() const {
  std::vector<ad::NamedTensor> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) out.push_back({name, *t});
  return out;
}

Tensor uniform_init(Shape shape, Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Eigen::VectorXd v(ad::numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Linear::Linear(Index in, Index out, Rng& rng)
    : weight(uniform_init({in, out}, in, rng)), bias(uniform_init({out}, in, rng)) {}

void Linear::collect(ParamRefs& refs, const std::string& prefix) {
  refs.param(prefix + ".weight", weight);
  refs.param(prefix + ".bias", bias);
}

Conv1d::Conv1d(Index in, Index out, Index kernel, Index pad, Rng& rng)
    : weight(uniform_init({out, in, kernel}, in * kernel, rng)), bias(uniform_init({out}, in * kernel, rng)), padding(pad) {}

void Conv1d::collect(ParamRefs& refs, const std::string& prefix) {
  refs.param(prefix + ".weight", weight);
  refs.param(prefix + ".bias", bias);
}

BatchNorm1d::BatchNorm1d(Index channels)
    : gamma(Tensor::from({channels}, Eigen::VectorXd::Ones(channels), true)),
      beta(Tensor::zeros({channels}, true)),
      state{Eigen::VectorXd::Zero(channels), Eigen::VectorXd::Ones(channels)} {}

Tensor BatchNorm1d::operator()(const Tensor& x, const ForwardContext& ctx) {
  return ad::batch_norm(x, gamma, beta, &state, ctx.training, eps, momentum);
}

void BatchNorm1d::collect(ParamRefs& refs, const std::string& prefix) {
  refs.param(prefix + ".gamma", gamma);
  refs.param(prefix + ".beta", beta);
  refs.buffer(prefix + ".running_mean", state.running_mean);
  refs.buffer(prefix + ".running_var", state.running_var);
}

LayerNorm::LayerNorm(Index dim)
    : gamma(Tensor::from({dim}, Eigen::VectorXd::Ones(dim), true)), beta(Tensor::zeros({dim}, true)) {}

void LayerNorm::collect(ParamRefs& refs, const std::string& prefix) {
  refs.param(prefix + ".gamma", gamma);
  refs.param(prefix + ".beta", beta);
}

FeedForward::FeedForward(Index dim, Index hidden, Rng& rng) : up(dim, hidden, rng), down(hidden, dim, rng) {}

void FeedForward::collect(ParamRefs& refs, const std::string& prefix) {
  up.collect(refs, prefix + ".up");
  down.collect(refs, prefix + ".down");
}

MultiHeadAttention::MultiHeadAttention(Index dim, Index h, Rng& rng)
    : wq(dim, dim, rng), wk(dim, dim, rng), wv(dim, dim, rng), wo(dim, dim, rng), heads(h) {
  require(h >= 1 && dim % h == 0,
          "attention: model dimension " + std::to_string(dim) + " is not divisible by " + std::to_string(h) + " heads");
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& context,
                                      std::vector<ad::RowMatrix>* weights) const {
  return wo(ad::multi_head_scaled_attention(wq(query), wk(context), wv(context), heads, weights));
}

void MultiHeadAttention::collect(ParamRefs& refs, const std::string& prefix) {
  wq.collect(refs, prefix + ".wq");
  wk.collect(refs, prefix + ".wk");
  wv.collect(refs, prefix + ".wv");
  wo.collect(refs, prefix + ".wo");
}

LstmCell::LstmCell(Index in, Index hidden, Rng& rng) {
  const Index fan = in + hidden;
  for (Tensor* w : {&w_f, &w_i, &w_u, &w_o}) *w = uniform_init({fan, hidden}, hidden, rng);
  for (Tensor* b : {&b_f, &b_i, &b_u, &b_o}) *b = uniform_init({hidden}, hidden, rng);
}

LstmState LstmCell::operator()(const Tensor& x, const LstmState& prev) const {
  require(x.rank() == 2 && x.dim(1) == in(), "lstm: expected input [B, " + std::to_string(in()) + "], got " +
                                                 ad::to_string(x.shape()));
  const Tensor z = ad::concat_last({prev.h, x});
  const Tensor f = ad::sigmoid(ad::add_bias(ad::matmul(z, w_f), b_f));
  const Tensor i = ad::sigmoid(ad::add_bias(ad::matmul(z, w_i), b_i));
  const Tensor u = ad::tanh(ad::add_bias(ad::matmul(z, w_u), b_u));
  const Tensor o = ad::sigmoid(ad::add_bias(ad::matmul(z, w_o), b_o));
  const Tensor c = f * prev.c + i * u;
  return {o * ad::tanh(c), c};
}

LstmState LstmCell::zero_state(Index batch) const {
  return {Tensor::zeros({batch, hidden()}), Tensor::zeros({batch, hidden()})};
}

void LstmCell::collect(ParamRefs& refs, const std::string& prefix) {
  refs.param(prefix + ".W_f", w_f);
  refs.param(prefix + ".W_i", w_i);
  refs.param(prefix + ".W_u", w_u);
  refs.param(prefix + ".W_o", w_o);
  refs.param(prefix + ".b_f", b_f);
  refs.param(prefix + ".b_i", b_i);
  refs.param(prefix + ".b_u", b_u);
  refs.param(prefix + ".b_o", b_o);
}

// CNN -------------------------------------------------------------------------

CnnExtractor::CnnExtractor(Index channels, Index d, const CnnConfig& cfg, Rng& rng) : dropout_(cfg.dropout) {
  require(cfg.layers >= 1 && cfg.filters >= 1 && cfg.kernel >= 1, "cnn: invalid configuration");
  Index in = channels;
  for (Index l = 0; l < cfg.layers; ++l) {
    convs_.emplace_back(in, cfg.filters, cfg.kernel, (cfg.kernel - 1) / 2, rng);
    norms_.emplace_back(cfg.filters);
    in = cfg.filters;
  }
  proj_ = Linear(cfg.filters, d, rng);
}

Index CnnExtractor::min_length() const {
  for (Index t = 1;; ++t) {
    Index len = t;
    bool ok = true;
    for (const auto& c : convs_) {
      len = len + 2 * c.padding - c.weight.dim(2) + 1;
      if (len < 2) {
        ok = false;
        break;
      }
      len = (len - 2) / 2 + 1;
    }
    if (ok) return t;
  }
}

Tensor CnnExtractor::operator()(const Tensor& x, const ForwardContext& ctx) {
  require(x.rank() == 3, "cnn: expected input [B, T, C], got " + ad::to_string(x.shape()));
  require(x.dim(1) >= min_length(), "cnn: input length " + std::to_string(x.dim(1)) + " is below the minimum of " +
                                        std::to_string(min_length()));
  Tensor h = ad::swap_last2(x);
  for (std::size_t l = 0; l < convs_.size(); ++l)
    h = ad::max_pool1d(ad::relu(norms_[l](convs_[l](h), ctx)), 2, 2);
  h = ad::dropout(h, dropout_, ctx.rng, ctx.training);
  return proj_(ad::mean_last(h));
}

void CnnExtractor::collect(ParamRefs& refs, const std::string& prefix) {
  for (std::size_t l = 0; l < convs_.size(); ++l) {
    convs_[l].collect(refs, prefix + ".conv" + std::to_string(l + 1));
    norms_[l].collect(refs, prefix + ".bn" + std::to_string(l + 1));
  }
  proj_.collect(refs, prefix + ".proj");
}

// iTransformer ----------------------------------------------------------------

TransformerBlock::TransformerBlock(const ITransformerConfig& cfg, Rng& rng)
    : ln_attn(cfg.dim), ln_ff(cfg.dim), attn(cfg.dim, cfg.heads, rng), ff(cfg.dim, cfg.ff_hidden, rng) {}

Tensor TransformerBlock::operator()(const Tensor& z) const {
  const Tensor n1 = ln_attn(z);
  const Tensor z1 = z + attn(n1, n1);
  return z1 + ff(ln_ff(z1));
}

void TransformerBlock::collect(ParamRefs& refs, const std::string& prefix) {
  ln_attn.collect(refs, prefix + ".ln_attn");
  attn.collect(refs, prefix + ".attn");
  ln_ff.collect(refs, prefix + ".ln_ff");
  ff.collect(refs, prefix + ".ff");
}

ITransformer::ITransformer(Index lookback, Index d, const ITransformerConfig& cfg, Rng& rng)
    : embed_(lookback, cfg.dim, rng), ln_embed_(cfg.dim), ln_out_(cfg.dim) {
  require(cfg.depth >= 0, "itransformer: depth must be non-negative");
  for (Index l = 0; l < cfg.depth; ++l) blocks_.emplace_back(cfg, rng);
  proj_ = Linear(cfg.dim, d, rng);
}

Tensor ITransformer::tokens(const Tensor& x) const {
  require(x.rank() == 3 && x.dim(1) == embed_.in(),
          "itransformer: expected input [B, " + std::to_string(embed_.in()) + ", N_v], got " + ad::to_string(x.shape()));
  Tensor z = ln_embed_(embed_(ad::swap_last2(x)));
  for (const auto& b : blocks_) z = b(z);
  return ln_out_(z);
}

Tensor ITransformer::operator()(const Tensor& x) const { return proj_(ad::mean_axis1(tokens(x))); }

void ITransformer::collect(ParamRefs& refs, const std::string& prefix) {
  embed_.collect(refs, prefix + ".embed");
  ln_embed_.collect(refs, prefix + ".ln_embed");
  for (std::size_t l = 0; l < blocks_.size(); ++l) blocks_[l].collect(refs, prefix + ".block" + std::to_string(l + 1));
  ln_out_.collect(refs, prefix + ".ln_out");
  proj_.collect(refs, prefix + ".proj");
}

// BiLSTM ----------------------------------------------------------------------

BiLstm::BiLstm(Index features, Index d, const BiLstmConfig& cfg, Rng& rng) {
  require(cfg.layers >= 1 && cfg.hidden >= 1, "bilstm: invalid configuration");
  Index in = features;
  for (Index l = 0; l < cfg.layers; ++l) {
    fwd_.emplace_back(in, cfg.hidden, rng);
    bwd_.emplace_back(in, cfg.hidden, rng);
    in = 2 * cfg.hidden;
  }
  proj_ = Linear(2 * cfg.hidden, d, rng);
}

std::vector<Tensor> BiLstm::sequence(const Tensor& x) const {
  require(x.rank() == 3 && x.dim(2) == fwd_.front().in(),
          "bilstm: expected input [B, T, " + std::to_string(fwd_.front().in()) + "], got " + ad::to_string(x.shape()));
  const Index B = x.dim(0), T = x.dim(1);
  require(T >= 1, "bilstm: empty sequence");
  std::vector<Tensor> steps;
  for (Index t = 0; t < T; ++t) steps.push_back(ad::select_axis1(x, t));

  for (std::size_t l = 0; l < fwd_.size(); ++l) {
    std::vector<Tensor> hf(steps.size()), hb(steps.size());
    LstmState s = fwd_[l].zero_state(B);
    for (std::size_t t = 0; t < steps.size(); ++t) {
      s = fwd_[l](steps[t], s);
      hf[t] = s.h;
    }
    s = bwd_[l].zero_state(B);
    for (std::size_t t = steps.size(); t-- > 0;) {
      s = bwd_[l](steps[t], s);
      hb[t] = s.h;
    }
    for (std::size_t t = 0; t < steps.size(); ++t) steps[t] = ad::concat_last({hf[t], hb[t]});
  }
  return steps;
}

Tensor BiLstm::operator()(const Tensor& x) const { return proj_(sequence(x).back()); }

void BiLstm::collect(ParamRefs& refs, const std::string& prefix) {
  for (std::size_t l = 0; l < fwd_.size(); ++l) {
    fwd_[l].collect(refs, prefix + ".l" + std::to_string(l + 1) + ".fwd");
    bwd_[l].collect(refs, prefix + ".l" + std::to_string(l + 1) + ".bwd");
  }
  proj_.collect(refs, prefix + ".proj");
}

// Fusion ----------------------------------------------------------------------

AttentionFusion::AttentionFusion(Index d, Index heads, Rng& rng) : attn_(d, heads, rng) {}

Tensor AttentionFusion::operator()(const std::vector<Tensor>& features, std::vector<ad::RowMatrix>* weights) const {
  const Tensor tokens = ad::stack_axis1(features);
  return ad::mean_axis1(attn_(tokens, tokens, weights));
}

void AttentionFusion::collect(ParamRefs& refs, const std::string& prefix) { attn_.collect(refs, prefix + ".attn"); }

}  // namespace pvf::nets
