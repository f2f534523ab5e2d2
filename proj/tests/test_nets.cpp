#include <doctest.h>

#include "helpers.hpp"
#include "pvf/error.hpp"
#include "pvf/nets.hpp"

using namespace pvf::nets;
using pvf::ad::grad_check;
using pvf::ad::NamedTensor;
using testing::probe;
using testing::random_tensor;

namespace {

constexpr double kTol = 1e-4;

Tensor& find(ParamRefs& refs, const std::string& name) {
  for (auto& [n, t] : refs.params)
    if (n == name) return *t;
  FAIL("no parameter " << name);
  throw std::logic_error("unreachable");
}

void check(const std::function<Tensor()>& f, const std::vector<NamedTensor>& params, double tol = kTol) {
  const auto report = grad_check(f, params);
  INFO("worst parameter: " << report.worst << " rel err " << report.max_rel_error);
  CHECK(report.passed(tol));
}

void copy_cell(const LstmCell& from, LstmCell& to) {
  to.w_f.mutable_value() = from.w_f.value();
  to.w_i.mutable_value() = from.w_i.value();
  to.w_u.mutable_value() = from.w_u.value();
  to.w_o.mutable_value() = from.w_o.value();
  to.b_f.mutable_value() = from.b_f.value();
  to.b_i.mutable_value() = from.b_i.value();
  to.b_u.mutable_value() = from.b_u.value();
  to.b_o.mutable_value() = from.b_o.value();
}

}  // namespace

TEST_SUITE("nets") {

TEST_CASE("lstm cell with zero parameters stays at zero") {
  Rng rng(3);
  LstmCell cell(3, 4, rng);
  ParamRefs refs;
  cell.collect(refs, "cell");
  for (auto& [n, t] : refs.params) t->mutable_value().setZero();
  auto x = random_tensor({2, 3}, rng, false);
  auto s = cell(x, cell.zero_state(2));
  CHECK(s.h.value().isZero());
  CHECK(s.c.value().isZero());
}

TEST_CASE("lstm forget gate saturation keeps the previous cell") {
  Rng rng(4);
  LstmCell cell(2, 3, rng);
  cell.b_f.mutable_value().setConstant(1e3);
  auto x = random_tensor({2, 2}, rng, false);
  auto prev = LstmState{random_tensor({2, 3}, rng, false), random_tensor({2, 3}, rng, false)};
  auto s = cell(x, prev);

  const Tensor z = pvf::ad::concat_last({prev.h, x});
  const auto i = pvf::ad::sigmoid(pvf::ad::add_bias(pvf::ad::matmul(z, cell.w_i), cell.b_i)).value();
  const auto u = pvf::ad::tanh(pvf::ad::add_bias(pvf::ad::matmul(z, cell.w_u), cell.b_u)).value();
  const Eigen::VectorXd expected = prev.c.value() + i.cwiseProduct(u);
  CHECK((s.c.value() - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("lstm cell gradients cover all eight weight tensors") {
  Rng rng(5);
  LstmCell cell(3, 4, rng);
  auto x = random_tensor({2, 3}, rng);
  auto h0 = random_tensor({2, 4}, rng), c0 = random_tensor({2, 4}, rng);
  ParamRefs refs;
  cell.collect(refs, "cell");
  auto params = refs.named();
  params.push_back({"x", x});
  params.push_back({"h0", h0});
  params.push_back({"c0", c0});
  check(
      [&] {
        auto s1 = cell(x, {h0, c0});
        auto s2 = cell(x, s1);
        return probe(pvf::ad::concat_last({s2.h, s2.c}));
      },
      params);
}

TEST_CASE("bilstm with one step equals one cell call per direction") {
  Rng rng(6);
  BiLstm net(3, 5, BiLstmConfig{4, 1}, rng);
  auto x = random_tensor({2, 1, 3}, rng, false);
  auto seq = net.sequence(x);
  REQUIRE(seq.size() == 1);
  auto x0 = pvf::ad::select_axis1(x, 0);
  auto hf = net.forward_cell(0)(x0, net.forward_cell(0).zero_state(2)).h;
  auto hb = net.backward_cell(0)(x0, net.backward_cell(0).zero_state(2)).h;
  CHECK(seq[0].value() == pvf::ad::concat_last({hf, hb}).value());
  CHECK(net(x).shape() == pvf::ad::Shape{2, 5});
}

TEST_CASE("bilstm palindrome with tied directions is symmetric at the centre") {
  Rng rng(7);
  BiLstm net(2, 4, BiLstmConfig{3, 1}, rng);
  copy_cell(net.forward_cell(0), net.backward_cell(0));
  auto half = random_tensor({1, 3, 2}, rng, false);
  Eigen::VectorXd v(10);
  const auto h = half.value();
  // steps a, b, c, b, a
  const int order[] = {0, 1, 2, 1, 0};
  for (int t = 0; t < 5; ++t) v.segment(2 * t, 2) = h.segment(2 * order[t], 2);
  auto x = Tensor::from({1, 5, 2}, v);
  auto centre = net.sequence(x)[2].value();
  CHECK((centre.head(3) - centre.tail(3)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bilstm gradients") {
  Rng rng(8);
  BiLstm net(2, 3, BiLstmConfig{3, 2}, rng);
  auto x = random_tensor({2, 4, 2}, rng);
  ParamRefs refs;
  net.collect(refs, "bilstm");
  auto params = refs.named();
  params.push_back({"x", x});
  check([&] { return probe(net(x)); }, params);
}

TEST_CASE("multi-head attention layer") {
  Rng rng(9);
  MultiHeadAttention attn(4, 2, rng);
  auto q = random_tensor({2, 1, 4}, rng);
  auto kv = random_tensor({2, 1, 4}, rng, false);

  SUBCASE("a single key passes its value regardless of the query") {
    auto q2 = random_tensor({2, 1, 4}, rng, false);
    auto a = attn(q, kv).value();
    auto b = attn(q2, kv).value();
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
    auto direct = attn.wo(attn.wv(pvf::ad::reshape(kv, {2, 4}))).value();
    CHECK((a - direct).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("gradients") {
    auto ctx = random_tensor({2, 3, 4}, rng);
    auto query = random_tensor({2, 3, 4}, rng);
    ParamRefs refs;
    attn.collect(refs, "attn");
    auto params = refs.named();
    params.push_back({"q", query});
    params.push_back({"ctx", ctx});
    check([&] { return probe(attn(query, ctx)); }, params);
  }
  SUBCASE("width must divide into heads") { CHECK_THROWS_AS(MultiHeadAttention(5, 2, rng), pvf::ValidationError); }
}

TEST_CASE("feed-forward and layer-norm modules") {
  Rng rng(10);
  FeedForward ff(4, 6, rng);
  LayerNorm ln(4);
  auto x = random_tensor({3, 4}, rng);
  ParamRefs refs;
  ff.collect(refs, "ff");
  ln.collect(refs, "ln");
  ln.gamma.mutable_value() = random_tensor({4}, rng, false).value();
  auto params = refs.named();
  params.push_back({"x", x});
  check([&] { return probe(ff(ln(x))); }, params);
}

TEST_CASE("cnn extractor") {
  Rng rng(11);
  CnnExtractor cnn(1, 5, CnnConfig{4, 2, 3, 0.1}, rng);
  CHECK(cnn.min_length() == 4);
  auto x = random_tensor({3, 12, 1}, rng);

  SUBCASE("shape for several lengths") {
    for (Index T : {4, 7, 12, 20}) {
      auto xt = random_tensor({2, T, 1}, rng, false);
      CHECK(cnn(xt, {}).shape() == pvf::ad::Shape{2, 5});
    }
  }
  SUBCASE("too short is rejected with the minimum") {
    auto xs = random_tensor({2, 3, 1}, rng, false);
    CHECK_THROWS_WITH_AS(cnn(xs, {}), doctest::Contains("minimum of 4"), pvf::ValidationError);
  }
  SUBCASE("eval passes are identical") {
    Rng drop(1);
    cnn(x, {true, &drop});
    auto a = cnn(x, {}).value();
    auto b = cnn(x, {}).value();
    CHECK(a == b);
  }
  SUBCASE("gradients in training mode") {
    ParamRefs refs;
    cnn.collect(refs, "cnn");
    auto params = refs.named();
    params.push_back({"x", x});
    Rng drop(2);
    check(
        [&] {
          drop.seed(2);
          return probe(cnn(x, {true, &drop}));
        },
        params);
  }
}

TEST_CASE("itransformer") {
  Rng rng(12);
  const ITransformerConfig cfg{8, 1, 2, 12};
  ITransformer itr(6, 5, cfg, rng);

  SUBCASE("one variable attends only to itself") {
    auto x = random_tensor({2, 6, 1}, rng, false);
    auto out = itr(x);
    CHECK(out.shape() == pvf::ad::Shape{2, 5});
    // Batch rows are independent, so each row depends only on its own series.
    auto x1 = Tensor::from({1, 6, 1}, x.value().head(6));
    CHECK((itr(x1).value() - out.value().head(5)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("variable order does not change the pooled output") {
    auto x = random_tensor({2, 6, 3}, rng, false);
    Eigen::VectorXd p(x.size());
    const int perm[] = {2, 0, 1};
    for (Index b = 0; b < 2; ++b)
      for (Index t = 0; t < 6; ++t)
        for (Index v = 0; v < 3; ++v) p[(b * 6 + t) * 3 + v] = x.value()[(b * 6 + t) * 3 + perm[v]];
    auto xp = Tensor::from({2, 6, 3}, p);
    CHECK((itr(x).value() - itr(xp).value()).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("gradients through one block") {
    auto x = random_tensor({2, 6, 3}, rng);
    ParamRefs refs;
    itr.collect(refs, "itr");
    for (auto& [n, t] : refs.params)
      if (n.find("gamma") != std::string::npos) t->mutable_value() = random_tensor(t->shape(), rng, false).value();
    auto params = refs.named();
    params.push_back({"x", x});
    check([&] { return probe(itr(x)); }, params);
  }
}

TEST_CASE("attention fusion") {
  Rng rng(13);
  AttentionFusion fusion(4, 2, rng);
  ParamRefs refs;
  fusion.collect(refs, "fusion");

  SUBCASE("identical inputs pass through the value and output projections") {
    auto f = random_tensor({3, 4}, rng, false);
    auto out = fusion({f, f, f});
    CHECK(out.shape() == pvf::ad::Shape{3, 4});
    auto wv = find(refs, "fusion.attn.wv.weight"), bv = find(refs, "fusion.attn.wv.bias");
    auto wo = find(refs, "fusion.attn.wo.weight"), bo = find(refs, "fusion.attn.wo.bias");
    using namespace pvf::ad;
    auto direct = add_bias(matmul(add_bias(matmul(f, wv), bv), wo), bo);
    CHECK((out.value() - direct.value()).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("gradient reaches every branch") {
    auto a = random_tensor({2, 4}, rng), b = random_tensor({2, 4}, rng), c = random_tensor({2, 4}, rng);
    probe(fusion({a, b, c})).backward();
    CHECK(a.grad().norm() > 0);
    CHECK(b.grad().norm() > 0);
    CHECK(c.grad().norm() > 0);
    auto params = refs.named();
    params.push_back({"a", a});
    params.push_back({"b", b});
    params.push_back({"c", c});
    check([&] { return probe(fusion({a, b, c})); }, params);
  }
}

TEST_CASE("full extractor stack gradients") {
  Rng rng(14);
  CnnExtractor cnn(1, 4, CnnConfig{3, 2, 3, 0.0}, rng);
  ITransformer itr(6, 4, ITransformerConfig{4, 1, 2, 8}, rng);
  BiLstm lstm(2, 4, BiLstmConfig{3, 1}, rng);
  AttentionFusion fusion(4, 2, rng);
  auto high = random_tensor({2, 6, 1}, rng);
  auto low = random_tensor({2, 6, 1}, rng);
  auto weather = random_tensor({2, 6, 2}, rng);
  ParamRefs refs;
  cnn.collect(refs, "cnn");
  itr.collect(refs, "itr");
  lstm.collect(refs, "lstm");
  fusion.collect(refs, "fusion");
  auto params = refs.named();
  params.push_back({"high", high});
  params.push_back({"weather", weather});
  check([&] { return probe(fusion({cnn(high, {true, nullptr}), itr(low), lstm(weather)})); }, params);
}

}  // TEST_SUITE
