#include <doctest.h>

#include "helpers.hpp"
#include "pvf/error.hpp"

using namespace pvf::ad;
using testing::probe;
using testing::random_tensor;

namespace {

constexpr double kTol = 1e-4;

void check(const std::function<Tensor()>& f, const std::vector<NamedTensor>& params, double tol = kTol) {
  const auto report = grad_check(f, params);
  INFO("worst parameter: " << report.worst << " rel err " << report.max_rel_error);
  CHECK(report.passed(tol));
}

}  // namespace

TEST_SUITE("ad") {

TEST_CASE("conv1d hand examples") {
  auto x = Tensor::from({1, 1, 5}, (Eigen::VectorXd(5) << 1, 2, 3, 4, 5).finished());
  auto w = Tensor::from({1, 1, 3}, Eigen::VectorXd::Ones(3));
  auto b = Tensor::zeros({1});
  auto y = conv1d(x, w, b, 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 3});
  CHECK(y.value() == (Eigen::VectorXd(3) << 6, 9, 12).finished());

  auto xs = Tensor::from({1, 1, 4}, (Eigen::VectorXd(4) << -1, 2, -3, 4).finished());
  auto id = relu(conv1d(xs, Tensor::from({1, 1, 1}, Eigen::VectorXd::Ones(1)), b, 1, 0));
  CHECK(id.value() == (Eigen::VectorXd(4) << 0, 2, 0, 4).finished());
}

TEST_CASE("conv1d rejects kernels that do not fit") {
  auto x = Tensor::zeros({1, 1, 2});
  CHECK_THROWS_AS(conv1d(x, Tensor::zeros({1, 1, 5}), Tensor::zeros({1}), 1, 1), pvf::ValidationError);
  CHECK_THROWS_AS(conv1d(x, Tensor::zeros({1, 2, 1}), Tensor::zeros({1}), 1, 0), pvf::ValidationError);
}

TEST_CASE("elementwise and linear gradients") {
  std::mt19937_64 rng(1);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  auto w = random_tensor({4, 5}, rng), bias = random_tensor({5}, rng);
  check([&] { return probe(add_bias(matmul(a, w), bias)); }, {{"a", a}, {"w", w}, {"bias", bias}}, 1e-7);
  check([&] { return probe(a * b - 0.5 * a + b); }, {{"a", a}, {"b", b}});
  check([&] { return probe(sigmoid(a) + tanh(b) + softplus(a) + relu(b)); }, {{"a", a}, {"b", b}});
  check([&] { return mean_all(affine(a, 3.0, 1.0)); }, {{"a", a}});
}

TEST_CASE("softplus is stable for large inputs") {
  auto x = Tensor::from({3}, (Eigen::VectorXd(3) << -800, 0, 800).finished());
  auto y = softplus(x).value();
  CHECK(y[0] >= 0.0);
  CHECK(y[0] < 1e-300);
  CHECK(y[1] == doctest::Approx(std::log(2.0)));
  CHECK(y[2] == 800.0);
}

TEST_CASE("shape op gradients") {
  std::mt19937_64 rng(2);
  auto x = random_tensor({2, 3, 4}, rng), y = random_tensor({2, 3, 2}, rng);
  check([&] { return probe(concat_last({x, y})); }, {{"x", x}, {"y", y}});
  check([&] { return probe(slice_last(x, 1, 2)); }, {{"x", x}});
  check([&] { return probe(select_axis1(x, 2)); }, {{"x", x}});
  check([&] { return probe(swap_last2(x)); }, {{"x", x}});
  check([&] { return probe(reshape(x, {6, 4})); }, {{"x", x}});
  check([&] { return probe(stack_axis1({select_axis1(x, 0), select_axis1(x, 2)})); }, {{"x", x}});
  check([&] { return probe(mean_last(x)) + probe(mean_axis1(x)); }, {{"x", x}});
}

TEST_CASE("swap_last2 transposes each batch") {
  auto x = Tensor::from({1, 2, 3}, (Eigen::VectorXd(6) << 1, 2, 3, 4, 5, 6).finished());
  CHECK(swap_last2(x).value() == (Eigen::VectorXd(6) << 1, 4, 2, 5, 3, 6).finished());
}

TEST_CASE("conv1d gradient on 3x2x8") {
  std::mt19937_64 rng(3);
  auto x = random_tensor({3, 2, 8}, rng), w = random_tensor({4, 2, 3}, rng), b = random_tensor({4}, rng);
  check([&] { return probe(conv1d(x, w, b, 1, 1)); }, {{"x", x}, {"w", w}, {"b", b}});
  check([&] { return probe(conv1d(x, w, b, 2, 0)); }, {{"x", x}, {"w", w}, {"b", b}});
}

TEST_CASE("batch norm") {
  std::mt19937_64 rng(4);
  auto x = random_tensor({5, 3, 4}, rng), g = random_tensor({3}, rng), be = random_tensor({3}, rng);
  BatchNormState st{Eigen::VectorXd::Zero(3), Eigen::VectorXd::Ones(3)};
  check([&] { return probe(batch_norm(x, g, be, &st, true)); }, {{"x", x}, {"gamma", g}, {"beta", be}});
  check([&] { return probe(batch_norm(x, g, be, &st, false)); }, {{"x", x}, {"gamma", g}, {"beta", be}});
  auto x2 = random_tensor({6, 3}, rng);
  check([&] { return probe(batch_norm(x2, g, be, &st, true)); }, {{"x", x2}, {"gamma", g}});

  SUBCASE("identical rows normalize to zero") {
    Eigen::VectorXd v(6);
    v << 1, 2, 3, 1, 2, 3;
    auto same = Tensor::from({2, 3}, v);
    auto y = batch_norm(same, Tensor::from({3}, Eigen::VectorXd::Ones(3)), Tensor::zeros({3}), nullptr, true);
    CHECK(y.value().cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("running statistics") {
    BatchNormState s{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)};
    auto z = Tensor::from({4, 1}, (Eigen::VectorXd(4) << 1, 2, 3, 4).finished());
    batch_norm(z, Tensor::from({1}, Eigen::VectorXd::Ones(1)), Tensor::zeros({1}), &s, true);
    CHECK(s.running_mean[0] == doctest::Approx(0.25));
    CHECK(s.running_var[0] == doctest::Approx(0.9 + 0.1 * 5.0 / 3.0));
  }
}

TEST_CASE("max pool and dropout") {
  std::mt19937_64 rng(5);
  auto x = random_tensor({2, 3, 7}, rng);
  auto y = max_pool1d(x, 2, 2);
  CHECK(y.shape() == Shape{2, 3, 3});
  check([&] { return probe(max_pool1d(x, 2, 2)); }, {{"x", x}});
  CHECK_THROWS_AS(max_pool1d(Tensor::zeros({1, 1, 1}), 2, 2), pvf::ValidationError);

  check(
      [&] {
        std::mt19937_64 r(7);
        return probe(dropout(x, 0.3, &r, true));
      },
      {{"x", x}});
  auto same = dropout(x, 0.3, nullptr, false);
  CHECK(same.ptr() == x.ptr());
}

TEST_CASE("layer norm") {
  std::mt19937_64 rng(6);
  auto x = random_tensor({2, 3, 8}, rng, true, 5.0);
  auto g = random_tensor({8}, rng), b = random_tensor({8}, rng);
  check([&] { return probe(layer_norm(x, g, b)); }, {{"x", x}, {"gamma", g}, {"beta", b}});

  const auto normed = layer_norm(x, Tensor::from({8}, Eigen::VectorXd::Ones(8)), Tensor::zeros({8}), 1e-12);
  const auto plain = normed.matrix();
  for (Index r = 0; r < plain.rows(); ++r) {
    CHECK(std::abs(plain.row(r).mean()) < 1e-7);
    CHECK(std::abs(plain.row(r).array().square().mean() - 1.0) < 1e-6);
  }
}

TEST_CASE("softmax") {
  std::mt19937_64 rng(8);
  auto x = random_tensor({4, 6}, rng, true, 10.0);
  const auto sm = softmax_last(x);
  const auto y = sm.matrix();
  for (Index r = 0; r < y.rows(); ++r) CHECK(std::abs(y.row(r).sum() - 1.0) < 1e-9);
  auto x2 = random_tensor({4, 6}, rng);
  check([&] { return probe(softmax_last(x2)); }, {{"x", x2}});
}

TEST_CASE("scaled attention") {
  std::mt19937_64 rng(9);
  auto q = random_tensor({2, 3, 8}, rng), k = random_tensor({2, 3, 8}, rng), v = random_tensor({2, 3, 8}, rng);
  check([&] { return probe(multi_head_scaled_attention(q, k, v, 2)); }, {{"q", q}, {"k", k}, {"v", v}});

  std::vector<RowMatrix> weights;
  multi_head_scaled_attention(q, k, v, 4, &weights);
  REQUIRE(weights.size() == 8);
  for (const auto& a : weights)
    for (Index r = 0; r < a.rows(); ++r) CHECK(std::abs(a.row(r).sum() - 1.0) < 1e-9);

  CHECK_THROWS_AS(multi_head_scaled_attention(q, k, v, 3), pvf::ValidationError);
}

TEST_CASE("two-token attention by hand") {
  // Q = K = [[1, 0], [0, 1]], V = [[1, 2], [3, 4]], one head, d_k = 2.
  auto q = Tensor::from({1, 2, 2}, (Eigen::VectorXd(4) << 1, 0, 0, 1).finished());
  auto v = Tensor::from({1, 2, 2}, (Eigen::VectorXd(4) << 1, 2, 3, 4).finished());
  const double s = 1.0 / std::sqrt(2.0);
  const double a = std::exp(s) / (std::exp(s) + 1.0);
  auto y = multi_head_scaled_attention(q, q, v, 1).value();
  CHECK(y[0] == doctest::Approx(a * 1 + (1 - a) * 3).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(a * 2 + (1 - a) * 4).epsilon(1e-12));
  CHECK(y[2] == doctest::Approx((1 - a) * 1 + a * 3).epsilon(1e-12));
  CHECK(y[3] == doctest::Approx((1 - a) * 2 + a * 4).epsilon(1e-12));
}

TEST_CASE("sort follows the permutation") {
  auto x = Tensor::from({2, 3}, (Eigen::VectorXd(6) << 3, 1, 2, -1, -3, 0).finished(), true);
  auto y = sort_last(x);
  CHECK(y.value() == (Eigen::VectorXd(6) << 1, 2, 3, -3, -1, 0).finished());
  check([&] { return probe(sort_last(x)); }, {{"x", x}});
}

TEST_CASE("gradients accumulate and reset") {
  auto x = Tensor::from({2}, Eigen::VectorXd::Ones(2), true);
  sum_all(x).backward();
  sum_all(affine(x, 2.0, 0.0)).backward();
  CHECK(x.grad() == Eigen::VectorXd::Constant(2, 3.0));
  x.zero_grad();
  CHECK(x.grad().size() == 0);
}

TEST_CASE("grad_check negative control and non-finite detection") {
  std::mt19937_64 rng(10);
  auto w = random_tensor({3, 2}, rng);
  auto x = random_tensor({4, 3}, rng, false);
  GradCheckOptions opt;
  opt.tamper = [](const std::string&, Eigen::VectorXd& g) { g[0] += 1.0; };
  auto bad = grad_check([&] { return probe(matmul(x, w)); }, {{"w", w}}, opt);
  CHECK_FALSE(bad.passed(kTol));
  CHECK(bad.worst == "w");

  auto z = Tensor::from({1}, Eigen::VectorXd::Constant(1, std::numeric_limits<double>::infinity()), true);
  CHECK_THROWS_WITH_AS(grad_check([&] { return sum_all(mul(z, z)); }, {{"inf_param", z}}),
                       doctest::Contains("inf_param"), pvf::NumericError);
}

}  // TEST_SUITE
