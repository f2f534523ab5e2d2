#include <doctest.h>

#include <random>

#include "pvf/error.hpp"
#include "pvf/metrics.hpp"

using namespace pvf::metrics;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

const std::vector<double> kLevels{0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95};

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

double crps_oracle(const MatrixXd& q, const VectorXd& y) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
      const double u = y[i] - q(i, j), tau = kLevels[static_cast<std::size_t>(j)];
      s += u >= 0 ? tau * u : (tau - 1) * u;
    }
    total += 2.0 * s / static_cast<double>(q.cols());
  }
  return total / static_cast<double>(q.rows());
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("deterministic scores, hand examples") {
  const VectorXd y = vec({2, 2}), yhat = vec({1, 3});
  CHECK(std::abs(*nmae(y, yhat) - 50.0) < 1e-9);
  CHECK(std::abs(*nrmse(y, yhat) - 50.0) < 1e-9);
  CHECK(*nmae(y, y) == 0.0);
  CHECK(*nrmse(y, y) == 0.0);
  CHECK(std::abs(*nmae(VectorXd(7.0 * y), VectorXd(7.0 * yhat)) - 50.0) < 1e-9);
  CHECK_FALSE(nmae(vec({0, 0}), vec({1, 1})).has_value());
  CHECK_FALSE(nrmse(vec({-1, 0}), vec({1, 1})).has_value());
}

TEST_CASE("r2") {
  const VectorXd y = vec({1, 2, 3, 4});
  CHECK(*r2(y, y) == 1.0);
  CHECK(std::abs(*r2(y, VectorXd::Constant(4, 2.5))) < 1e-15);
  CHECK(*r2(y, vec({4, 3, 2, 1})) < 0.0);
  CHECK_FALSE(r2(vec({3, 3}), vec({1, 2})).has_value());
}

TEST_CASE("nrmse is never below nmae") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.1, 5.0);
  for (int t = 0; t < 50; ++t) {
    VectorXd y(20), p(20);
    for (int i = 0; i < 20; ++i) y[i] = u(rng), p[i] = u(rng);
    CHECK(*nrmse(y, p) >= *nmae(y, p) - 1e-12);
  }
}

TEST_CASE("crps") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  MatrixXd q(15, 11);
  VectorXd y(15);
  for (int i = 0; i < 15; ++i) {
    std::vector<double> r(11);
    for (auto& v : r) v = n(rng);
    std::sort(r.begin(), r.end());
    for (int j = 0; j < 11; ++j) q(i, j) = r[static_cast<std::size_t>(j)];
    y[i] = n(rng);
  }
  CHECK(crps(q, y, kLevels) == crps_oracle(q, y));

  SUBCASE("degenerate forecast") {
    MatrixXd d = MatrixXd::Constant(3, 11, 1.5);
    const VectorXd yy = vec({0.0, 1.5, 4.0});
    CHECK(crps(d, yy, kLevels) == crps_oracle(d, yy));
    // A point forecast at y scores exactly zero.
    CHECK(crps(MatrixXd::Constant(1, 11, 2.0), vec({2.0}), kLevels) == 0.0);
  }
  SUBCASE("widening around a fixed median increases it") {
    MatrixXd narrow(1, 11), wide(1, 11);
    for (int j = 0; j < 11; ++j) {
      narrow(0, j) = (kLevels[static_cast<std::size_t>(j)] - 0.5);
      wide(0, j) = 3.0 * narrow(0, j);
    }
    CHECK(crps(wide, vec({0.0}), kLevels) > crps(narrow, vec({0.0}), kLevels));
  }
  CHECK(crps(q, y, kLevels) >= 0.0);
}

TEST_CASE("ace") {
  const VectorXd y = vec({1, 2, 3}), lo = vec({0, 1, 2}), hi = vec({2, 3, 4});
  CHECK(std::abs(ace(y, lo, hi, 0.9) - 0.1) < 1e-12);
  CHECK(std::abs(ace(VectorXd(y.array() + 10), lo, hi, 0.9) + 0.9) < 1e-12);
  CHECK_THROWS_AS(ace(y, lo, hi, 1.0), pvf::ValidationError);

  SUBCASE("calibrated Monte Carlo forecasts") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0, 1);
    std::uniform_real_distribution<double> mu(-5, 5), sig(0.5, 3);
    const int N = 2000;
    VectorXd yy(N), l(N), u(N);
    for (int i = 0; i < N; ++i) {
      const double m = mu(rng), s = sig(rng);
      l[i] = m - 1.6448536269514722 * s;
      u[i] = m + 1.6448536269514722 * s;
      yy[i] = m + s * n(rng);
    }
    const double a = ace(yy, l, u, 0.9);
    CHECK(std::abs(a) < 0.05);
    CHECK(a >= -0.9);
    CHECK(a <= 0.1);
  }
}

TEST_CASE("winkler") {
  const double ws = winkler(vec({3}), vec({0}), vec({2}), 0.9);
  CHECK(std::abs(ws - (2.0 + 2.0 / 0.9)) < 1e-9);
  CHECK(std::abs(ws - 4.2222222222) < 1e-9);
  CHECK(std::abs(winkler(vec({3}), vec({0}), vec({2}), 0.9, WinklerConvention::Classical) - 22.0) < 1e-9);
  CHECK(winkler(vec({1}), vec({0}), vec({2}), 0.9) == 2.0);
  CHECK(winkler(vec({1}), vec({0.5}), vec({1.5}), 0.9) < 2.0);
  CHECK_THROWS_AS(winkler(vec({1}), vec({2}), vec({0}), 0.9), pvf::ValidationError);

  SUBCASE("never below mean width, equal only with full coverage") {
    const VectorXd lo = vec({0, 0, 0}), hi = vec({1, 2, 3});
    CHECK(winkler(vec({0.5, 1, 1}), lo, hi, 0.9) == doctest::Approx(2.0));
    CHECK(winkler(vec({0.5, 1, 5}), lo, hi, 0.9) > 2.0);
  }
}

TEST_CASE("scores do not depend on sample order") {
  const VectorXd y = vec({1, 4, 2, 8}), p = vec({2, 3, 2, 7});
  const VectorXd yr = y.reverse(), pr = p.reverse();
  CHECK(*nmae(y, p) == doctest::Approx(*nmae(yr, pr)));
  CHECK(*r2(y, p) == doctest::Approx(*r2(yr, pr)));
  CHECK(winkler(y, VectorXd(p.array() - 1), VectorXd(p.array() + 1), 0.9) ==
        doctest::Approx(winkler(yr, VectorXd(pr.array() - 1), VectorXd(pr.array() + 1), 0.9)));
}

}  // TEST_SUITE
