#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "lcfb/error.hpp"
#include "lcfb/stats.hpp"
#include "oracles.hpp"

using namespace lcfb;
using namespace lcfb::stats;

TEST_CASE("incomplete beta boundary and closed-form values") {
  CHECK(incomplete_beta(2.0, 3.0, 0.0) == 0.0);
  CHECK(incomplete_beta(2.0, 3.0, 1.0) == 1.0);
  for (double x : {0.1, 0.37, 0.5, 0.93}) CHECK(incomplete_beta(1.0, 1.0, x) == doctest::Approx(x).epsilon(1e-14));
  // I_x(2,3) = 6x^2 - 8x^3 + 3x^4, which is 11/16 at x = 1/2.
  CHECK(std::abs(incomplete_beta(2.0, 3.0, 0.5) - 0.6875) < 1e-14);
  for (double x : {0.05, 0.3, 0.8}) {
    const double poly = 6 * x * x - 8 * x * x * x + 3 * x * x * x * x;
    CHECK(std::abs(incomplete_beta(2.0, 3.0, x) - poly) < 1e-13);
  }
}

TEST_CASE("incomplete beta rejects out-of-domain arguments") {
  CHECK_THROWS_AS(incomplete_beta(0.0, 1.0, 0.5), ContractError);
  CHECK_THROWS_AS(incomplete_beta(1.0, -2.0, 0.5), ContractError);
  CHECK_THROWS_AS(incomplete_beta(1.0, 1.0, 1.5), ContractError);
  CHECK_THROWS_AS(incomplete_beta(1.0, 1.0, std::nan("")), ContractError);
}

TEST_CASE("incomplete beta matches quadrature and the reflection identity") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> shape(0.5, 20.0), unit(0.001, 0.999);
  double worst = 0.0, worst_sym = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double a = shape(rng), b = shape(rng), x = unit(rng);
    const double got = incomplete_beta(a, b, x);
    worst = std::max(worst, std::abs(got - testing::quadrature_incomplete_beta(a, b, x)));
    worst_sym = std::max(worst_sym, std::abs(got + incomplete_beta(b, a, 1.0 - x) - 1.0));
  }
  CHECK(worst < 1e-10);
  CHECK(worst_sym < 1e-10);
}

TEST_CASE("pearson correlation") {
  const std::vector<double> xs{1, 2, 3, 4, 5, 6};
  std::vector<double> ys;
  for (double x : xs) ys.push_back(2 * x + 1);
  CHECK(std::abs(pearson(xs, ys).statistic - 1.0) < 1e-12);

  const std::vector<double> a{1, 2, 3, 4}, b{1, 3, 2, 4};
  const auto r = pearson(a, b);
  CHECK(std::abs(r.statistic - 0.8) < 1e-12);
  CHECK(*r.df == 2.0);
  const double t = 0.8 * std::sqrt(2.0 / (1.0 - 0.64));
  CHECK(std::abs(r.p_value - testing::quadrature_t_two_sided(t, 2.0)) < 1e-9);

  std::vector<double> rev(a.rbegin(), a.rend());
  const auto rr = pearson(rev, b);
  CHECK(std::abs(rr.statistic + r.statistic) < 1e-12);
  CHECK(std::abs(rr.p_value - r.p_value) < 1e-12);

  // Positive affine maps leave r unchanged.
  std::vector<double> scaled;
  for (double v : a) scaled.push_back(3.5 * v - 7.0);
  CHECK(std::abs(pearson(scaled, b).statistic - 0.8) < 1e-12);

  const std::vector<double> flat{2, 2, 2, 2};
  CHECK_THROWS_AS(pearson(flat, b), ContractError);
  CHECK_THROWS_AS(pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2}), ContractError);
}

TEST_CASE("one-sample t-test") {
  const std::vector<double> sym{-2, -1, 0, 1, 2};
  const auto zero = t_test_one_sample(sym, 0.0);
  CHECK(zero.statistic == 0.0);
  CHECK(zero.p_value == 1.0);

  const std::vector<double> five{0.3, 1.7, 2.2, 0.9, 1.4};
  const auto r = t_test_one_sample(five, 0.5);
  CHECK(*r.df == 4.0);
  CHECK(std::abs(r.p_value - testing::quadrature_t_two_sided(r.statistic, 4.0)) < 1e-9);

  // 536 observations arranged so t = 2.31 exactly with df = 535.
  std::vector<double> xs;
  for (int i = 0; i < 536; ++i) xs.push_back(i % 2 == 0 ? 1.0 : -1.0);
  const double s = std::sqrt(sample_variance(xs));
  const double shift = 2.31 * s / std::sqrt(536.0);
  for (auto& x : xs) x += shift;
  const auto reported = t_test_one_sample(xs, 0.0);
  CHECK(reported.statistic == doctest::Approx(2.31).epsilon(1e-12));
  CHECK(*reported.df == 535.0);
  CHECK(reported.p_value < 0.05);

  CHECK_THROWS_AS(t_test_one_sample(std::vector<double>{1, 1, 1}, 0.0), ContractError);
}

TEST_CASE("Welch t-test") {
  const std::vector<double> xs{0.1, 0.5, 0.9, 1.3, 2.0};
  const auto same = t_test_welch(xs, xs);
  CHECK(same.statistic == 0.0);
  CHECK(same.p_value == 1.0);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> ys, shifted;
  for (int i = 0; i < 50; ++i) ys.push_back(gauss(rng));
  for (double y : ys) shifted.push_back(y + 10.0);
  CHECK(t_test_welch(shifted, ys).p_value < 1e-10);

  std::vector<double> other;
  for (int i = 0; i < 30; ++i) other.push_back(0.4 + 2.0 * gauss(rng));
  const auto fwd = t_test_welch(ys, other);
  const auto back = t_test_welch(other, ys);
  CHECK(fwd.statistic == -back.statistic);
  CHECK(fwd.p_value == back.p_value);
  CHECK(std::abs(fwd.p_value - testing::quadrature_t_two_sided(fwd.statistic, *fwd.df)) < 1e-9);
  CHECK(one_sided_greater(back) == doctest::Approx(1.0 - one_sided_greater(fwd)).epsilon(1e-14));

  CHECK_THROWS_AS(t_test_welch(std::vector<double>{1, 1}, xs), ContractError);
}

TEST_CASE("exact binomial test") {
  CHECK(binom_test(2843, 4613, 0.5).p_value < 1e-4);
  CHECK(binom_test(5, 10, 0.5).p_value == 1.0);
  // The 11 pmf terms are C(10, i) / 1024; outcomes 0-2 and 8-10 are no
  // likelier than 8, giving 2 * (1 + 10 + 45) / 1024.
  CHECK(binom_test(8, 10, 0.5).p_value == 0.109375);
  CHECK(binom_test(2, 10, 0.5).p_value == binom_test(8, 10, 0.5).p_value);
  CHECK_FALSE(binom_test(8, 10, 0.5).df.has_value());
  for (std::uint64_t k = 0; k <= 20; ++k) {
    const double p = binom_test(k, 20, 0.3).p_value;
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
  CHECK_THROWS_AS(binom_test(11, 10, 0.5), ContractError);
  CHECK_THROWS_AS(binom_test(1, 10, 1.0), ContractError);
}
