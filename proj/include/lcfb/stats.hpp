#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

namespace lcfb::stats {

struct TestResult {
  double statistic = 0.0;  // r for pearson, t for t-tests, k for the binomial test
  std::optional<double> df;
  double p_value = 1.0;  // two-sided
  std::vector<std::size_t> n;
};

nlohmann::json to_json(const TestResult& r);

// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);

// Two-sided tail probability of Student's t with `df` degrees of freedom.
double student_t_two_sided(double t, double df);

TestResult pearson(std::span<const double> xs, std::span<const double> ys);
TestResult t_test_one_sample(std::span<const double> xs, double mu0);
// Welch's unequal-variance test of mean(xs) - mean(ys).
TestResult t_test_welch(std::span<const double> xs, std::span<const double> ys);

// Exact two-sided binomial test, summing every outcome no more likely than
// the observed one. Computed in log space.
TestResult binom_test(std::uint64_t k, std::uint64_t n, double p0);

// One-sided p for the alternative "statistic > 0", from a symmetric
// two-sided t result.
double one_sided_greater(const TestResult& r);

double mean(std::span<const double> xs);
double sample_variance(std::span<const double> xs);

}  // namespace lcfb::stats
