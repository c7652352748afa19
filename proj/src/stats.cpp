#include "lcfb/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lcfb/error.hpp"

namespace lcfb::stats {

nlohmann::json to_json(const TestResult& r) {
  nlohmann::json j = {{"statistic", r.statistic}, {"p_value", r.p_value}, {"n", r.n}};
  if (r.df) j["df"] = *r.df;
  return j;
}

namespace {

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 100000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

void require_finite(std::span<const double> xs, const char* what) {
  for (double v : xs) {
    if (!std::isfinite(v)) throw ContractError(std::string(what) + " contains a non-finite value");
  }
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
    throw ContractError("incomplete_beta requires a, b > 0");
  }
  if (!(x >= 0.0 && x <= 1.0)) throw ContractError("incomplete_beta requires x in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  double result;
  if (x < (a + 1.0) / (a + b + 2.0)) {
    result = front * beta_continued_fraction(a, b, x) / a;
  } else {
    result = 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
  }
  return std::clamp(result, 0.0, 1.0);
}

double student_t_two_sided(double t, double df) {
  if (!(df > 0.0)) throw ContractError("degrees of freedom must be positive");
  if (t == 0.0) return 1.0;
  return incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

double mean(std::span<const double> xs) {
  if (xs.empty()) throw ContractError("mean of an empty sample");
  double acc = 0.0;
  for (double v : xs) acc += v;
  return acc / static_cast<double>(xs.size());
}

double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) throw ContractError("variance needs at least two observations");
  const double m = mean(xs);
  double acc = 0.0;
  for (double v : xs) acc += (v - m) * (v - m);
  return acc / static_cast<double>(xs.size() - 1);
}

TestResult pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ContractError("pearson requires samples of equal length");
  if (xs.size() < 3) throw ContractError("pearson requires at least three pairs");
  require_finite(xs, "pearson xs");
  require_finite(ys, "pearson ys");
  const double mx = mean(xs), my = mean(ys);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw ContractError("pearson requires nonzero variance in both samples");
  const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double df = static_cast<double>(xs.size() - 2);
  double p = 0.0;
  if (std::abs(r) < 1.0) p = student_t_two_sided(r * std::sqrt(df / (1.0 - r * r)), df);
  return {r, df, p, {xs.size()}};
}

TestResult t_test_one_sample(std::span<const double> xs, double mu0) {
  if (xs.size() < 2) throw ContractError("one-sample t-test needs at least two observations");
  require_finite(xs, "t-test sample");
  const double var = sample_variance(xs);
  if (var == 0.0) throw ContractError("one-sample t-test requires nonzero variance");
  const double n = static_cast<double>(xs.size());
  const double t = (mean(xs) - mu0) / std::sqrt(var / n);
  const double df = n - 1.0;
  return {t, df, student_t_two_sided(t, df), {xs.size()}};
}

TestResult t_test_welch(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() < 2 || ys.size() < 2) throw ContractError("Welch t-test needs at least two observations per sample");
  require_finite(xs, "Welch xs");
  require_finite(ys, "Welch ys");
  const double vx = sample_variance(xs), vy = sample_variance(ys);
  if (vx == 0.0 || vy == 0.0) throw ContractError("Welch t-test requires nonzero variance in both samples");
  const double nx = static_cast<double>(xs.size()), ny = static_cast<double>(ys.size());
  const double sx = vx / nx, sy = vy / ny;
  const double t = (mean(xs) - mean(ys)) / std::sqrt(sx + sy);
  const double df = (sx + sy) * (sx + sy) / (sx * sx / (nx - 1.0) + sy * sy / (ny - 1.0));
  return {t, df, student_t_two_sided(t, df), {xs.size(), ys.size()}};
}

TestResult binom_test(std::uint64_t k, std::uint64_t n, double p0) {
  if (k > n) throw ContractError("binomial test requires k <= n");
  if (!(p0 > 0.0 && p0 < 1.0)) throw ContractError("binomial test requires p0 in (0, 1)");
  // Weights proportional to the pmf via the ratio recurrence. Rescaling by
  // powers of two is exact, so for p0 = 0.5 and moderate n the weights are
  // the exact binomial coefficients.
  const double r = p0 / (1.0 - p0);
  std::vector<double> w(n + 1);
  std::vector<int> e(n + 1);
  double cur = 1.0;
  int ex = 0;
  w[0] = 1.0;
  for (std::uint64_t i = 0; i < n; ++i) {
    cur = cur * static_cast<double>(n - i) * r / static_cast<double>(i + 1);
    const int lb = std::ilogb(cur);
    if (lb > 500 || lb < -500) {
      cur = std::ldexp(cur, -lb);
      ex += lb;
    }
    w[i + 1] = cur;
    e[i + 1] = ex;
  }
  int top = std::numeric_limits<int>::min();
  for (std::uint64_t i = 0; i <= n; ++i) top = std::max(top, e[i] + std::ilogb(w[i]));
  for (std::uint64_t i = 0; i <= n; ++i) w[i] = std::ldexp(w[i], e[i] - top);
  // Outcomes within a relative 1e-7 of the observed weight count as equally
  // likely, which absorbs rounding for symmetric ties.
  const double cutoff = w[k] * (1.0 + 1e-7);
  double kept = 0.0, total = 0.0;
  for (std::uint64_t i = 0; i <= n; ++i) {
    total += w[i];
    if (w[i] <= cutoff) kept += w[i];
  }
  const double p = std::min(1.0, kept / total);
  return {static_cast<double>(k), std::nullopt, p, {static_cast<std::size_t>(n)}};
}

double one_sided_greater(const TestResult& r) {
  return r.statistic > 0.0 ? 0.5 * r.p_value : 1.0 - 0.5 * r.p_value;
}

}  // namespace lcfb::stats
