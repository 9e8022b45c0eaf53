#include "mmer/stats.hpp"

#include "mmer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mmer {

namespace {

// Continued fraction for I_x(a, b), modified Lentz's method.
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIterations = 500;
  constexpr double kTiny = 1e-300;
  constexpr double kTolerance = 1e-16;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
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
    if (std::abs(delta - 1.0) < kTolerance) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

double sample_mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double sample_variance(std::span<const double> v, double mu) {
  double acc = 0.0;
  for (double x : v) acc += (x - mu) * (x - mu);
  return acc / static_cast<double>(v.size() - 1);
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw ConfigError("incomplete_beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw ConfigError("incomplete_beta needs x in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_sf(double t, double dof) {
  if (!(dof > 0.0)) throw ConfigError("student_t_sf needs positive degrees of freedom");
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
  return t > 0.0 ? tail : 1.0 - tail;
}

StatTestResult welch_t_test(std::span<const double> a, std::span<const double> b, Sidedness sidedness) {
  if (a.size() < 2 || b.size() < 2) throw InsufficientDataError("welch_t_test needs at least two values per sample");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double mean_a = sample_mean(a);
  const double mean_b = sample_mean(b);
  const double sa = sample_variance(a, mean_a) / na;
  const double sb = sample_variance(b, mean_b) / nb;
  const double se2 = sa + sb;

  StatTestResult r;
  r.sidedness = sidedness;
  if (se2 == 0.0) {
    if (mean_a == mean_b) throw DegenerateTestError("welch_t_test: both samples are constant and equal");
    r.t = mean_a > mean_b ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.dof = na + nb - 2.0;
    r.p = sidedness == Sidedness::TwoSided ? 0.0 : (r.t > 0 ? 0.0 : 1.0);
    return r;
  }
  r.t = (mean_a - mean_b) / std::sqrt(se2);
  r.dof = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  // Two-sided p is the full incomplete-beta tail; the one-sided value halves
  // the same quantity so that p_one = p_two / 2 holds exactly for t > 0.
  const double two_sided = incomplete_beta(0.5 * r.dof, 0.5, r.dof / (r.dof + r.t * r.t));
  if (sidedness == Sidedness::TwoSided) {
    r.p = two_sided;
  } else {
    r.p = r.t > 0.0 ? 0.5 * two_sided : 1.0 - 0.5 * two_sided;
  }
  return r;
}

std::vector<bool> holm_bonferroni(std::span<const double> p_values, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("holm_bonferroni alpha must lie in (0, 1)");
  for (double p : p_values) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("holm_bonferroni p-values must lie in [0, 1]");
  }
  const std::size_t m = p_values.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return p_values[i] < p_values[j]; });
  std::vector<bool> reject(m, false);
  for (std::size_t k = 0; k < m; ++k) {
    if (p_values[order[k]] > alpha / static_cast<double>(m - k)) break;
    reject[order[k]] = true;
  }
  return reject;
}

}  // namespace mmer
