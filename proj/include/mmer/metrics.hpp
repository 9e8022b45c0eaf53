#ifndef MMER_METRICS_HPP
#define MMER_METRICS_HPP

// Agreement metrics between a prediction and a ground-truth sequence. All
// take any pair of Eigen dense vector expressions of equal length.

#include "mmer/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

namespace mmer {

struct MetricValue {
  std::string name;
  double value = 0.0;
  Index n = 0;
};

/// Denominator guard shared by ccc() and ccc_loss().
inline constexpr double kCccEpsilon = 1e-8;
/// Variances below this make pearson() return 0.
inline constexpr double kPearsonVarianceFloor = 1e-12;

namespace detail {

template <typename A, typename B>
void check_lengths(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b, Index minimum, const char* metric) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(metric) + ": length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  if (a.size() < minimum) {
    throw InsufficientDataError(std::string(metric) + " needs at least " + std::to_string(minimum) + " values");
  }
}

// Population (1/n) moments.
struct Moments {
  double mean_a, mean_b, var_a, var_b, cov;
};

template <typename A, typename B>
Moments moments(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b) {
  const auto xa = a.derived().template cast<double>().array();
  const auto xb = b.derived().template cast<double>().array();
  const double n = static_cast<double>(a.size());
  Moments m{};
  m.mean_a = xa.sum() / n;
  m.mean_b = xb.sum() / n;
  const auto ca = xa - m.mean_a;
  const auto cb = xb - m.mean_b;
  m.var_a = ca.square().sum() / n;
  m.var_b = cb.square().sum() / n;
  m.cov = (ca * cb).sum() / n;
  return m;
}

}  // namespace detail

/// Concordance correlation coefficient in covariance form:
/// 2 cov / (var_pred + var_truth + (mean_pred - mean_truth)^2 + eps).
template <typename A, typename B>
MetricValue ccc(const Eigen::DenseBase<A>& pred, const Eigen::DenseBase<B>& truth) {
  detail::check_lengths(pred, truth, 2, "ccc");
  const auto m = detail::moments(pred, truth);
  const double diff = m.mean_a - m.mean_b;
  return {"ccc", 2.0 * m.cov / (m.var_a + m.var_b + diff * diff + kCccEpsilon), pred.size()};
}

template <typename A, typename B>
MetricValue rmse(const Eigen::DenseBase<A>& pred, const Eigen::DenseBase<B>& truth) {
  detail::check_lengths(pred, truth, 1, "rmse");
  const auto diff = pred.derived().template cast<double>().array() - truth.derived().template cast<double>().array();
  return {"rmse", std::sqrt(diff.square().mean()), pred.size()};
}

/// Pearson correlation; defined as 0 when either variance is below
/// kPearsonVarianceFloor.
template <typename A, typename B>
MetricValue pearson(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b) {
  detail::check_lengths(a, b, 2, "pearson");
  const auto m = detail::moments(a, b);
  if (m.var_a < kPearsonVarianceFloor || m.var_b < kPearsonVarianceFloor) return {"pearson", 0.0, a.size()};
  const double r = m.cov / std::sqrt(m.var_a * m.var_b);
  return {"pearson", std::clamp(r, -1.0, 1.0), a.size()};
}

}  // namespace mmer

#endif  // MMER_METRICS_HPP
