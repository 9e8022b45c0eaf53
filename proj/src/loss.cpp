#include "mmer/loss.hpp"

#include "mmer/metrics.hpp"

#include <memory>

namespace mmer {

Tensor ccc_loss(const Tensor& pred, const RowMatrix& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
    throw ShapeError("ccc_loss: prediction " + to_string(pred.shape()) + " and truth " + std::to_string(truth.rows()) + "x" +
                     std::to_string(truth.cols()) + " differ");
  }
  const Index segments = pred.rows();
  const Index steps = pred.cols();
  if (steps < 2) throw InsufficientDataError("ccc_loss needs segments of at least two steps");
  const double n = static_cast<double>(steps);

  // Per segment: numerator 2 cov, denominator var_p + var_y + (mu_p - mu_y)^2 + eps.
  auto numer = std::make_shared<Vector>(segments);
  auto denom = std::make_shared<Vector>(segments);
  double total = 0.0;
  for (Index s = 0; s < segments; ++s) {
    const auto p = pred.value().row(s).array();
    const auto y = truth.row(s).array();
    const double mp = p.mean();
    const double my = y.mean();
    const double cov = ((p - mp) * (y - my)).sum() / n;
    const double vp = (p - mp).square().sum() / n;
    const double vy = (y - my).square().sum() / n;
    (*numer)(s) = 2.0 * cov;
    (*denom)(s) = vp + vy + (mp - my) * (mp - my) + kCccEpsilon;
    total += (*numer)(s) / (*denom)(s);
  }
  RowMatrix out(1, 1);
  out(0, 0) = 1.0 - total / static_cast<double>(segments);

  return record_op("ccc_loss", Shape{}, std::move(out), {pred},
                   [pred, truth, numer, denom, segments, n](const RowMatrix& g, std::span<RowMatrix* const> grads) {
                     if (!grads[0]) return;
                     const double upstream = -g(0, 0) / static_cast<double>(segments);
                     for (Index s = 0; s < segments; ++s) {
                       const auto p = pred.value().row(s).array();
                       const auto y = truth.row(s).array();
                       const double mp = p.mean();
                       const double my = y.mean();
                       const double num = (*numer)(s);
                       const double den = (*denom)(s);
                       // d num / d p_i = 2 (y_i - my) / n
                       // d den / d p_i = 2 (p_i - mp) / n + 2 (mp - my) / n
                       const auto dnum = 2.0 * (y - my) / n;
                       const auto dden = 2.0 * (p - mp) / n + 2.0 * (mp - my) / n;
                       grads[0]->row(s).array() += upstream * (dnum * den - num * dden) / (den * den);
                     }
                   });
}

}  // namespace mmer
