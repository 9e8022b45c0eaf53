#ifndef MMER_GRADCHECK_HPP
#define MMER_GRADCHECK_HPP

#include "mmer/tensor.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mmer {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct ParameterGradError {
  std::string name;
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
};

struct RelativeErrorReport {
  std::vector<ParameterGradError> parameters;

  bool empty() const { return parameters.empty(); }
  double max_relative_error() const;
  /// Name of the parameter with the largest relative error, or "".
  std::string worst() const;
};

struct GradCheckOptions {
  double step = 1e-4;
  /// Combines central differences at step and step / 2 to cancel the
  /// second-order truncation term.
  bool richardson = true;
  /// Entry-wise error is |tape - fd| / max(|tape|, |fd|, denominator_floor).
  double denominator_floor = 1e-5;
};

/// Compares tape gradients of the scalar `f` against central differences for
/// every entry of every parameter. `f` must be deterministic; it is called once
/// under a fresh tape and twice per parameter entry without one.
RelativeErrorReport finite_difference_check(const std::function<Tensor()>& f, std::span<const NamedTensor> params,
                                            const GradCheckOptions& options = {});

}  // namespace mmer

#endif  // MMER_GRADCHECK_HPP
