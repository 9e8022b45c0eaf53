#include "mmer/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mmer {

double RelativeErrorReport::max_relative_error() const {
  double worst_error = 0.0;
  for (const auto& p : parameters) worst_error = std::max(worst_error, p.max_relative_error);
  return worst_error;
}

std::string RelativeErrorReport::worst() const {
  const auto it = std::max_element(parameters.begin(), parameters.end(), [](const auto& a, const auto& b) {
    return a.max_relative_error < b.max_relative_error;
  });
  return it == parameters.end() ? std::string{} : it->name;
}

RelativeErrorReport finite_difference_check(const std::function<Tensor()>& f, std::span<const NamedTensor> params,
                                            const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ConfigError("finite-difference step must be positive");
  RelativeErrorReport report;
  if (params.empty()) return report;

  std::vector<Tensor> handles;
  std::vector<bool> previous_flags;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    previous_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
    handles.push_back(t);
  }

  std::vector<RowMatrix> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = f();
    backward(loss, tape);
  }
  for (auto& t : handles) analytic.push_back(t.has_grad() ? t.grad() : RowMatrix::Zero(t.rows(), t.cols()));

  for (std::size_t i = 0; i < handles.size(); ++i) {
    Tensor& t = handles[i];
    ParameterGradError entry{params[i].name, 0.0, 0.0};
    double* data = t.mutable_value().data();
    for (Index j = 0; j < t.numel(); ++j) {
      const double saved = data[j];
      const auto central = [&](double h) {
        data[j] = saved + h;
        const double up = f().item();
        data[j] = saved - h;
        const double down = f().item();
        data[j] = saved;
        return (up - down) / (2.0 * h);
      };
      const double coarse = central(options.step);
      const double numeric = options.richardson ? (4.0 * central(0.5 * options.step) - coarse) / 3.0 : coarse;
      const double tape_value = analytic[i].data()[j];
      const double abs_err = std::abs(tape_value - numeric);
      const double denom = std::max({std::abs(tape_value), std::abs(numeric), options.denominator_floor});
      entry.max_absolute_error = std::max(entry.max_absolute_error, abs_err);
      entry.max_relative_error = std::max(entry.max_relative_error, abs_err / denom);
    }
    report.parameters.push_back(std::move(entry));
  }

  for (std::size_t i = 0; i < handles.size(); ++i) {
    handles[i].zero_grad();
    handles[i].set_requires_grad(previous_flags[i]);
  }
  return report;
}

}  // namespace mmer
