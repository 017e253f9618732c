#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "afa/graph.hpp"
#include "afa/tensor.hpp"

namespace afa {

/// A differentiable scalar-valued function of a list of tensors.
template <typename T>
using TensorFn = std::function<Tensor<T>(Graph<T>&, std::vector<Tensor<T>>&)>;

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  std::string detail;  // worst element, or the failure reason
};

namespace detail {
inline double grad_rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}
}  // namespace detail

/// Central finite differences vs. reverse-mode gradients, element by element.
/// Inputs must be 64-bit; 32-bit finite differences are too noisy for the
/// default tolerance.
inline GradCheckReport gradcheck(const TensorFn<double>& f, std::vector<Tensor<double>> inputs,
                                 double eps = 1e-4, double tol = 1e-3) {
  GradCheckReport report;
  for (auto& in : inputs) in.requires_grad = true;

  Graph<double> g;
  Tensor<double> out = f(g, inputs);
  if (!out.is_scalar()) {
    report.detail = "function output is not scalar: " + to_string(out.shape);
    return report;
  }
  if (!std::isfinite(out.value())) {
    report.detail = "non-finite output at base point";
    return report;
  }
  GradMap<double> grads = g.backward(out);

  auto eval = [&]() {
    Graph<double> fg;
    fg.set_recording(false);
    return f(fg, inputs).value();
  };

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double> ad = grads.get_or_zero(inputs[i]);
    for (std::size_t e = 0; e < inputs[i].data.size(); ++e) {
      const double saved = inputs[i].data[e];
      inputs[i].data[e] = saved + eps;
      const double fp = eval();
      inputs[i].data[e] = saved - eps;
      const double fm = eval();
      inputs[i].data[e] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        report.detail = "non-finite output while perturbing input " + std::to_string(i) +
                        " element " + std::to_string(e);
        report.max_rel_err = std::numeric_limits<double>::infinity();
        return report;
      }
      const double fd = (fp - fm) / (2.0 * eps);
      const double err = detail::grad_rel_err(ad.data[e], fd);
      if (err > report.max_rel_err) {
        report.max_rel_err = err;
        report.detail = "input " + std::to_string(i) + " element " + std::to_string(e) +
                        ": autodiff=" + std::to_string(ad.data[e]) + " fd=" + std::to_string(fd);
      }
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace afa
