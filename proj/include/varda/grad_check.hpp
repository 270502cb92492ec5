#pragma once

#include <cmath>
#include <functional>

#include "varda/ops.hpp"

namespace varda {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_tensor = 0;
  Index worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  Index coords_checked = 0;
};

/// Compares reverse-mode gradients of a scalar function of several leaves
/// against central differences. The relative error per coordinate is
/// |a - c| / (|a| + |c| + 1e-12); the report keeps the worst one.
///
/// `every` > 1 checks only every n-th coordinate of each leaf.
template <typename Scalar>
GradCheckReport grad_check_leaves(const std::function<Tensor<Scalar>()>& f,
                                  std::vector<Tensor<Scalar>> leaves, double h, Index every = 1) {
  for (auto& t : leaves) {
    VARDA_REQUIRE(t.is_leaf(), "grad_check: inputs must be leaves");
    t.set_requires_grad(true);
    t.zero_grad();
  }
  auto& tape = Tape<Scalar>::active();
  tape.clear();
  const Tensor<Scalar> y = f();
  VARDA_REQUIRE(y.numel() == 1, "grad_check: function must be scalar-valued");
  if (y.requires_grad()) backward(y);
  tape.clear();

  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto& leaf = leaves[k];
    const bool has = leaf.has_grad();
    for (Index i = 0; i < leaf.numel(); i += every) {
      const double analytic = has ? double(leaf.grad()[i]) : 0.0;
      const Scalar saved = leaf.data()[i];
      leaf.mutable_data()[i] = saved + Scalar(h);
      const double fp = double(f().item());
      leaf.mutable_data()[i] = saved - Scalar(h);
      const double fm = double(f().item());
      leaf.mutable_data()[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double rel = std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
      ++report.coords_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_tensor = k;
        report.worst_index = i;
        report.analytic = analytic;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

/// Single-input form: max relative error of d f / d point.
template <typename Scalar>
double grad_check(const std::function<Tensor<Scalar>(const Tensor<Scalar>&)>& f,
                  const Tensor<Scalar>& point, double h) {
  Tensor<Scalar> x = point.detach();
  return grad_check_leaves<Scalar>([&] { return f(x); }, {x}, h).max_rel_err;
}

}  // namespace varda
