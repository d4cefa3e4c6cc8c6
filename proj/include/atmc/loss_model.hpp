#pragma once

#include <span>

#include "atmc/tensor.hpp"

namespace atmc {

/// Anything an attack can differentiate through: a frozen classifier, or a
/// hand-written toy objective in tests.
class LossModel {
 public:
  virtual ~LossModel() = default;

  /// Returns Σ_i f(x_i, y_i) over the batch and writes ∂/∂x of that sum into
  /// grad (same shape as x). Summing keeps each row's gradient equal to the
  /// per-sample gradient.
  virtual double loss_and_input_grad(const Tensor& x, std::span<const int> labels,
                                     Tensor& grad) const = 0;

  /// Per-sample losses without gradients.
  virtual std::vector<double> sample_losses(const Tensor& x, std::span<const int> labels) const = 0;
};

}  // namespace atmc
