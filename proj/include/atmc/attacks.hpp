#pragma once

#include <span>
#include <string>

#include "atmc/loss_model.hpp"
#include "atmc/tensor.hpp"

namespace atmc {

enum class AttackFamily { none, pgd, fgsm, wrm };

/// How the default PGD step size is derived from the budget, both evaluated in
/// raw 0–255 pixel units: min(Δ+4, 1.25Δ)/n, or 1.25Δ/n.
enum class StepRule { min_plus_four, scaled };

/// PGD ascent direction: sign of the gradient (default) or the raw gradient.
enum class PgdDirection { sign, raw };

/// Pixel values are on [0,1]; raw budgets are quoted on 0–255.
inline constexpr double kPixelScale = 255.0;

struct AttackConfig {
  AttackFamily family = AttackFamily::none;
  double delta = 0.0;  // ℓ∞ budget in normalized pixel units
  int steps = 1;
  double alpha = 0.0;  // step size, normalized units
  double wrm_gamma = 1.3;
  double pixel_min = 0.0;
  double pixel_max = 1.0;
  PgdDirection direction = PgdDirection::sign;

  /// Throws ConfigError on a negative budget, non-positive step or step count.
  void validate() const;
  std::string describe() const;

  static AttackConfig none() { return {}; }
  /// PGD with the step size chosen by `rule`; delta is normalized.
  static AttackConfig pgd(double delta, int steps, StepRule rule = StepRule::min_plus_four);
  static AttackConfig fgsm(double delta);
  /// WRM with penalty gamma; inner step 0.1·delta/steps.
  static AttackConfig wrm(double gamma, int steps, double delta);
};

/// Step size in normalized units for a normalized budget.
double pgd_step_size(double delta, int steps, StepRule rule);

AttackFamily parse_attack_family(const std::string& name);
const char* attack_family_name(AttackFamily family);

/// Clamps each entry into [x−Δ, x+Δ] and then into [pixel_min, pixel_max].
Tensor project_linf(const Tensor& candidate, const Tensor& x, double delta,
                    double pixel_min = 0.0, double pixel_max = 1.0);

/// n steps of x ← Proj(x + α·dir(∇ₓf)) starting from the clean x.
Tensor pgd_attack(const LossModel& model, const Tensor& x, std::span<const int> labels,
                  const AttackConfig& cfg);

/// x + Δ·sign(∇ₓf), clamped to the pixel range. sign(0) = 0.
Tensor fgsm_attack(const LossModel& model, const Tensor& x, std::span<const int> labels,
                   const AttackConfig& cfg);

/// Ascent on f(x′) − (γ/2)‖x′ − x‖² with the quadratic handled implicitly:
///   x′ ← (x′ + α∇f(x′) + αγx) / (1 + αγ)
/// which has the same fixed points as the explicit step and stays stable for
/// any γ. Clamped to the pixel range at the end; no ℓ∞ projection.
Tensor wrm_attack(const LossModel& model, const Tensor& x, std::span<const int> labels,
                  const AttackConfig& cfg);

/// Dispatches on cfg.family; `none` returns x unchanged.
Tensor run_attack(const LossModel& model, const Tensor& x, std::span<const int> labels,
                  const AttackConfig& cfg);

}  // namespace atmc
