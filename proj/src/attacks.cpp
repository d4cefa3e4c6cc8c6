#include "atmc/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "atmc/error.hpp"

namespace atmc {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Tensor input_gradient(const LossModel& model, const Tensor& x, std::span<const int> labels,
                      const char* attack, int step) {
  Tensor grad;
  const double loss = model.loss_and_input_grad(x, labels, grad);
  if (!std::isfinite(loss) || !grad.all_finite()) {
    throw NumericError(std::string(attack) + ": non-finite loss or input gradient at step " +
                       std::to_string(step));
  }
  if (grad.shape() != x.shape()) {
    throw ShapeError(std::string(attack) + ": gradient shape " + shape_string(grad.shape()) +
                     " does not match input " + shape_string(x.shape()));
  }
  return grad;
}

void require_family(const AttackConfig& cfg, AttackFamily family) {
  if (cfg.family != family) {
    throw ConfigError(std::string("attack config is '") + attack_family_name(cfg.family) +
                      "', expected '" + attack_family_name(family) + "'");
  }
  cfg.validate();
}

}  // namespace

void AttackConfig::validate() const {
  if (!(delta >= 0.0)) throw ConfigError("attack budget must be >= 0");
  if (!(pixel_min <= pixel_max)) throw ConfigError("pixel_min must not exceed pixel_max");
  if (family == AttackFamily::none) return;
  if ((family == AttackFamily::pgd || family == AttackFamily::wrm) && steps < 1) {
    throw ConfigError("attack needs at least one step");
  }
  if (family != AttackFamily::fgsm && !(alpha > 0.0)) {
    throw ConfigError("attack step size must be > 0");
  }
  if (family == AttackFamily::wrm && !(wrm_gamma > 0.0)) {
    throw ConfigError("WRM penalty must be > 0");
  }
}

std::string AttackConfig::describe() const {
  std::ostringstream os;
  os << attack_family_name(family);
  if (family == AttackFamily::none) return os.str();
  os << "(delta=" << delta * kPixelScale << "/255";
  if (family != AttackFamily::fgsm) os << ";steps=" << steps << ";alpha=" << alpha;
  if (family == AttackFamily::wrm) os << ";gamma=" << wrm_gamma;
  if (family == AttackFamily::pgd && direction == PgdDirection::raw) os << ";raw";
  os << ')';
  return os.str();
}

double pgd_step_size(double delta, int steps, StepRule rule) {
  if (steps < 1) throw ConfigError("PGD needs at least one step");
  const double raw = delta * kPixelScale;
  const double step = rule == StepRule::min_plus_four ? std::min(raw + 4.0, 1.25 * raw)
                                                      : 1.25 * raw;
  return step / steps / kPixelScale;
}

AttackConfig AttackConfig::pgd(double delta, int steps, StepRule rule) {
  AttackConfig c;
  c.family = AttackFamily::pgd;
  c.delta = delta;
  c.steps = steps;
  c.alpha = pgd_step_size(delta, steps, rule);
  return c;
}

AttackConfig AttackConfig::fgsm(double delta) {
  AttackConfig c;
  c.family = AttackFamily::fgsm;
  c.delta = delta;
  c.steps = 1;
  c.alpha = delta;
  return c;
}

AttackConfig AttackConfig::wrm(double gamma, int steps, double delta) {
  AttackConfig c;
  c.family = AttackFamily::wrm;
  c.wrm_gamma = gamma;
  c.steps = steps;
  c.delta = delta;
  c.alpha = 0.1 * delta / steps;
  return c;
}

AttackFamily parse_attack_family(const std::string& name) {
  if (name == "none") return AttackFamily::none;
  if (name == "pgd") return AttackFamily::pgd;
  if (name == "fgsm") return AttackFamily::fgsm;
  if (name == "wrm") return AttackFamily::wrm;
  throw ConfigError("unknown attack '" + name + "' (expected none, pgd, fgsm or wrm)");
}

const char* attack_family_name(AttackFamily family) {
  switch (family) {
    case AttackFamily::none: return "none";
    case AttackFamily::pgd: return "pgd";
    case AttackFamily::fgsm: return "fgsm";
    case AttackFamily::wrm: return "wrm";
  }
  return "?";
}

Tensor project_linf(const Tensor& candidate, const Tensor& x, double delta, double pixel_min,
                    double pixel_max) {
  if (candidate.shape() != x.shape()) {
    throw ShapeError("project_linf: " + shape_string(candidate.shape()) + " vs " +
                     shape_string(x.shape()));
  }
  Tensor out = candidate;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = std::clamp(candidate[i], x[i] - delta, x[i] + delta);
    out[i] = std::clamp(v, pixel_min, pixel_max);
  }
  return out;
}

Tensor pgd_attack(const LossModel& model, const Tensor& x, std::span<const int> labels,
                  const AttackConfig& cfg) {
  require_family(cfg, AttackFamily::pgd);
  Tensor adv = x;
  for (int step = 0; step < cfg.steps; ++step) {
    const Tensor g = input_gradient(model, adv, labels, "pgd", step);
    Tensor cand = adv;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      const double dir = cfg.direction == PgdDirection::sign ? sign(g[i]) : g[i];
      cand[i] = adv[i] + cfg.alpha * dir;
    }
    adv = project_linf(cand, x, cfg.delta, cfg.pixel_min, cfg.pixel_max);
  }
  return adv;
}

Tensor fgsm_attack(const LossModel& model, const Tensor& x, std::span<const int> labels,
                   const AttackConfig& cfg) {
  require_family(cfg, AttackFamily::fgsm);
  const Tensor g = input_gradient(model, x, labels, "fgsm", 0);
  Tensor adv = x;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    adv[i] = std::clamp(x[i] + cfg.delta * sign(g[i]), cfg.pixel_min, cfg.pixel_max);
  }
  return adv;
}

Tensor wrm_attack(const LossModel& model, const Tensor& x, std::span<const int> labels,
                  const AttackConfig& cfg) {
  require_family(cfg, AttackFamily::wrm);
  const double ag = cfg.alpha * cfg.wrm_gamma;
  Tensor adv = x;
  for (int step = 0; step < cfg.steps; ++step) {
    const Tensor g = input_gradient(model, adv, labels, "wrm", step);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      adv[i] = (adv[i] + cfg.alpha * g[i] + ag * x[i]) / (1.0 + ag);
    }
  }
  for (double& v : adv.values()) v = std::clamp(v, cfg.pixel_min, cfg.pixel_max);
  return adv;
}

Tensor run_attack(const LossModel& model, const Tensor& x, std::span<const int> labels,
                  const AttackConfig& cfg) {
  switch (cfg.family) {
    case AttackFamily::none: return x;
    case AttackFamily::pgd: return pgd_attack(model, x, labels, cfg);
    case AttackFamily::fgsm: return fgsm_attack(model, x, labels, cfg);
    case AttackFamily::wrm: return wrm_attack(model, x, labels, cfg);
  }
  return x;
}

}  // namespace atmc
