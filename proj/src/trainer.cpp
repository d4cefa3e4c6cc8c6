#include "atmc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "atmc/error.hpp"
#include "atmc/ops.hpp"

namespace atmc {

namespace {

Var bound_matrix(const BoundParams& bound, MatrixId id) {
  const BoundParams::Layer& l = bound.layers[id.layer];
  switch (id.role) {
    case MatrixRole::U: return l.u;
    case MatrixRole::V: return l.v;
    case MatrixRole::C: return l.c;
  }
  return l.v;
}

// Fresh momentum buffers: live matrices in matrix_ids order, then biases.
std::vector<Tensor> zero_velocity(const ModelParams& m) {
  std::vector<Tensor> out;
  for (const MatrixId& id : m.matrix_ids()) out.emplace_back(m.matrix(id).shape());
  for (const ParamTriple& t : m.layers()) out.emplace_back(t.bias.shape());
  return out;
}

ModelParams zeros_like(const ModelParams& m) {
  ModelParams out = m;
  for (std::size_t l = 0; l < out.layer_count(); ++l) {
    ParamTriple& t = out.layer(l);
    t.u.fill(0.0);
    t.v.fill(0.0);
    t.c.fill(0.0);
    t.bias.fill(0.0);
  }
  return out;
}

// θ′ ← Q(θ + u) for every live matrix. With 32 bits the projection is exact.
void mirror_update(AdmmState& s, const CompressionConfig& cc) {
  const auto ids = s.theta.matrix_ids();
  CompressionConfig step_cfg = cc;
  step_cfg.seed = cc.seed + s.step;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Tensor& th = s.theta.matrix(ids[i]);
    const Tensor& u = s.u.matrix(ids[i]);
    Tensor target = th;
    for (std::size_t j = 0; j < target.size(); ++j) target[j] += u[j];
    if (cc.bits >= 32) {
      s.theta_prime.matrix(ids[i]) = std::move(target);
    } else {
      s.theta_prime.matrix(ids[i]) =
          zero_kmeans(target, cc.codebook_size(), step_cfg,
                      step_cfg.seed ^ (0xD1B54A32D192ED03ULL * (i + 1)))
              .quantized;
    }
  }
}

void dual_update(AdmmState& s) {
  for (const MatrixId& id : s.theta.matrix_ids()) {
    const Tensor& th = s.theta.matrix(id);
    const Tensor& tp = s.theta_prime.matrix(id);
    Tensor& u = s.u.matrix(id);
    for (std::size_t j = 0; j < u.size(); ++j) u[j] += th[j] - tp[j];
  }
}

void round_to_float(Tensor& t) {
  // + 0.0 turns a negative zero into +0.
  for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v)) + 0.0;
}

std::size_t max_distinct(const ModelParams& m) {
  std::size_t out = 0;
  for (const MatrixId& id : m.matrix_ids()) out = std::max(out, count_distinct_nonzero(m.matrix(id)));
  return out;
}

}  // namespace

SupportMask support_of(const ModelParams& model) {
  SupportMask mask;
  for (const MatrixId& id : model.matrix_ids()) {
    const auto d = model.matrix(id).data();
    std::vector<std::uint8_t> m(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m[i] = d[i] != 0.0;
    mask.push_back(std::move(m));
  }
  return mask;
}

void apply_support(ModelParams& model, const SupportMask& mask) {
  const auto ids = model.matrix_ids();
  if (mask.size() != ids.size()) {
    throw ShapeError("support mask has " + std::to_string(mask.size()) + " matrices, model has " +
                     std::to_string(ids.size()));
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto d = model.matrix(ids[i]).data();
    if (mask[i].size() != d.size()) throw ShapeError("support mask size mismatch");
    for (std::size_t j = 0; j < d.size(); ++j) {
      if (!mask[i][j]) d[j] = 0.0;
    }
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(lr_decay > 0.0)) throw ConfigError("learning-rate decay must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (attack_ramp_epochs < 0.0) throw ConfigError("attack ramp must be >= 0");
  if (patience < 0) throw ConfigError("patience must be >= 0");
  if (mirror_period < 1) throw ConfigError("mirror period must be >= 1");
  attack.validate();
  compression.validate();
}

double TrainConfig::lr_at(int epoch) const {
  double rate = lr;
  for (double m : lr_milestones) {
    const int at = static_cast<int>(std::floor(m * epochs));
    if (at >= 1 && epoch >= at) rate *= lr_decay;
  }
  return rate;
}

AttackConfig TrainConfig::attack_at(double progress) const {
  if (attack_ramp_epochs <= 0.0 || progress >= attack_ramp_epochs) return attack;
  const double frac = std::max(0.0, progress / attack_ramp_epochs);
  AttackConfig a = attack;
  a.delta *= frac;
  a.alpha *= frac;
  // A zero-budget step still has to validate.
  if (!(a.alpha > 0.0)) a.family = AttackFamily::none;
  return a;
}

AdmmState AdmmState::start(const ModelParams& model, const TrainConfig& cfg) {
  AdmmState s;
  s.theta = model;
  if (cfg.support) apply_support(s.theta, *cfg.support);
  s.theta = project_topk_global(s.theta, cfg.compression.k);
  s.theta_prime = s.theta;
  s.u = zeros_like(model);
  mirror_update(s, cfg.compression);
  s.velocity = zero_velocity(model);
  return s;
}

double AdmmState::primal_residual() const {
  double total = 0.0;
  for (const MatrixId& id : theta.matrix_ids()) {
    const double d = frobenius_distance(theta.matrix(id), theta_prime.matrix(id));
    total += d * d;
  }
  return std::sqrt(total);
}

double adv_loss(const ModelParams& model, const Tensor& x, std::span<const int> labels,
                const AttackConfig& attack, Precision precision) {
  const Network net(model, precision);
  const std::vector<double> losses = net.sample_losses(run_attack(net, x, labels, attack), labels);
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
}

double admm_step(AdmmState& state, const Tensor& x, std::span<const int> labels,
                 const TrainConfig& cfg, double lr, const AttackConfig& attack) {
  ModelParams& theta = state.theta;
  const Tensor x_adv =
      attack.family == AttackFamily::none ? x : run_attack(Network(theta, cfg.precision), x, labels, attack);

  Graph g(cfg.precision);
  const BoundParams bound = bind_parameters(g, theta);
  const Var loss = softmax_cross_entropy(g, forward(g, theta, bound, g.input(x_adv)), labels);
  const double value = g.value(loss)[0];
  if (!std::isfinite(value)) {
    throw NumericError("non-finite training loss at step " + std::to_string(state.step));
  }
  g.backward(loss);

  const double rho = cfg.compression.rho;
  const double mu = cfg.momentum;
  const auto ids = theta.matrix_ids();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Tensor& th = theta.matrix(ids[i]);
    const Tensor& tp = state.theta_prime.matrix(ids[i]);
    const Tensor& u = state.u.matrix(ids[i]);
    const Tensor grad = g.grad(bound_matrix(bound, ids[i]));
    Tensor& vel = state.velocity[i];
    for (std::size_t j = 0; j < th.size(); ++j) {
      const double total = grad[j] + rho * (th[j] - tp[j] + u[j]);
      vel[j] = mu * vel[j] + total;
      th[j] -= lr * vel[j];
    }
  }
  for (std::size_t l = 0; l < theta.layer_count(); ++l) {
    Tensor& b = theta.layer(l).bias;
    const Tensor grad = g.grad(bound.layers[l].binding.bias);
    Tensor& vel = state.velocity[ids.size() + l];
    for (std::size_t j = 0; j < b.size(); ++j) {
      vel[j] = mu * vel[j] + grad[j];
      b[j] -= lr * vel[j];
    }
  }

  if (cfg.support) apply_support(theta, *cfg.support);
  if (cfg.compression.k < theta.total_entries()) {
    theta = project_topk_global(theta, cfg.compression.k);
  }
  ++state.step;
  if (state.step % static_cast<std::size_t>(cfg.mirror_period) == 0) {
    mirror_update(state, cfg.compression);
    dual_update(state);
  }
  return value;
}

void round_to_float(ModelParams& model) {
  for (const MatrixId& id : model.matrix_ids()) round_to_float(model.matrix(id));
  for (std::size_t l = 0; l < model.layer_count(); ++l) round_to_float(model.layer(l).bias);
}

ModelParams finalize(const ModelParams& theta, const CompressionConfig& compression) {
  ModelParams out = project_topk_global(theta, compression.k);
  if (compression.bits < 32) out = zero_kmeans_model(out, compression);
  round_to_float(out);
  return out;
}

ModelParams finalize(const AdmmState& state, const CompressionConfig& compression) {
  return finalize(state.theta, compression);
}

TrainResult train_admm(const ModelParams& init, const Dataset& data, const TrainConfig& cfg,
                       const TrainHooks& hooks) {
  cfg.validate();
  if (data.size() == 0) throw ConfigError("training set is empty");
  TrainResult result;
  result.state = AdmmState::start(init, cfg);
  AdmmState& state = result.state;

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  double best_loss = std::numeric_limits<double>::infinity();
  int stale = 0;
  const double n = static_cast<double>(data.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = cfg.lr_at(epoch);
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      const Tensor x = data.gather(rows);
      const std::vector<int> y = data.gather_labels(rows);
      const AttackConfig attack = cfg.attack_at(epoch + static_cast<double>(begin) / n);

      if (cfg.log_clean_loss && attack.family != AttackFamily::none) {
        const auto clean = Network(state.theta, cfg.precision).sample_losses(x, y);
        log.clean_loss += std::accumulate(clean.begin(), clean.end(), 0.0) / clean.size();
      }
      StepRecord rec;
      rec.epoch = epoch;
      rec.lr = lr;
      rec.loss = admm_step(state, x, y, cfg, lr, attack);
      if (attack.family == AttackFamily::none) log.clean_loss += rec.loss;
      rec.step = state.step;
      rec.primal_residual = state.primal_residual();
      rec.nnz = state.theta.total_nnz();
      log.adv_loss += rec.loss;
      ++log.steps;
      if (hooks.on_step) hooks.on_step(rec, state);
    }
    log.clean_loss /= static_cast<double>(log.steps);
    log.adv_loss /= static_cast<double>(log.steps);
    log.primal_residual = state.primal_residual();
    log.nnz = state.theta.total_nnz();
    log.max_distinct = max_distinct(state.theta_prime);
    result.log.push_back(log);
    if (hooks.on_epoch) hooks.on_epoch(log);

    if (cfg.patience > 0) {
      if (log.adv_loss < best_loss) {
        best_loss = log.adv_loss;
        stale = 0;
      } else if (++stale >= cfg.patience) {
        break;
      }
    }
  }
  return result;
}

TrainResult train_adversarial(const ModelParams& init, const Dataset& data, const TrainConfig& cfg,
                              const TrainHooks& hooks) {
  TrainConfig plain = cfg;
  plain.compression.k = kNoSparsityLimit;
  plain.compression.bits = 32;
  plain.compression.rho = 0.0;
  plain.mirror_period = 1;
  return train_admm(init, data, plain, hooks);
}

}  // namespace atmc
