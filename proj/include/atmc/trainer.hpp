#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "atmc/attacks.hpp"
#include "atmc/dataset.hpp"
#include "atmc/graph.hpp"
#include "atmc/model.hpp"
#include "atmc/projections.hpp"

namespace atmc {

/// Per live matrix (matrix_ids order), 1 where the entry may be nonzero.
using SupportMask = std::vector<std::vector<std::uint8_t>>;

/// Nonzero pattern of the live matrices.
SupportMask support_of(const ModelParams& model);
/// Zeroes live-matrix entries outside the mask.
void apply_support(ModelParams& model, const SupportMask& mask);

struct TrainConfig {
  int epochs = 10;
  std::size_t batch_size = 128;
  double lr = 0.05;
  std::vector<double> lr_milestones{0.5, 0.75};  // fractions of `epochs`
  double lr_decay = 0.1;
  double momentum = 0.0;
  /// Budget grows linearly from 0 to attack.delta over this many epochs.
  double attack_ramp_epochs = 0.0;
  /// Stop once the epoch-mean training loss has not improved for this many
  /// epochs; 0 disables.
  int patience = 0;
  std::uint64_t seed = 0;
  AttackConfig attack;
  CompressionConfig compression;
  int mirror_period = 1;  // θ steps between mirror and dual updates
  Precision precision = Precision::f64;
  bool log_clean_loss = true;
  std::optional<SupportMask> support;

  /// Throws ConfigError on a non-positive lr, batch size, epoch count or period.
  void validate() const;
  /// Learning rate during `epoch` (0-based).
  double lr_at(int epoch) const;
  /// Attack used for a batch that starts `progress` epochs into training.
  AttackConfig attack_at(double progress) const;
};

/// ADMM variables: θ (sparse), θ′ (quantized mirror) and the scaled dual u.
struct AdmmState {
  ModelParams theta;
  ModelParams theta_prime;
  ModelParams u;
  std::size_t step = 0;
  std::vector<Tensor> velocity;  // momentum buffers: live matrices, then biases

  /// θ = topk(model, k) (masked first when cfg.support is set),
  /// θ′ = ZeroKmeans(θ), u = 0.
  static AdmmState start(const ModelParams& model, const TrainConfig& cfg);

  /// ‖θ − θ′‖_F over the live matrices.
  double primal_residual() const;
};

struct StepRecord {
  std::size_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;  // mean data loss on the (adversarial) batch before the update
  double primal_residual = 0.0;
  std::size_t nnz = 0;
};

struct EpochLog {
  int epoch = 0;
  std::size_t steps = 0;
  double lr = 0.0;
  double clean_loss = 0.0;  // batch means averaged over the epoch
  double adv_loss = 0.0;
  double primal_residual = 0.0;  // at the end of the epoch
  std::size_t nnz = 0;
  std::size_t max_distinct = 0;  // largest |θ′|₀ over matrices
};

struct TrainHooks {
  std::function<void(const StepRecord&, const AdmmState&)> on_step;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  AdmmState state;
  std::vector<EpochLog> log;
};

/// Mean loss on adversarial examples generated against the current model.
double adv_loss(const ModelParams& model, const Tensor& x, std::span<const int> labels,
                const AttackConfig& attack, Precision precision = Precision::f64);

/// One iteration: x_adv from θ; θ ← topk(θ − γ(∇f + ρ(θ − θ′ + u))); every
/// `mirror_period` steps θ′ ← ZeroKmeans(θ + u) and u ← u + θ − θ′.
/// Returns the mean data loss on x_adv before the update.
double admm_step(AdmmState& state, const Tensor& x, std::span<const int> labels,
                 const TrainConfig& cfg, double lr, const AttackConfig& attack);

/// Rounds every live matrix and bias to the nearest float32.
void round_to_float(ModelParams& model);

/// ZeroKmeans(topk(θ, k)) with every live matrix and bias rounded to float32.
ModelParams finalize(const ModelParams& theta, const CompressionConfig& compression);
ModelParams finalize(const AdmmState& state, const CompressionConfig& compression);

/// Minibatch ADMM over shuffled epochs.
TrainResult train_admm(const ModelParams& init, const Dataset& data, const TrainConfig& cfg,
                       const TrainHooks& hooks = {});

/// Plain (attack = none) or adversarial SGD: the ADMM loop with k = ∞, b = 32,
/// ρ = 0. A support mask, if set, is still enforced.
TrainResult train_adversarial(const ModelParams& init, const Dataset& data,
                              const TrainConfig& cfg, const TrainHooks& hooks = {});

}  // namespace atmc
