#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "atmc/dataset.hpp"
#include "atmc/model.hpp"
#include "atmc/trainer.hpp"

namespace atmc {

enum class PipelineKind { nap, da, ap, al0, alr, atmc, atmc_uniform_pq };

const char* pipeline_name(PipelineKind kind);
/// "nap", "da", "ap", "al0", "alr", "atmc", "atmc-uniform-pq"; ConfigError otherwise.
PipelineKind parse_pipeline(const std::string& name);

struct PipelineSpec {
  PipelineKind kind = PipelineKind::atmc;
  ArchitectureSpec arch;
  /// Fraction of the dense weight count kept (nap, ap, al0, atmc).
  double ratio = 1.0;
  /// Absolute nonzero budget; overrides `ratio` when set.
  std::optional<std::size_t> k;
  double rank_fraction = 1.0;  // alr
  int bits = 32;               // atmc codebook bits; uniform bits for atmc_uniform_pq
  /// Pre-training schedule, attack, seed and ADMM settings (rho, mirror period).
  TrainConfig train;
  /// Compression-phase epochs; negative means half of train.epochs (at least 1).
  int finetune_epochs = -1;
  /// Compression-phase learning rate; non-positive means train.lr.
  double finetune_lr = 0.0;
  int patience = 5;
  std::uint64_t init_seed = 0;

  void validate() const;
  /// Nonzero budget for the compression phase.
  std::size_t budget() const;
  /// Fine-tune / ADMM schedule derived from `train`.
  TrainConfig finetune_config() const;
  /// Whether pre-training uses the attack (all kinds except nap).
  bool adversarial_pretrain() const { return kind != PipelineKind::nap; }
};

struct PipelineResult {
  ModelParams model;       // finalized: feasible and float32-exact
  ModelParams pretrained;  // dense model the compression phase started from
  std::vector<EpochLog> pretrain_log;
  std::vector<EpochLog> finetune_log;
};

/// Dense (U ≡ I, C ≡ 0) training from init_seed: adversarial unless nap.
TrainResult pretrain(const PipelineSpec& spec, const Dataset& data);

/// Dispatches on spec.kind. Pipelines other than the ATMC pair are
/// post-quantized with ZeroKmeans when spec.bits < 32. A supplied `pretrained` dense model replaces the
/// pre-training phase, so several pipelines can share one.
PipelineResult run_pipeline(const PipelineSpec& spec, const Dataset& data,
                            const ModelParams* pretrained = nullptr);

/// Plain pre-train, global magnitude prune, plain fine-tune on the frozen support.
PipelineResult run_nap(const PipelineSpec& spec, const Dataset& data,
                       const ModelParams* pretrained = nullptr);
/// Dense adversarial training.
PipelineResult run_da(const PipelineSpec& spec, const Dataset& data,
                      const ModelParams* pretrained = nullptr);
/// As nap with adversarial pre-training and fine-tuning.
PipelineResult run_ap(const PipelineSpec& spec, const Dataset& data,
                      const ModelParams* pretrained = nullptr);
/// Adversarial training of the dense weight with a top-k projection after every step.
PipelineResult run_al0(const PipelineSpec& spec, const Dataset& data,
                       const ModelParams* pretrained = nullptr);
/// Truncated SVD per layer, then adversarial fine-tuning of the factors.
PipelineResult run_alr(const PipelineSpec& spec, const Dataset& data,
                       const ModelParams* pretrained = nullptr);
/// ADMM over W = U·V + C warm-started from the dense model, then finalize.
PipelineResult run_atmc(const PipelineSpec& spec, const Dataset& data,
                        const ModelParams* pretrained = nullptr);
/// ATMC at 32 bits followed by uniform quantization to spec.bits, no retraining.
PipelineResult run_atmc_uniform_pq(const PipelineSpec& spec, const Dataset& data,
                                   const ModelParams* pretrained = nullptr);

/// Uniform quantization of every live matrix, rounded to float32.
ModelParams uniform_post_quantize(const ModelParams& model, int bits);

/// Rank-r factors of a dense model in W = U·V + C form: per layer
/// r = ceil(fraction · n), U = A_r·Σ_r^½ in the first r columns,
/// V = Σ_r^½·B_rᵀ in the first r rows, C = 0. Throws NumericError when the SVD fails.
struct LowRankModel {
  ModelParams model;  // factorized
  SupportMask support;
  std::vector<std::size_t> ranks;
};
LowRankModel low_rank_factorize(const ModelParams& dense, double fraction);

}  // namespace atmc
