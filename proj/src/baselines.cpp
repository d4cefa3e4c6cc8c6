#include "atmc/baselines.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

#include "atmc/error.hpp"

namespace atmc {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct KindName {
  PipelineKind kind;
  const char* name;
};

constexpr KindName kKinds[] = {
    {PipelineKind::nap, "nap"},   {PipelineKind::da, "da"},     {PipelineKind::ap, "ap"},
    {PipelineKind::al0, "al0"},   {PipelineKind::alr, "alr"},   {PipelineKind::atmc, "atmc"},
    {PipelineKind::atmc_uniform_pq, "atmc-uniform-pq"},
};

ModelParams dense_start(const PipelineSpec& spec, const Dataset& data,
                        const ModelParams* pretrained, PipelineResult& out) {
  if (pretrained != nullptr) {
    if (!(pretrained->arch() == spec.arch)) throw ConfigError("pretrained model architecture differs");
    out.pretrained = *pretrained;
  } else {
    TrainResult r = pretrain(spec, data);
    out.pretrained = std::move(r.state.theta);
    out.pretrain_log = std::move(r.log);
  }
  return with_parameterization(out.pretrained, Parameterization::dense);
}

PipelineResult prune_and_finetune(const PipelineSpec& spec, const Dataset& data,
                                  const ModelParams* pretrained, bool adversarial) {
  PipelineResult out;
  const ModelParams dense = dense_start(spec, data, pretrained, out);
  const std::size_t k = spec.budget();
  const ModelParams pruned = project_topk_global(dense, k);
  TrainConfig ft = spec.finetune_config();
  if (!adversarial) ft.attack = AttackConfig::none();
  ft.support = support_of(pruned);
  TrainResult r = train_adversarial(pruned, data, ft);
  out.finetune_log = std::move(r.log);
  CompressionConfig fin;
  fin.k = k;
  out.model = finalize(r.state.theta, fin);
  return out;
}

}  // namespace

const char* pipeline_name(PipelineKind kind) {
  for (const KindName& k : kKinds) {
    if (k.kind == kind) return k.name;
  }
  return "?";
}

PipelineKind parse_pipeline(const std::string& name) {
  for (const KindName& k : kKinds) {
    if (name == k.name) return k.kind;
  }
  throw ConfigError("unknown pipeline '" + name +
                    "' (expected nap, da, ap, al0, alr, atmc or atmc-uniform-pq)");
}

void PipelineSpec::validate() const {
  arch.weight_shapes();
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("pruning ratio must be in (0, 1]");
  if (!(rank_fraction > 0.0 && rank_fraction <= 1.0)) {
    throw ConfigError("rank fraction must be in (0, 1]");
  }
  if (k && *k == 0) throw ConfigError("nonzero budget k must be >= 1");
  if (bits < 1 || bits > 32) throw ConfigError("bits must be in [1, 32]");
  if (patience < 0) throw ConfigError("patience must be >= 0");
  train.validate();
  finetune_config().validate();
}

std::size_t PipelineSpec::budget() const {
  if (k) return *k;
  const double dense = static_cast<double>(arch.dense_weight_count());
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(ratio * dense)));
}

TrainConfig PipelineSpec::finetune_config() const {
  TrainConfig ft = train;
  ft.epochs = finetune_epochs >= 0 ? finetune_epochs : std::max(1, train.epochs / 2);
  if (finetune_lr > 0.0) ft.lr = finetune_lr;
  ft.attack_ramp_epochs = 0.0;
  ft.patience = patience;
  ft.seed = train.seed + 1;
  ft.support.reset();
  return ft;
}

TrainResult pretrain(const PipelineSpec& spec, const Dataset& data) {
  TrainConfig cfg = spec.train;
  if (!spec.adversarial_pretrain()) cfg.attack = AttackConfig::none();
  cfg.support.reset();
  return train_adversarial(init_factorized(spec.arch, spec.init_seed, Parameterization::dense),
                           data, cfg);
}

PipelineResult run_pipeline(const PipelineSpec& spec, const Dataset& data,
                            const ModelParams* pretrained) {
  spec.validate();
  PipelineResult out;
  switch (spec.kind) {
    case PipelineKind::atmc: return run_atmc(spec, data, pretrained);
    case PipelineKind::atmc_uniform_pq: return run_atmc_uniform_pq(spec, data, pretrained);
    case PipelineKind::nap: out = run_nap(spec, data, pretrained); break;
    case PipelineKind::da: out = run_da(spec, data, pretrained); break;
    case PipelineKind::ap: out = run_ap(spec, data, pretrained); break;
    case PipelineKind::al0: out = run_al0(spec, data, pretrained); break;
    case PipelineKind::alr: out = run_alr(spec, data, pretrained); break;
  }
  if (spec.bits < 32) {
    // Baselines have no quantization step of their own: ZeroKmeans afterwards.
    CompressionConfig q;
    q.bits = spec.bits;
    q.seed = spec.train.seed;
    out.model = finalize(out.model, q);
  }
  return out;
}

PipelineResult run_nap(const PipelineSpec& spec, const Dataset& data,
                       const ModelParams* pretrained) {
  return prune_and_finetune(spec, data, pretrained, false);
}

PipelineResult run_ap(const PipelineSpec& spec, const Dataset& data,
                      const ModelParams* pretrained) {
  return prune_and_finetune(spec, data, pretrained, true);
}

PipelineResult run_da(const PipelineSpec& spec, const Dataset& data,
                      const ModelParams* pretrained) {
  PipelineResult out;
  out.model = dense_start(spec, data, pretrained, out);
  round_to_float(out.model);
  return out;
}

PipelineResult run_al0(const PipelineSpec& spec, const Dataset& data,
                       const ModelParams* pretrained) {
  PipelineResult out;
  const ModelParams dense = dense_start(spec, data, pretrained, out);
  TrainConfig ft = spec.finetune_config();
  ft.compression.k = spec.budget();
  ft.compression.bits = 32;
  ft.compression.rho = 0.0;
  ft.mirror_period = 1;
  TrainResult r = train_admm(dense, data, ft);
  out.finetune_log = std::move(r.log);
  out.model = finalize(r.state.theta, ft.compression);
  return out;
}

PipelineResult run_alr(const PipelineSpec& spec, const Dataset& data,
                       const ModelParams* pretrained) {
  PipelineResult out;
  const ModelParams dense = dense_start(spec, data, pretrained, out);
  LowRankModel lr = low_rank_factorize(dense, spec.rank_fraction);
  TrainConfig ft = spec.finetune_config();
  ft.support = std::move(lr.support);
  TrainResult r = train_adversarial(lr.model, data, ft);
  out.finetune_log = std::move(r.log);
  out.model = finalize(r.state.theta, CompressionConfig{});
  return out;
}

PipelineResult run_atmc(const PipelineSpec& spec, const Dataset& data,
                        const ModelParams* pretrained) {
  PipelineResult out;
  const ModelParams start =
      with_parameterization(dense_start(spec, data, pretrained, out), Parameterization::factorized);
  TrainConfig ft = spec.finetune_config();
  ft.compression.k = spec.budget();
  ft.compression.bits = spec.kind == PipelineKind::atmc ? spec.bits : 32;
  TrainResult r = train_admm(start, data, ft);
  out.finetune_log = std::move(r.log);
  out.model = finalize(r.state, ft.compression);
  return out;
}

PipelineResult run_atmc_uniform_pq(const PipelineSpec& spec, const Dataset& data,
                                   const ModelParams* pretrained) {
  PipelineSpec full = spec;
  full.kind = PipelineKind::atmc;
  full.bits = 32;
  PipelineResult out = run_atmc(full, data, pretrained);
  out.model = uniform_post_quantize(out.model, spec.bits);
  return out;
}

ModelParams uniform_post_quantize(const ModelParams& model, int bits) {
  if (bits >= 32) return model;
  ModelParams out = uniform_quantize_model(model, bits);
  round_to_float(out);
  return out;
}

LowRankModel low_rank_factorize(const ModelParams& dense, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("rank fraction must be in (0, 1]");
  LowRankModel out;
  std::vector<ParamTriple> layers;
  for (std::size_t l = 0; l < dense.layer_count(); ++l) {
    const ParamTriple& src = dense.layer(l);
    const Tensor w = effective_weight(src);
    const std::size_t m = w.dim(0), n = w.dim(1);
    if (!w.all_finite()) {
      throw NumericError("layer " + std::to_string(l) + ": cannot factorize a non-finite matrix");
    }
    const Eigen::Map<const RowMat> wm(w.data().data(), static_cast<Eigen::Index>(m),
                                      static_cast<Eigen::Index>(n));
    Eigen::BDCSVD<RowMat> svd(wm, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) {
      throw NumericError("layer " + std::to_string(l) + ": SVD did not converge");
    }
    const std::size_t r = std::min<std::size_t>(
        n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
    const auto sv = svd.singularValues();
    const auto& a = svd.matrixU();
    const auto& b = svd.matrixV();

    ParamTriple t;
    t.transposed = src.transposed;
    t.bias = src.bias;
    t.u = Tensor({m, m});
    t.v = Tensor({m, n});
    t.c = Tensor({m, n});
    std::vector<std::uint8_t> mu(m * m, 0), mv(m * n, 0), mc(m * n, 0);
    for (std::size_t j = 0; j < r; ++j) {
      const double s = std::sqrt(sv(static_cast<Eigen::Index>(j)));
      for (std::size_t i = 0; i < m; ++i) {
        t.u[i * m + j] = a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * s;
        mu[i * m + j] = 1;
      }
      for (std::size_t i = 0; i < n; ++i) {
        t.v[j * n + i] = s * b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        mv[j * n + i] = 1;
      }
    }
    layers.push_back(std::move(t));
    out.support.push_back(std::move(mu));
    out.support.push_back(std::move(mv));
    out.support.push_back(std::move(mc));
    out.ranks.push_back(r);
  }
  out.model = ModelParams(dense.arch(), Parameterization::factorized, std::move(layers));
  return out;
}

}  // namespace atmc
