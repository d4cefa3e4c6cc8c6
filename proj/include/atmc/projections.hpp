#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "atmc/model.hpp"
#include "atmc/tensor.hpp"

namespace atmc {

inline constexpr std::size_t kNoSparsityLimit = std::numeric_limits<std::size_t>::max();

struct CompressionConfig {
  std::size_t k = kNoSparsityLimit;  // global nonzero budget over live matrices
  int bits = 32;                     // codebook of 2^bits nonzero values per matrix
  double rho = 1e-2;                 // ADMM penalty; 0 decouples θ from the mirror
  int zk_max_iters = 100;
  int zk_restarts = 8;  // independent seeded Lloyd runs; the lowest objective wins
  double zk_tol = 0.0;  // also stop once the relative objective drop is below this
  std::uint64_t seed = 0;

  /// Throws ConfigError unless 1 ≤ bits ≤ 32, rho ≥ 0, zk_max_iters ≥ 1 and zk_restarts ≥ 1.
  void validate() const;
  std::uint64_t codebook_size() const { return std::uint64_t{1} << bits; }
};

/// Nonzero codebook of one matrix. Index 0 of `assignment` is the implicit zero
/// level; index j ≥ 1 refers to values[j − 1].
struct Codebook {
  std::vector<double> values;
  std::vector<std::uint32_t> assignment;

  double level(std::uint32_t index) const { return index == 0 ? 0.0 : values[index - 1]; }
};

struct ZeroKmeansResult {
  Codebook codebook;
  Tensor quantized;
  /// ‖M − M_q‖²_F after each completed Lloyd iteration of the winning run.
  std::vector<double> objective;
  int iterations = 0;
};

/// Keeps the k largest-magnitude entries across every live matrix, zeroing the
/// rest. Ties at the threshold go to the entry earlier in traversal order.
ModelParams project_topk_global(const ModelParams& theta, std::size_t k);

/// Same selection rule on a flat list of values.
std::vector<double> project_topk(std::span<const double> values, std::size_t k);

/// Lloyd clustering of M's nonzeros into {0, a₁…a_B} with the zero level frozen.
/// Each of cfg.zk_restarts runs starts from B distinct nonzero values drawn
/// with a seed derived from `seed`; an empty cluster is moved to the
/// worst-fitted value. Nearest-level ties go to zero,
/// then to the lower cluster index. B ≥ |M|₀ reproduces M exactly.
ZeroKmeansResult zero_kmeans(const Tensor& m, std::uint64_t clusters, const CompressionConfig& cfg,
                             std::uint64_t seed);

/// 2^b evenly spaced levels on [min nonzero, max nonzero]; zeros kept, each
/// nonzero snapped to the nearest level (ties to the lower level).
Tensor uniform_quantize(const Tensor& m, int bits);

/// ‖M − M_q‖²_F
double quantization_error(const Tensor& m, const Tensor& quantized);

/// zero_kmeans with 2^cfg.bits clusters applied to every live matrix, matrix i
/// seeded from cfg.seed and i.
ModelParams zero_kmeans_model(const ModelParams& theta, const CompressionConfig& cfg);
/// uniform_quantize on every live matrix.
ModelParams uniform_quantize_model(const ModelParams& theta, int bits);

bool is_feasible_sparsity(const ModelParams& theta, std::size_t k);
bool is_feasible_quant(const ModelParams& theta, int bits);

}  // namespace atmc
