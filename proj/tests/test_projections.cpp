#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "atmc/error.hpp"
#include "atmc/projections.hpp"
#include "testing.hpp"

using namespace atmc;
using atmc::testing::random_tensor;

namespace {

// min over supports S with |S| = k of Σ_{i∉S} v_i², by enumerating subsets.
double best_support_error(const std::vector<double>& v, std::size_t k) {
  const std::size_t n = v.size();
  double best = std::numeric_limits<double>::infinity();
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != std::min(k, n)) continue;
    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!((mask >> i) & 1u)) e += v[i] * v[i];
    }
    best = std::min(best, e);
  }
  return best;
}

double sq_error(const std::vector<double>& a, const std::vector<double>& b) {
  double e = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) e += (a[i] - b[i]) * (a[i] - b[i]);
  return e;
}

// Optimal objective over every assignment of the nonzeros to {0, c₁…c_B} with
// free centroids at cluster means.
double brute_force_zero_kmeans(const std::vector<double>& nz, std::size_t clusters) {
  const std::size_t n = nz.size();
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= clusters + 1;
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> a(n);
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = c % (clusters + 1);
      c /= clusters + 1;
    }
    std::vector<double> sum(clusters + 1, 0.0), cnt(clusters + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      sum[a[i]] += nz[i];
      cnt[a[i]] += 1.0;
    }
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double level = a[i] == 0 ? 0.0 : sum[a[i]] / cnt[a[i]];
      obj += (nz[i] - level) * (nz[i] - level);
    }
    best = std::min(best, obj);
  }
  return best;
}

CompressionConfig zk_config() {
  CompressionConfig cfg;
  cfg.zk_max_iters = 100;
  return cfg;
}

ModelParams tiny_model(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams m = init_factorized(ArchitectureSpec::mlp_small(1, 3, 3, 2, 4), seed);
  for (const MatrixId& id : m.matrix_ids()) {
    for (double& v : m.matrix(id).values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  }
  return m;
}

}  // namespace

TEST(TopK, HandExample) {
  const std::vector<double> v{3, -1, 0.5, -4};
  EXPECT_EQ(project_topk(v, 2), (std::vector<double>{3, 0, 0, -4}));
  EXPECT_EQ(project_topk(v, 0), (std::vector<double>{0, 0, 0, 0}));
  EXPECT_EQ(project_topk(v, 9), v);
}

TEST(TopK, TiesGoToEarlierEntries) {
  const std::vector<double> v{2, -2, 1, 2};
  EXPECT_EQ(project_topk(v, 2), (std::vector<double>{2, -2, 0, 0}));
  EXPECT_EQ(project_topk(v, 3), (std::vector<double>{2, -2, 0, 2}));
}

TEST(TopK, MatchesExhaustiveSupportSearch) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> small(-3, 3);
  for (std::size_t n = 1; n <= 12; ++n) {
    for (int trial = 0; trial < 6; ++trial) {
      std::vector<double> v(n);
      // Half the trials use small integers so ties and zeros are common.
      for (double& x : v) {
        x = trial % 2 ? small(rng) : std::uniform_real_distribution<double>(-2, 2)(rng);
      }
      for (std::size_t k = 0; k <= n; ++k) {
        const auto p = project_topk(v, k);
        std::size_t nnz = 0;
        for (std::size_t i = 0; i < n; ++i) {
          nnz += p[i] != 0.0;
          EXPECT_TRUE(p[i] == 0.0 || p[i] == v[i]);
        }
        EXPECT_LE(nnz, k);
        EXPECT_NEAR(sq_error(v, p), best_support_error(v, k), 1e-12);
      }
    }
  }
}

TEST(TopK, GlobalAcrossMatricesAndIdempotent) {
  const ModelParams m = tiny_model(3);
  std::vector<double> flat;
  for (const MatrixId& id : m.matrix_ids()) {
    for (double v : m.matrix(id).data()) flat.push_back(v);
  }
  for (std::size_t k : {0UL, 1UL, 7UL, 40UL, flat.size() - 1, flat.size(), flat.size() + 5}) {
    const ModelParams p = project_topk_global(m, k);
    EXPECT_LE(p.total_nnz(), k);
    EXPECT_TRUE(is_feasible_sparsity(p, k));
    EXPECT_EQ(project_topk_global(p, k), p);
    const auto expected = project_topk(flat, k);
    std::size_t offset = 0;
    for (const MatrixId& id : p.matrix_ids()) {
      for (double v : p.matrix(id).data()) EXPECT_EQ(v, expected[offset++]);
    }
  }
  EXPECT_EQ(project_topk_global(m, m.total_entries()), m);
}

TEST(TopK, DenseParameterizationPrunesVOnly) {
  const ModelParams m = init_factorized(ArchitectureSpec::mlp_small(1, 3, 3, 2, 4), 5,
                                        Parameterization::dense);
  const ModelParams p = project_topk_global(m, 10);
  EXPECT_EQ(p.total_nnz(), 10u);
  for (std::size_t l = 0; l < p.layer_count(); ++l) {
    EXPECT_EQ(p.layer(l).u, m.layer(l).u);
    EXPECT_EQ(p.layer(l).c, m.layer(l).c);
  }
}

TEST(ZeroKmeans, ExactWhenCodebookFits) {
  const Tensor m = Tensor::from({4}, {0, 1, 4, 1});
  const auto r = zero_kmeans(m, 2, zk_config(), 7);
  EXPECT_EQ(r.quantized, m);
  EXPECT_EQ(r.codebook.values, (std::vector<double>{1, 4}));
  EXPECT_EQ(r.codebook.assignment, (std::vector<std::uint32_t>{0, 1, 2, 1}));
  EXPECT_EQ(count_l0(m), 3u);
  EXPECT_EQ(count_distinct_nonzero(m), 2u);
}

TEST(ZeroKmeans, SingleClusterPrefersZeroForSmallEntries) {
  const Tensor m = Tensor::from({3}, {1, 1, 4});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = zero_kmeans(m, 1, zk_config(), seed);
    EXPECT_EQ(r.quantized, Tensor::from({3}, {0, 0, 4}));
    EXPECT_DOUBLE_EQ(quantization_error(m, r.quantized), 2.0);
  }
}

TEST(ZeroKmeans, AllZeroInput) {
  const Tensor m({2, 3});
  const auto r = zero_kmeans(m, 4, zk_config(), 1);
  EXPECT_EQ(r.quantized, m);
  EXPECT_TRUE(r.codebook.values.empty());
}

TEST(ZeroKmeans, ThirtyTwoBitCodebookIsExact) {
  std::mt19937_64 rng(2);
  const Tensor m = random_tensor({20, 30}, rng);
  CompressionConfig cfg;
  cfg.bits = 32;
  EXPECT_EQ(zero_kmeans(m, cfg.codebook_size(), cfg, 0).quantized, m);
}

TEST(ZeroKmeans, InvariantsOnRandomMatrices) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor m = random_tensor({12, 9}, rng);
    for (std::size_t i = 0; i < m.size(); i += 3) m[i] = 0.0;
    const std::uint64_t clusters = 1 + trial % 8;
    const auto r = zero_kmeans(m, clusters, zk_config(), trial);
    EXPECT_LE(count_distinct_nonzero(r.quantized), clusters);
    std::set<double> distinct(r.codebook.values.begin(), r.codebook.values.end());
    EXPECT_EQ(distinct.size(), r.codebook.values.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i] == 0.0) {
        EXPECT_EQ(r.quantized[i], 0.0);
      }
      EXPECT_EQ(r.quantized[i], r.codebook.level(r.codebook.assignment[i]));
    }
    for (std::size_t t = 1; t < r.objective.size(); ++t) {
      EXPECT_LE(r.objective[t], r.objective[t - 1] * (1.0 + 1e-12));
    }
    EXPECT_NEAR(r.objective.back(), quantization_error(m, r.quantized), 1e-9);
    EXPECT_EQ(zero_kmeans(m, clusters, zk_config(), trial).quantized, r.quantized);
  }
}

TEST(ZeroKmeans, ReachesBruteForceOptimumOnSmallInputs) {
  std::mt19937_64 rng(6);
  int optimal = 0, total = 0, beats_uniform = 0, uniform_total = 0;
  for (std::uint64_t clusters : {1u, 2u}) {
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t nnz = 1 + trial % 6;
      Tensor m({8});
      std::vector<double> nz;
      for (std::size_t i = 0; i < nnz; ++i) {
        m[i] = std::uniform_real_distribution<double>(-1, 1)(rng);
        nz.push_back(m[i]);
      }
      const double opt = brute_force_zero_kmeans(nz, clusters);
      const double got = quantization_error(m, zero_kmeans(m, clusters, zk_config(), trial).quantized);
      EXPECT_GE(got, opt - 1e-12);
      ++total;
      optimal += got <= opt * (1.0 + 1e-12) + 1e-15;
      if (clusters == 2) {
        ++uniform_total;
        beats_uniform += got <= quantization_error(m, uniform_quantize(m, 1)) + 1e-15;
      }
    }
  }
  EXPECT_GE(optimal, total * 90 / 100);
  EXPECT_GE(beats_uniform, uniform_total * 95 / 100);
}

TEST(ZeroKmeans, BeatsUniformOnRandomMatrices) {
  std::mt19937_64 rng(8);
  int wins = 0, total = 0;
  for (int bits : {2, 3}) {
    for (int trial = 0; trial < 50; ++trial) {
      std::normal_distribution<double> nd(0.0, 1.0);
      Tensor m({100});
      for (double& v : m.values()) v = nd(rng);
      const double zk =
          quantization_error(m, zero_kmeans(m, 1u << bits, zk_config(), trial).quantized);
      const double uq = quantization_error(m, uniform_quantize(m, bits));
      wins += zk <= uq;
      ++total;
    }
  }
  EXPECT_GE(wins, total * 95 / 100);
}

TEST(ZeroKmeans, ModelLevelQuantizationIsFeasible) {
  const ModelParams m = tiny_model(9);
  CompressionConfig cfg;
  cfg.bits = 2;
  const ModelParams q = zero_kmeans_model(m, cfg);
  EXPECT_TRUE(is_feasible_quant(q, 2));
  EXPECT_FALSE(is_feasible_quant(m, 2));
  EXPECT_EQ(zero_kmeans_model(m, cfg), q);
  const ModelParams sparse = project_topk_global(m, 30);
  const ModelParams both = zero_kmeans_model(sparse, cfg);
  EXPECT_TRUE(is_feasible_quant(both, 2));
  EXPECT_TRUE(is_feasible_sparsity(both, 30));
}

TEST(UniformQuantize, HandExamples) {
  EXPECT_EQ(uniform_quantize(Tensor::from({4}, {1, 2, 3, 4}), 1), Tensor::from({4}, {1, 1, 4, 4}));
  const Tensor same = Tensor::from({4}, {0, 2.5, 2.5, 0});
  EXPECT_EQ(uniform_quantize(same, 1), same);
  const Tensor with_zero = Tensor::from({3}, {-1, 0, 1});
  EXPECT_EQ(uniform_quantize(with_zero, 1), with_zero);
  EXPECT_THROW(uniform_quantize(same, 0), ConfigError);
}

TEST(UniformQuantize, LevelCountBound) {
  std::mt19937_64 rng(10);
  for (int bits : {1, 2, 3, 5}) {
    const Tensor m = random_tensor({300}, rng);
    EXPECT_LE(count_distinct_nonzero(uniform_quantize(m, bits)), 1u << bits);
  }
}

TEST(Feasibility, Predicates) {
  Tensor m = Tensor::from({5}, {1, 2, 3, 0, 0});
  ModelParams model = tiny_model(11);
  const std::size_t nnz = model.total_nnz();
  EXPECT_TRUE(is_feasible_sparsity(model, nnz));
  EXPECT_FALSE(is_feasible_sparsity(model, nnz - 1));
  // 2^1 + 1 distinct nonzeros in one matrix.
  ModelParams q = zero_kmeans_model(model, [] {
    CompressionConfig c;
    c.bits = 1;
    return c;
  }());
  EXPECT_TRUE(is_feasible_quant(q, 1));
  Tensor& v = q.matrix(q.matrix_ids().front());
  v[0] = 11.0;
  v[1] = 12.0;
  v[2] = 13.0;
  EXPECT_FALSE(is_feasible_quant(q, 1));
  EXPECT_EQ(count_distinct_nonzero(m), 3u);
}

TEST(CompressionConfigTest, Validation) {
  CompressionConfig c;
  EXPECT_NO_THROW(c.validate());
  c.bits = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.bits = 33;
  EXPECT_THROW(c.validate(), ConfigError);
  c.bits = 8;
  c.rho = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.rho = 0.0;
  EXPECT_NO_THROW(c.validate());
}
