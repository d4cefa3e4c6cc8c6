#include "atmc/projections.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "atmc/error.hpp"

namespace atmc {

namespace {

constexpr std::uint32_t kUnassigned = std::numeric_limits<std::uint32_t>::max();

// Indices of the k largest |values|, earlier index first among equals.
std::vector<std::size_t> topk_indices(std::span<const double> values, std::size_t k) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto before = [&](std::size_t a, std::size_t b) {
    const double fa = std::abs(values[a]);
    const double fb = std::abs(values[b]);
    return fa > fb || (fa == fb && a < b);
  };
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), before);
  idx.resize(k);
  return idx;
}

struct Level {
  double value;
  std::uint32_t cluster;
};

// Nearest level for each ascending value; ties go to the lower cluster index,
// which makes the frozen zero level (cluster 0) win its ties.
void assign_nearest(const std::vector<double>& values, const std::vector<double>& centroids,
                    std::vector<std::uint32_t>& assignment) {
  std::vector<Level> levels;
  levels.reserve(centroids.size() + 1);
  levels.push_back({0.0, 0});
  for (std::size_t j = 0; j < centroids.size(); ++j) {
    levels.push_back({centroids[j], static_cast<std::uint32_t>(j + 1)});
  }
  std::sort(levels.begin(), levels.end(), [](const Level& a, const Level& b) {
    return a.value < b.value || (a.value == b.value && a.cluster < b.cluster);
  });
  // run_start[p]: first position holding the same value as p (lowest cluster index).
  std::vector<std::size_t> run_start(levels.size());
  for (std::size_t p = 0; p < levels.size(); ++p) {
    run_start[p] = (p > 0 && levels[p].value == levels[p - 1].value) ? run_start[p - 1] : p;
  }

  std::size_t next = 0;  // first level with value > x
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = values[i];
    while (next < levels.size() && levels[next].value <= x) ++next;
    const Level* best = nullptr;
    double best_dist = 0.0;
    const auto consider = [&](const Level& l) {
      const double d = (x - l.value) * (x - l.value);
      if (best == nullptr || d < best_dist || (d == best_dist && l.cluster < best->cluster)) {
        best = &l;
        best_dist = d;
      }
    };
    if (next > 0) consider(levels[run_start[next - 1]]);
    if (next < levels.size()) consider(levels[next]);
    assignment[i] = best->cluster;
  }
}

double weighted_objective(const std::vector<double>& values, const std::vector<std::size_t>& counts,
                          const std::vector<double>& centroids,
                          const std::vector<std::uint32_t>& assignment) {
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double level = assignment[i] == 0 ? 0.0 : centroids[assignment[i] - 1];
    const double e = values[i] - level;
    total += static_cast<double>(counts[i]) * e * e;
  }
  return total;
}

std::uint64_t matrix_seed(std::uint64_t seed, std::size_t index) {
  return seed ^ (0x9E3779B97F4A7C15ULL * (index + 1));
}

struct LloydRun {
  std::vector<double> centroids;
  std::vector<std::uint32_t> assignment;
  std::vector<double> objective;
  int iterations = 0;
};

// One Lloyd run over ascending distinct values with multiplicities.
LloydRun lloyd(const std::vector<double>& values, const std::vector<std::size_t>& counts,
               std::size_t clusters, const CompressionConfig& cfg, std::uint64_t seed) {
  LloydRun run;
  const std::size_t b = clusters;
  const std::size_t d = values.size();
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> pick(d);
  std::iota(pick.begin(), pick.end(), std::size_t{0});
  for (std::size_t i = 0; i < b; ++i) {
    std::uniform_int_distribution<std::size_t> dist(i, d - 1);
    std::swap(pick[i], pick[dist(rng)]);
  }
  std::vector<double> centroids(b);
  for (std::size_t j = 0; j < b; ++j) centroids[j] = values[pick[j]];

  std::vector<std::uint32_t> assignment(d, kUnassigned);
  std::vector<std::uint32_t> next(d);
  std::vector<double> sums(b + 1);
  std::vector<double> weights(b + 1);
  for (int iter = 0; iter < cfg.zk_max_iters; ++iter) {
    assign_nearest(values, centroids, next);
    if (next == assignment) break;
    assignment.swap(next);

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(weights.begin(), weights.end(), 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      sums[assignment[i]] += static_cast<double>(counts[i]) * values[i];
      weights[assignment[i]] += static_cast<double>(counts[i]);
    }
    std::vector<std::uint32_t> empty;
    for (std::size_t j = 1; j <= b; ++j) {
      if (weights[j] > 0.0) {
        centroids[j - 1] = sums[j] / weights[j];
      } else {
        empty.push_back(static_cast<std::uint32_t>(j));
      }
    }
    if (!empty.empty()) {
      // Re-seed each empty cluster at the currently worst-fitted value.
      std::vector<std::size_t> order(d);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::vector<double> err(d);
      for (std::size_t i = 0; i < d; ++i) {
        const double level = assignment[i] == 0 ? 0.0 : centroids[assignment[i] - 1];
        err[i] = (values[i] - level) * (values[i] - level);
      }
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t c) { return err[a] > err[c]; });
      std::size_t cursor = 0;
      for (std::uint32_t j : empty) {
        while (cursor < d && err[order[cursor]] == 0.0) ++cursor;
        if (cursor >= d) break;
        const std::size_t i = order[cursor++];
        centroids[j - 1] = values[i];
        assignment[i] = j;
        err[i] = 0.0;
      }
    }
    run.objective.push_back(weighted_objective(values, counts, centroids, assignment));
    run.iterations = iter + 1;

    const std::size_t n = run.objective.size();
    if (cfg.zk_tol > 0.0 && n >= 2) {
      const double prev = run.objective[n - 2];
      if (prev <= 0.0 || (prev - run.objective[n - 1]) / prev < cfg.zk_tol) break;
    }
  }
  run.centroids = std::move(centroids);
  run.assignment = std::move(assignment);
  return run;
}
}  // namespace

void CompressionConfig::validate() const {
  if (bits < 1 || bits > 32) throw ConfigError("bits must be in [1, 32], got " + std::to_string(bits));
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw ConfigError("rho must be finite and >= 0");
  if (zk_max_iters < 1) throw ConfigError("zk_max_iters must be >= 1");
  if (zk_restarts < 1) throw ConfigError("zk_restarts must be >= 1");
  if (!(zk_tol >= 0.0)) throw ConfigError("zk_tol must be >= 0");
}

std::vector<double> project_topk(std::span<const double> values, std::size_t k) {
  std::vector<double> out(values.begin(), values.end());
  if (k >= values.size()) return out;
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i : topk_indices(values, k)) out[i] = values[i];
  return out;
}

ModelParams project_topk_global(const ModelParams& theta, std::size_t k) {
  const auto ids = theta.matrix_ids();
  if (k >= theta.total_entries()) return theta;

  std::vector<double> flat;
  flat.reserve(theta.total_entries());
  for (const MatrixId& id : ids) {
    const auto d = theta.matrix(id).data();
    flat.insert(flat.end(), d.begin(), d.end());
  }
  const std::vector<double> kept = project_topk(flat, k);

  ModelParams out = theta;
  std::size_t offset = 0;
  for (const MatrixId& id : ids) {
    auto d = out.matrix(id).data();
    std::copy_n(kept.begin() + static_cast<std::ptrdiff_t>(offset), d.size(), d.begin());
    offset += d.size();
  }
  return out;
}

ZeroKmeansResult zero_kmeans(const Tensor& m, std::uint64_t clusters, const CompressionConfig& cfg,
                             std::uint64_t seed) {
  if (clusters < 1) throw ConfigError("zero_kmeans needs at least one cluster");
  if (cfg.zk_max_iters < 1 || cfg.zk_restarts < 1) {
    throw ConfigError("zero_kmeans needs zk_max_iters >= 1 and zk_restarts >= 1");
  }

  // Distinct nonzero values with multiplicities, ascending.
  std::vector<double> nz;
  for (double v : m.data()) {
    if (v != 0.0) nz.push_back(v);
  }
  std::sort(nz.begin(), nz.end());
  std::vector<double> values;
  std::vector<std::size_t> counts;
  for (double v : nz) {
    if (values.empty() || values.back() != v) {
      values.push_back(v);
      counts.push_back(1);
    } else {
      ++counts.back();
    }
  }

  ZeroKmeansResult result;
  result.quantized = m;
  const auto index_of = [&](double v) {
    return static_cast<std::size_t>(std::lower_bound(values.begin(), values.end(), v) -
                                    values.begin());
  };

  if (clusters >= values.size()) {
    result.codebook.values = values;
    result.codebook.assignment.resize(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
      result.codebook.assignment[i] =
          m[i] == 0.0 ? 0 : static_cast<std::uint32_t>(index_of(m[i]) + 1);
      if (m[i] == 0.0) result.quantized[i] = 0.0;
    }
    result.objective.push_back(0.0);
    return result;
  }

  const std::size_t b = static_cast<std::size_t>(clusters);
  LloydRun best;
  for (int r = 0; r < cfg.zk_restarts; ++r) {
    LloydRun run = lloyd(values, counts, b, cfg, matrix_seed(seed, static_cast<std::size_t>(r)));
    if (r == 0 || run.objective.back() < best.objective.back()) best = std::move(run);
  }
  const std::vector<double>& centroids = best.centroids;
  const std::vector<std::uint32_t>& assignment = best.assignment;
  result.objective = best.objective;
  result.iterations = best.iterations;

  // Canonical codebook: used, nonzero centroids in ascending order.
  std::vector<char> used(b + 1, 0);
  for (std::uint32_t a : assignment) used[a] = 1;
  std::vector<std::uint32_t> live;
  for (std::uint32_t j = 1; j <= b; ++j) {
    if (used[j] && centroids[j - 1] != 0.0) live.push_back(j);
  }
  std::sort(live.begin(), live.end(), [&](std::uint32_t a, std::uint32_t c) {
    return centroids[a - 1] < centroids[c - 1] || (centroids[a - 1] == centroids[c - 1] && a < c);
  });
  std::vector<std::uint32_t> remap(b + 1, 0);
  for (std::uint32_t j : live) {
    const double v = centroids[j - 1];
    if (result.codebook.values.empty() || result.codebook.values.back() != v) {
      result.codebook.values.push_back(v);
    }
    remap[j] = static_cast<std::uint32_t>(result.codebook.values.size());
  }

  result.codebook.assignment.resize(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const std::uint32_t a = m[i] == 0.0 ? 0 : remap[assignment[index_of(m[i])]];
    result.codebook.assignment[i] = a;
    result.quantized[i] = result.codebook.level(a);
  }
  return result;
}

Tensor uniform_quantize(const Tensor& m, int bits) {
  if (bits < 1 || bits > 32) throw ConfigError("bits must be in [1, 32], got " + std::to_string(bits));
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (double v : m.data()) {
    if (v == 0.0) continue;
    lo = any ? std::min(lo, v) : v;
    hi = any ? std::max(hi, v) : v;
    any = true;
  }
  Tensor out = m;
  if (!any || lo == hi) return out;
  const double top = std::ldexp(1.0, bits) - 1.0;  // highest level index
  const double step = (hi - lo) / top;
  for (double& v : out.values()) {
    if (v == 0.0) continue;
    const double t = (v - lo) / step;
    double i = std::floor(t);
    if (t - i > 0.5) i += 1.0;
    i = std::clamp(i, 0.0, top);
    v = i == top ? hi : lo + i * step;
  }
  return out;
}

double quantization_error(const Tensor& m, const Tensor& quantized) {
  const double d = frobenius_distance(m, quantized);
  return d * d;
}

ModelParams zero_kmeans_model(const ModelParams& theta, const CompressionConfig& cfg) {
  cfg.validate();
  ModelParams out = theta;
  const auto ids = theta.matrix_ids();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out.matrix(ids[i]) =
        zero_kmeans(theta.matrix(ids[i]), cfg.codebook_size(), cfg, matrix_seed(cfg.seed, i))
            .quantized;
  }
  return out;
}

ModelParams uniform_quantize_model(const ModelParams& theta, int bits) {
  ModelParams out = theta;
  for (const MatrixId& id : theta.matrix_ids()) {
    out.matrix(id) = uniform_quantize(theta.matrix(id), bits);
  }
  return out;
}

bool is_feasible_sparsity(const ModelParams& theta, std::size_t k) {
  return theta.total_nnz() <= k;
}

bool is_feasible_quant(const ModelParams& theta, int bits) {
  const std::uint64_t limit = std::uint64_t{1} << bits;
  for (const MatrixId& id : theta.matrix_ids()) {
    if (count_distinct_nonzero(theta.matrix(id)) > limit) return false;
  }
  return true;
}

}  // namespace atmc
