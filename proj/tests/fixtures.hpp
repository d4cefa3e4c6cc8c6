#pragma once

// Oracles shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "atmc/ops.hpp"
#include "atmc/trainer.hpp"
#include "testing.hpp"

namespace atmc::testing {

/// Plain minibatch SGD written out directly: same shuffle stream and learning
/// rate schedule as the trainer, no projections, no penalty, no momentum.
/// Returns the batch loss before every update.
inline std::vector<double> reference_sgd(ModelParams model, const Dataset& data,
                                         const TrainConfig& cfg) {
  std::vector<double> losses;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = cfg.lr_at(epoch);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      const std::span<const std::size_t> rows(order.data() + b, e - b);
      const std::vector<int> y = data.gather_labels(rows);
      Graph g(cfg.precision);
      const BoundParams bound = bind_parameters(g, model);
      const Var loss =
          softmax_cross_entropy(g, forward(g, model, bound, g.input(data.gather(rows))), y);
      losses.push_back(g.value(loss)[0]);
      g.backward(loss);
      for (std::size_t l = 0; l < model.layer_count(); ++l) {
        ParamTriple& t = model.layer(l);
        const auto step = [&](Tensor& p, Var v) {
          if (!g.requires_grad(v)) return;
          const Tensor grad = g.grad(v);
          for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * grad[i];
        };
        if (model.parameterization() == Parameterization::factorized) {
          step(t.u, bound.layers[l].u);
          step(t.c, bound.layers[l].c);
        }
        step(t.v, bound.layers[l].v);
        step(t.bias, bound.layers[l].binding.bias);
      }
    }
  }
  return losses;
}

inline bool bit_identical(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  }
  return true;
}

inline bool bit_identical(const ModelParams& a, const ModelParams& b) {
  if (!(a.arch() == b.arch()) || a.parameterization() != b.parameterization()) return false;
  for (std::size_t l = 0; l < a.layer_count(); ++l) {
    const ParamTriple& x = a.layer(l);
    const ParamTriple& y = b.layer(l);
    if (x.transposed != y.transposed || !bit_identical(x.u, y.u) || !bit_identical(x.v, y.v) ||
        !bit_identical(x.c, y.c) || !bit_identical(x.bias, y.bias)) {
      return false;
    }
  }
  return true;
}

/// Random sparse, quantized, float32-exact model: random mlp-small geometry,
/// parameterization, budget and bit width in {1, 2, 3, 5, 8, 32}.
inline ModelParams random_finalized(std::mt19937_64& rng, int& bits) {
  std::uniform_int_distribution<int> side(2, 7), cls(2, 5), hid(1, 9), coin(0, 1);
  const ArchitectureSpec arch = ArchitectureSpec::mlp_small(
      static_cast<std::size_t>(coin(rng) + 1), side(rng), side(rng), cls(rng), hid(rng));
  const auto param = coin(rng) ? Parameterization::dense : Parameterization::factorized;
  ModelParams m = init_factorized(arch, rng(), param);
  for (const MatrixId& id : m.matrix_ids()) {
    m.matrix(id) = random_tensor(m.matrix(id).shape(), rng);
  }
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    m.layer(l).bias = random_tensor(m.layer(l).bias.shape(), rng);
  }
  const int choices[] = {1, 2, 3, 5, 8, 32};
  bits = choices[std::uniform_int_distribution<int>(0, 5)(rng)];
  CompressionConfig cfg;
  cfg.bits = bits;
  cfg.k = std::uniform_int_distribution<std::size_t>(1, m.total_entries())(rng);
  cfg.seed = rng();
  cfg.zk_restarts = 1;
  return finalize(m, cfg);
}

inline std::vector<std::uint8_t> be32(std::uint32_t v) {
  return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
          static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
}

/// IDX image file with n images of h×w, pixel i = (37·i) mod 256.
inline std::vector<std::uint8_t> idx_images(std::uint32_t n, std::uint32_t h, std::uint32_t w) {
  std::vector<std::uint8_t> out;
  for (const auto& part : {be32(0x803), be32(n), be32(h), be32(w)}) {
    out.insert(out.end(), part.begin(), part.end());
  }
  for (std::uint32_t i = 0; i < n * h * w; ++i) out.push_back(static_cast<std::uint8_t>(i * 37));
  return out;
}

/// IDX label file with labels 0, 1, …, 9, 0, …
inline std::vector<std::uint8_t> idx_labels(std::uint32_t n) {
  std::vector<std::uint8_t> out;
  for (const auto& part : {be32(0x801), be32(n)}) out.insert(out.end(), part.begin(), part.end());
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(i % 10));
  return out;
}

struct CorruptIdx {
  std::string name;
  std::vector<std::uint8_t> images;
  std::vector<std::uint8_t> labels;
};

/// Five (images, labels) pairs, each broken in a different way.
inline std::vector<CorruptIdx> corrupt_idx_cases() {
  const auto img = idx_images(3, 2, 2);
  const auto lab = idx_labels(3);
  auto bad_magic = img;
  bad_magic[3] = 0x04;
  return {
      {"bad magic", bad_magic, lab},
      {"header cut inside the magic", {0x00, 0x00}, lab},
      {"dimension header cut", std::vector<std::uint8_t>(img.begin(), img.begin() + 10), lab},
      {"payload cut", std::vector<std::uint8_t>(img.begin(), img.end() - 1), lab},
      {"image/label count mismatch", img, idx_labels(2)},
  };
}

}  // namespace atmc::testing
