#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "atmc/graph.hpp"
#include "atmc/loss_model.hpp"
#include "atmc/tensor.hpp"

namespace atmc {

enum class LayerKind { conv, fc };

struct LayerSpec {
  LayerKind kind = LayerKind::fc;
  std::size_t in = 0;   // input channels (conv) or features (fc)
  std::size_t out = 0;  // filters (conv) or features (fc)
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
  bool relu = true;
  std::size_t pool = 0;  // max-pool window (= stride) after the activation; 0 for none

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Layer stack plus input geometry. fc layers flatten their input.
struct ArchitectureSpec {
  std::string name;
  std::size_t in_channels = 1;
  std::size_t in_height = 1;
  std::size_t in_width = 1;
  std::size_t classes = 2;
  std::vector<LayerSpec> layers;

  /// 1×28×28 → conv5(20) → pool2 → conv5(50) → pool2 → fc500 → fc10.
  /// 430,500 weights, 580 biases.
  static ArchitectureSpec lenet();
  /// One hidden layer of `hidden` units.
  static ArchitectureSpec mlp_small(std::size_t channels, std::size_t height, std::size_t width,
                                    std::size_t classes, std::size_t hidden = 32);
  /// "lenet" or "mlp-small"; the input geometry applies to mlp-small only.
  static ArchitectureSpec preset(const std::string& name, std::size_t channels,
                                 std::size_t height, std::size_t width, std::size_t classes);

  /// Validates the layer chain; returns the raw (out × in) weight shape per layer.
  std::vector<std::pair<std::size_t, std::size_t>> weight_shapes() const;
  std::size_t input_size() const { return in_channels * in_height * in_width; }
  /// Σ rows·cols over layers: weight count of the unfactorized network.
  std::size_t dense_weight_count() const;

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

enum class MatrixRole { U, V, C };
const char* role_name(MatrixRole role);

/// Which of U, V, C are live parameters.
///  - dense: W = V; U ≡ I and C ≡ 0 are held fixed and not counted.
///  - factorized: W = U·V + C with all three trainable and counted.
enum class Parameterization { dense, factorized };
const char* parameterization_name(Parameterization p);

/// One layer in W = U·V + C form. The stored matrix is m×n with m ≥ n: when the
/// raw layer matrix (out × in) is wide it is stored transposed.
struct ParamTriple {
  Tensor u;     // m×m
  Tensor v;     // m×n
  Tensor c;     // m×n
  Tensor bias;  // out; excluded from compression accounting
  bool transposed = false;

  std::size_t rows() const { return v.dim(0); }
  std::size_t cols() const { return v.dim(1); }
  Tensor& matrix(MatrixRole role);
  const Tensor& matrix(MatrixRole role) const;

  friend bool operator==(const ParamTriple&, const ParamTriple&) = default;
};

/// U·V + C in stored orientation, evaluated outside any graph.
Tensor effective_weight(const ParamTriple& t, Precision precision = Precision::f64);
/// U·V + C recorded on a graph, so gradients reach U, V and C.
Var effective_weight(Graph& g, Var u, Var v, Var c);

/// ‖M‖₀
std::size_t count_l0(const Tensor& m);
/// |M|₀: distinct nonzero values, compared by exact equality.
std::size_t count_distinct_nonzero(const Tensor& m);

/// Address of one matrix inside a model: traversal order is layer, then
/// U < V < C, then row-major position.
struct MatrixId {
  std::size_t layer = 0;
  MatrixRole role = MatrixRole::V;
  friend bool operator==(const MatrixId&, const MatrixId&) = default;
};

class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(ArchitectureSpec arch, Parameterization param, std::vector<ParamTriple> layers);

  const ArchitectureSpec& arch() const { return arch_; }
  Parameterization parameterization() const { return param_; }
  std::size_t layer_count() const { return layers_.size(); }
  const ParamTriple& layer(std::size_t i) const { return layers_[i]; }
  ParamTriple& layer(std::size_t i) { return layers_[i]; }
  const std::vector<ParamTriple>& layers() const { return layers_; }

  /// Matrices that are live under the parameterization, in traversal order.
  std::vector<MatrixId> matrix_ids() const;
  Tensor& matrix(MatrixId id) { return layers_[id.layer].matrix(id.role); }
  const Tensor& matrix(MatrixId id) const { return layers_[id.layer].matrix(id.role); }

  /// Σ ‖M‖₀ over the live matrices.
  std::size_t total_nnz() const;
  /// Total entries of the live matrices.
  std::size_t total_entries() const;

  /// Same architecture, parameterization and shapes; values compared exactly.
  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  ArchitectureSpec arch_;
  Parameterization param_ = Parameterization::factorized;
  std::vector<ParamTriple> layers_;
};

bool same_shapes(const ModelParams& a, const ModelParams& b);

/// Per layer: W₀ ~ U(±1/√fan_in) in raw orientation, stored as U = I, V = W₀,
/// C = 0, bias = 0. Deterministic per seed.
ModelParams init_factorized(const ArchitectureSpec& arch, std::uint64_t seed,
                            Parameterization param = Parameterization::factorized);

/// Re-labels a model's parameterization; U must be identity and C zero when
/// switching to dense.
ModelParams with_parameterization(ModelParams model, Parameterization param);

/// Stored-orientation effective weight and bias of one layer, bound in a graph.
struct LayerBinding {
  Var weight;
  Var bias;
  bool transposed = false;
};

/// Graph leaves for a model's parameters.
struct BoundParams {
  struct Layer {
    Var u, v, c;
    LayerBinding binding;
  };
  std::vector<Layer> layers;
  std::vector<LayerBinding> bindings() const;
};

/// Binds U, V, C and bias as leaves. Live matrices are trainable; under the
/// dense parameterization U and C are not bound and the weight is V itself.
BoundParams bind_parameters(Graph& g, const ModelParams& model);

/// Runs the layer stack on x (N×C×H×W, or N×features for fc-only stacks) and
/// returns N×classes logits.
Var forward(Graph& g, const ArchitectureSpec& arch, std::span<const LayerBinding> layers, Var x);
Var forward(Graph& g, const ModelParams& model, const BoundParams& bound, Var x);

/// Frozen inference view: effective weights materialized once, used by attacks
/// and evaluation.
class Network : public LossModel {
 public:
  explicit Network(const ModelParams& model, Precision precision = Precision::f64);

  Tensor logits(const Tensor& x) const;
  std::vector<int> predict(const Tensor& x) const;
  double loss_and_input_grad(const Tensor& x, std::span<const int> labels,
                             Tensor& grad) const override;
  std::vector<double> sample_losses(const Tensor& x, std::span<const int> labels) const override;

  const ArchitectureSpec& arch() const { return arch_; }

 private:
  Var build(Graph& g, Var x) const;

  ArchitectureSpec arch_;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
  std::vector<char> transposed_;
  Precision precision_;
};

}  // namespace atmc
