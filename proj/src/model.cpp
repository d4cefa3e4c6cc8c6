#include "atmc/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "atmc/error.hpp"
#include "atmc/kernels.hpp"
#include "atmc/ops.hpp"

namespace atmc {

ArchitectureSpec ArchitectureSpec::lenet() {
  ArchitectureSpec a;
  a.name = "lenet";
  a.in_channels = 1;
  a.in_height = 28;
  a.in_width = 28;
  a.classes = 10;
  a.layers = {
      {LayerKind::conv, 1, 20, 5, 1, 0, true, 2},
      {LayerKind::conv, 20, 50, 5, 1, 0, true, 2},
      {LayerKind::fc, 800, 500, 1, 1, 0, true, 0},
      {LayerKind::fc, 500, 10, 1, 1, 0, false, 0},
  };
  return a;
}

ArchitectureSpec ArchitectureSpec::mlp_small(std::size_t channels, std::size_t height,
                                             std::size_t width, std::size_t classes,
                                             std::size_t hidden) {
  ArchitectureSpec a;
  a.name = "mlp-small";
  a.in_channels = channels;
  a.in_height = height;
  a.in_width = width;
  a.classes = classes;
  a.layers = {
      {LayerKind::fc, channels * height * width, hidden, 1, 1, 0, true, 0},
      {LayerKind::fc, hidden, classes, 1, 1, 0, false, 0},
  };
  return a;
}

ArchitectureSpec ArchitectureSpec::preset(const std::string& name, std::size_t channels,
                                          std::size_t height, std::size_t width,
                                          std::size_t classes) {
  if (name == "lenet") {
    ArchitectureSpec a = lenet();
    if (channels != a.in_channels || height != a.in_height || width != a.in_width ||
        classes != a.classes) {
      throw ConfigError("lenet expects 1x28x28 inputs with 10 classes");
    }
    return a;
  }
  if (name == "mlp-small") return mlp_small(channels, height, width, classes);
  throw ConfigError("unknown architecture '" + name + "' (expected lenet or mlp-small)");
}

std::vector<std::pair<std::size_t, std::size_t>> ArchitectureSpec::weight_shapes() const {
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  std::size_t c = in_channels, h = in_height, w = in_width;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string where = name + " layer " + std::to_string(i);
    if (l.out == 0) throw ShapeError(where + ": zero outputs");
    if (l.kind == LayerKind::conv) {
      if (l.in != c) {
        throw ShapeError(where + ": expects " + std::to_string(l.in) + " channels, gets " +
                         std::to_string(c));
      }
      if (h + 2 * l.pad < l.kernel || w + 2 * l.pad < l.kernel || l.stride == 0) {
        throw ShapeError(where + ": non-positive output size");
      }
      h = (h + 2 * l.pad - l.kernel) / l.stride + 1;
      w = (w + 2 * l.pad - l.kernel) / l.stride + 1;
      c = l.out;
      shapes.emplace_back(l.out, l.in * l.kernel * l.kernel);
    } else {
      if (l.in != c * h * w) {
        throw ShapeError(where + ": expects " + std::to_string(l.in) + " features, gets " +
                         std::to_string(c * h * w));
      }
      if (l.pool != 0) throw ShapeError(where + ": pooling after a fc layer is unsupported");
      c = l.out;
      h = w = 1;
      shapes.emplace_back(l.out, l.in);
    }
    if (l.pool != 0) {
      if (h < l.pool || w < l.pool) throw ShapeError(where + ": pool window exceeds input");
      h = (h - l.pool) / l.pool + 1;
      w = (w - l.pool) / l.pool + 1;
    }
  }
  if (c * h * w != classes) {
    throw ShapeError(name + ": final layer yields " + std::to_string(c * h * w) +
                     " outputs for " + std::to_string(classes) + " classes");
  }
  return shapes;
}

std::size_t ArchitectureSpec::dense_weight_count() const {
  std::size_t total = 0;
  for (auto [r, c] : weight_shapes()) total += r * c;
  return total;
}

const char* role_name(MatrixRole role) {
  switch (role) {
    case MatrixRole::U: return "U";
    case MatrixRole::V: return "V";
    case MatrixRole::C: return "C";
  }
  return "?";
}

const char* parameterization_name(Parameterization p) {
  return p == Parameterization::dense ? "dense" : "factorized";
}

Tensor& ParamTriple::matrix(MatrixRole role) {
  switch (role) {
    case MatrixRole::U: return u;
    case MatrixRole::V: return v;
    default: return c;
  }
}

const Tensor& ParamTriple::matrix(MatrixRole role) const {
  return const_cast<ParamTriple*>(this)->matrix(role);
}

Tensor effective_weight(const ParamTriple& t, Precision precision) {
  const std::size_t m = t.rows(), n = t.cols();
  if (t.u.shape() != Shape{m, m} || t.c.shape() != Shape{m, n}) {
    throw ShapeError("effective_weight: U " + shape_string(t.u.shape()) + ", V " +
                     shape_string(t.v.shape()) + ", C " + shape_string(t.c.shape()));
  }
  Tensor w = t.c;
  kernels::gemm(false, false, m, n, m, t.u.data().data(), t.v.data().data(), 1.0,
                w.data().data(), precision);
  return w;
}

Var effective_weight(Graph& g, Var u, Var v, Var c) { return add(g, matmul(g, u, v), c); }

std::size_t count_l0(const Tensor& m) {
  return static_cast<std::size_t>(
      std::count_if(m.values().begin(), m.values().end(), [](double x) { return x != 0.0; }));
}

std::size_t count_distinct_nonzero(const Tensor& m) {
  std::vector<double> nz;
  nz.reserve(m.size());
  for (double x : m.values())
    if (x != 0.0) nz.push_back(x);
  std::sort(nz.begin(), nz.end());
  return static_cast<std::size_t>(std::unique(nz.begin(), nz.end()) - nz.begin());
}

ModelParams::ModelParams(ArchitectureSpec arch, Parameterization param,
                         std::vector<ParamTriple> layers)
    : arch_(std::move(arch)), param_(param), layers_(std::move(layers)) {
  const auto shapes = arch_.weight_shapes();
  if (shapes.size() != layers_.size()) {
    throw ShapeError("model has " + std::to_string(layers_.size()) + " layers, architecture " +
                     std::to_string(shapes.size()));
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto [out, in] = shapes[i];
    const ParamTriple& t = layers_[i];
    const bool tr = out < in;
    const std::size_t m = tr ? in : out, n = tr ? out : in;
    if (t.transposed != tr || t.u.shape() != Shape{m, m} || t.v.shape() != Shape{m, n} ||
        t.c.shape() != Shape{m, n} || t.bias.shape() != Shape{out}) {
      throw ShapeError("layer " + std::to_string(i) + ": expected U " +
                       shape_string({m, m}) + ", V/C " + shape_string({m, n}) + ", bias " +
                       shape_string({out}));
    }
  }
}

std::vector<MatrixId> ModelParams::matrix_ids() const {
  std::vector<MatrixId> ids;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (param_ == Parameterization::dense) {
      ids.push_back({l, MatrixRole::V});
    } else {
      ids.push_back({l, MatrixRole::U});
      ids.push_back({l, MatrixRole::V});
      ids.push_back({l, MatrixRole::C});
    }
  }
  return ids;
}

std::size_t ModelParams::total_nnz() const {
  std::size_t n = 0;
  for (MatrixId id : matrix_ids()) n += count_l0(matrix(id));
  return n;
}

std::size_t ModelParams::total_entries() const {
  std::size_t n = 0;
  for (MatrixId id : matrix_ids()) n += matrix(id).size();
  return n;
}

bool same_shapes(const ModelParams& a, const ModelParams& b) {
  if (a.arch() != b.arch() || a.layer_count() != b.layer_count()) return false;
  for (std::size_t i = 0; i < a.layer_count(); ++i) {
    const ParamTriple& x = a.layer(i);
    const ParamTriple& y = b.layer(i);
    if (x.u.shape() != y.u.shape() || x.v.shape() != y.v.shape() ||
        x.c.shape() != y.c.shape() || x.bias.shape() != y.bias.shape() ||
        x.transposed != y.transposed)
      return false;
  }
  return true;
}

ModelParams init_factorized(const ArchitectureSpec& arch, std::uint64_t seed,
                            Parameterization param) {
  std::mt19937_64 rng(seed);
  std::vector<ParamTriple> layers;
  for (auto [out, in] : arch.weight_shapes()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor w0({out, in});
    for (double& v : w0.values()) v = dist(rng);
    ParamTriple t;
    t.transposed = out < in;
    t.v = t.transposed ? w0.transposed() : std::move(w0);
    const std::size_t m = t.v.dim(0), n = t.v.dim(1);
    t.u = Tensor::identity(m);
    t.c = Tensor::zeros({m, n});
    t.bias = Tensor::zeros({out});
    layers.push_back(std::move(t));
  }
  return ModelParams(arch, param, std::move(layers));
}

ModelParams with_parameterization(ModelParams model, Parameterization param) {
  if (param == Parameterization::dense) {
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
      const ParamTriple& t = model.layer(l);
      if (t.u != Tensor::identity(t.rows()) || count_l0(t.c) != 0) {
        throw ConfigError("layer " + std::to_string(l) +
                          " is not in identity form (U = I, C = 0); cannot relabel as dense");
      }
    }
  }
  std::vector<ParamTriple> layers = model.layers();
  return ModelParams(model.arch(), param, std::move(layers));
}

std::vector<LayerBinding> BoundParams::bindings() const {
  std::vector<LayerBinding> out;
  out.reserve(layers.size());
  for (const Layer& l : layers) out.push_back(l.binding);
  return out;
}

BoundParams bind_parameters(Graph& g, const ModelParams& model) {
  BoundParams b;
  for (const ParamTriple& t : model.layers()) {
    BoundParams::Layer l;
    l.v = g.parameter(t.v);
    if (model.parameterization() == Parameterization::factorized) {
      l.u = g.parameter(t.u);
      l.c = g.parameter(t.c);
      l.binding.weight = effective_weight(g, l.u, l.v, l.c);
    } else {
      l.binding.weight = l.v;
    }
    l.binding.bias = g.parameter(t.bias);
    l.binding.transposed = t.transposed;
    b.layers.push_back(l);
  }
  return b;
}

Var forward(Graph& g, const ArchitectureSpec& arch, std::span<const LayerBinding> layers, Var x) {
  if (layers.size() != arch.layers.size()) {
    throw ShapeError("forward: " + std::to_string(layers.size()) + " bound layers for " +
                     std::to_string(arch.layers.size()) + " architecture layers");
  }
  const Tensor& xv = g.value(x);
  if (xv.rank() == 0 || xv.size() != xv.dim(0) * arch.input_size()) {
    throw ShapeError("forward: batch " + shape_string(xv.shape()) + " does not match input " +
                     shape_string({arch.in_channels, arch.in_height, arch.in_width}));
  }
  const std::size_t batch = xv.dim(0);
  Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& spec = arch.layers[i];
    const LayerBinding& b = layers[i];
    if (spec.kind == LayerKind::conv) {
      if (g.value(h).rank() != 4) {
        h = reshape(g, h, {batch, arch.in_channels, arch.in_height, arch.in_width});
      }
      Var raw = b.transposed ? transpose(g, b.weight) : b.weight;
      Var k4 = reshape(g, raw, {spec.out, spec.in, spec.kernel, spec.kernel});
      h = add_channel_bias(g, conv2d(g, h, k4, spec.stride, spec.pad), b.bias);
    } else {
      const Tensor& hv = g.value(h);
      if (hv.rank() != 2) h = reshape(g, h, {batch, hv.size() / batch});
      // Stored wide-layer weights are (in × out), so x·S needs no transpose.
      h = b.transposed ? matmul(g, h, b.weight) : matmul(g, h, transpose(g, b.weight));
      h = add_row_bias(g, h, b.bias);
    }
    if (spec.relu) h = relu(g, h);
    if (spec.pool != 0) h = maxpool2d(g, h, spec.pool, spec.pool);
  }
  if (g.value(h).rank() != 2) h = reshape(g, h, {batch, arch.classes});
  return h;
}

Var forward(Graph& g, const ModelParams& model, const BoundParams& bound, Var x) {
  const std::vector<LayerBinding> layers = bound.bindings();
  return forward(g, model.arch(), layers, x);
}

Network::Network(const ModelParams& model, Precision precision)
    : arch_(model.arch()), precision_(precision) {
  for (const ParamTriple& t : model.layers()) {
    if (model.parameterization() == Parameterization::dense) weights_.push_back(t.v);
    else weights_.push_back(effective_weight(t, precision));
    biases_.push_back(t.bias);
    transposed_.push_back(t.transposed ? 1 : 0);
  }
}

Var Network::build(Graph& g, Var x) const {
  std::vector<LayerBinding> layers;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    layers.push_back({g.constant(weights_[i]), g.constant(biases_[i]), transposed_[i] != 0});
  }
  return forward(g, arch_, layers, x);
}

Tensor Network::logits(const Tensor& x) const {
  Graph g(precision_);
  return g.value(build(g, g.input(x)));
}

std::vector<int> Network::predict(const Tensor& x) const {
  const Tensor z = logits(x);
  const std::size_t n = z.dim(0), k = z.dim(1);
  std::vector<int> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = z.data().data() + r * k;
    out[r] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

double Network::loss_and_input_grad(const Tensor& x, std::span<const int> labels,
                                    Tensor& grad) const {
  Graph g(precision_);
  Var xv = g.input(x, true);
  Var loss = softmax_cross_entropy(g, build(g, xv), labels, Reduction::sum);
  g.backward(loss);
  grad = g.grad(xv);
  return g.value(loss)[0];
}

std::vector<double> Network::sample_losses(const Tensor& x, std::span<const int> labels) const {
  return cross_entropy_rows(logits(x), labels);
}

}  // namespace atmc
