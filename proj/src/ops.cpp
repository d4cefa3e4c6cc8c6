#include "atmc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <type_traits>

#include "atmc/error.hpp"
#include "atmc/kernels.hpp"

namespace atmc {

namespace {

// The message is built only on failure.
template <typename Msg>
void require(bool ok, Msg&& what) {
  if (ok) return;
  if constexpr (std::is_invocable_v<Msg>) {
    throw ShapeError(what());
  } else {
    throw ShapeError(std::string(what));
  }
}

const Tensor& val(Graph& g, Var v) { return g.value(v); }

struct ConvGeom {
  std::size_t n, c, h, w, f, kh, kw, oh, ow, stride, pad;
  std::size_t ckk() const { return c * kh * kw; }
  std::size_t ohw() const { return oh * ow; }
};

// Valid output columns [lo, hi) for kernel offset j at stride 1.
inline void stride1_range(const ConvGeom& q, std::size_t j, long& off, long& lo, long& hi) {
  off = static_cast<long>(j) - static_cast<long>(q.pad);
  lo = std::max(0L, -off);
  hi = std::min(static_cast<long>(q.ow), static_cast<long>(q.w) - off);
  if (hi < lo) hi = lo;
}

// col: (C·kh·kw) × (N·OH·OW), row-major.
template <typename T>
void im2col(const ConvGeom& q, const double* x, T* col) {
  const std::size_t cols = q.n * q.ohw();
  for (std::size_t ch = 0; ch < q.c; ++ch) {
    for (std::size_t i = 0; i < q.kh; ++i) {
      for (std::size_t j = 0; j < q.kw; ++j) {
        T* row = col + ((ch * q.kh + i) * q.kw + j) * cols;
        long off = 0, lo = 0, hi = 0;
        stride1_range(q, j, off, lo, hi);
        for (std::size_t b = 0; b < q.n; ++b) {
          const double* plane = x + (b * q.c + ch) * q.h * q.w;
          for (std::size_t oy = 0; oy < q.oh; ++oy) {
            T* dst = row + b * q.ohw() + oy * q.ow;
            const long iy = static_cast<long>(oy * q.stride + i) - static_cast<long>(q.pad);
            if (iy < 0 || iy >= static_cast<long>(q.h)) {
              std::fill(dst, dst + q.ow, T(0));
              continue;
            }
            const double* src = plane + iy * static_cast<long>(q.w);
            if (q.stride == 1) {
              std::fill(dst, dst + lo, T(0));
              for (long ox = lo; ox < hi; ++ox) dst[ox] = static_cast<T>(src[ox + off]);
              std::fill(dst + hi, dst + q.ow, T(0));
              continue;
            }
            for (std::size_t ox = 0; ox < q.ow; ++ox) {
              const long ix = static_cast<long>(ox * q.stride + j) - static_cast<long>(q.pad);
              dst[ox] = ix >= 0 && ix < static_cast<long>(q.w) ? static_cast<T>(src[ix]) : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeom& q, const T* col, double* dx) {
  const std::size_t cols = q.n * q.ohw();
  for (std::size_t ch = 0; ch < q.c; ++ch) {
    for (std::size_t i = 0; i < q.kh; ++i) {
      for (std::size_t j = 0; j < q.kw; ++j) {
        const T* row = col + ((ch * q.kh + i) * q.kw + j) * cols;
        long off = 0, lo = 0, hi = 0;
        stride1_range(q, j, off, lo, hi);
        for (std::size_t b = 0; b < q.n; ++b) {
          double* plane = dx + (b * q.c + ch) * q.h * q.w;
          for (std::size_t oy = 0; oy < q.oh; ++oy) {
            const T* src = row + b * q.ohw() + oy * q.ow;
            const long iy = static_cast<long>(oy * q.stride + i) - static_cast<long>(q.pad);
            if (iy < 0 || iy >= static_cast<long>(q.h)) continue;
            double* dst = plane + iy * static_cast<long>(q.w);
            if (q.stride == 1) {
              for (long ox = lo; ox < hi; ++ox) dst[ox + off] += src[ox];
              continue;
            }
            for (std::size_t ox = 0; ox < q.ow; ++ox) {
              const long ix = static_cast<long>(ox * q.stride + j) - static_cast<long>(q.pad);
              if (ix >= 0 && ix < static_cast<long>(q.w)) dst[ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

void mm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
        const double* b, double* c) {
  kernels::gemm(ta, tb, m, n, k, a, b, 0.0, c, Precision::f64);
}

void mm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const float* a,
        const float* b, float* c) {
  kernels::gemm(ta, tb, m, n, k, a, b, 0.0f, c);
}

// Batched im2col convolution computed in T (double, or float for f32 graphs).
template <typename T>
Var conv2d_impl(Graph& g, Var x, Var w, const ConvGeom& q) {
  const std::size_t cols = q.n * q.ohw();
  const auto& wd = g.value(w).values();
  auto wt = std::make_shared<std::vector<T>>(wd.begin(), wd.end());
  auto col = std::make_shared<std::vector<T>>(q.ckk() * cols);
  im2col(q, g.value(x).data().data(), col->data());
  std::vector<T> out_mat(q.f * cols);
  mm(false, false, q.f, cols, q.ckk(), wt->data(), col->data(), out_mat.data());
  Tensor out({q.n, q.f, q.oh, q.ow});
  double* o = out.data().data();
  for (std::size_t f = 0; f < q.f; ++f)
    for (std::size_t b = 0; b < q.n; ++b)
      std::copy_n(out_mat.data() + f * cols + b * q.ohw(), q.ohw(), o + (b * q.f + f) * q.ohw());

  if (!g.requires_grad(w)) col.reset();
  return g.record(std::move(out), {x, w}, [x, w, q, col, wt](Graph& gr, std::size_t self) {
    const std::size_t cols = q.n * q.ohw();
    const double* go = gr.grad_of(self).data().data();
    std::vector<T> go_mat(q.f * cols);
    for (std::size_t f = 0; f < q.f; ++f)
      for (std::size_t b = 0; b < q.n; ++b)
        std::copy_n(go + (b * q.f + f) * q.ohw(), q.ohw(), go_mat.data() + f * cols + b * q.ohw());
    if (gr.needs_grad(w.id)) {
      // dW[F×CKK] += dOut · colᵀ
      std::vector<T> dw(q.f * q.ckk());
      mm(false, true, q.f, q.ckk(), cols, go_mat.data(), col->data(), dw.data());
      Tensor& gw = gr.grad_buffer(w.id);
      for (std::size_t i = 0; i < dw.size(); ++i) gw[i] += dw[i];
    }
    if (gr.needs_grad(x.id)) {
      std::vector<T> dcol(q.ckk() * cols);
      mm(true, false, q.ckk(), cols, q.f, wt->data(), go_mat.data(), dcol.data());
      col2im(q, dcol.data(), gr.grad_buffer(x.id).data().data());
    }
  });
}

}  // namespace

Var matmul(Graph& g, Var a, Var b) {
  const Tensor& av = val(g, a);
  const Tensor& bv = val(g, b);
  require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0), [&] {
    return "matmul: incompatible shapes " + shape_string(av.shape()) + " and " +
           shape_string(bv.shape());
  });
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  kernels::gemm(false, false, m, n, k, av.data().data(), bv.data().data(), 0.0, out.data().data(),
                g.precision());
  return g.record(std::move(out), {a, b}, [a, b, m, n, k](Graph& gr, std::size_t self) {
    const Tensor& go = gr.grad_of(self);
    if (gr.needs_grad(a.id)) {
      // dA = dOut · Bᵀ
      kernels::gemm(false, true, m, k, n, go.data().data(), gr.value_of(b.id).data().data(), 1.0,
                    gr.grad_buffer(a.id).data().data(), gr.precision());
    }
    if (gr.needs_grad(b.id)) {
      // dB = Aᵀ · dOut
      kernels::gemm(true, false, k, n, m, gr.value_of(a.id).data().data(), go.data().data(), 1.0,
                    gr.grad_buffer(b.id).data().data(), gr.precision());
    }
  });
}

Var transpose(Graph& g, Var a) {
  const Tensor& av = val(g, a);
  require(av.rank() == 2,
          [&] { return "transpose: needs a matrix, got " + shape_string(av.shape()); });
  return g.record(av.transposed(), {a}, [a](Graph& gr, std::size_t self) {
    const Tensor t = gr.grad_of(self).transposed();
    Tensor& ga = gr.grad_buffer(a.id);
    for (std::size_t i = 0; i < t.size(); ++i) ga[i] += t[i];
  });
}

namespace {

Var add_scaled(Graph& g, Var a, Var b, double sign, const char* name) {
  const Tensor& av = val(g, a);
  const Tensor& bv = val(g, b);
  require(av.shape() == bv.shape(), [&] {
    return std::string(name) + ": shape mismatch " + shape_string(av.shape()) + " vs " +
           shape_string(bv.shape());
  });
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * bv[i];
  return g.record(std::move(out), {a, b}, [a, b, sign](Graph& gr, std::size_t self) {
    const Tensor& go = gr.grad_of(self);
    if (gr.needs_grad(a.id)) {
      Tensor& ga = gr.grad_buffer(a.id);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (gr.needs_grad(b.id)) {
      Tensor& gb = gr.grad_buffer(b.id);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += sign * go[i];
    }
  });
}

}  // namespace

Var add(Graph& g, Var a, Var b) { return add_scaled(g, a, b, 1.0, "add"); }
Var sub(Graph& g, Var a, Var b) { return add_scaled(g, a, b, -1.0, "sub"); }

Var scale(Graph& g, Var a, double factor) {
  Tensor out = val(g, a);
  for (double& v : out.values()) v *= factor;
  return g.record(std::move(out), {a}, [a, factor](Graph& gr, std::size_t self) {
    const Tensor& go = gr.grad_of(self);
    Tensor& ga = gr.grad_buffer(a.id);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += factor * go[i];
  });
}

Var sum(Graph& g, Var a) {
  double s = 0.0;
  for (double v : val(g, a).values()) s += v;
  return g.record(Tensor({1}, {s}), {a}, [a](Graph& gr, std::size_t self) {
    const double go = gr.grad_of(self)[0];
    Tensor& ga = gr.grad_buffer(a.id);
    for (double& v : ga.values()) v += go;
  });
}

Var reshape(Graph& g, Var a, Shape shape) {
  Tensor out = val(g, a).reshaped(std::move(shape));
  return g.record(std::move(out), {a}, [a](Graph& gr, std::size_t self) {
    const Tensor& go = gr.grad_of(self);
    Tensor& ga = gr.grad_buffer(a.id);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
  });
}

Var add_row_bias(Graph& g, Var x, Var bias) {
  const Tensor& xv = val(g, x);
  const Tensor& bv = val(g, bias);
  require(xv.rank() == 2 && bv.rank() == 1 && bv.dim(0) == xv.dim(1), [&] {
    return "add_row_bias: " + shape_string(xv.shape()) + " + " + shape_string(bv.shape());
  });
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  Tensor out = xv;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  return g.record(std::move(out), {x, bias}, [x, bias, rows, cols](Graph& gr, std::size_t self) {
    const Tensor& go = gr.grad_of(self);
    if (gr.needs_grad(x.id)) {
      Tensor& gx = gr.grad_buffer(x.id);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    }
    if (gr.needs_grad(bias.id)) {
      Tensor& gb = gr.grad_buffer(bias.id);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gb[c] += go[r * cols + c];
    }
  });
}

Var add_channel_bias(Graph& g, Var x, Var bias) {
  const Tensor& xv = val(g, x);
  const Tensor& bv = val(g, bias);
  require(xv.rank() == 4 && bv.rank() == 1 && bv.dim(0) == xv.dim(1), [&] {
    return "add_channel_bias: " + shape_string(xv.shape()) + " + " + shape_string(bv.shape());
  });
  const std::size_t n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  Tensor out = xv;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* p = out.data().data() + (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += bv[ch];
    }
  return g.record(std::move(out), {x, bias}, [x, bias, n, c, plane](Graph& gr, std::size_t self) {
    const Tensor& go = gr.grad_of(self);
    if (gr.needs_grad(x.id)) {
      Tensor& gx = gr.grad_buffer(x.id);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    }
    if (gr.needs_grad(bias.id)) {
      Tensor& gb = gr.grad_buffer(bias.id);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double* p = go.data().data() + (b * c + ch) * plane;
          double s = 0.0;
          for (std::size_t i = 0; i < plane; ++i) s += p[i];
          gb[ch] += s;
        }
    }
  });
}

Var relu(Graph& g, Var x) {
  Tensor out = val(g, x);
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return g.record(std::move(out), {x}, [x](Graph& gr, std::size_t self) {
    const Tensor& go = gr.grad_of(self);
    const Tensor& xv = gr.value_of(x.id);
    Tensor& gx = gr.grad_buffer(x.id);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += xv[i] > 0.0 ? go[i] : 0.0;
  });
}

Var maxpool2d(Graph& g, Var x, std::size_t kernel, std::size_t stride) {
  const Tensor& xv = val(g, x);
  require(xv.rank() == 4,
          [&] { return "maxpool2d: needs N×C×H×W, got " + shape_string(xv.shape()); });
  require(kernel >= 1 && stride >= 1, "maxpool2d: kernel and stride must be positive");
  const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  require(h >= kernel && w >= kernel,
          [&] { return "maxpool2d: window larger than input " + shape_string(xv.shape()); });
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  Tensor out({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  std::size_t o = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* plane = xv.data().data() + p * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = (oy * stride) * w + ox * stride;
        for (std::size_t i = 0; i < kernel; ++i)
          for (std::size_t j = 0; j < kernel; ++j) {
            const std::size_t idx = (oy * stride + i) * w + ox * stride + j;
            if (plane[idx] > plane[best]) best = idx;
          }
        out[o] = plane[best];
        (*argmax)[o] = p * h * w + best;
      }
  }
  return g.record(std::move(out), {x}, [x, argmax](Graph& gr, std::size_t self) {
    const Tensor& go = gr.grad_of(self);
    Tensor& gx = gr.grad_buffer(x.id);
    for (std::size_t i = 0; i < go.size(); ++i) gx[(*argmax)[i]] += go[i];
  });
}

Var conv2d(Graph& g, Var x, Var w, std::size_t stride, std::size_t pad) {
  const Tensor& xv = val(g, x);
  const Tensor& wv = val(g, w);
  require(xv.rank() == 4 && wv.rank() == 4 && xv.dim(1) == wv.dim(1), [&] {
    return "conv2d: incompatible input " + shape_string(xv.shape()) + " and kernel " +
           shape_string(wv.shape());
  });
  require(stride >= 1, "conv2d: stride must be positive");
  ConvGeom q{};
  q.n = xv.dim(0);
  q.c = xv.dim(1);
  q.h = xv.dim(2);
  q.w = xv.dim(3);
  q.f = wv.dim(0);
  q.kh = wv.dim(2);
  q.kw = wv.dim(3);
  q.stride = stride;
  q.pad = pad;
  const long span_h = static_cast<long>(q.h + 2 * pad) - static_cast<long>(q.kh);
  const long span_w = static_cast<long>(q.w + 2 * pad) - static_cast<long>(q.kw);
  require(span_h >= 0 && span_w >= 0, [&] {
    return "conv2d: non-positive output size for input " + shape_string(xv.shape()) + " kernel " +
           shape_string(wv.shape());
  });
  q.oh = static_cast<std::size_t>(span_h) / stride + 1;
  q.ow = static_cast<std::size_t>(span_w) / stride + 1;

  return g.precision() == Precision::f32 ? conv2d_impl<float>(g, x, w, q)
                                         : conv2d_impl<double>(g, x, w, q);
}

namespace {

void check_labels(const Tensor& logits, std::span<const int> labels) {
  require(logits.rank() == 2, [&] {
    return "softmax_cross_entropy: logits must be N×K, got " + shape_string(logits.shape());
  });
  require(labels.size() == logits.dim(0), [&] {
    return "softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
           std::to_string(logits.dim(0)) + " rows";
  });
  const auto k = static_cast<int>(logits.dim(1));
  for (int y : labels) {
    if (y < 0 || y >= k) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(y) + " out of range [0, " +
                       std::to_string(k) + ")");
    }
  }
}

}  // namespace

std::vector<double> cross_entropy_rows(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> rows(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* z = logits.data().data() + r * k;
    const double mx = *std::max_element(z, z + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z[j] - mx);
    rows[r] = mx + std::log(s) - z[labels[r]];
  }
  return rows;
}

Var softmax_cross_entropy(Graph& g, Var logits, std::span<const int> labels, Reduction reduction) {
  const Tensor& lv = val(g, logits);
  const std::vector<double> rows = cross_entropy_rows(lv, labels);
  double total = 0.0;
  for (double r : rows) total += r;
  const std::size_t n = lv.dim(0);
  const double factor = reduction == Reduction::mean ? 1.0 / static_cast<double>(n) : 1.0;
  std::vector<int> y(labels.begin(), labels.end());
  return g.record(Tensor({1}, {total * factor}), {logits},
                  [logits, y = std::move(y), factor](Graph& gr, std::size_t self) {
                    const double go = gr.grad_of(self)[0] * factor;
                    const Tensor& z = gr.value_of(logits.id);
                    Tensor& gz = gr.grad_buffer(logits.id);
                    const std::size_t n = z.dim(0), k = z.dim(1);
                    for (std::size_t r = 0; r < n; ++r) {
                      const double* zr = z.data().data() + r * k;
                      const double mx = *std::max_element(zr, zr + k);
                      double s = 0.0;
                      for (std::size_t j = 0; j < k; ++j) s += std::exp(zr[j] - mx);
                      for (std::size_t j = 0; j < k; ++j) {
                        const double p = std::exp(zr[j] - mx) / s;
                        gz[r * k + j] += go * (p - (static_cast<int>(j) == y[r] ? 1.0 : 0.0));
                      }
                    }
                  });
}

}  // namespace atmc
