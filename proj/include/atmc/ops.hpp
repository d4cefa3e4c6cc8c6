#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "atmc/graph.hpp"

namespace atmc {

// Differentiable operations recorded on a Graph. Every op validates shapes,
// throws ShapeError on mismatch and NumericError if it produces NaN/Inf.

Var matmul(Graph& g, Var a, Var b);
Var transpose(Graph& g, Var a);
Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double factor);
Var sum(Graph& g, Var a);
Var reshape(Graph& g, Var a, Shape shape);

/// x: N×m, bias: m. Adds bias to every row.
Var add_row_bias(Graph& g, Var x, Var bias);
/// x: N×C×H×W, bias: C.
Var add_channel_bias(Graph& g, Var x, Var bias);

/// Subgradient at 0 is 0.
Var relu(Graph& g, Var x);

/// x: N×C×H×W. Ties go to the earliest element of the window (row-major).
Var maxpool2d(Graph& g, Var x, std::size_t kernel, std::size_t stride);

/// Cross-correlation (no kernel flip). x: N×C×H×W, w: F×C×kh×kw.
/// Lowered to im2col + one GEMM over the whole batch.
Var conv2d(Graph& g, Var x, Var w, std::size_t stride, std::size_t pad);

enum class Reduction { mean, sum };

/// logits: N×K; one label per row. Uses max-subtraction for stability.
Var softmax_cross_entropy(Graph& g, Var logits, std::span<const int> labels,
                          Reduction reduction = Reduction::mean);

/// Per-row loss values without recording anything (used for evaluation).
std::vector<double> cross_entropy_rows(const Tensor& logits, std::span<const int> labels);

}  // namespace atmc
