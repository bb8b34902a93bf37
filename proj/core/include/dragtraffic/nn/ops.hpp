#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dragtraffic/nn/graph.hpp"

// Differentiable operations over 2-D tensors. Every op checks shapes and throws
// ShapeError on mismatch.
namespace dragtraffic::nn {

Var matmul(Graph& g, Var a, Var b);
/// x[n×in]·W[in×out] + b[1×out]
Var dense(Graph& g, Var x, Var w, Var b);

Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
/// a[n×c] + row[1×c] broadcast over rows.
Var add_row(Graph& g, Var a, Var row);
Var scale(Graph& g, Var a, double s);

Var relu(Graph& g, Var x);
Var square(Graph& g, Var x);
Var sqrt(Graph& g, Var x);
/// Row-wise normalisation to zero mean and unit variance (no affine terms).
Var layernorm(Graph& g, Var x, double eps = 1e-5);
Var softmax(Graph& g, Var x);
Var log_softmax(Graph& g, Var x);

/// Column-wise concatenation; all inputs share the row count.
Var concat(Graph& g, std::span<const Var> xs);
Var slice_cols(Graph& g, Var x, std::size_t begin, std::size_t count);
Var reshape(Graph& g, Var x, std::size_t rows, std::size_t cols);
/// Each row of x is repeated `times` times consecutively.
Var repeat_rows(Graph& g, Var x, std::size_t times);
Var gather_rows(Graph& g, Var x, std::vector<std::size_t> rows);
/// out[r] = x[r, cols[r]]  (n×1)
Var pick(Graph& g, Var x, std::vector<std::size_t> cols);

/// x holds sets of `set_size` consecutive rows. Returns the element-wise max of
/// every set over its unmasked rows. Throws if a whole set is masked.
Var max_pool_over_set(Graph& g, Var x, std::span<const std::uint8_t> mask, std::size_t set_size);

/// Running sum along the step axis of rows laid out as [s0c0, s0c1, s1c0, ...].
Var cumsum_steps(Graph& g, Var x, std::size_t channels);

Var sum(Graph& g, Var x);
Var mean(Graph& g, Var x);
/// Per-row sums (n×1).
Var row_sum(Graph& g, Var x);

}  // namespace dragtraffic::nn
