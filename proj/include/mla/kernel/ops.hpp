#pragma once

#include <cstddef>
#include <span>

#include "mla/kernel/tape.hpp"
#include "mla/rng.hpp"

// Differentiable primitives. Tensors are rank 1 or 2; rank-1 operands act as
// row vectors and are only broadcast where the op says so. "Blocked" ops treat
// a (B*m) x c matrix as B stacked m x c blocks, one per sample.
namespace mla::kernel {

Var matmul(Var a, Var b);     // a[m x k] * b[k x n]
Var matmul_nt(Var a, Var b);  // a[m x k] * b[n x k]^T
Var add(Var a, Var b);        // same shape
Var add_row(Var x, Var bias); // x[r x c] + bias[c] on every row
Var scale(Var x, double factor);
Var relu(Var x);
// Inverted dropout: kept entries are divided by (1 - rate).
Var dropout(Var x, double rate, Rng& rng);
Var softmax_rows(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

Var select_cols(Var x, std::span<const std::size_t> columns);
Var slice_cols(Var x, std::size_t start, std::size_t count);
Var concat_cols(std::span<const Var> parts);
// parts[i] is B x c; output row b*m + i is parts[i] row b (m = parts.size()).
Var interleave_rows(std::span<const Var> parts);

// Per block b: q_b * k_b^T * factor, giving a (B*m) x m matrix.
Var block_scores(Var q, Var k, std::size_t block, double factor);
// Per block b: a_b[m x m] * v_b[m x c].
Var block_apply(Var a, Var v, std::size_t block);
// Per block b: mean of the block's m rows, giving B x c.
Var block_mean_rows(Var x, std::size_t block);

Var sum(Var x);
// -(1/n) sum_i sum_c target_ic * log softmax(logits)_ic. Target rows must be
// distributions (tolerance 1e-6).
Var cross_entropy_soft(Var logits, const Tensor& targets);
// sum of a * log(a) with a clamped below at `floor`; the clamped region has
// zero gradient.
Var sum_xlogx(Var x, double floor = 1e-12);

// Value-only helpers shared by inference paths.
Tensor softmax_rows(const Tensor& x);

}  // namespace mla::kernel
