#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "statark/tensor.hpp"

// Dense fp32 reference kernels for the IR op set. Every kernel comes in two
// forms: one writing into a preallocated output of the exact result shape
// (used by compiled models, never allocates), and a convenience form that
// returns a fresh tensor. All kernels accumulate in fp32 and are
// deterministic: identical inputs give bitwise-identical outputs.
namespace statark::kernels {

// Batched matrix product over the last two dims. `b` may be rank 2, in which
// case it is shared across every batch of `a`.
void matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b, Tensor& out);
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);

// Softmax over the last dim with max subtraction, so -inf logits map to an
// exact 0. A slice that is entirely -inf cannot be normalized and throws.
void softmax_lastdim(const Tensor& x, Tensor& out);
Tensor softmax_lastdim(const Tensor& x);

// x / sqrt(mean(x^2) + eps) * weight over each last-dim slice.
void rmsnorm(const Tensor& x, const Tensor& weight, float eps, Tensor& out);
Tensor rmsnorm(const Tensor& x, const Tensor& weight, float eps);

// Rotates interleaved pairs (x[2i], x[2i+1]) of every head by the (cos, sin)
// stored at freqs[..., i, :].
void apply_rotary(const Tensor& x, const Tensor& freqs, Tensor& out);
Tensor apply_rotary(const Tensor& x, const Tensor& freqs);

// Copies `cache` into `out` and overwrites slice `row` along `axis` with
// `values` (the cache shape with that axis reduced to 1). `out` may be the
// cache itself.
void scatter_row_update(const Tensor& cache, int64_t row, const Tensor& values, int64_t axis, Tensor& out);
// Sequence axis defaults to rank - 2, matching [batch, heads, seq, head_dim] caches.
Tensor scatter_row_update(const Tensor& cache, int64_t row, const Tensor& values, int64_t axis = -2);

// Integer index carried in an fp32 element; throws unless integral and in [0, limit).
int64_t index_value(float value, int64_t limit);

// out[i, ...] = table[indices[i], ...]; indices are fp32-encoded integers.
void gather_rows(const Tensor& table, const Tensor& indices, Tensor& out);
Tensor gather_rows(const Tensor& table, const Tensor& indices);

enum class ElementwiseMode { Add, Multiply, SiLU };

// Add/Multiply take equal shapes or a single-element operand; SiLU is unary
// (x * sigmoid(x)) and ignores `b`.
void elementwise(ElementwiseMode mode, const Tensor& a, const Tensor* b, Tensor& out);
Tensor elementwise(ElementwiseMode mode, const Tensor& a, const std::optional<Tensor>& b = std::nullopt);

// Row-major copy into a tensor with the same element count.
void reshape(const Tensor& input, Tensor& out);
void transpose(const Tensor& input, std::span<const int64_t> order, Tensor& out);
Tensor transpose(const Tensor& input, std::span<const int64_t> order);

}  // namespace statark::kernels
