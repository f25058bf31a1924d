#include "statark/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "statark/error.hpp"
#include "statark/shapes.hpp"

namespace statark::kernels {
namespace {

void expect_shape(const Tensor& out, const Shape& expected, const char* op) {
  if (out.shape() != expected) {
    throw KernelError(std::string(op) + ": output buffer " + shape_to_string(out.shape()) + " but result is " +
                      shape_to_string(expected));
  }
}

template <typename Rule>
Shape checked(Rule&& rule) {
  try {
    return rule();
  } catch (const ShapeError& e) {
    throw KernelError(e.what());
  }
}

}  // namespace

void matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b, Tensor& out) {
  const Shape shape = checked([&] { return shapes::matmul(a.shape(), b.shape(), transpose_a, transpose_b); });
  expect_shape(out, shape, "MatMul");

  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const int64_t rows_a = sa[sa.size() - 2];
  const int64_t cols_a = sa[sa.size() - 1];
  const int64_t rows_b = sb[sb.size() - 2];
  const int64_t cols_b = sb[sb.size() - 1];
  const int64_t m = transpose_a ? cols_a : rows_a;
  const int64_t k = transpose_a ? rows_a : cols_a;
  const int64_t n = transpose_b ? rows_b : cols_b;
  const int64_t batches = num_elements(shape) / (m * n);
  const bool shared_b = sb.size() == 2;

  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  for (int64_t batch = 0; batch < batches; ++batch) {
    const float* ab = pa + batch * rows_a * cols_a;
    const float* bb = shared_b ? pb : pb + batch * rows_b * cols_b;
    float* ob = po + batch * m * n;
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < n; ++j) {
        float acc = 0.0f;
        if (!transpose_a && transpose_b) {
          const float* ar = ab + i * cols_a;
          const float* br = bb + j * cols_b;
          for (int64_t p = 0; p < k; ++p) acc += ar[p] * br[p];
        } else {
          for (int64_t p = 0; p < k; ++p) {
            const float av = transpose_a ? ab[p * cols_a + i] : ab[i * cols_a + p];
            const float bv = transpose_b ? bb[j * cols_b + p] : bb[p * cols_b + j];
            acc += av * bv;
          }
        }
        ob[i * n + j] = acc;
      }
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  Tensor out(checked([&] { return shapes::matmul(a.shape(), b.shape(), transpose_a, transpose_b); }));
  matmul(a, b, transpose_a, transpose_b, out);
  return out;
}

void softmax_lastdim(const Tensor& x, Tensor& out) {
  const Shape shape = checked([&] { return shapes::softmax(x.shape()); });
  expect_shape(out, shape, "Softmax");
  const int64_t width = shape.back();
  const int64_t slices = x.size() / width;
  const float* in = x.data().data();
  float* o = out.data().data();
  for (int64_t r = 0; r < slices; ++r) {
    const float* row = in + r * width;
    float* orow = o + r * width;
    const float peak = *std::max_element(row, row + width);
    if (peak == -std::numeric_limits<float>::infinity()) {
      throw KernelError("Softmax: slice " + std::to_string(r) + " is entirely -inf");
    }
    float sum = 0.0f;
    for (int64_t i = 0; i < width; ++i) {
      orow[i] = std::exp(row[i] - peak);
      sum += orow[i];
    }
    for (int64_t i = 0; i < width; ++i) orow[i] /= sum;
  }
}

Tensor softmax_lastdim(const Tensor& x) {
  Tensor out(checked([&] { return shapes::softmax(x.shape()); }));
  softmax_lastdim(x, out);
  return out;
}

void rmsnorm(const Tensor& x, const Tensor& weight, float eps, Tensor& out) {
  const Shape shape = checked([&] { return shapes::rmsnorm(x.shape(), weight.shape()); });
  expect_shape(out, shape, "RMSNorm");
  if (!(eps > 0.0f)) throw KernelError("RMSNorm: eps must be positive");
  const int64_t width = shape.back();
  const int64_t slices = x.size() / width;
  const float* w = weight.data().data();
  for (int64_t r = 0; r < slices; ++r) {
    const float* row = x.data().data() + r * width;
    float* orow = out.data().data() + r * width;
    float sum_sq = 0.0f;
    for (int64_t i = 0; i < width; ++i) sum_sq += row[i] * row[i];
    const float inv = 1.0f / std::sqrt(sum_sq / static_cast<float>(width) + eps);
    for (int64_t i = 0; i < width; ++i) orow[i] = row[i] * inv * w[i];
  }
}

Tensor rmsnorm(const Tensor& x, const Tensor& weight, float eps) {
  Tensor out(checked([&] { return shapes::rmsnorm(x.shape(), weight.shape()); }));
  rmsnorm(x, weight, eps, out);
  return out;
}

void apply_rotary(const Tensor& x, const Tensor& freqs, Tensor& out) {
  const Shape shape = checked([&] { return shapes::rotary(x.shape(), freqs.shape()); });
  expect_shape(out, shape, "RotaryApply");
  const int64_t head_dim = shape[shape.size() - 1];
  const int64_t heads = shape[shape.size() - 2];
  const int64_t half = head_dim / 2;
  const int64_t outer = x.size() / (heads * head_dim);
  const float* in = x.data().data();
  const float* f = freqs.data().data();
  float* o = out.data().data();
  for (int64_t l = 0; l < outer; ++l) {
    const float* fl = f + l * half * 2;
    for (int64_t h = 0; h < heads; ++h) {
      const int64_t base = (l * heads + h) * head_dim;
      for (int64_t i = 0; i < half; ++i) {
        const float c = fl[2 * i];
        const float s = fl[2 * i + 1];
        const float x0 = in[base + 2 * i];
        const float x1 = in[base + 2 * i + 1];
        o[base + 2 * i] = x0 * c - x1 * s;
        o[base + 2 * i + 1] = x0 * s + x1 * c;
      }
    }
  }
}

Tensor apply_rotary(const Tensor& x, const Tensor& freqs) {
  Tensor out(checked([&] { return shapes::rotary(x.shape(), freqs.shape()); }));
  apply_rotary(x, freqs, out);
  return out;
}

void scatter_row_update(const Tensor& cache, int64_t row, const Tensor& values, int64_t axis, Tensor& out) {
  const Shape& cs = cache.shape();
  const auto rank = static_cast<int64_t>(cs.size());
  const Shape shape = checked([&] { return shapes::scatter_row_update(cs, Shape{1}, values.shape(), axis); });
  expect_shape(out, shape, "ScatterRowUpdate");
  if (axis < 0) axis += rank;
  const int64_t rows = cs[static_cast<size_t>(axis)];
  if (row < 0 || row >= rows) {
    throw KernelError("ScatterRowUpdate: row " + std::to_string(row) + " outside [0, " + std::to_string(rows) + ")");
  }
  int64_t inner = 1;
  for (int64_t i = axis + 1; i < rank; ++i) inner *= cs[static_cast<size_t>(i)];
  const int64_t outer = cache.size() / (rows * inner);
  if (&out != &cache) std::copy(cache.data().begin(), cache.data().end(), out.data().begin());
  const float* v = values.data().data();
  float* o = out.data().data();
  for (int64_t i = 0; i < outer; ++i) {
    std::copy(v + i * inner, v + (i + 1) * inner, o + (i * rows + row) * inner);
  }
}

Tensor scatter_row_update(const Tensor& cache, int64_t row, const Tensor& values, int64_t axis) {
  Tensor out(cache.shape());
  scatter_row_update(cache, row, values, axis, out);
  return out;
}

int64_t index_value(float value, int64_t limit) {
  if (!std::isfinite(value) || value != std::floor(value)) {
    throw KernelError("index " + std::to_string(value) + " is not an integer");
  }
  const auto index = static_cast<int64_t>(value);
  if (index < 0 || index >= limit) {
    throw KernelError("index " + std::to_string(index) + " outside [0, " + std::to_string(limit) + ")");
  }
  return index;
}

void gather_rows(const Tensor& table, const Tensor& indices, Tensor& out) {
  const Shape shape = checked([&] { return shapes::gather(table.shape(), indices.shape()); });
  expect_shape(out, shape, "Gather");
  const int64_t rows = table.shape().front();
  const int64_t width = table.size() / rows;
  const float* t = table.data().data();
  float* o = out.data().data();
  for (int64_t i = 0; i < indices.size(); ++i) {
    const int64_t r = index_value(indices[i], rows);
    std::copy(t + r * width, t + (r + 1) * width, o + i * width);
  }
}

Tensor gather_rows(const Tensor& table, const Tensor& indices) {
  Tensor out(checked([&] { return shapes::gather(table.shape(), indices.shape()); }));
  gather_rows(table, indices, out);
  return out;
}

void elementwise(ElementwiseMode mode, const Tensor& a, const Tensor* b, Tensor& out) {
  if (mode == ElementwiseMode::SiLU) {
    expect_shape(out, a.shape(), "SiLU");
    for (int64_t i = 0; i < a.size(); ++i) {
      const float v = a[i];
      out[i] = v / (1.0f + std::exp(-v));
    }
    return;
  }
  if (!b) throw KernelError("binary elementwise op needs a second operand");
  const Shape shape = checked([&] { return shapes::elementwise(a.shape(), b->shape()); });
  expect_shape(out, shape, mode == ElementwiseMode::Add ? "Add" : "Multiply");
  const bool a_scalar = a.size() == 1 && shape != a.shape();
  const bool b_scalar = b->size() == 1 && !a_scalar;
  for (int64_t i = 0; i < out.size(); ++i) {
    const float x = a_scalar ? a[0] : a[i];
    const float y = b_scalar ? (*b)[0] : (*b)[i];
    out[i] = mode == ElementwiseMode::Add ? x + y : x * y;
  }
}

Tensor elementwise(ElementwiseMode mode, const Tensor& a, const std::optional<Tensor>& b) {
  Shape shape = a.shape();
  if (mode != ElementwiseMode::SiLU) {
    if (!b) throw KernelError("binary elementwise op needs a second operand");
    shape = checked([&] { return shapes::elementwise(a.shape(), b->shape()); });
  }
  Tensor out(shape);
  elementwise(mode, a, b ? &*b : nullptr, out);
  return out;
}

void reshape(const Tensor& input, Tensor& out) {
  if (input.size() != out.size()) {
    throw KernelError("Reshape: " + shape_to_string(input.shape()) + " onto " + shape_to_string(out.shape()));
  }
  std::copy(input.data().begin(), input.data().end(), out.data().begin());
}

void transpose(const Tensor& input, std::span<const int64_t> order, Tensor& out) {
  const Shape shape = checked([&] { return shapes::transpose(input.shape(), order); });
  expect_shape(out, shape, "Transpose");
  const auto rank = order.size();
  const Shape& in_shape = input.shape();
  std::vector<int64_t> in_strides(rank, 1);
  for (size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  // Stride in the input for each output axis.
  std::vector<int64_t> strides(rank);
  for (size_t i = 0; i < rank; ++i) strides[i] = in_strides[static_cast<size_t>(order[i])];

  std::vector<int64_t> index(rank, 0);
  const float* in = input.data().data();
  float* o = out.data().data();
  int64_t src = 0;
  for (int64_t n = 0; n < out.size(); ++n) {
    o[n] = in[src];
    for (size_t axis = rank; axis-- > 0;) {
      if (++index[axis] < shape[axis]) {
        src += strides[axis];
        break;
      }
      src -= strides[axis] * (shape[axis] - 1);
      index[axis] = 0;
    }
  }
}

Tensor transpose(const Tensor& input, std::span<const int64_t> order) {
  Tensor out(checked([&] { return shapes::transpose(input.shape(), order); }));
  transpose(input, order, out);
  return out;
}

}  // namespace statark::kernels
