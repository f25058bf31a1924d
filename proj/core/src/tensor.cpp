#include "statark/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

#include "statark/error.hpp"

namespace statark {
namespace {

std::atomic<uint64_t> g_allocations{0};

void count_allocation(const std::vector<float>& data) {
  if (!data.empty()) g_allocations.fetch_add(1, std::memory_order_relaxed);
}

void check_shape(const Shape& shape) {
  for (int64_t d : shape) {
    if (d < 1) throw ShapeError("tensor extent must be >= 1, got shape " + shape_to_string(shape));
  }
}

}  // namespace

int64_t num_elements(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(static_cast<size_t>(num_elements(shape_)), 0.0f);
  count_allocation(data_);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (static_cast<int64_t>(data_.size()) != num_elements(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_to_string(shape_));
  }
}

Tensor::Tensor(const Tensor& other) : shape_(other.shape_), data_(other.data_) { count_allocation(data_); }

Tensor& Tensor::operator=(const Tensor& other) {
  if (this != &other) {
    const bool reuse = data_.capacity() >= other.data_.size();
    shape_ = other.shape_;
    data_ = other.data_;
    if (!reuse) count_allocation(data_);
  }
  return *this;
}

Tensor Tensor::filled(Shape shape, float value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

int64_t Tensor::dim(int64_t axis) const {
  const int64_t r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("axis out of range for shape " + shape_to_string(shape_));
  return shape_[static_cast<size_t>(axis)];
}

void Tensor::assign_from(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw ShapeError("cannot assign " + shape_to_string(other.shape_) + " into " + shape_to_string(shape_));
  }
  std::copy(other.data_.begin(), other.data_.end(), data_.begin());
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

uint64_t Tensor::allocation_count() noexcept { return g_allocations.load(std::memory_order_relaxed); }

}  // namespace statark
