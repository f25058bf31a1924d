#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace statark {

using Shape = std::vector<int64_t>;

int64_t num_elements(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major fp32 array. The shape is fixed at construction; only the
// element values may change afterwards.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> data);
  Tensor(const Tensor& other);
  Tensor(Tensor&& other) noexcept = default;
  Tensor& operator=(const Tensor& other);
  Tensor& operator=(Tensor&& other) noexcept = default;

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor filled(Shape shape, float value);
  static Tensor scalar(float value) { return Tensor(Shape{}, {value}); }

  const Shape& shape() const noexcept { return shape_; }
  int64_t rank() const noexcept { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t axis) const;
  int64_t size() const noexcept { return static_cast<int64_t>(data_.size()); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Copies values from a tensor of identical shape without reallocating.
  void assign_from(const Tensor& other);
  void fill(float value);

  bool operator==(const Tensor& other) const = default;

  // Number of tensor storage allocations made by this process. Used to check
  // that compiled models stop allocating once their buffers exist.
  static uint64_t allocation_count() noexcept;

 private:
  Shape shape_;
  std::vector<float> data_;
};

}  // namespace statark
