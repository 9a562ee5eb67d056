#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace modwatch::nn {

using Dims = std::vector<std::size_t>;

std::size_t element_count(std::span<const std::size_t> dims);
std::string shape_string(std::span<const std::size_t> dims);

// Dense row-major float32 array. Extents are always positive.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Dims dims, float fill = 0.0f);
  Tensor(Dims dims, std::vector<float> values);

  static Tensor scalar(float v) { return Tensor({1}, std::vector<float>{v}); }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  std::vector<float>& storage() noexcept { return data_; }
  const std::vector<float>& storage() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  // Same values under new extents; element counts must agree.
  Tensor reshaped(Dims dims) const;
  void fill(float v);

  bool all_finite() const noexcept;
  double squared_norm() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Dims dims_;
  std::vector<float> data_;
};

// Compares dims and the raw bit patterns of every element.
bool bitwise_equal(const Tensor& a, const Tensor& b) noexcept;

}  // namespace modwatch::nn
