#include "modwatch/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "modwatch/error.hpp"

namespace modwatch::nn {

std::size_t element_count(std::span<const std::size_t> dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::string shape_string(std::span<const std::size_t> dims) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? " x " : "") << dims[i];
  os << ')';
  return os.str();
}

namespace {
void check_extents(const Dims& dims) {
  if (dims.empty()) throw ShapeError("tensor must have at least one axis");
  for (auto d : dims) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(dims));
  }
}
}  // namespace

Tensor::Tensor(Dims dims, float fill) : dims_(std::move(dims)) {
  check_extents(dims_);
  data_.assign(element_count(dims_), fill);
}

Tensor::Tensor(Dims dims, std::vector<float> values) : dims_(std::move(dims)), data_(std::move(values)) {
  check_extents(dims_);
  if (element_count(dims_) != data_.size()) {
    throw ShapeError("tensor of shape " + shape_string(dims_) + " given " + std::to_string(data_.size()) +
                     " values");
  }
}

Tensor Tensor::reshaped(Dims dims) const {
  if (element_count(dims) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(dims_) + " to " + shape_string(dims));
  }
  return Tensor(std::move(dims), data_);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::squared_norm() const noexcept {
  double s = 0.0;
  for (float v : data_) s += static_cast<double>(v) * v;
  return s;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) noexcept {
  return a.dims() == b.dims() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace modwatch::nn
