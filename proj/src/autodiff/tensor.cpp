// SPDX-License-Identifier: Apache-2.0

#include "segkv/autodiff/tensor.hpp"

#include <cstring>
#include <numeric>
#include <sstream>

namespace segkv::ad {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor() : shape_{0}, data_(std::make_shared<const Buffer>()) {}

Tensor::Tensor(Shape shape, Buffer values) : shape_(std::move(shape)) {
  if (shape_numel(shape_) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape_) + " holds " +
                     std::to_string(shape_numel(shape_)) + " values, got " +
                     std::to_string(values.size()));
  }
  data_ = std::make_shared<const Buffer>(std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), Buffer(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, Buffer{value}); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows(): expected rank 2, got " + shape_str(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols(): expected rank 2, got " + shape_str(shape_));
  return shape_[1];
}

double Tensor::at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item(): tensor of shape " + shape_str(shape_) + " is not a scalar");
  return (*data_)[0];
}

Tensor detach(const Tensor& t) {
  Tensor out = t;
  out.tape_ = nullptr;
  out.node_ = 0;
  return out;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data(), b.data(), a.numel() * sizeof(double)) == 0;
}

}  // namespace segkv::ad
