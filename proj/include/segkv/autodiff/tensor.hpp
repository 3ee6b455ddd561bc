// SPDX-License-Identifier: Apache-2.0
//
// Dense 64-bit tensor value with an optional handle into a gradient tape.

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace segkv::ad {

using Shape = std::vector<std::size_t>;
using Buffer = std::vector<double>;
using NodeId = std::uint32_t;

class Tape;

// Raised when operand shapes are incompatible with an op.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised on misuse of the tape (detached wrt, mixed tapes, non-scalar loss).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Immutable row-major value. Copies share the underlying buffer.
//
// A tensor is "attached" when it was produced on a Tape; attached tensors
// must not outlive the tape that recorded them.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, Buffer values);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_->size(); }
  // Leading / trailing extents of a rank-2 tensor.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return *data_; }
  const double* data() const { return data_->data(); }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t r, std::size_t c) const;
  double item() const;

  bool attached() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  NodeId node() const { return node_; }

 private:
  friend class Tape;
  friend Tensor detach(const Tensor& t);

  Shape shape_;
  std::shared_ptr<const Buffer> data_;
  Tape* tape_ = nullptr;
  NodeId node_ = 0;
};

// Same values, no tape participation. Idempotent.
Tensor detach(const Tensor& t);

bool bit_equal(const Tensor& a, const Tensor& b);

}  // namespace segkv::ad
