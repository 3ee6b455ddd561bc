// SPDX-License-Identifier: Apache-2.0
//
// Append-only reverse-mode tape. Nodes are stored in creation order, which is
// also a valid topological order, so backward is a single reverse sweep.

#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "segkv/autodiff/tensor.hpp"

namespace segkv::ad {

// Accumulates d(loss)/d(input_k) into grad_in[k] given d(loss)/d(output).
// grad_in[k] is null when input k does not need a gradient.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<Buffer*> grad_in)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  // Registers `value` as a differentiable leaf on this tape.
  Tensor variable(const Tensor& value);

  // Records `result` as the output of `op` applied to `inputs`. When no input
  // is attached the result is returned as a constant and nothing is recorded.
  static Tensor record(std::string_view op, Tensor result,
                       std::span<const Tensor> inputs, BackwardFn backward);

  // Gradient of the scalar `loss` with respect to each tensor in `wrt`.
  // The result is aligned with `wrt`. The tape is left intact.
  std::vector<Buffer> backward(const Tensor& loss, std::span<const Tensor> wrt) const;

  // Vector-Jacobian product: pushes `seed` (shaped like `root`) back to `wrt`.
  std::vector<Buffer> backward_from(const Tensor& root, std::span<const double> seed,
                                    std::span<const Tensor> wrt) const;

  // Sum of vector-Jacobian products over several roots, in one reverse sweep.
  std::vector<Buffer> backward_from(std::span<const Tensor> roots, std::span<const Buffer> seeds,
                                    std::span<const Tensor> wrt) const;

  std::size_t size() const { return nodes_.size(); }
  std::string_view op_name(NodeId id) const { return nodes_.at(id).op; }
  // Number of doubles held by recorded node outputs.
  std::size_t stored_values() const { return stored_values_; }

 private:
  static constexpr NodeId kConstant = static_cast<NodeId>(-1);

  struct Node {
    std::string op;
    std::vector<NodeId> inputs;  // kConstant for non-attached inputs
    std::size_t numel = 0;
    BackwardFn backward;  // empty for leaves
  };

  Tensor push(std::string_view op, Tensor result, std::vector<NodeId> inputs,
              BackwardFn backward);
  void check_owned(const Tensor& t, const char* what) const;

  std::vector<Node> nodes_;
  std::size_t stored_values_ = 0;
};

}  // namespace segkv::ad
