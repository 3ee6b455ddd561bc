// SPDX-License-Identifier: Apache-2.0
//
// A relay node collects gradients arriving at a segment's memory from many
// downstream losses, then pushes their sum through the segment's encoder
// graph exactly once.

#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "segkv/autodiff/tape.hpp"
#include "segkv/autodiff/tensor.hpp"

namespace segkv::ad {

class RelayNode {
 public:
  // `endpoints` are the memory tensors recorded on `tape`; the relay keeps the
  // tape (the segment's activations) alive until released.
  RelayNode(std::shared_ptr<Tape> tape, std::vector<Tensor> endpoints);

  std::size_t size() const { return endpoints_.size(); }
  const Tensor& endpoint(std::size_t i) const { return endpoints_.at(i); }
  std::span<const Tensor> endpoints() const { return endpoints_; }
  std::span<const Buffer> accumulated() const { return accumulated_; }

  // Adds `grad` into the running sum for endpoint `slot`.
  void accumulate(std::size_t slot, std::span<const double> grad);

  bool flushed() const { return flushed_; }
  bool released() const { return tape_ == nullptr; }

  // Backpropagates the accumulated gradient to `wrt` (tensors on the same
  // tape) and adds the result into `out`, which is aligned with `wrt`.
  // After this call no further accumulation is accepted.
  void flush(std::span<const Tensor> wrt, std::vector<Buffer>& out);

  // Drops the recorded activations.
  void release();

  Tape* tape() const { return tape_.get(); }

 private:
  std::shared_ptr<Tape> tape_;
  std::vector<Tensor> endpoints_;
  std::vector<Buffer> accumulated_;
  bool flushed_ = false;
};

// Free-function spelling of RelayNode::flush.
void flush_relay(RelayNode& relay, std::span<const Tensor> wrt, std::vector<Buffer>& theta_grad);

}  // namespace segkv::ad
