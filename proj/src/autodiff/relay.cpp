// SPDX-License-Identifier: Apache-2.0

#include "segkv/autodiff/relay.hpp"

#include <string>

namespace segkv::ad {

RelayNode::RelayNode(std::shared_ptr<Tape> tape, std::vector<Tensor> endpoints)
    : tape_(std::move(tape)), endpoints_(std::move(endpoints)) {
  if (!tape_) throw TapeError("relay: null tape");
  accumulated_.reserve(endpoints_.size());
  for (const auto& e : endpoints_) {
    if (e.tape() != tape_.get()) throw TapeError("relay: endpoint not recorded on the relay's tape");
    accumulated_.emplace_back(e.numel(), 0.0);
  }
}

void RelayNode::accumulate(std::size_t slot, std::span<const double> grad) {
  if (flushed_) throw TapeError("relay: accumulate after flush");
  Buffer& acc = accumulated_.at(slot);
  if (grad.size() != acc.size()) {
    throw ShapeError("relay: gradient of " + std::to_string(grad.size()) + " values for endpoint " +
                     shape_str(endpoints_[slot].shape()));
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += grad[i];
}

void RelayNode::flush(std::span<const Tensor> wrt, std::vector<Buffer>& out) {
  if (flushed_) throw TapeError("relay: already flushed");
  if (released()) throw TapeError("relay: activations already released");
  if (out.size() != wrt.size()) throw TapeError("relay: output not aligned with wrt");
  const auto contrib = tape_->backward_from(endpoints_, accumulated_, wrt);
  for (std::size_t p = 0; p < out.size(); ++p) {
    if (out[p].size() != contrib[p].size()) {
      throw ShapeError("relay: gradient buffer " + std::to_string(p) + " has wrong size");
    }
    for (std::size_t i = 0; i < out[p].size(); ++i) out[p][i] += contrib[p][i];
  }
  flushed_ = true;
}

void RelayNode::release() {
  endpoints_.clear();
  tape_.reset();
}

void flush_relay(RelayNode& relay, std::span<const Tensor> wrt, std::vector<Buffer>& theta_grad) {
  relay.flush(wrt, theta_grad);
}

}  // namespace segkv::ad
