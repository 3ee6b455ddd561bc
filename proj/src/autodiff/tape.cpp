// SPDX-License-Identifier: Apache-2.0

#include "segkv/autodiff/tape.hpp"

#include <algorithm>

namespace segkv::ad {

Tensor Tape::push(std::string_view op, Tensor result, std::vector<NodeId> inputs,
                  BackwardFn backward) {
  Node node;
  node.op = std::string(op);
  node.inputs = std::move(inputs);
  node.numel = result.numel();
  node.backward = std::move(backward);
  stored_values_ += node.numel;
  nodes_.push_back(std::move(node));
  result.tape_ = this;
  result.node_ = static_cast<NodeId>(nodes_.size() - 1);
  return result;
}

Tensor Tape::variable(const Tensor& value) {
  return push("variable", detach(value), {}, BackwardFn{});
}

Tensor Tape::record(std::string_view op, Tensor result, std::span<const Tensor> inputs,
                    BackwardFn backward) {
  Tape* tape = nullptr;
  for (const auto& in : inputs) {
    if (!in.attached()) continue;
    if (tape && tape != in.tape()) {
      throw TapeError(std::string(op) + ": inputs recorded on different tapes");
    }
    tape = in.tape();
  }
  if (!tape) return result;
  std::vector<NodeId> ids;
  ids.reserve(inputs.size());
  for (const auto& in : inputs) ids.push_back(in.attached() ? in.node() : kConstant);
  return tape->push(op, std::move(result), std::move(ids), std::move(backward));
}

void Tape::check_owned(const Tensor& t, const char* what) const {
  if (!t.attached()) throw TapeError(std::string(what) + " tensor is detached");
  if (t.tape() != this) throw TapeError(std::string(what) + " tensor belongs to another tape");
}

std::vector<Buffer> Tape::backward(const Tensor& loss, std::span<const Tensor> wrt) const {
  if (loss.numel() != 1) {
    throw TapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  const double one = 1.0;
  return backward_from(loss, std::span<const double>(&one, 1), wrt);
}

std::vector<Buffer> Tape::backward_from(const Tensor& root, std::span<const double> seed,
                                        std::span<const Tensor> wrt) const {
  const Tensor roots[] = {root};
  const Buffer seeds[] = {Buffer(seed.begin(), seed.end())};
  return backward_from(roots, seeds, wrt);
}

std::vector<Buffer> Tape::backward_from(std::span<const Tensor> roots,
                                        std::span<const Buffer> seeds,
                                        std::span<const Tensor> wrt) const {
  if (roots.size() != seeds.size()) throw TapeError("backward: roots and seeds differ in count");
  if (roots.empty()) throw TapeError("backward: no roots");
  NodeId top = 0;
  for (std::size_t r = 0; r < roots.size(); ++r) {
    check_owned(roots[r], "backward root");
    if (seeds[r].size() != roots[r].numel()) {
      throw ShapeError("backward: seed has " + std::to_string(seeds[r].size()) +
                       " values, root has shape " + shape_str(roots[r].shape()));
    }
    top = std::max(top, roots[r].node());
  }
  for (const auto& w : wrt) check_owned(w, "wrt");

  // needs[n]: some wrt node is reachable from n by walking inputs.
  std::vector<char> needs(top + 1, 0);
  for (const auto& w : wrt) {
    if (w.node() <= top) needs[w.node()] = 1;
  }
  for (NodeId n = 0; n <= top; ++n) {
    if (needs[n]) continue;
    for (NodeId in : nodes_[n].inputs) {
      if (in != kConstant && needs[in]) {
        needs[n] = 1;
        break;
      }
    }
  }

  std::vector<char> keep(top + 1, 0);
  for (const auto& w : wrt) {
    if (w.node() <= top) keep[w.node()] = 1;
  }

  std::vector<Buffer> grads(top + 1);
  for (std::size_t r = 0; r < roots.size(); ++r) {
    const NodeId id = roots[r].node();
    if (!needs[id]) continue;
    if (grads[id].empty()) grads[id].assign(nodes_[id].numel, 0.0);
    for (std::size_t i = 0; i < seeds[r].size(); ++i) grads[id][i] += seeds[r][i];
  }

  std::vector<Buffer*> slots;
  for (NodeId n = top + 1; n-- > 0;) {
    if (!needs[n] || grads[n].empty()) continue;
    const Node& node = nodes_[n];
    if (node.backward) {
      slots.assign(node.inputs.size(), nullptr);
      bool any = false;
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const NodeId in = node.inputs[k];
        if (in == kConstant || !needs[in]) continue;
        if (grads[in].empty()) grads[in].assign(nodes_[in].numel, 0.0);
        slots[k] = &grads[in];
        any = true;
      }
      if (any) node.backward(grads[n], slots);
    }
    if (!keep[n]) Buffer().swap(grads[n]);
  }

  std::vector<Buffer> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    const NodeId id = w.node();
    if (id <= top && !grads[id].empty()) {
      out.push_back(grads[id]);
    } else {
      out.emplace_back(w.numel(), 0.0);
    }
  }
  return out;
}

}  // namespace segkv::ad
