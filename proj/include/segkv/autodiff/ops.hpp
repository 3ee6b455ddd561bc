// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Each op checks shapes, computes its value and,
// when any input is attached, records a backward closure on the input's tape.
//
// Broadcasting is limited to a rank-1 bias added along the last axis.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "segkv/autodiff/tape.hpp"
#include "segkv/autodiff/tensor.hpp"

namespace segkv::ad {

// tanh-form GELU constants: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
inline constexpr double kGeluSqrt2OverPi = 0.7978845608028654;
inline constexpr double kGeluCubic = 0.044715;
inline constexpr double kLayerNormEps = 1e-5;

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// Same-shape add, or `b` rank-1 matching the last axis of `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Row-wise over the last axis.
Tensor softmax(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);

// Rows of `table` (V, d) selected by `ids`; every id must be < V.
Tensor embedding(const Tensor& table, std::span<const int> ids);

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
// axis 0: any rank, trailing dims must agree. axis 1: rank-2 only.
Tensor concat(std::span<const Tensor> parts, std::size_t axis = 0);

// Mean next-token loss over rows whose target is >= 0 (negative = ignored).
// With no scored rows the loss is 0 and its gradient is zero.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

// Rotary position encoding on (n, d) with d split into `heads` equal heads.
// Row r is rotated by `positions[r]`.
Tensor rope(const Tensor& x, std::size_t heads, std::span<const std::size_t> positions,
            double base = 10000.0);

// Multi-head scaled dot-product attention. q: (T, d), k and v: (S, d).
// Query t may attend key s iff s <= visible_offset + t.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 std::size_t visible_offset);

}  // namespace segkv::ad
