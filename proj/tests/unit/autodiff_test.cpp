// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "grad_check.hpp"
#include "segkv/autodiff/ops.hpp"
#include "segkv/autodiff/relay.hpp"

namespace segkv::ad {
namespace {

using testing::max_gradient_error;
using testing::random_tensor;

TEST(TensorTest, ShapeMustMatchValueCount) {
  EXPECT_THROW(Tensor({2, 3}, Buffer(5)), ShapeError);
  const Tensor t({2, 3}, Buffer(6, 1.0));
  EXPECT_EQ(t.numel(), shape_numel(t.shape()));
  EXPECT_FALSE(t.attached());
}

TEST(ForwardTest, IdentityMatmul) {
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  const Tensor col({2, 1}, {3, 4});
  const Tensor out = matmul(eye, col);
  EXPECT_EQ(out.shape(), (Shape{2, 1}));
  EXPECT_EQ(out[0], 3.0);
  EXPECT_EQ(out[1], 4.0);
}

TEST(ForwardTest, ConcatAlongRows) {
  const Tensor parts[] = {Tensor::zeros({2, 4}), Tensor::zeros({3, 4})};
  EXPECT_EQ(concat(parts, 0).shape(), (Shape{5, 4}));
}

TEST(ForwardTest, UniformLogitsCrossEntropyIsLogV) {
  const Tensor logits = Tensor::zeros({1, 4});
  const int target[] = {2};
  EXPECT_NEAR(cross_entropy(logits, target).item(), std::log(4.0), 1e-15);
  EXPECT_NEAR(std::log(4.0), 1.3863, 1e-4);
}

TEST(ForwardTest, ShapeErrorsNameTheOp) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("(2,3)"), std::string::npos);
  }
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
  const Tensor parts[] = {Tensor::zeros({2, 4}), Tensor::zeros({2, 3})};
  EXPECT_THROW(concat(parts, 0), ShapeError);
  const int bad[] = {7};
  EXPECT_THROW(embedding(Tensor::zeros({4, 2}), bad), ShapeError);
}

TEST(ForwardTest, ConstantsAreNotRecorded) {
  Tape tape;
  const Tensor a = Tensor::filled({2, 2}, 1.0);
  const Tensor b = matmul(a, a);
  EXPECT_FALSE(b.attached());
  EXPECT_EQ(tape.size(), 0u);
}

TEST(BackwardTest, SumGivesOnes) {
  Tape tape;
  const Tensor m = tape.variable(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  const Tensor wrt[] = {m};
  const auto g = tape.backward(sum(m), wrt);
  EXPECT_EQ(g[0], Buffer(6, 1.0));
}

TEST(BackwardTest, SquareAtThree) {
  Tape tape;
  const Tensor x = tape.variable(Tensor::scalar(3.0));
  const Tensor wrt[] = {x};
  EXPECT_EQ(tape.backward(mul(x, x), wrt)[0][0], 6.0);
}

TEST(BackwardTest, RejectsNonScalarLossAndDetachedWrt) {
  Tape tape;
  const Tensor x = tape.variable(Tensor::zeros({2}));
  const Tensor wrt[] = {x};
  EXPECT_THROW(tape.backward(x, wrt), TapeError);
  const Tensor detached[] = {detach(x)};
  EXPECT_THROW(tape.backward(sum(x), detached), TapeError);
}

TEST(BackwardTest, MixedTapesAreRejected) {
  Tape t1, t2;
  const Tensor a = t1.variable(Tensor::zeros({2}));
  const Tensor b = t2.variable(Tensor::zeros({2}));
  EXPECT_THROW(add(a, b), TapeError);
}

TEST(BackwardTest, TwoLayerMlpMatchesFiniteDifferences) {
  Rng rng(11);
  const Tensor x = random_tensor(rng, {4, 3});
  const int targets[] = {0, 1, 1, 0};
  const testing::ScalarFn f = [&](std::span<const Tensor> p) {
    const Tensor h = gelu(add(matmul(x, p[0]), p[1]));
    return cross_entropy(add(matmul(h, p[2]), p[3]), targets);
  };
  const std::vector<Tensor> params = {random_tensor(rng, {3, 5}), random_tensor(rng, {5}),
                                      random_tensor(rng, {5, 2}), random_tensor(rng, {2})};
  EXPECT_LT(max_gradient_error(f, params), 1e-4);
}

// Each op is checked through a random projection to a scalar so every output
// element contributes to the gradient.
class OpGradientTest : public ::testing::Test {
 protected:
  Rng rng_{2024};

  double check(const testing::ScalarFn& op, const std::vector<Tensor>& inputs) {
    const Tensor probe = detach(op(inputs));
    const Tensor weights = random_tensor(rng_, probe.shape());
    const testing::ScalarFn f = [&](std::span<const Tensor> in) { return sum(mul(op(in), weights)); };
    return max_gradient_error(f, inputs);
  }
};

TEST_F(OpGradientTest, Elementwise) {
  const auto a = random_tensor(rng_, {3, 4}), b = random_tensor(rng_, {3, 4});
  EXPECT_LT(check([](auto in) { return add(in[0], in[1]); }, {a, b}), 1e-4);
  EXPECT_LT(check([](auto in) { return sub(in[0], in[1]); }, {a, b}), 1e-4);
  EXPECT_LT(check([](auto in) { return mul(in[0], in[1]); }, {a, b}), 1e-4);
  EXPECT_LT(check([](auto in) { return scale(in[0], -2.5); }, {a}), 1e-4);
  EXPECT_LT(check([](auto in) { return gelu(in[0]); }, {a}), 1e-4);
  EXPECT_LT(check([](auto in) { return add(in[0], in[1]); }, {a, random_tensor(rng_, {4})}), 1e-4);
}

TEST_F(OpGradientTest, ReluAwayFromKink) {
  Buffer v(12);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (i % 2 ? 1.0 : -1.0) * (0.1 + 0.05 * i);
  EXPECT_LT(check([](auto in) { return relu(in[0]); }, {Tensor({3, 4}, v)}), 1e-4);
}

TEST_F(OpGradientTest, LinearAlgebraAndShapes) {
  const auto a = random_tensor(rng_, {3, 4}), b = random_tensor(rng_, {4, 2});
  EXPECT_LT(check([](auto in) { return matmul(in[0], in[1]); }, {a, b}), 1e-4);
  EXPECT_LT(check([](auto in) { return transpose(in[0]); }, {a}), 1e-4);
  EXPECT_LT(check([](auto in) { return reshape(in[0], {2, 6}); }, {a}), 1e-4);
  EXPECT_LT(check([](auto in) { return slice_rows(in[0], 1, 2); }, {a}), 1e-4);
  EXPECT_LT(check([](auto in) { return slice_cols(in[0], 1, 2); }, {a}), 1e-4);
  EXPECT_LT(check([](auto in) { return concat(in, 0); }, {a, random_tensor(rng_, {2, 4})}), 1e-4);
  EXPECT_LT(check([](auto in) { return concat(in, 1); }, {a, random_tensor(rng_, {3, 2})}), 1e-4);
  EXPECT_LT(check([](auto in) { return mean(in[0]); }, {a}), 1e-4);
}

TEST_F(OpGradientTest, Normalization) {
  const auto x = random_tensor(rng_, {3, 6});
  EXPECT_LT(check([](auto in) { return softmax(in[0]); }, {x}), 1e-4);
  EXPECT_LT(check([](auto in) { return layer_norm(in[0], in[1], in[2]); },
                  {x, random_tensor(rng_, {6}), random_tensor(rng_, {6})}),
            1e-4);
  const int targets[] = {2, -1, 5};
  EXPECT_LT(max_gradient_error([&](auto in) { return cross_entropy(in[0], targets); }, {x}), 1e-4);
}

TEST_F(OpGradientTest, EmbeddingRopeAttention) {
  const int ids[] = {3, 0, 3, 1};
  EXPECT_LT(check([&](auto in) { return embedding(in[0], ids); }, {random_tensor(rng_, {5, 4})}), 1e-4);
  const std::size_t pos[] = {0, 3, 4, 9};
  EXPECT_LT(check([&](auto in) { return rope(in[0], 2, pos); }, {random_tensor(rng_, {4, 8})}), 1e-4);
  const auto q = random_tensor(rng_, {3, 8}), k = random_tensor(rng_, {5, 8}), v = random_tensor(rng_, {5, 8});
  EXPECT_LT(check([](auto in) { return attention(in[0], in[1], in[2], 2, 2); }, {q, k, v}), 1e-4);
}

TEST(AttentionTest, CausalMaskHidesFutureKeys) {
  Rng rng(5);
  const auto q = random_tensor(rng, {2, 4}), k = random_tensor(rng, {4, 4}), v = random_tensor(rng, {4, 4});
  const Tensor out = attention(q, k, v, 1, 2);
  // Changing the last key/value (invisible to query 0 at offset 2) leaves row 0 unchanged.
  const Tensor out2 = attention(q, testing::with_value(k, 13, 9.0), testing::with_value(v, 13, 9.0), 1, 2);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(out[c], out2[c]);
  EXPECT_NE(out[4 + 1], out2[4 + 1]);
}

TEST(CrossEntropyTest, NoScoredRowsGivesZeroLossAndGradient) {
  Tape tape;
  const Tensor logits = tape.variable(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  const int targets[] = {-1, -1};
  const Tensor loss = cross_entropy(logits, targets);
  EXPECT_EQ(loss.item(), 0.0);
  const Tensor wrt[] = {logits};
  EXPECT_EQ(tape.backward(loss, wrt)[0], Buffer(6, 0.0));
}

TEST(DetachTest, DetachedOperandReceivesNoGradient) {
  Tape tape;
  const Tensor x = tape.variable(Tensor({3}, {1, 2, 3}));
  const Tensor y = tape.variable(Tensor({3}, {4, 5, 6}));
  const Tensor xd = detach(x);
  const Tensor j = sum(mul(xd, y));
  const Tensor wrt[] = {x, y};
  const auto g = tape.backward(j, wrt);
  EXPECT_EQ(g[0], Buffer(3, 0.0));
  EXPECT_EQ(g[1], (Buffer{1, 2, 3}));
  EXPECT_THROW({ const Tensor w[] = {xd}; tape.backward(j, w); }, TapeError);
}

TEST(DetachTest, Idempotent) {
  Tape tape;
  const Tensor x = tape.variable(Tensor({2}, {1, 2}));
  const Tensor once = detach(x), twice = detach(once);
  EXPECT_FALSE(twice.attached());
  EXPECT_TRUE(bit_equal(once, twice));
  EXPECT_EQ(once.data(), x.data());  // values are shared, not copied
}

TEST(DetachTest, DeadBranchDetachMatchesDense) {
  Rng rng(3);
  const auto w0 = random_tensor(rng, {3, 3}), x0 = random_tensor(rng, {2, 3});
  auto grad = [&](bool detach_dead) {
    Tape tape;
    const Tensor w = tape.variable(w0);
    const Tensor h = matmul(x0, w);
    Tensor dead = gelu(h);  // never reaches the loss
    if (detach_dead) dead = detach(dead);
    (void)dead;
    const Tensor wrt[] = {w};
    return tape.backward(sum(mul(h, h)), wrt)[0];
  };
  EXPECT_EQ(grad(false), grad(true));
}

TEST(TapePropertyTest, RepeatedBackwardIsBitIdentical) {
  Rng rng(8);
  Tape tape;
  const Tensor w = tape.variable(random_tensor(rng, {4, 4}));
  const Tensor x = random_tensor(rng, {3, 4});
  const Tensor loss = sum(softmax(matmul(gelu(matmul(x, w)), w)));
  const Tensor wrt[] = {w};
  const auto a = tape.backward(loss, wrt), b = tape.backward(loss, wrt);
  EXPECT_EQ(std::memcmp(a[0].data(), b[0].data(), a[0].size() * sizeof(double)), 0);
}

TEST(TapePropertyTest, GradientOfSumIsSumOfGradients) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tape tape;
    const Tensor w = tape.variable(random_tensor(rng, {3, 3}));
    const Tensor x1 = random_tensor(rng, {2, 3}), x2 = random_tensor(rng, {2, 3});
    const Tensor j1 = sum(gelu(matmul(x1, w))), j2 = mean(softmax(matmul(x2, w)));
    const Tensor wrt[] = {w};
    const auto g1 = tape.backward(j1, wrt), g2 = tape.backward(j2, wrt);
    const auto g12 = tape.backward(add(j1, j2), wrt);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(g12[0][i], g1[0][i] + g2[0][i], 1e-12);
  }
}

TEST(TapePropertyTest, BackwardTouchesOnlyAncestors) {
  Tape tape;
  const Tensor a = tape.variable(Tensor({2}, {1, 2}));
  const Tensor b = tape.variable(Tensor({2}, {3, 4}));
  const Tensor ja = sum(a);
  const Tensor jb = sum(mul(b, b));  // recorded after ja, not an ancestor of it
  (void)jb;
  const Tensor wrt[] = {a, b};
  const auto g = tape.backward(ja, wrt);
  EXPECT_EQ(g[0], Buffer(2, 1.0));
  EXPECT_EQ(g[1], Buffer(2, 0.0));
}

class RelayTest : public ::testing::Test {
 protected:
  // m = x W on the relay's own tape; downstream losses see m as a leaf.
  void SetUp() override {
    Rng rng(42);
    x_ = random_tensor(rng, {2, 3});
    w_value_ = random_tensor(rng, {3, 3});
    tape_ = std::make_shared<Tape>();
    w_ = tape_->variable(w_value_);
    m_ = matmul(x_, w_);
  }

  Tensor x_, w_value_, w_, m_;
  std::shared_ptr<Tape> tape_;
};

TEST_F(RelayTest, ZeroAccumulationLeavesGradientUnchanged) {
  RelayNode relay(tape_, {m_});
  std::vector<Buffer> grad = {Buffer(9, 0.5)};
  const Tensor wrt[] = {w_};
  flush_relay(relay, wrt, grad);
  EXPECT_EQ(grad[0], Buffer(9, 0.5));
  EXPECT_TRUE(relay.flushed());
}

TEST_F(RelayTest, DoubleFlushAndReleasedActivationsFail) {
  RelayNode relay(tape_, {m_});
  std::vector<Buffer> grad = {Buffer(9, 0.0)};
  const Tensor wrt[] = {w_};
  relay.flush(wrt, grad);
  EXPECT_THROW(relay.flush(wrt, grad), TapeError);
  EXPECT_THROW(relay.accumulate(0, Buffer(6, 1.0)), TapeError);

  RelayNode released(tape_, {m_});
  released.release();
  EXPECT_THROW(released.flush(wrt, grad), TapeError);
}

TEST_F(RelayTest, FlushOfSummedLossGradientsMatchesDense) {
  // Three downstream losses J_j(m); the relay sums dJ_j/dm then flushes once.
  Rng rng(7);
  std::vector<Tensor> probes;
  for (int j = 0; j < 3; ++j) probes.push_back(random_tensor(rng, {2, 3}));
  auto loss_j = [&](const Tensor& m, int j) { return sum(mul(gelu(m), probes[j])); };

  RelayNode relay(tape_, {m_});
  for (int j = 0; j < 3; ++j) {
    Tape downstream;
    const Tensor leaf = downstream.variable(detach(m_));
    const Tensor wrt[] = {leaf};
    relay.accumulate(0, downstream.backward(loss_j(leaf, j), wrt)[0]);
  }
  std::vector<Buffer> relayed = {Buffer(9, 0.0)};
  const Tensor wrt[] = {w_};
  relay.flush(wrt, relayed);

  Tape dense;
  const Tensor w = dense.variable(w_value_);
  const Tensor m = matmul(x_, w);
  const Tensor total = add(add(loss_j(m, 0), loss_j(m, 1)), loss_j(m, 2));
  const Tensor dwrt[] = {w};
  const auto expected = dense.backward(total, dwrt);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(relayed[0][i], expected[0][i], 1e-9);
}

}  // namespace
}  // namespace segkv::ad
