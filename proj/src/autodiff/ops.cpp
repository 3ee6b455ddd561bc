// SPDX-License-Identifier: Apache-2.0

#include "segkv/autodiff/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace segkv::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
  }
}

// Rows x last-axis view of any tensor of rank >= 1.
std::pair<std::size_t, std::size_t> row_view(const char* op, const Tensor& t) {
  if (t.rank() == 0) throw ShapeError(std::string(op) + ": scalar input");
  const std::size_t cols = t.shape().back();
  return {cols ? t.numel() / cols : 0, cols};
}

Tensor record1(const char* op, Tensor out, const Tensor& a, BackwardFn fn) {
  const Tensor in[] = {a};
  return Tape::record(op, std::move(out), in, std::move(fn));
}

Tensor record2(const char* op, Tensor out, const Tensor& a, const Tensor& b, BackwardFn fn) {
  const Tensor in[] = {a, b};
  return Tape::record(op, std::move(out), in, std::move(fn));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) shape_fail("matmul", a.shape(), b.shape());
  Buffer out(m * n);
  MMap(out.data(), m, n).noalias() = CMap(a.data(), m, k) * CMap(b.data(), k, n);
  return record2("matmul", Tensor({m, n}, std::move(out)), a, b,
                 [a, b, m, k, n](std::span<const double> g, std::span<Buffer*> gin) {
                   CMap gm(g.data(), m, n);
                   if (gin[0]) MMap(gin[0]->data(), m, k).noalias() += gm * CMap(b.data(), k, n).transpose();
                   if (gin[1]) MMap(gin[1]->data(), k, n).noalias() += CMap(a.data(), m, k).transpose() * gm;
                 });
}

Tensor transpose(const Tensor& a) {
  require_rank2("transpose", a);
  const std::size_t m = a.rows(), n = a.cols();
  Buffer out(m * n);
  MMap(out.data(), n, m) = CMap(a.data(), m, n).transpose();
  return record1("transpose", Tensor({n, m}, std::move(out)), a,
                 [m, n](std::span<const double> g, std::span<Buffer*> gin) {
                   MMap(gin[0]->data(), m, n) += CMap(g.data(), n, m).transpose();
                 });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) shape_fail("reshape", a.shape(), shape);
  Buffer out(a.values().begin(), a.values().end());
  return record1("reshape", Tensor(std::move(shape), std::move(out)), a,
                 [](std::span<const double> g, std::span<Buffer*> gin) {
                   for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                 });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    Buffer out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return record2("add", Tensor(a.shape(), std::move(out)), a, b,
                   [](std::span<const double> g, std::span<Buffer*> gin) {
                     for (Buffer* slot : gin) {
                       if (!slot) continue;
                       for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
                     }
                   });
  }
  if (b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.numel()) {
    const auto [rows, cols] = row_view("add", a);
    Buffer out(a.numel());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = a[r * cols + c] + b[c];
    return record2("add_bias", Tensor(a.shape(), std::move(out)), a, b,
                   [rows, cols](std::span<const double> g, std::span<Buffer*> gin) {
                     if (gin[0])
                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                     if (gin[1])
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < cols; ++c) (*gin[1])[c] += g[r * cols + c];
                   });
  }
  shape_fail("add", a.shape(), b.shape());
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("sub", a.shape(), b.shape());
  Buffer out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return record2("sub", Tensor(a.shape(), std::move(out)), a, b,
                 [](std::span<const double> g, std::span<Buffer*> gin) {
                   if (gin[0])
                     for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                   if (gin[1])
                     for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
  Buffer out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return record2("mul", Tensor(a.shape(), std::move(out)), a, b,
                 [a, b](std::span<const double> g, std::span<Buffer*> gin) {
                   if (gin[0])
                     for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * b[i];
                   if (gin[1])
                     for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * a[i];
                 });
}

Tensor scale(const Tensor& a, double factor) {
  Buffer out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return record1("scale", Tensor(a.shape(), std::move(out)), a,
                 [factor](std::span<const double> g, std::span<Buffer*> gin) {
                   for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * factor;
                 });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return record1("sum", Tensor::scalar(s), a,
                 [](std::span<const double> g, std::span<Buffer*> gin) {
                   for (double& v : *gin[0]) v += g[0];
                 });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor " + shape_str(a.shape()));
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor softmax(const Tensor& a) {
  const auto [rows, cols] = row_view("softmax", a);
  Buffer out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data() + r * cols;
    double* y = out.data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
  }
  Tensor result(a.shape(), std::move(out));
  return record1("softmax", result, a,
                 [result, rows, cols](std::span<const double> g, std::span<Buffer*> gin) {
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* y = result.data() + r * cols;
                     const double* gr = g.data() + r * cols;
                     double dot = 0.0;
                     for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * y[c];
                     double* dst = gin[0]->data() + r * cols;
                     for (std::size_t c = 0; c < cols; ++c) dst[c] += y[c] * (gr[c] - dot);
                   }
                 });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const auto [rows, cols] = row_view("layer_norm", x);
  if (gain.rank() != 1 || gain.numel() != cols) shape_fail("layer_norm", x.shape(), gain.shape());
  if (bias.rank() != 1 || bias.numel() != cols) shape_fail("layer_norm", x.shape(), bias.shape());
  Buffer xhat(x.numel()), rstd(rows), out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(cols);
    rstd[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (xr[c] - mu) * rstd[r];
      xhat[r * cols + c] = h;
      out[r * cols + c] = h * gain[c] + bias[c];
    }
  }
  const Tensor in[] = {x, gain, bias};
  return Tape::record(
      "layer_norm", Tensor(x.shape(), std::move(out)), in,
      [xhat = std::move(xhat), rstd = std::move(rstd), gain, rows, cols](
          std::span<const double> g, std::span<Buffer*> gin) {
        const double n = static_cast<double>(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g.data() + r * cols;
          const double* hr = xhat.data() + r * cols;
          if (gin[1])
            for (std::size_t c = 0; c < cols; ++c) (*gin[1])[c] += gr[c] * hr[c];
          if (gin[2])
            for (std::size_t c = 0; c < cols; ++c) (*gin[2])[c] += gr[c];
          if (!gin[0]) continue;
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            const double dh = gr[c] * gain[c];
            m1 += dh;
            m2 += dh * hr[c];
          }
          m1 /= n;
          m2 /= n;
          double* dst = gin[0]->data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) {
            dst[c] += rstd[r] * (gr[c] * gain[c] - m1 - hr[c] * m2);
          }
        }
      });
}

Tensor gelu(const Tensor& a) {
  Buffer out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(kGeluSqrt2OverPi * (x + kGeluCubic * x * x * x)));
  }
  return record1("gelu", Tensor(a.shape(), std::move(out)), a,
                 [a](std::span<const double> g, std::span<Buffer*> gin) {
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     const double x = a[i];
                     const double t = std::tanh(kGeluSqrt2OverPi * (x + kGeluCubic * x * x * x));
                     const double du = kGeluSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * x * x);
                     (*gin[0])[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
                   }
                 });
}

Tensor relu(const Tensor& a) {
  Buffer out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  return record1("relu", Tensor(a.shape(), std::move(out)), a,
                 [a](std::span<const double> g, std::span<Buffer*> gin) {
                   for (std::size_t i = 0; i < g.size(); ++i)
                     if (a[i] > 0.0) (*gin[0])[i] += g[i];
                 });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_rank2("embedding", table);
  const std::size_t vocab = table.rows(), d = table.cols();
  std::vector<int> idx(ids.begin(), ids.end());
  Buffer out(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= vocab) {
      throw ShapeError("embedding: token id " + std::to_string(idx[r]) +
                       " out of range for vocabulary of " + std::to_string(vocab));
    }
    std::copy_n(table.data() + idx[r] * d, d, out.data() + r * d);
  }
  const std::size_t n = idx.size();
  return record1("embedding", Tensor({n, d}, std::move(out)), table,
                 [idx = std::move(idx), d](std::span<const double> g, std::span<Buffer*> gin) {
                   for (std::size_t r = 0; r < idx.size(); ++r)
                     for (std::size_t c = 0; c < d; ++c) (*gin[0])[idx[r] * d + c] += g[r * d + c];
                 });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  require_rank2("slice_rows", a);
  const std::size_t cols = a.cols();
  if (begin + count > a.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " + shape_str(a.shape()));
  }
  Buffer out(a.data() + begin * cols, a.data() + (begin + count) * cols);
  return record1("slice_rows", Tensor({count, cols}, std::move(out)), a,
                 [begin, cols](std::span<const double> g, std::span<Buffer*> gin) {
                   double* dst = gin[0]->data() + begin * cols;
                   for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                 });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  require_rank2("slice_cols", a);
  const std::size_t rows = a.rows(), cols = a.cols();
  if (begin + count > cols) {
    throw ShapeError("slice_cols: cols [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " + shape_str(a.shape()));
  }
  Buffer out(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(a.data() + r * cols + begin, count, out.data() + r * count);
  return record1("slice_cols", Tensor({rows, count}, std::move(out)), a,
                 [rows, cols, begin, count](std::span<const double> g, std::span<Buffer*> gin) {
                   for (std::size_t r = 0; r < rows; ++r)
                     for (std::size_t c = 0; c < count; ++c)
                       (*gin[0])[r * cols + begin + c] += g[r * count + c];
                 });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis == 0) {
    if (first.empty()) throw ShapeError("concat: scalar input");
    Shape out_shape = first;
    out_shape[0] = 0;
    for (const auto& p : parts) {
      if (p.rank() != first.size() ||
          !std::equal(p.shape().begin() + 1, p.shape().end(), first.begin() + 1)) {
        shape_fail("concat", first, p.shape());
      }
      out_shape[0] += p.shape()[0];
    }
    Buffer out;
    out.reserve(shape_numel(out_shape));
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
      out.insert(out.end(), p.values().begin(), p.values().end());
      sizes.push_back(p.numel());
    }
    return Tape::record("concat", Tensor(std::move(out_shape), std::move(out)), parts,
                        [sizes](std::span<const double> g, std::span<Buffer*> gin) {
                          std::size_t off = 0;
                          for (std::size_t k = 0; k < sizes.size(); ++k) {
                            if (gin[k])
                              for (std::size_t i = 0; i < sizes[k]; ++i) (*gin[k])[i] += g[off + i];
                            off += sizes[k];
                          }
                        });
  }
  if (axis == 1) {
    std::size_t rows = 0, total = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
      require_rank2("concat", p);
      if (widths.empty()) rows = p.rows();
      if (p.rows() != rows) shape_fail("concat", first, p.shape());
      widths.push_back(p.cols());
      total += p.cols();
    }
    Buffer out(rows * total);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(parts[k].data() + r * widths[k], widths[k], out.data() + r * total + off);
      off += widths[k];
    }
    return Tape::record("concat", Tensor({rows, total}, std::move(out)), parts,
                        [widths, rows, total](std::span<const double> g, std::span<Buffer*> gin) {
                          std::size_t off = 0;
                          for (std::size_t k = 0; k < widths.size(); ++k) {
                            if (gin[k])
                              for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t c = 0; c < widths[k]; ++c)
                                  (*gin[k])[r * widths[k] + c] += g[r * total + off + c];
                            off += widths[k];
                          }
                        });
  }
  throw ShapeError("concat: unsupported axis " + std::to_string(axis));
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_rank2("cross_entropy", logits);
  const std::size_t rows = logits.rows(), vocab = logits.cols();
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  std::size_t scored = 0;
  for (int t : tgt) {
    if (t >= 0 && static_cast<std::size_t>(t) >= vocab) {
      throw ShapeError("cross_entropy: target " + std::to_string(t) + " out of range for " +
                       shape_str(logits.shape()));
    }
    if (t >= 0) ++scored;
  }
  Buffer probs(logits.numel(), 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (tgt[r] < 0) continue;
    const double* x = logits.data() + r * vocab;
    double* p = probs.data() + r * vocab;
    const double mx = *std::max_element(x, x + vocab);
    double z = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) z += (p[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < vocab; ++c) p[c] /= z;
    total += -(x[tgt[r]] - mx - std::log(z));
  }
  const double inv = scored ? 1.0 / static_cast<double>(scored) : 0.0;
  return record1("cross_entropy", Tensor::scalar(total * inv), logits,
                 [probs = std::move(probs), tgt = std::move(tgt), vocab, inv](
                     std::span<const double> g, std::span<Buffer*> gin) {
                   for (std::size_t r = 0; r < tgt.size(); ++r) {
                     if (tgt[r] < 0) continue;
                     double* dst = gin[0]->data() + r * vocab;
                     const double* p = probs.data() + r * vocab;
                     for (std::size_t c = 0; c < vocab; ++c) dst[c] += g[0] * inv * p[c];
                     dst[tgt[r]] -= g[0] * inv;
                   }
                 });
}

Tensor rope(const Tensor& x, std::size_t heads, std::span<const std::size_t> positions,
            double base) {
  require_rank2("rope", x);
  const std::size_t rows = x.rows(), d = x.cols();
  if (heads == 0 || d % heads != 0 || (d / heads) % 2 != 0) {
    throw ShapeError("rope: width " + std::to_string(d) + " cannot be split into " +
                     std::to_string(heads) + " even-width heads");
  }
  if (positions.size() != rows) {
    throw ShapeError("rope: " + std::to_string(positions.size()) + " positions for " +
                     shape_str(x.shape()));
  }
  const std::size_t dh = d / heads, half = dh / 2;
  Buffer cosv(rows * half), sinv(rows * half);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dh));
      const double ang = static_cast<double>(positions[r]) * freq;
      cosv[r * half + i] = std::cos(ang);
      sinv[r * half + i] = std::sin(ang);
    }
  Buffer out(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < half; ++i) {
        const std::size_t j0 = r * d + h * dh + 2 * i;
        const double c = cosv[r * half + i], s = sinv[r * half + i];
        out[j0] = x[j0] * c - x[j0 + 1] * s;
        out[j0 + 1] = x[j0] * s + x[j0 + 1] * c;
      }
  return record1("rope", Tensor(x.shape(), std::move(out)), x,
                 [cosv = std::move(cosv), sinv = std::move(sinv), rows, heads, d, dh, half](
                     std::span<const double> g, std::span<Buffer*> gin) {
                   for (std::size_t r = 0; r < rows; ++r)
                     for (std::size_t h = 0; h < heads; ++h)
                       for (std::size_t i = 0; i < half; ++i) {
                         const std::size_t j0 = r * d + h * dh + 2 * i;
                         const double c = cosv[r * half + i], s = sinv[r * half + i];
                         (*gin[0])[j0] += g[j0] * c + g[j0 + 1] * s;
                         (*gin[0])[j0 + 1] += -g[j0] * s + g[j0 + 1] * c;
                       }
                 });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 std::size_t visible_offset) {
  require_rank2("attention", q);
  require_rank2("attention", k);
  require_rank2("attention", v);
  const std::size_t t_len = q.rows(), s_len = k.rows(), d = q.cols();
  if (k.cols() != d || v.cols() != d || v.rows() != s_len) shape_fail("attention", q.shape(), k.shape());
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs[h] is (T, S); masked entries are exactly zero.
  Buffer probs(heads * t_len * s_len, 0.0);
  Buffer out(t_len * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    double* ph = probs.data() + h * t_len * s_len;
    for (std::size_t t = 0; t < t_len; ++t) {
      const std::size_t visible = std::min(s_len, visible_offset + t + 1);
      if (visible == 0) continue;
      double* prow = ph + t * s_len;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s < visible; ++s) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dh; ++c) dot += q[t * d + h * dh + c] * k[s * d + h * dh + c];
        prow[s] = dot * inv_sqrt;
        mx = std::max(mx, prow[s]);
      }
      double z = 0.0;
      for (std::size_t s = 0; s < visible; ++s) z += (prow[s] = std::exp(prow[s] - mx));
      for (std::size_t s = 0; s < visible; ++s) {
        prow[s] /= z;
        for (std::size_t c = 0; c < dh; ++c) out[t * d + h * dh + c] += prow[s] * v[s * d + h * dh + c];
      }
    }
  }
  const Tensor in[] = {q, k, v};
  return Tape::record(
      "attention", Tensor({t_len, d}, std::move(out)), in,
      [q, k, v, probs = std::move(probs), heads, t_len, s_len, d, dh, inv_sqrt](
          std::span<const double> g, std::span<Buffer*> gin) {
        Buffer dp(s_len);
        for (std::size_t h = 0; h < heads; ++h) {
          const double* ph = probs.data() + h * t_len * s_len;
          for (std::size_t t = 0; t < t_len; ++t) {
            const double* prow = ph + t * s_len;
            const double* gt = g.data() + t * d + h * dh;
            double dot = 0.0;
            for (std::size_t s = 0; s < s_len; ++s) {
              if (prow[s] == 0.0) {
                dp[s] = 0.0;
                continue;
              }
              double acc = 0.0;
              for (std::size_t c = 0; c < dh; ++c) acc += gt[c] * v[s * d + h * dh + c];
              dp[s] = acc;
              dot += acc * prow[s];
              if (gin[2])
                for (std::size_t c = 0; c < dh; ++c) (*gin[2])[s * d + h * dh + c] += prow[s] * gt[c];
            }
            for (std::size_t s = 0; s < s_len; ++s) {
              if (prow[s] == 0.0) continue;
              const double ds = prow[s] * (dp[s] - dot) * inv_sqrt;
              if (gin[0])
                for (std::size_t c = 0; c < dh; ++c) (*gin[0])[t * d + h * dh + c] += ds * k[s * d + h * dh + c];
              if (gin[1])
                for (std::size_t c = 0; c < dh; ++c) (*gin[1])[s * d + h * dh + c] += ds * q[t * d + h * dh + c];
            }
          }
        }
      });
}

}  // namespace segkv::ad
