#include "tcan/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "tcan/errors.hpp"
#include "tcan/random.hpp"

namespace tcan {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined input");
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// out[m,p] += a[m,n] * b[n,p]
void gemm_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t n,
              std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    double* out_row = out + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a[i * n + k];
      if (aik == 0.0) continue;
      const double* b_row = b + k * p;
      for (std::size_t j = 0; j < p; ++j) out_row[j] += aik * b_row[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
  if (b.dim(0) != n) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * p, 0.0);
  gemm_acc(a.data().data(), b.data().data(), out.data(), m, n, p);
  Tensor result = make_result({m, p}, std::move(out), {a, b}, "matmul");
  record_backward(result, [a, b, m, n, p](std::span<const double>, std::span<const double> g) mutable {
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    if (a.requires_grad()) {
      double* ga = a.grad_accumulator().data();
      // dA[i,k] += sum_j g[i,j] * b[k,j]
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
          double acc = 0.0;
          for (std::size_t j = 0; j < p; ++j) acc += g[i * p + j] * bd[k * p + j];
          ga[i * n + k] += acc;
        }
      }
    }
    if (b.requires_grad()) {
      double* gb = b.grad_accumulator().data();
      // dB[k,j] += sum_i a[i,k] * g[i,j]
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
          const double aik = ad[i * n + k];
          if (aik == 0.0) continue;
          for (std::size_t j = 0; j < p; ++j) gb[k * p + j] += aik * g[i * p + j];
        }
      }
    }
  });
  return result;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  auto ad = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ad[i * n + j];
  Tensor result = make_result({n, m}, std::move(out), {a}, "transpose");
  record_backward(result, [a, m, n](std::span<const double>, std::span<const double> g) mutable {
    auto ga = a.grad_accumulator();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto ad = a.data(), bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  Tensor result = make_result(a.shape(), std::move(out), {a, b}, "add");
  record_backward(result, [a, b](std::span<const double>, std::span<const double> g) mutable {
    if (a.requires_grad()) {
      auto ga = a.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto ad = a.data(), bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  Tensor result = make_result(a.shape(), std::move(out), {a, b}, "sub");
  record_backward(result, [a, b](std::span<const double>, std::span<const double> g) mutable {
    if (a.requires_grad()) {
      auto ga = a.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto ad = a.data(), bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  Tensor result = make_result(a.shape(), std::move(out), {a, b}, "mul");
  record_backward(result, [a, b](std::span<const double>, std::span<const double> g) mutable {
    auto ad = a.data(), bd = b.data();
    if (a.requires_grad()) {
      auto ga = a.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
    }
  });
  return result;
}

Tensor scale(const Tensor& a, double factor) {
  auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * factor;
  Tensor result = make_result(a.shape(), std::move(out), {a}, "scale");
  record_backward(result, [a, factor](std::span<const double>, std::span<const double> g) mutable {
    auto ga = a.grad_accumulator();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
  return result;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_row_bias");
  require_rank(bias, 1, "add_row_bias");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (bias.dim(0) != cols) {
    throw ShapeError("add_row_bias: bias " + shape_str(bias.shape()) + " vs " + shape_str(x.shape()));
  }
  auto xd = x.data(), bd = bias.data();
  std::vector<double> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xd[r * cols + c] + bd[c];
  Tensor result = make_result(x.shape(), std::move(out), {x, bias}, "add_row_bias");
  record_backward(result, [x, bias, rows, cols](std::span<const double>,
                                                std::span<const double> g) mutable {
    if (x.requires_grad()) {
      auto gx = x.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      auto gb = bias.grad_accumulator();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
    }
  });
  return result;
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double x : a.data()) total += x;
  Tensor result = make_result({}, {total}, {a}, "sum");
  record_backward(result, [a](std::span<const double>, std::span<const double> g) mutable {
    for (double& x : a.grad_accumulator()) x += g[0];
  });
  return result;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor relu(const Tensor& a) {
  auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] > 0.0 ? ad[i] : 0.0;
  Tensor result = make_result(a.shape(), std::move(out), {a}, "relu");
  record_backward(result, [a](std::span<const double>, std::span<const double> g) mutable {
    auto ad = a.data();
    auto ga = a.grad_accumulator();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (ad[i] > 0.0) ga[i] += g[i];
  });
  return result;
}

Tensor gelu(const Tensor& a) {
  auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 0.5 * ad[i] * (1.0 + std::erf(ad[i] * std::numbers::sqrt2 / 2.0));
  Tensor result = make_result(a.shape(), std::move(out), {a}, "gelu");
  record_backward(result, [a](std::span<const double>, std::span<const double> g) mutable {
    auto ad = a.data();
    auto ga = a.grad_accumulator();
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = ad[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      ga[i] += g[i] * (cdf + x * pdf);
    }
  });
  return result;
}

Tensor softmax_over_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax_over_axis: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(x.shape()));
  }
  const Shape& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];

  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < n; ++r) peak = std::max(peak, xd[base + r * inner]);
      if (!std::isfinite(peak)) {
        throw NumericError("softmax_over_axis: slice has no finite entry");
      }
      double denom = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        const double e = std::exp(xd[base + r * inner] - peak);
        out[base + r * inner] = e;
        denom += e;
      }
      for (std::size_t r = 0; r < n; ++r) out[base + r * inner] /= denom;
    }
  }
  Tensor result = make_result(shape, std::move(out), {x}, "softmax_over_axis");
  record_backward(result, [x, outer, inner, n](std::span<const double> y,
                                               std::span<const double> g) mutable {
    auto gx = x.grad_accumulator();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t r = 0; r < n; ++r) dot += g[base + r * inner] * y[base + r * inner];
        for (std::size_t r = 0; r < n; ++r) {
          const std::size_t idx = base + r * inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
  return result;
}

Tensor causal_dilated_conv1d(const Tensor& x, const Tensor& kernel, std::size_t dilation) {
  require_rank(x, 2, "causal_dilated_conv1d");
  require_rank(kernel, 3, "causal_dilated_conv1d");
  if (dilation < 1) throw ShapeError("causal_dilated_conv1d: dilation must be >= 1");
  const std::size_t c_in = x.dim(0), steps = x.dim(1);
  const std::size_t c_out = kernel.dim(0), taps = kernel.dim(2);
  if (kernel.dim(1) != c_in) {
    throw ShapeError("causal_dilated_conv1d: kernel " + shape_str(kernel.shape()) +
                     " does not match input channels " + std::to_string(c_in));
  }
  auto xd = x.data();
  auto kd = kernel.data();
  std::vector<double> out(c_out * steps, 0.0);
  for (std::size_t o = 0; o < c_out; ++o) {
    double* out_row = out.data() + o * steps;
    for (std::size_t c = 0; c < c_in; ++c) {
      const double* x_row = xd.data() + c * steps;
      for (std::size_t j = 0; j < taps; ++j) {
        const double w = kd[(o * c_in + c) * taps + j];
        const std::size_t shift = (taps - 1 - j) * dilation;
        if (w == 0.0 || shift >= steps) continue;
        for (std::size_t t = shift; t < steps; ++t) out_row[t] += w * x_row[t - shift];
      }
    }
  }
  Tensor result = make_result({c_out, steps}, std::move(out), {x, kernel}, "causal_dilated_conv1d");
  record_backward(result, [x, kernel, c_in, c_out, steps, taps, dilation](
                              std::span<const double>, std::span<const double> g) mutable {
    auto xd = x.data();
    auto kd = kernel.data();
    double* gx = x.requires_grad() ? x.grad_accumulator().data() : nullptr;
    double* gk = kernel.requires_grad() ? kernel.grad_accumulator().data() : nullptr;
    for (std::size_t o = 0; o < c_out; ++o) {
      const double* g_row = g.data() + o * steps;
      for (std::size_t c = 0; c < c_in; ++c) {
        const double* x_row = xd.data() + c * steps;
        for (std::size_t j = 0; j < taps; ++j) {
          const std::size_t shift = (taps - 1 - j) * dilation;
          if (shift >= steps) continue;
          const std::size_t widx = (o * c_in + c) * taps + j;
          if (gx) {
            const double w = kd[widx];
            double* gx_row = gx + c * steps;
            for (std::size_t t = shift; t < steps; ++t) gx_row[t - shift] += w * g_row[t];
          }
          if (gk) {
            double acc = 0.0;
            for (std::size_t t = shift; t < steps; ++t) acc += g_row[t] * x_row[t - shift];
            gk[widx] += acc;
          }
        }
      }
    }
  });
  return result;
}

Tensor embedding_gather(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "embedding_gather");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  if (ids.empty()) throw ShapeError("embedding_gather: empty id list");
  std::vector<int> rows(ids.begin(), ids.end());
  auto td = table.data();
  std::vector<double> out(rows.size() * width);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t] < 0 || static_cast<std::size_t>(rows[t]) >= vocab) {
      throw IndexError("embedding_gather: id " + std::to_string(rows[t]) + " outside [0, " +
                       std::to_string(vocab) + ")");
    }
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(rows[t] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(t * width));
  }
  Tensor result = make_result({rows.size(), width}, std::move(out), {table}, "embedding_gather");
  record_backward(result, [table, rows = std::move(rows), width](std::span<const double>,
                                                                 std::span<const double> g) mutable {
    auto gt = table.grad_accumulator();
    for (std::size_t t = 0; t < rows.size(); ++t)
      for (std::size_t d = 0; d < width; ++d) gt[rows[t] * width + d] += g[t * width + d];
  });
  return result;
}

Tensor cross_entropy_logits(const Tensor& logits, std::span<const int> targets) {
  require_rank(logits, 2, "cross_entropy_logits");
  const std::size_t steps = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != steps) {
    throw ShapeError("cross_entropy_logits: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(steps) + " rows");
  }
  auto ld = logits.data();
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<double> probs(ld.size());
  double total = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    if (tgt[t] < 0 || static_cast<std::size_t>(tgt[t]) >= vocab) {
      throw IndexError("cross_entropy_logits: target " + std::to_string(tgt[t]) + " outside [0, " +
                       std::to_string(vocab) + ")");
    }
    const double* row = ld.data() + t * vocab;
    const double peak = *std::max_element(row, row + vocab);
    double denom = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) {
      probs[t * vocab + v] = std::exp(row[v] - peak);
      denom += probs[t * vocab + v];
    }
    for (std::size_t v = 0; v < vocab; ++v) probs[t * vocab + v] /= denom;
    total += (peak + std::log(denom)) - row[tgt[t]];
  }
  const double inv_steps = 1.0 / static_cast<double>(steps);
  Tensor result = make_result({}, {total * inv_steps}, {logits}, "cross_entropy_logits");
  record_backward(result, [logits, probs = std::move(probs), tgt = std::move(tgt), vocab,
                           inv_steps](std::span<const double>, std::span<const double> g) mutable {
    auto gl = logits.grad_accumulator();
    const double coeff = g[0] * inv_steps;
    for (std::size_t t = 0; t < tgt.size(); ++t) {
      for (std::size_t v = 0; v < vocab; ++v) gl[t * vocab + v] += coeff * probs[t * vocab + v];
      gl[t * vocab + tgt[t]] -= coeff;
    }
  });
  return result;
}

Tensor dropout(const Tensor& x, double rate, std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  std::mt19937_64 gen(splitmix64(seed));
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = unit_uniform(gen) >= rate ? keep_scale : 0.0;
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
  Tensor result = make_result(x.shape(), std::move(out), {x}, "dropout");
  record_backward(result, [x, mask = std::move(mask)](std::span<const double>,
                                                      std::span<const double> g) mutable {
    auto gx = x.grad_accumulator();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
  return result;
}

}  // namespace tcan
