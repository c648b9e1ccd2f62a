#pragma once

#include <cstdint>
#include <span>

#include "tcan/tensor.hpp"

// Differentiable primitives. Every op validates shapes, rejects non-finite
// results with NumericError, and records a backward rule on the current
// GradTape when an input requires grad and grad mode is enabled.
namespace tcan {

// [m,n] x [n,p] -> [m,p]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m,n] -> [n,m]
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// x: [T,V], bias: [V]; adds bias to every row.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

Tensor sum(const Tensor& a);   // scalar
Tensor mean(const Tensor& a);  // scalar

Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // exact erf form

// Softmax along `axis` with max subtraction. -inf entries get weight 0; a
// slice that is entirely -inf raises NumericError.
Tensor softmax_over_axis(const Tensor& x, std::size_t axis);

// x: [C_in, T], kernel: [C_out, C_in, k]. Tap k-1 reads time t, tap j reads
// t - (k-1-j)*dilation; reads before time 0 see zero padding.
Tensor causal_dilated_conv1d(const Tensor& x, const Tensor& kernel, std::size_t dilation);

// table: [V, D] -> [ids.size(), D]
Tensor embedding_gather(const Tensor& table, std::span<const int> ids);

// Mean over rows of -log softmax(logits)[t, targets[t]], via log-sum-exp.
Tensor cross_entropy_logits(const Tensor& logits, std::span<const int> targets);

// Inverted dropout. rate == 0 returns the input unchanged.
Tensor dropout(const Tensor& x, double rate, std::uint64_t seed);

}  // namespace tcan
