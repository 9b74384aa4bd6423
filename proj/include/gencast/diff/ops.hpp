#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gencast/diff/tape.hpp"

// Differentiable primitives. Every function records exactly one node on the
// tape of its operands; all operands must live on the same tape.
namespace gencast::diff {

// Elementwise binary ops on equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);

Var scale(const Var& x, double factor);
Var add_scalar(const Var& x, double c);
Var neg(const Var& x);

// Elementwise nonlinearities. relu'(0) is taken as 0.
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var sin(const Var& x);
Var cos(const Var& x);
Var sqrt(const Var& x);
Var square(const Var& x);

/// Huber penalty per entry: r^2/2 when |r| <= delta, delta*(|r| - delta/2) otherwise.
Var huber_elementwise(const Var& r, double delta);

/// Numpy-style broadcast (trailing-aligned); the adjoint sums over expanded axes.
Var broadcast_to(const Var& x, const Shape& shape);
Var reshape(const Var& x, const Shape& shape);
Var permute(const Var& x, std::span<const std::size_t> perm);
Var permute(const Var& x, std::initializer_list<std::size_t> perm);

/// x[..., K] * w[K, P] (+ bias[P] when bias is valid).
Var linear(const Var& x, const Var& w, const Var& bias = Var{});
/// 2-D matrix product a[M, K] * b[K, P].
Var matmul(const Var& a, const Var& b);
/// Batched product a[G, M, K] * b[G, K, P].
Var bmm(const Var& a, const Var& b);

/// Softmax over the last axis, computed with max subtraction.
Var softmax(const Var& x);

Var concat(std::span<const Var> xs, std::size_t axis);
Var concat(std::initializer_list<Var> xs, std::size_t axis);
/// Selects entries along `axis` by index (the gather primitive).
Var index_select(const Var& x, std::size_t axis, std::span<const std::size_t> index);
Var index_select(const Var& x, std::size_t axis, std::initializer_list<std::size_t> index);

Var sum(const Var& x);
Var mean(const Var& x);
/// Reduces `axis` away.
Var sum_axis(const Var& x, std::size_t axis);
Var mean_axis(const Var& x, std::size_t axis);

/// Causal dilated 1-D convolution along time.
/// x[B, T, N, Cin], w[K, Cin, Cout], bias[Cout]; tap j reads x at t - j*dilation.
Var causal_conv1d(const Var& x, const Var& w, const Var& bias, std::size_t dilation);

/// out[..., i, :] = sum_j a[i, j] * x[..., j, :] for a constant matrix a[N, N].
Var node_mix(const Tensor& a, const Var& x);

/// Pairwise Euclidean distances: z[G, M, d], c[G, K, d] -> [G, M, K].
/// The derivative at zero distance is taken as 0.
Var cdist(const Var& z, const Var& c);

}  // namespace gencast::diff
