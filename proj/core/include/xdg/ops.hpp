#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "xdg/autodiff.hpp"

namespace xdg {

// Elementwise. Binary ops require identical shapes (no broadcasting).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
/// Natural log; inputs must be positive.
Var log(const Var& a);
Var square(const Var& a);

// Reductions to a scalar of shape [1].
Var sum(const Var& a);
Var mean(const Var& a);
/// Sum of a list of scalars.
Var add_n(std::span<const Var> terms);

// Shape manipulation.
Var reshape(const Var& a, Shape shape);
Var slice0(const Var& a, std::size_t begin, std::size_t end);
Var concat0(std::span<const Var> parts);
/// Selected entries of the flattened input, as a vector.
Var gather(const Var& a, std::span<const std::size_t> flat_index);
Var transpose(const Var& a);
/// [B,K,H,W] -> [B*H*W, K]: one row per spatial location, channels last.
Var nchw_to_rows(const Var& a);

// Linear algebra.
Var matmul(const Var& a, const Var& b);
/// x[B,in] * W[out,in]^T + b[out]; `bias` may be undefined.
Var linear(const Var& x, const Var& weight, const Var& bias);

/// Cross-correlation of x[B,C,H,W] with kernels[K,C,kh,kw]; `bias` [K] may be undefined.
Var conv2d(const Var& x, const Var& kernels, const Var& bias, std::size_t stride, std::size_t pad);
/// 2x2 max pooling, stride 2, floor semantics.
Var maxpool2(const Var& x);
/// 2x2 average pooling, stride 2, floor semantics.
Var avgpool2(const Var& x);
/// [B,K,H,W] -> [B,K], spatial mean.
Var global_avg_pool(const Var& z);
/// [B,M,H,W] -> [B,M], spatial max (gradient to the first maximal cell).
Var global_max_pool(const Var& z);
/// sum_k weights[b,k] * z[b,k,:,:] -> [B,H,W]; weights are constants.
Var channel_weighted_sum(const Var& z, const Tensor& weights);

// Row-wise softmax family on [B,C].
Var softmax_rows(const Var& logits);
Var log_softmax_rows(const Var& logits);
/// Mean over the batch of -sum_c onehot * log softmax(logits). Rows of `onehot`
/// must each contain a single 1 and zeros elsewhere.
Var softmax_cross_entropy(const Var& logits, const Tensor& onehot);
/// Per-sample cross entropy against integer labels, shape [B].
Var cross_entropy_per_sample(const Var& logits, std::span<const int> labels);

/// Squared Euclidean distances between rows: a[n,d], b[m,d] -> [n,m].
Var pairwise_sq_dists(const Var& a, const Var& b);
/// Squared L2 distance between every prototype and every same-sized patch of z.
/// z[B,K,H,W], protos[M,K,hp,wp] -> [B,M,H-hp+1,W-wp+1].
Var patch_sq_dists(const Var& z, const Var& protos);

// Plain tensor helpers (no graph).
Tensor softmax_rows(const Tensor& logits);
Tensor one_hot(std::span<const int> labels, std::size_t classes);
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace xdg
