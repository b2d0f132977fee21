#pragma once

#include <span>
#include <vector>

#include "ceia/gradnet/tensor.hpp"

namespace ceia::gradnet {

// All row-wise ops act on the last dimension ("rows" = every other index).

// [.., M, K] x [K, N] -> [.., M, N]; leading dims of `a` are flattened.
// With trans_b, `b` is given as [N, K].
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_b = false);

// Batched: [G, M, K] x [G, K, N] -> [G, M, N]; with trans_b, b is [G, N, K].
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b = false);

// b either matches a's shape or a trailing suffix of it (broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// a * s where s holds a single value.
Tensor mul_scalar(const Tensor& a, const Tensor& s);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor gelu(const Tensor& a);

Tensor l2_normalize(const Tensor& a);
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// Scalar mean of every element.
Tensor mean(const Tensor& a);
// [.., T, E] -> [.., E], averaging over the second-to-last dimension.
Tensor mean_tokens(const Tensor& a);

Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm);
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin,
             std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

// table [V, E], ids of any shape -> ids.shape + [E]
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids,
                        const Shape& ids_shape);

// Mean over rows of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace ceia::gradnet
