#pragma once

// Differentiable matrix operations used by every model component.

#include <utility>
#include <vector>

#include "hdccl/tensor.hpp"

namespace hdccl {

template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// a * b^T
template <typename T> Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> transpose(const Var<T>& a);

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
/// Elementwise product.
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
/// Adds a 1 x c row to every row of a.
template <typename T> Var<T> add_row(const Var<T>& a, const Var<T>& row);

template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> tanh(const Var<T>& a);
template <typename T> Var<T> exp(const Var<T>& a);
template <typename T> Var<T> log(const Var<T>& a);

/// Row-wise softmax. `additive_mask`, if given, is added to the logits first
/// (use -infinity to block a position).
template <typename T> Var<T> softmax_rows(const Var<T>& a, const Matrix<T>* additive_mask = nullptr);
template <typename T> Var<T> log_softmax_rows(const Var<T>& a);
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_rows(const Var<T>& a, Index start, Index count);
template <typename T> Var<T> slice_cols(const Var<T>& a, Index start, Index count);
template <typename T> Var<T> gather_rows(const Var<T>& a, const std::vector<Index>& rows);
/// Stacks `count` copies of a 1 x c row.
template <typename T> Var<T> repeat_rows(const Var<T>& row, Index count);

/// Column means, 1 x c.
template <typename T> Var<T> mean_rows(const Var<T>& a);
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);

/// l2-normalises each row; throws NormalizationError naming the first zero row.
template <typename T> Var<T> normalize_rows(const Var<T>& a);

/// Gathers entries a(r, c) into a k x 1 column.
template <typename T> Var<T> pick(const Var<T>& a, const std::vector<std::pair<Index, Index>>& entries);

/// B x B matrix of Euclidean distances between rows.
template <typename T> Var<T> pairwise_distances(const Var<T>& a);
/// B x B Gaussian kernel exp(-|xi - xj|^2 / (2 sigma^2)); sigma is 1 x 1.
template <typename T> Var<T> gaussian_kernel(const Var<T>& a, const Var<T>& sigma);

/// Cosine of two 1 x d rows. A zero-norm operand yields 0 with zero gradient.
template <typename T> Var<T> cosine(const Var<T>& u, const Var<T>& v);

}  // namespace hdccl
