#pragma once

// Parameterised building blocks shared by the encoder, DALT, the distillation
// head and the caption decoder.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "hdccl/errors.hpp"
#include "hdccl/ops.hpp"

namespace hdccl {

template <typename T>
struct NamedParam {
    std::string name;
    Var<T> var;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
Matrix<T> random_normal(Index rows, Index cols, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix<T> m(rows, cols);
    for (Index j = 0; j < cols; ++j) {
        for (Index i = 0; i < rows; ++i) {
            m(i, j) = static_cast<T>(dist(rng));
        }
    }
    return m;
}

/// Affine map x W + b with W of shape in x out.
template <typename T>
struct Linear {
    Var<T> weight;
    Var<T> bias;

    Linear() = default;
    Linear(Index in, Index out, Rng& rng)
        : weight(Var<T>::parameter(random_normal<T>(in, out, std::sqrt(2.0 / static_cast<double>(in + out)), rng))),
          bias(Var<T>::parameter(Matrix<T>::Zero(1, out))) {}

    [[nodiscard]] Index in_dim() const { return weight.rows(); }
    [[nodiscard]] Index out_dim() const { return weight.cols(); }

    Var<T> operator()(const Var<T>& x) const { return add_row(matmul(x, weight), bias); }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

template <typename T>
struct LayerNorm {
    Var<T> gamma;
    Var<T> beta;

    LayerNorm() = default;
    explicit LayerNorm(Index dim)
        : gamma(Var<T>::parameter(Matrix<T>::Ones(1, dim))), beta(Var<T>::parameter(Matrix<T>::Zero(1, dim))) {}

    Var<T> operator()(const Var<T>& x) const { return layer_norm(x, gamma, beta); }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

/// Scaled dot-product attention with `heads` heads of size d / heads.
template <typename T>
struct MultiHeadAttention {
    Linear<T> query;
    Linear<T> key;
    Linear<T> value;
    Linear<T> output;
    int heads = 1;

    MultiHeadAttention() = default;
    MultiHeadAttention(Index dim, int num_heads, Rng& rng)
        : query(dim, dim, rng), key(dim, dim, rng), value(dim, dim, rng), output(dim, dim, rng), heads(num_heads) {
        if (num_heads <= 0 || dim % num_heads != 0) {
            throw ConfigError("attention: model width " + std::to_string(dim) + " is not divisible by " +
                              std::to_string(num_heads) + " heads");
        }
    }

    [[nodiscard]] Index dim() const { return query.in_dim(); }

    /// `mask` (rows = queries, cols = keys) is added to the logits of every head.
    /// When `weights` is non-null the per-head attention matrices are appended to it.
    Var<T> operator()(const Var<T>& queries, const Var<T>& keys_values, const Matrix<T>* mask = nullptr,
                      std::vector<Matrix<T>>* weights = nullptr) const {
        const Index d = dim();
        if (queries.cols() != d || keys_values.cols() != d) {
            throw DimensionError("attention: expected width " + std::to_string(d));
        }
        const Index head_dim = d / heads;
        const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(head_dim));
        Var<T> q = query(queries);
        Var<T> k = key(keys_values);
        Var<T> v = value(keys_values);
        std::vector<Var<T>> per_head;
        per_head.reserve(static_cast<std::size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            const Index start = h * head_dim;
            Var<T> qh = heads == 1 ? q : slice_cols(q, start, head_dim);
            Var<T> kh = heads == 1 ? k : slice_cols(k, start, head_dim);
            Var<T> vh = heads == 1 ? v : slice_cols(v, start, head_dim);
            Var<T> probs = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt), mask);
            if (weights != nullptr) {
                weights->push_back(probs.value());
            }
            per_head.push_back(matmul(probs, vh));
        }
        Var<T> merged = heads == 1 ? per_head.front() : concat_cols(per_head);
        return output(merged);
    }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        query.collect(out, prefix + ".query");
        key.collect(out, prefix + ".key");
        value.collect(out, prefix + ".value");
        output.collect(out, prefix + ".output");
    }
};

/// Position-wise two-layer network with a ReLU in between.
template <typename T>
struct FeedForward {
    Linear<T> expand;
    Linear<T> contract;

    FeedForward() = default;
    FeedForward(Index dim, Index hidden, Rng& rng) : expand(dim, hidden, rng), contract(hidden, dim, rng) {}

    Var<T> operator()(const Var<T>& x) const { return contract(relu(expand(x))); }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        expand.collect(out, prefix + ".expand");
        contract.collect(out, prefix + ".contract");
    }
};

}  // namespace hdccl
