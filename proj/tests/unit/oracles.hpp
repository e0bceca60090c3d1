#pragma once

// Independent reference computations written with plain loops, used as oracles.

#include <cmath>
#include <limits>
#include <vector>

#include "hdccl/nn.hpp"

namespace oracle {

using M = hdccl::Matrix<double>;

inline double dot(const M& a, int ra, const M& b, int rb) {
    double s = 0.0;
    for (int k = 0; k < a.cols(); ++k) s += a(ra, k) * b(rb, k);
    return s;
}

inline double row_norm(const M& a, int r) { return std::sqrt(dot(a, r, a, r)); }

inline M matmul(const M& a, const M& b) {
    M out = M::Zero(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < b.cols(); ++j)
            for (int k = 0; k < a.cols(); ++k) out(i, j) += a(i, k) * b(k, j);
    return out;
}

inline M affine(const M& x, const hdccl::Linear<double>& lin) {
    M out = matmul(x, lin.weight.value());
    for (int i = 0; i < out.rows(); ++i)
        for (int j = 0; j < out.cols(); ++j) out(i, j) += lin.bias.value()(0, j);
    return out;
}

inline M softmax_rows(const M& a) {
    M out(a.rows(), a.cols());
    for (int i = 0; i < a.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < a.cols(); ++j) mx = std::max(mx, a(i, j));
        double z = 0.0;
        for (int j = 0; j < a.cols(); ++j) z += std::exp(a(i, j) - mx);
        for (int j = 0; j < a.cols(); ++j) out(i, j) = std::exp(a(i, j) - mx) / z;
    }
    return out;
}

inline M layer_norm(const M& x, const hdccl::LayerNorm<double>& ln, double eps = 1e-5) {
    M out(x.rows(), x.cols());
    const int d = static_cast<int>(x.cols());
    for (int i = 0; i < x.rows(); ++i) {
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += x(i, j);
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
        var /= d;
        for (int j = 0; j < d; ++j)
            out(i, j) = (x(i, j) - mu) / std::sqrt(var + eps) * ln.gamma.value()(0, j) + ln.beta.value()(0, j);
    }
    return out;
}

/// Multi-head attention; `causal` blocks keys after the query index.
inline M attention(const M& q_in, const M& kv_in, const hdccl::MultiHeadAttention<double>& mha, bool causal = false) {
    const M q = affine(q_in, mha.query);
    const M k = affine(kv_in, mha.key);
    const M v = affine(kv_in, mha.value);
    const int d = static_cast<int>(q.cols());
    const int hd = d / mha.heads;
    M merged = M::Zero(q.rows(), d);
    for (int h = 0; h < mha.heads; ++h) {
        M logits(q.rows(), k.rows());
        for (int i = 0; i < q.rows(); ++i)
            for (int j = 0; j < k.rows(); ++j) {
                double s = 0.0;
                for (int c = 0; c < hd; ++c) s += q(i, h * hd + c) * k(j, h * hd + c);
                logits(i, j) = (causal && j > i) ? -std::numeric_limits<double>::infinity() : s / std::sqrt(hd);
            }
        const M p = softmax_rows(logits);
        for (int i = 0; i < q.rows(); ++i)
            for (int c = 0; c < hd; ++c)
                for (int j = 0; j < k.rows(); ++j) merged(i, h * hd + c) += p(i, j) * v(j, h * hd + c);
    }
    return affine(merged, mha.output);
}

inline M feed_forward(const M& x, const hdccl::FeedForward<double>& ffn) {
    M h = affine(x, ffn.expand);
    for (int i = 0; i < h.rows(); ++i)
        for (int j = 0; j < h.cols(); ++j) h(i, j) = std::max(0.0, h(i, j));
    return affine(h, ffn.contract);
}

inline M encoder_layer(const M& x, const M& attended, const hdccl::LayerNorm<double>& n1,
                       const hdccl::FeedForward<double>& ffn, const hdccl::LayerNorm<double>& n2) {
    const M h = layer_norm(x + attended, n1);
    return layer_norm(h + feed_forward(h, ffn), n2);
}

inline double cosine(const M& u, const M& v) { return dot(u, 0, v, 0) / (row_norm(u, 0) * row_norm(v, 0)); }

}  // namespace oracle
