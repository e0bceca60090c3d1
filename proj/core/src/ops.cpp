#include "hdccl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "hdccl/errors.hpp"

namespace hdccl {

namespace {

std::string shape_str(Index r, Index c) {
    std::ostringstream os;
    os << r << "x" << c;
    return os.str();
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) + " vs " +
                             shape_str(b.rows(), b.cols()));
    }
}

template <typename T>
Node<T>& in(Node<T>& self, std::size_t i) {
    return *self.inputs[i];
}

}  // namespace

template <typename T>
void backward(const Var<T>& root) {
    if (root.rows() != 1 || root.cols() != 1) {
        throw DimensionError("backward: root must be 1x1, got " + shape_str(root.rows(), root.cols()));
    }
    if (!root.requires_grad()) {
        return;
    }
    // Iterative post-order DFS gives a topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->accumulate(Matrix<T>::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward && node->grad.size() != 0) {
            node->backward(*node);
        }
    }
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions differ " + shape_str(a.rows(), a.cols()) + " * " +
                             shape_str(b.rows(), b.cols()));
    }
    Matrix<T> out(a.rows(), b.cols());
    out.noalias() = a.value() * b.value();
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        Node<T>& x = in(self, 0);
        Node<T>& y = in(self, 1);
        if (x.requires_grad) x.accumulate(self.grad * y.value.transpose());
        if (y.requires_grad) y.accumulate(x.value.transpose() * self.grad);
    });
}

template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: feature dimensions differ " + shape_str(a.rows(), a.cols()) + " vs " +
                             shape_str(b.rows(), b.cols()));
    }
    Matrix<T> out(a.rows(), b.rows());
    out.noalias() = a.value() * b.value().transpose();
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        Node<T>& x = in(self, 0);
        Node<T>& y = in(self, 1);
        if (x.requires_grad) x.accumulate(self.grad * y.value);
        if (y.requires_grad) y.accumulate(self.grad.transpose() * x.value);
    });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
    return make_result<T>(a.value().transpose(), {a}, [](Node<T>& self) {
        in(self, 0).accumulate(self.grad.transpose());
    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "add");
    return make_result<T>(a.value() + b.value(), {a, b}, [](Node<T>& self) {
        if (in(self, 0).requires_grad) in(self, 0).accumulate(self.grad);
        if (in(self, 1).requires_grad) in(self, 1).accumulate(self.grad);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "sub");
    return make_result<T>(a.value() - b.value(), {a, b}, [](Node<T>& self) {
        if (in(self, 0).requires_grad) in(self, 0).accumulate(self.grad);
        if (in(self, 1).requires_grad) in(self, 1).accumulate(-self.grad);
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "mul");
    return make_result<T>(a.value().cwiseProduct(b.value()), {a, b}, [](Node<T>& self) {
        Node<T>& x = in(self, 0);
        Node<T>& y = in(self, 1);
        if (x.requires_grad) x.accumulate(self.grad.cwiseProduct(y.value));
        if (y.requires_grad) y.accumulate(self.grad.cwiseProduct(x.value));
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
    return make_result<T>(a.value() * factor, {a}, [factor](Node<T>& self) {
        in(self, 0).accumulate(self.grad * factor);
    });
}

template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw DimensionError("add_row: expected 1x" + std::to_string(a.cols()) + " row, got " +
                             shape_str(row.rows(), row.cols()));
    }
    Matrix<T> out = a.value();
    out.rowwise() += row.value().row(0);
    return make_result<T>(std::move(out), {a, row}, [](Node<T>& self) {
        if (in(self, 0).requires_grad) in(self, 0).accumulate(self.grad);
        if (in(self, 1).requires_grad) in(self, 1).accumulate(self.grad.colwise().sum());
    });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    return make_result<T>(a.value().cwiseMax(T(0)), {a}, [](Node<T>& self) {
        Node<T>& x = in(self, 0);
        x.accumulate((x.value.array() > T(0)).select(self.grad.array(), T(0)).matrix());
    });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
    Matrix<T> out = a.value().array().tanh().matrix();
    return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
        in(self, 0).accumulate((self.grad.array() * (T(1) - self.value.array().square())).matrix());
    });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
    Matrix<T> out = a.value().array().exp().matrix();
    return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
        in(self, 0).accumulate(self.grad.cwiseProduct(self.value));
    });
}

template <typename T>
Var<T> log(const Var<T>& a) {
    Matrix<T> out = a.value().array().log().matrix();
    return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
        Node<T>& x = in(self, 0);
        x.accumulate(self.grad.cwiseQuotient(x.value));
    });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& a, const Matrix<T>* additive_mask) {
    Matrix<T> logits = a.value();
    if (additive_mask != nullptr) {
        if (additive_mask->rows() != logits.rows() || additive_mask->cols() != logits.cols()) {
            throw DimensionError("softmax_rows: mask shape mismatch");
        }
        logits += *additive_mask;
    }
    Matrix<T> out(logits.rows(), logits.cols());
    for (Index r = 0; r < logits.rows(); ++r) {
        const T m = logits.row(r).maxCoeff();
        out.row(r) = (logits.row(r).array() - m).exp().matrix();
        out.row(r) /= out.row(r).sum();
    }
    return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
        const auto& y = self.value;
        Matrix<T> inner = self.grad.cwiseProduct(y).rowwise().sum();
        Matrix<T> g = self.grad;
        g.colwise() -= inner.col(0);
        in(self, 0).accumulate(g.cwiseProduct(y));
    });
}

template <typename T>
Var<T> log_softmax_rows(const Var<T>& a) {
    const Matrix<T>& x = a.value();
    Matrix<T> out(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
        const T m = x.row(r).maxCoeff();
        const T lse = m + std::log((x.row(r).array() - m).exp().sum());
        out.row(r) = x.row(r).array() - lse;
    }
    return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
        Matrix<T> soft = self.value.array().exp().matrix();
        Matrix<T> total = self.grad.rowwise().sum();
        Matrix<T> g = self.grad;
        for (Index r = 0; r < g.rows(); ++r) {
            g.row(r) -= soft.row(r) * total(r, 0);
        }
        in(self, 0).accumulate(g);
    });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
    const Index n = x.rows();
    const Index d = x.cols();
    if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
        throw DimensionError("layer_norm: gamma/beta must be 1x" + std::to_string(d));
    }
    Matrix<T> xhat(n, d);
    Matrix<T> inv_std(n, 1);
    for (Index r = 0; r < n; ++r) {
        const T mu = x.value().row(r).mean();
        const T var = (x.value().row(r).array() - mu).square().mean();
        inv_std(r, 0) = T(1) / std::sqrt(var + eps);
        xhat.row(r) = (x.value().row(r).array() - mu) * inv_std(r, 0);
    }
    Matrix<T> out = xhat;
    for (Index r = 0; r < n; ++r) {
        out.row(r) = xhat.row(r).cwiseProduct(gamma.value().row(0)) + beta.value().row(0);
    }
    return make_result<T>(std::move(out), {x, gamma, beta},
                          [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
                              Node<T>& xn = in(self, 0);
                              Node<T>& gn = in(self, 1);
                              Node<T>& bn = in(self, 2);
                              if (bn.requires_grad) bn.accumulate(self.grad.colwise().sum());
                              if (gn.requires_grad) gn.accumulate(self.grad.cwiseProduct(xhat).colwise().sum());
                              if (xn.requires_grad) {
                                  const Index d = xhat.cols();
                                  Matrix<T> g(xhat.rows(), d);
                                  for (Index r = 0; r < xhat.rows(); ++r) {
                                      Eigen::Matrix<T, 1, Eigen::Dynamic> dxhat =
                                          self.grad.row(r).cwiseProduct(gn.value.row(0));
                                      const T mean_d = dxhat.mean();
                                      const T mean_dx = dxhat.cwiseProduct(xhat.row(r)).mean();
                                      g.row(r) = (dxhat.array() - mean_d - xhat.row(r).array() * mean_dx) *
                                                 inv_std(r, 0);
                                  }
                                  xn.accumulate(g);
                              }
                          });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    if (parts.empty()) {
        throw DimensionError("concat_cols: no inputs");
    }
    const Index rows = parts.front().rows();
    Index cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) {
            throw DimensionError("concat_cols: row counts differ");
        }
        cols += p.cols();
    }
    Matrix<T> out(rows, cols);
    std::vector<Index> offsets;
    Index at = 0;
    for (const auto& p : parts) {
        offsets.push_back(at);
        out.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    return make_result<T>(std::move(out), parts, [offsets](Node<T>& self) {
        for (std::size_t i = 0; i < self.inputs.size(); ++i) {
            Node<T>& x = in(self, i);
            if (x.requires_grad) x.accumulate(self.grad.middleCols(offsets[i], x.value.cols()));
        }
    });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    if (parts.empty()) {
        throw DimensionError("concat_rows: no inputs");
    }
    const Index cols = parts.front().cols();
    Index rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) {
            throw DimensionError("concat_rows: column counts differ");
        }
        rows += p.rows();
    }
    Matrix<T> out(rows, cols);
    std::vector<Index> offsets;
    Index at = 0;
    for (const auto& p : parts) {
        offsets.push_back(at);
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    return make_result<T>(std::move(out), parts, [offsets](Node<T>& self) {
        for (std::size_t i = 0; i < self.inputs.size(); ++i) {
            Node<T>& x = in(self, i);
            if (x.requires_grad) x.accumulate(self.grad.middleRows(offsets[i], x.value.rows()));
        }
    });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > a.rows()) {
        throw DimensionError("slice_rows: range out of bounds");
    }
    return make_result<T>(a.value().middleRows(start, count), {a}, [start, count](Node<T>& self) {
        Node<T>& x = in(self, 0);
        Matrix<T> g = Matrix<T>::Zero(x.value.rows(), x.value.cols());
        g.middleRows(start, count) = self.grad;
        x.accumulate(g);
    });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) {
        throw DimensionError("slice_cols: range out of bounds");
    }
    return make_result<T>(a.value().middleCols(start, count), {a}, [start, count](Node<T>& self) {
        Node<T>& x = in(self, 0);
        Matrix<T> g = Matrix<T>::Zero(x.value.rows(), x.value.cols());
        g.middleCols(start, count) = self.grad;
        x.accumulate(g);
    });
}

template <typename T>
Var<T> gather_rows(const Var<T>& a, const std::vector<Index>& rows) {
    Matrix<T> out(static_cast<Index>(rows.size()), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= a.rows()) {
            throw DimensionError("gather_rows: index " + std::to_string(rows[i]) + " out of range");
        }
        out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
    }
    return make_result<T>(std::move(out), {a}, [rows](Node<T>& self) {
        Node<T>& x = in(self, 0);
        Matrix<T> g = Matrix<T>::Zero(x.value.rows(), x.value.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            g.row(rows[i]) += self.grad.row(static_cast<Index>(i));
        }
        x.accumulate(g);
    });
}

template <typename T>
Var<T> repeat_rows(const Var<T>& row, Index count) {
    if (row.rows() != 1) {
        throw DimensionError("repeat_rows: expected a single row");
    }
    Matrix<T> out = row.value().replicate(count, 1);
    return make_result<T>(std::move(out), {row}, [](Node<T>& self) {
        in(self, 0).accumulate(self.grad.colwise().sum());
    });
}

template <typename T>
Var<T> mean_rows(const Var<T>& a) {
    if (a.rows() == 0) {
        throw DimensionError("mean_rows: empty input");
    }
    const T inv = T(1) / static_cast<T>(a.rows());
    return make_result<T>(a.value().colwise().mean(), {a}, [inv](Node<T>& self) {
        Node<T>& x = in(self, 0);
        x.accumulate(self.grad.replicate(x.value.rows(), 1) * inv);
    });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
    Matrix<T> out(1, 1);
    out(0, 0) = a.value().sum();
    return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
        Node<T>& x = in(self, 0);
        x.accumulate(Matrix<T>::Constant(x.value.rows(), x.value.cols(), self.grad(0, 0)));
    });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

template <typename T>
Var<T> normalize_rows(const Var<T>& a) {
    Matrix<T> norms = a.value().rowwise().norm();
    for (Index r = 0; r < norms.rows(); ++r) {
        if (!(norms(r, 0) > T(0))) {
            throw NormalizationError("normalize_rows: row " + std::to_string(r) + " has zero norm", r);
        }
    }
    Matrix<T> out = a.value();
    for (Index r = 0; r < out.rows(); ++r) {
        out.row(r) /= norms(r, 0);
    }
    return make_result<T>(std::move(out), {a}, [norms = std::move(norms)](Node<T>& self) {
        const auto& y = self.value;
        Matrix<T> g(y.rows(), y.cols());
        for (Index r = 0; r < y.rows(); ++r) {
            const T proj = y.row(r).dot(self.grad.row(r));
            g.row(r) = (self.grad.row(r) - y.row(r) * proj) / norms(r, 0);
        }
        in(self, 0).accumulate(g);
    });
}

template <typename T>
Var<T> pick(const Var<T>& a, const std::vector<std::pair<Index, Index>>& entries) {
    Matrix<T> out(static_cast<Index>(entries.size()), 1);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto [r, c] = entries[i];
        if (r < 0 || r >= a.rows() || c < 0 || c >= a.cols()) {
            throw DimensionError("pick: entry out of range");
        }
        out(static_cast<Index>(i), 0) = a.value()(r, c);
    }
    return make_result<T>(std::move(out), {a}, [entries](Node<T>& self) {
        Node<T>& x = in(self, 0);
        Matrix<T> g = Matrix<T>::Zero(x.value.rows(), x.value.cols());
        for (std::size_t i = 0; i < entries.size(); ++i) {
            g(entries[i].first, entries[i].second) += self.grad(static_cast<Index>(i), 0);
        }
        x.accumulate(g);
    });
}

template <typename T>
Var<T> pairwise_distances(const Var<T>& a) {
    const Index n = a.rows();
    Matrix<T> out = Matrix<T>::Zero(n, n);
    for (Index i = 0; i < n; ++i) {
        for (Index j = i + 1; j < n; ++j) {
            const T dist = (a.value().row(i) - a.value().row(j)).norm();
            out(i, j) = dist;
            out(j, i) = dist;
        }
    }
    return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
        Node<T>& x = in(self, 0);
        const Index n = x.value.rows();
        Matrix<T> g = Matrix<T>::Zero(n, x.value.cols());
        for (Index i = 0; i < n; ++i) {
            for (Index j = 0; j < n; ++j) {
                const T dist = self.value(i, j);
                if (i == j || dist <= T(0)) continue;
                const T w = (self.grad(i, j) + self.grad(j, i)) / dist;
                g.row(i) += w * (x.value.row(i) - x.value.row(j));
            }
        }
        x.accumulate(g);
    });
}

template <typename T>
Var<T> gaussian_kernel(const Var<T>& a, const Var<T>& sigma) {
    if (sigma.rows() != 1 || sigma.cols() != 1) {
        throw DimensionError("gaussian_kernel: sigma must be 1x1");
    }
    const Index n = a.rows();
    const T s = sigma.item();
    Matrix<T> sq = Matrix<T>::Zero(n, n);
    for (Index i = 0; i < n; ++i) {
        for (Index j = i + 1; j < n; ++j) {
            const T v = (a.value().row(i) - a.value().row(j)).squaredNorm();
            sq(i, j) = v;
            sq(j, i) = v;
        }
    }
    Matrix<T> out = (-sq.array() / (T(2) * s * s)).exp().matrix();
    return make_result<T>(std::move(out), {a, sigma}, [sq = std::move(sq)](Node<T>& self) {
        Node<T>& x = in(self, 0);
        Node<T>& sig = in(self, 1);
        const T s = sig.value(0, 0);
        const auto& k = self.value;
        if (x.requires_grad) {
            const Index n = x.value.rows();
            // dL/dsq_ij = G_ij * K_ij * (-1 / (2 s^2))
            Matrix<T> gs = self.grad.cwiseProduct(k) * (T(-1) / (T(2) * s * s));
            Matrix<T> g = Matrix<T>::Zero(n, x.value.cols());
            for (Index i = 0; i < n; ++i) {
                for (Index j = 0; j < n; ++j) {
                    if (i == j) continue;
                    g.row(i) += T(2) * (gs(i, j) + gs(j, i)) * (x.value.row(i) - x.value.row(j));
                }
            }
            x.accumulate(g);
        }
        if (sig.requires_grad) {
            const T ds = (self.grad.array() * k.array() * sq.array()).sum() / (s * s * s);
            sig.accumulate(Matrix<T>::Constant(1, 1, ds));
        }
    });
}

template <typename T>
Var<T> cosine(const Var<T>& u, const Var<T>& v) {
    require_same_shape(u, v, "cosine");
    if (u.rows() != 1) {
        throw DimensionError("cosine: expected 1 x d rows");
    }
    const T nu = u.value().norm();
    const T nv = v.value().norm();
    Matrix<T> out = Matrix<T>::Zero(1, 1);
    const bool degenerate = !(nu > T(0)) || !(nv > T(0));
    if (!degenerate) {
        out(0, 0) = u.value().row(0).dot(v.value().row(0)) / (nu * nv);
    }
    return make_result<T>(std::move(out), {u, v}, [nu, nv, degenerate](Node<T>& self) {
        if (degenerate) return;
        Node<T>& x = in(self, 0);
        Node<T>& y = in(self, 1);
        const T c = self.value(0, 0);
        const T g = self.grad(0, 0);
        if (x.requires_grad) x.accumulate(g * (y.value / (nu * nv) - c * x.value / (nu * nu)));
        if (y.requires_grad) y.accumulate(g * (x.value / (nu * nv) - c * y.value / (nv * nv)));
    });
}

#define HDCCL_INSTANTIATE_OPS(T)                                                                          \
    template void backward<T>(const Var<T>&);                                                             \
    template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                              \
    template Var<T> matmul_nt<T>(const Var<T>&, const Var<T>&);                                           \
    template Var<T> transpose<T>(const Var<T>&);                                                          \
    template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                 \
    template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                                 \
    template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                                 \
    template Var<T> scale<T>(const Var<T>&, T);                                                           \
    template Var<T> add_row<T>(const Var<T>&, const Var<T>&);                                             \
    template Var<T> relu<T>(const Var<T>&);                                                               \
    template Var<T> tanh<T>(const Var<T>&);                                                               \
    template Var<T> exp<T>(const Var<T>&);                                                                \
    template Var<T> log<T>(const Var<T>&);                                                                \
    template Var<T> softmax_rows<T>(const Var<T>&, const Matrix<T>*);                                     \
    template Var<T> log_softmax_rows<T>(const Var<T>&);                                                   \
    template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);                        \
    template Var<T> concat_cols<T>(const std::vector<Var<T>>&);                                           \
    template Var<T> concat_rows<T>(const std::vector<Var<T>>&);                                           \
    template Var<T> slice_rows<T>(const Var<T>&, Index, Index);                                           \
    template Var<T> slice_cols<T>(const Var<T>&, Index, Index);                                           \
    template Var<T> gather_rows<T>(const Var<T>&, const std::vector<Index>&);                             \
    template Var<T> repeat_rows<T>(const Var<T>&, Index);                                                 \
    template Var<T> mean_rows<T>(const Var<T>&);                                                          \
    template Var<T> sum<T>(const Var<T>&);                                                                \
    template Var<T> mean<T>(const Var<T>&);                                                               \
    template Var<T> normalize_rows<T>(const Var<T>&);                                                     \
    template Var<T> pick<T>(const Var<T>&, const std::vector<std::pair<Index, Index>>&);                  \
    template Var<T> pairwise_distances<T>(const Var<T>&);                                                 \
    template Var<T> gaussian_kernel<T>(const Var<T>&, const Var<T>&);                                     \
    template Var<T> cosine<T>(const Var<T>&, const Var<T>&);

HDCCL_INSTANTIATE_OPS(float)
HDCCL_INSTANTIATE_OPS(double)

}  // namespace hdccl
