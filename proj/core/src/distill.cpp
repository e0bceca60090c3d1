#include "hdccl/distill.hpp"

#include <algorithm>

namespace hdccl {

namespace {

template <typename T>
void require_row(const Var<T>& v, Index dim, const char* what) {
    if (!v.defined() || v.rows() != 1 || v.cols() != dim) {
        throw DimensionError(std::string("context_encode: ") + what + " must be 1 x " + std::to_string(dim));
    }
}

template <typename T>
Var<T> masked_rows(const Var<T>& x, const Mask& mask) {
    if (static_cast<Index>(mask.size()) != x.rows()) {
        throw DimensionError("distill_difference: mask length " + std::to_string(mask.size()) + " does not match " +
                             std::to_string(x.rows()) + " patches");
    }
    Matrix<T> keep(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
        keep.row(i).setConstant(mask[static_cast<std::size_t>(i)] ? T(1) : T(0));
    }
    return mul(x, Var<T>::constant(std::move(keep)));
}

template <typename T>
Var<T> median_bandwidth(const Var<T>& x) {
    const Index n = x.rows();
    Var<T> dist = pairwise_distances(x);
    std::vector<std::pair<Index, Index>> entries;
    for (Index i = 0; i < n; ++i) {
        for (Index j = i + 1; j < n; ++j) entries.emplace_back(i, j);
    }
    std::stable_sort(entries.begin(), entries.end(), [&](const auto& a, const auto& b) {
        return dist.value()(a.first, a.second) < dist.value()(b.first, b.second);
    });
    const std::size_t m = entries.size();
    std::vector<std::pair<Index, Index>> middle;
    if (m % 2 == 1) {
        middle.push_back(entries[m / 2]);
    } else {
        middle.push_back(entries[m / 2 - 1]);
        middle.push_back(entries[m / 2]);
    }
    Var<T> sigma = mean(pick(dist, middle));
    if (!(sigma.item() > T(0))) {
        return Var<T>::constant(Matrix<T>::Ones(1, 1));
    }
    return sigma;
}

}  // namespace

template <typename T>
ContextVectors<T> context_encode(const RegionFeatures<T>& bef, const RegionFeatures<T>& aft,
                                 const DistillParams<T>& params) {
    const Index d = params.dim();
    for (const RegionFeatures<T>* rf : {&bef, &aft}) {
        require_row(rf->cls_of(Region::Glo), d, "glo CLS");
        require_row(rf->cls_of(Region::Com), d, "com CLS");
        require_row(rf->cls_of(Region::Diff), d, "diff CLS");
    }
    ContextVectors<T> cv;
    cv.g_bef = params.ge(bef.cls_of(Region::Glo));
    cv.g_aft = params.ge(aft.cls_of(Region::Glo));
    cv.c_bef = params.ce(bef.cls_of(Region::Com));
    cv.c_aft = params.ce(aft.cls_of(Region::Com));
    cv.d_bef_global = params.de_bef(bef.cls_of(Region::Diff));
    cv.d_aft_global = params.de_aft(aft.cls_of(Region::Diff));
    return cv;
}

template <typename T>
Var<T> info_nce(const Var<T>& a, const Var<T>& b, double tau) {
    if (!(tau > 0.0)) {
        throw ConfigError("info_nce: temperature must be positive");
    }
    if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() < 1) {
        throw DimensionError("info_nce: expected two non-empty batches of the same shape");
    }
    const Index batch = a.rows();
    Var<T> logits = scale(matmul_nt(normalize_rows(a), normalize_rows(b)), static_cast<T>(1.0 / tau));
    std::vector<std::pair<Index, Index>> diagonal;
    diagonal.reserve(static_cast<std::size_t>(batch));
    for (Index i = 0; i < batch; ++i) diagonal.emplace_back(i, i);
    return scale(mean(pick(log_softmax_rows(logits), diagonal)), T(-1));
}

template <typename T>
Var<T> hsic_loss(const Var<T>& x, const Var<T>& y, std::optional<double> bandwidth) {
    if (x.rows() != y.rows()) {
        throw DimensionError("hsic_loss: batch sizes differ");
    }
    const Index batch = x.rows();
    if (batch < 2) {
        throw BatchSizeError("hsic_loss: needs a batch of at least 2, got " + std::to_string(batch));
    }
    if (bandwidth && !(*bandwidth > 0.0)) {
        throw ConfigError("hsic_loss: bandwidth must be positive");
    }
    Var<T> xn = normalize_rows(x);
    Var<T> yn = normalize_rows(y);
    auto sigma_for = [&](const Var<T>& v) {
        if (bandwidth) return Var<T>::constant(Matrix<T>::Constant(1, 1, static_cast<T>(*bandwidth)));
        return median_bandwidth(v);
    };
    Var<T> k = gaussian_kernel(xn, sigma_for(xn));
    Var<T> l = gaussian_kernel(yn, sigma_for(yn));
    const Matrix<T> centering =
        Matrix<T>::Identity(batch, batch) - Matrix<T>::Constant(batch, batch, T(1) / static_cast<T>(batch));
    Var<T> h = Var<T>::constant(centering);
    Var<T> kh = matmul(k, h);
    Var<T> lh = matmul(l, h);
    const T denom = static_cast<T>((batch - 1) * (batch - 1));
    return scale(sum(mul(kh, transpose(lh))), T(1) / denom);
}

template <typename T>
ContextLoss<T> context_loss(const std::vector<ContextVectors<T>>& batch, double tau, std::optional<double> bandwidth) {
    if (batch.size() < 2) {
        throw BatchSizeError("context_loss: needs a batch of at least 2, got " + std::to_string(batch.size()));
    }
    std::vector<Var<T>> g_bef, g_aft, c_bef, c_aft, d_bef, d_aft;
    for (const auto& cv : batch) {
        g_bef.push_back(cv.g_bef);
        g_aft.push_back(cv.g_aft);
        c_bef.push_back(cv.c_bef);
        c_aft.push_back(cv.c_aft);
        d_bef.push_back(cv.d_bef_global);
        d_aft.push_back(cv.d_aft_global);
    }
    ContextLoss<T> out;
    out.glo = info_nce(concat_rows(g_bef), concat_rows(g_aft), tau);
    out.reg = info_nce(concat_rows(c_bef), concat_rows(c_aft), tau);
    out.hsic = hsic_loss(concat_rows(d_bef), concat_rows(d_aft), bandwidth);
    out.con = add(add(out.glo, out.reg), out.hsic);
    return out;
}

template <typename T>
DifferenceRepr<T> distill_difference(const PatchFeatures<T>& x_bef, const PatchFeatures<T>& x_aft,
                                     const Mask& mask_bef, const Mask& mask_aft, const ContextVectors<T>& cv,
                                     const DistillParams<T>& params) {
    const Index n = x_bef.count();
    const Index d = params.dim();
    if (x_aft.count() != n || x_bef.dim() != d || x_aft.dim() != d) {
        throw DimensionError("distill_difference: expected two " + std::to_string(n) + " x " + std::to_string(d) +
                             " feature arrays");
    }
    DifferenceRepr<T> out;
    out.z_com_bef = params.z_proj(
        concat_cols<T>({masked_rows(x_bef.features, mask_bef), repeat_rows(cv.c_bef, n)}));
    out.z_com_aft = params.z_proj(
        concat_cols<T>({masked_rows(x_aft.features, mask_aft), repeat_rows(cv.c_aft, n)}));
    out.x_tilde_com_bef = params.mhca(out.z_com_bef, out.z_com_aft);
    out.x_tilde_com_aft = params.mhca(out.z_com_aft, out.z_com_bef);
    out.d_local = tanh(params.phi(sub(x_bef.features, out.x_tilde_com_bef)));
    out.d_global = repeat_rows(cv.d_bef_global, n);
    out.d = relu(params.fuse(concat_cols<T>({out.d_global, out.d_local})));
    if (!out.d.value().allFinite()) {
        throw NumericError("distill_difference: non-finite change representation");
    }
    return out;
}

#define HDCCL_INSTANTIATE_DISTILL(T)                                                                              \
    template ContextVectors<T> context_encode<T>(const RegionFeatures<T>&, const RegionFeatures<T>&,              \
                                                 const DistillParams<T>&);                                        \
    template Var<T> info_nce<T>(const Var<T>&, const Var<T>&, double);                                            \
    template Var<T> hsic_loss<T>(const Var<T>&, const Var<T>&, std::optional<double>);                            \
    template ContextLoss<T> context_loss<T>(const std::vector<ContextVectors<T>>&, double, std::optional<double>); \
    template DifferenceRepr<T> distill_difference<T>(const PatchFeatures<T>&, const PatchFeatures<T>&,            \
                                                     const Mask&, const Mask&, const ContextVectors<T>&,          \
                                                     const DistillParams<T>&);

HDCCL_INSTANTIATE_DISTILL(float)
HDCCL_INSTANTIATE_DISTILL(double)

}  // namespace hdccl
