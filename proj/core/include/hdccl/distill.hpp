#pragma once

// Context decoupling (global / common / difference encoders), the contrastive
// and independence losses over a batch of context vectors, and the
// context-guided difference head that produces the change representation D.
//
// "bef" and "aft" name the first and second image of the ordering being
// processed; the reverse pass simply feeds the images in the other order.

#include <optional>
#include <vector>

#include "hdccl/dalt.hpp"

namespace hdccl {

inline constexpr double kDefaultLossTemperature = 0.07;

template <typename T>
struct ContextVectors {
    Var<T> g_bef, g_aft;
    Var<T> c_bef, c_aft;
    Var<T> d_bef_global, d_aft_global;
};

template <typename T>
struct DistillParams {
    Linear<T> ge;      // global encoder, shared
    Linear<T> ce;      // common encoder, shared
    Linear<T> de_bef;  // difference encoder of the first image
    Linear<T> de_aft;  // difference encoder of the second image
    Linear<T> z_proj;  // [mask ⊙ X ; c] (2d) -> d
    MultiHeadAttention<T> mhca;
    Linear<T> phi;     // followed by tanh
    Linear<T> fuse;    // W_c, b_c: [D_global ; D_local] (2d) -> d

    DistillParams() = default;
    DistillParams(Index dim, int heads, Rng& rng)
        : ge(dim, dim, rng), ce(dim, dim, rng), de_bef(dim, dim, rng), de_aft(dim, dim, rng),
          z_proj(2 * dim, dim, rng), mhca(dim, heads, rng), phi(dim, dim, rng), fuse(2 * dim, dim, rng) {}

    [[nodiscard]] Index dim() const { return ge.in_dim(); }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        ge.collect(out, prefix + ".ge");
        ce.collect(out, prefix + ".ce");
        de_bef.collect(out, prefix + ".de_bef");
        de_aft.collect(out, prefix + ".de_aft");
        z_proj.collect(out, prefix + ".z_proj");
        mhca.collect(out, prefix + ".mhca");
        phi.collect(out, prefix + ".phi");
        fuse.collect(out, prefix + ".fuse");
    }
};

template <typename T>
struct DifferenceRepr {
    Var<T> d;  // N x d
    Var<T> z_com_bef, z_com_aft;
    Var<T> x_tilde_com_bef, x_tilde_com_aft;
    Var<T> d_local;
    Var<T> d_global;
};

template <typename T>
ContextVectors<T> context_encode(const RegionFeatures<T>& bef, const RegionFeatures<T>& aft,
                                 const DistillParams<T>& params);

/// -(1/B) Σ_i log softmax_j(â_i · b̂_j / tau)[i]. Rows are normalised here.
template <typename T>
Var<T> info_nce(const Var<T>& a, const Var<T>& b, double tau = kDefaultLossTemperature);

/// Tr(K H L H) / (B - 1)^2 with Gaussian kernels exp(-|x - y|^2 / (2 sigma^2)) on
/// l2-normalised rows. `bandwidth` = nullopt selects the median pairwise
/// distance of each side (sigma = 1 if that median is 0).
template <typename T>
Var<T> hsic_loss(const Var<T>& x, const Var<T>& y, std::optional<double> bandwidth = std::nullopt);

template <typename T>
struct ContextLoss {
    Var<T> glo;
    Var<T> reg;
    Var<T> hsic;
    Var<T> con;
};

template <typename T>
ContextLoss<T> context_loss(const std::vector<ContextVectors<T>>& batch, double tau = kDefaultLossTemperature,
                            std::optional<double> bandwidth = std::nullopt);

/// D for the first image of the ordering (x_bef), built from both images' features and masks.
template <typename T>
DifferenceRepr<T> distill_difference(const PatchFeatures<T>& x_bef, const PatchFeatures<T>& x_aft,
                                     const Mask& mask_bef, const Mask& mask_aft, const ContextVectors<T>& cv,
                                     const DistillParams<T>& params);

}  // namespace hdccl
