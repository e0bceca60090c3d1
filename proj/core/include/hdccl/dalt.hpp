#pragma once

// Region-aware layout encoder. Each image is split into a common and a
// different region by its overlap mask; the global sequence and the two region
// sequences are each prefixed with their own learnable CLS token and passed
// through one shared transformer encoder layer.

#include <array>
#include <string_view>
#include <vector>

#include "hdccl/patchenc.hpp"

namespace hdccl {

enum class Region { Glo = 0, Com = 1, Diff = 2 };
inline constexpr std::array<Region, 3> kRegions = {Region::Glo, Region::Com, Region::Diff};

std::string_view to_string(Region r);

template <typename T>
struct RegionDecomposition {
    Var<T> x_com;   // mask ⊙ X
    Var<T> x_diff;  // (1 - mask) ⊙ X
    std::array<std::vector<Index>, 3> index_sets;
    Mask mask;

    [[nodiscard]] const std::vector<Index>& indices(Region r) const {
        return index_sets[static_cast<std::size_t>(r)];
    }
};

template <typename T>
struct RegionFeatures {
    Var<T> patch_features;   // N x d, from the global pass
    std::array<Var<T>, 3> cls;  // 1 x d each

    [[nodiscard]] const Var<T>& cls_of(Region r) const { return cls[static_cast<std::size_t>(r)]; }
};

/// Post-norm transformer encoder layer: LN(x + MHA(x)) then LN(h + FFN(h)).
template <typename T>
struct EncoderLayer {
    MultiHeadAttention<T> attention;
    LayerNorm<T> norm1;
    FeedForward<T> ffn;
    LayerNorm<T> norm2;

    EncoderLayer() = default;
    EncoderLayer(Index dim, int heads, Index hidden, Rng& rng)
        : attention(dim, heads, rng), norm1(dim), ffn(dim, hidden, rng), norm2(dim) {}

    Var<T> operator()(const Var<T>& x) const {
        Var<T> h = norm1(add(x, attention(x, x)));
        return norm2(add(h, ffn(h)));
    }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        attention.collect(out, prefix + ".attention");
        norm1.collect(out, prefix + ".norm1");
        ffn.collect(out, prefix + ".ffn");
        norm2.collect(out, prefix + ".norm2");
    }
};

template <typename T>
struct DaltParams {
    Var<T> cls;       // 3 x d, rows ordered glo, com, diff
    Var<T> position;  // N x d learnable position embedding; undefined disables it
    EncoderLayer<T> layer;

    DaltParams() = default;
    DaltParams(Index dim, int heads, Index hidden, Index num_patches, Rng& rng)
        : cls(Var<T>::parameter(random_normal<T>(3, dim, 0.02, rng))),
          position(num_patches > 0 ? Var<T>::parameter(random_normal<T>(num_patches, dim, 0.02, rng)) : Var<T>{}),
          layer(dim, heads, hidden, rng) {}

    [[nodiscard]] Index dim() const { return cls.cols(); }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        out.push_back({prefix + ".cls", cls});
        if (position.defined()) out.push_back({prefix + ".position", position});
        layer.collect(out, prefix + ".layer");
    }
};

/// Throws DimensionError when the mask length differs from N, ConfigError on entries other than 0/1.
template <typename T>
RegionDecomposition<T> decompose(const PatchFeatures<T>& x, const Mask& mask);

/// Output CLS r is the attended CLS position of [cls_r; X[I^r]]. An empty region
/// yields a CLS-only sequence. Throws NumericError on a non-finite result.
template <typename T>
RegionFeatures<T> encode_regions(const RegionDecomposition<T>& dec, const PatchFeatures<T>& x,
                                 const DaltParams<T>& params);

}  // namespace hdccl
