#pragma once

// Learned projection of rendered patches into model features.

#include <cstdint>
#include <string_view>
#include <vector>

#include "hdccl/nn.hpp"

namespace hdccl {

struct GridShape {
    int rows = 0;
    int cols = 0;

    [[nodiscard]] int size() const { return rows * cols; }
    bool operator==(const GridShape&) const = default;
};

enum class ImageTag { Bef, Aft };

/// Binary per-patch mask (0 or 1), row-major over the grid.
using Mask = std::vector<std::uint8_t>;

template <typename T>
struct PatchFeatures {
    Var<T> features;  // N x d
    GridShape grid;
    ImageTag tag = ImageTag::Bef;

    [[nodiscard]] Index count() const { return features.rows(); }
    [[nodiscard]] Index dim() const { return features.cols(); }
};

enum class Activation { Linear, Relu, Tanh };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

template <typename T>
struct EncoderParams {
    Linear<T> projection;  // d_in -> d
    Activation activation = Activation::Tanh;

    EncoderParams() = default;
    EncoderParams(Index d_in, Index d, Rng& rng, Activation act = Activation::Tanh)
        : projection(d_in, d, rng), activation(act) {}

    void collect(ParamList<T>& out, const std::string& prefix) const { projection.collect(out, prefix + ".projection"); }
};

/// Shared by both images of a pair. Throws DimensionError naming both shapes on mismatch.
template <typename T>
PatchFeatures<T> embed(const Matrix<T>& raw, GridShape grid, ImageTag tag, const EncoderParams<T>& params);

}  // namespace hdccl
