#include "hdccl/patchenc.hpp"

#include <string>

namespace hdccl {

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::Linear:
            return "linear";
        case Activation::Relu:
            return "relu";
        case Activation::Tanh:
            return "tanh";
    }
    return "linear";
}

Activation parse_activation(std::string_view name) {
    if (name == "linear") return Activation::Linear;
    if (name == "relu") return Activation::Relu;
    if (name == "tanh") return Activation::Tanh;
    throw ConfigError("unknown activation \"" + std::string(name) + "\"");
}

template <typename T>
PatchFeatures<T> embed(const Matrix<T>& raw, GridShape grid, ImageTag tag, const EncoderParams<T>& params) {
    const Index d_in = params.projection.in_dim();
    if (raw.cols() != d_in || raw.rows() != grid.size()) {
        throw DimensionError("embed: raw patches are " + std::to_string(raw.rows()) + "x" + std::to_string(raw.cols()) +
                             " but the encoder expects " + std::to_string(grid.size()) + "x" + std::to_string(d_in));
    }
    if (!raw.allFinite()) {
        throw NumericError("embed: raw patches contain non-finite values");
    }
    Var<T> h = params.projection(Var<T>::constant(raw));
    switch (params.activation) {
        case Activation::Linear:
            break;
        case Activation::Relu:
            h = relu(h);
            break;
        case Activation::Tanh:
            h = tanh(h);
            break;
    }
    return PatchFeatures<T>{h, grid, tag};
}

template PatchFeatures<float> embed<float>(const Matrix<float>&, GridShape, ImageTag, const EncoderParams<float>&);
template PatchFeatures<double> embed<double>(const Matrix<double>&, GridShape, ImageTag, const EncoderParams<double>&);

}  // namespace hdccl
