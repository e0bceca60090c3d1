#pragma once

// Central finite-difference verification of analytic gradients on randomised
// tiny double-precision instances.

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "hdccl/nn.hpp"

namespace hdccl {

enum class GradComponent { Probe, InfoNce, Hsic, Alignment, Caption, Distill, Context, Dalt, Patchenc, Full };

std::string_view to_string(GradComponent c);
/// Throws UsageError for an unknown name.
GradComponent parse_grad_component(std::string_view name);
const std::vector<GradComponent>& all_grad_components();

struct BlockError {
    std::string name;
    double max_rel_error = 0.0;
};

struct GradCheckReport {
    GradComponent component = GradComponent::Probe;
    int instances = 0;
    double epsilon = 0.0;
    std::vector<BlockError> blocks;

    [[nodiscard]] double max_rel_error() const;
    [[nodiscard]] std::string to_json() const;
};

/// |a - n| / max(|a|, |n|, 1e-4) with Frobenius norms.
double relative_error(const Matrix<double>& analytic, const Matrix<double>& numeric);

/// Per-block relative errors of the analytic gradient of `loss` against central
/// differences with step `epsilon`. `loss` must rebuild its graph on every call.
std::vector<BlockError> check_gradients(const ParamList<double>& params, const std::function<Var<double>()>& loss,
                                        double epsilon);

/// Throws ConfigError unless epsilon lies in [1e-7, 1e-3] and instances >= 1.
GradCheckReport grad_check(GradComponent component, double epsilon, std::uint64_t seed, int instances = 1);

}  // namespace hdccl
