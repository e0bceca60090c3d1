#pragma once

// Cross-modal orientation consistency: visual and textual forward-minus-reverse
// direction vectors and the bidirectional margin ranking loss that aligns them.

#include <vector>

#include "hdccl/tensor.hpp"

namespace hdccl {

inline constexpr double kDefaultMargin = 0.3;

template <typename T>
struct DirectionalVectors {
    Var<T> delta_d;  // 1 x d
    Var<T> delta_t;  // 1 x d
    std::vector<Var<T>> negatives_d;
    std::vector<Var<T>> negatives_t;
};

/// delta_d = mean over rows of d_fwd minus that of d_rev, likewise for the text
/// encodings (whose lengths may differ). Throws DimensionError on an empty sequence.
template <typename T>
DirectionalVectors<T> directional_vectors(const Var<T>& d_fwd, const Var<T>& d_rev, const Var<T>& t_fwd,
                                          const Var<T>& t_rev);

template <typename T>
struct AlignmentLoss {
    Var<T> value;
    /// Set when some direction vector had zero norm and its cosines were taken as 0.
    bool degenerate = false;
};

/// ½[max(0, γ − cos(Δt,Δd) + cos(Δt,Δd⁻)) + max(0, γ − cos(Δd,Δt) + cos(Δd,Δt⁻))]
/// using the first negative of each modality.
template <typename T>
AlignmentLoss<T> alignment_loss(const DirectionalVectors<T>& dv, double gamma = kDefaultMargin);

}  // namespace hdccl
