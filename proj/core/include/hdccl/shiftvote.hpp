#pragma once

// Shift voting: estimates the dominant displacement between two patch grids and
// the binary overlap masks it implies. Nothing here is differentiable; the
// masks are constants for the rest of the model.

#include <optional>
#include <vector>

#include "hdccl/patchenc.hpp"
#include "hdccl/scenegen.hpp"

namespace hdccl {

inline constexpr double kDefaultSimilarityTemperature = 0.07;
inline constexpr int kDefaultWindowRadius = 2;
inline constexpr double kDefaultMatchThreshold = 0.2;

struct SimilarityMatrix {
    Matrix<double> values;  // cosine / tau
    Matrix<double> cosine;  // pre-temperature cosine
    double tau = kDefaultSimilarityTemperature;

    [[nodiscard]] Index size() const { return values.rows(); }
};

/// Rows of both inputs are l2-normalised before the product. Throws
/// NormalizationError naming a zero row, ConfigError for tau <= 0.
SimilarityMatrix pairwise_similarity(const Matrix<double>& bef, const Matrix<double>& aft,
                                     double tau = kDefaultSimilarityTemperature);

template <typename T>
SimilarityMatrix pairwise_similarity(const PatchFeatures<T>& bef, const PatchFeatures<T>& aft,
                                     double tau = kDefaultSimilarityTemperature) {
    if (!(bef.grid == aft.grid)) {
        throw DimensionError("pairwise_similarity: grids differ");
    }
    return pairwise_similarity(bef.features.value().template cast<double>(),
                               aft.features.value().template cast<double>(), tau);
}

/// Dense vote map over every displacement a grid admits.
class VoteMap {
public:
    VoteMap() = default;
    explicit VoteMap(GridShape grid);

    [[nodiscard]] GridShape grid() const { return grid_; }
    [[nodiscard]] int max_dy() const { return grid_.rows - 1; }
    [[nodiscard]] int max_dx() const { return grid_.cols - 1; }
    [[nodiscard]] double at(Shift s) const;
    void add(Shift s, double score);
    /// Rows indexed by dy + max_dy, columns by dx + max_dx.
    [[nodiscard]] const Matrix<double>& scores() const { return scores_; }
    /// Highest score; ties go to the smallest |dy| + |dx|, then row-major order.
    [[nodiscard]] Shift argmax() const;

private:
    GridShape grid_;
    Matrix<double> scores_;
};

struct VoteOutcome {
    VoteMap vote_map;
    Shift dominant_shift;
};

struct KeptPair {
    int bef = 0;
    int aft = 0;
    double similarity = 0.0;
};

struct VoteResult {
    VoteMap vote_map;
    Shift dominant_shift;
    Mask mask_bef;
    Mask mask_aft;
    std::vector<KeptPair> kept_pairs;
};

/// Displacement from patch i (before) to patch j (after) on the grid.
Shift displacement(int i, int j, GridShape grid);

/// Each before patch votes once, for the displacement to its most similar after
/// patch, with weight max(s_ij, 0). Ties in the argmax go to the smallest
/// displacement, then the smallest j.
VoteOutcome vote(const SimilarityMatrix& sim, GridShape grid);

/// Keeps (i, j) when j is i's best match and i is j's best match among pairs
/// within `radius` (Chebyshev) of the dominant shift, and their cosine is at
/// least `theta`. `radius` = nullopt disables the window.
VoteResult build_masks(const SimilarityMatrix& sim, Shift dominant_shift, std::optional<int> radius, double theta,
                       GridShape grid);

struct AlignmentConfig {
    double tau = kDefaultSimilarityTemperature;
    std::optional<int> radius = kDefaultWindowRadius;
    double theta = kDefaultMatchThreshold;
};

/// pairwise_similarity + vote + build_masks.
VoteResult align(const Matrix<double>& bef, const Matrix<double>& aft, GridShape grid,
                 const AlignmentConfig& config = {});

/// Masks marking the geometric overlap implied by a shift (ground truth for a planted shift).
std::pair<Mask, Mask> overlap_masks(Shift shift, GridShape grid);

double mask_iou(const Mask& a, const Mask& b);

}  // namespace hdccl
