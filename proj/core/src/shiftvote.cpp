#include "hdccl/shiftvote.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>

namespace hdccl {

namespace {

int l1(Shift s) { return std::abs(s.dy) + std::abs(s.dx); }

int chebyshev(Shift a, Shift b) { return std::max(std::abs(a.dy - b.dy), std::abs(a.dx - b.dx)); }

}  // namespace

SimilarityMatrix pairwise_similarity(const Matrix<double>& bef, const Matrix<double>& aft, double tau) {
    if (!(tau > 0.0)) {
        throw ConfigError("similarity temperature must be positive");
    }
    if (bef.rows() != aft.rows() || bef.cols() != aft.cols()) {
        throw DimensionError("pairwise_similarity: feature shapes differ");
    }
    auto normalised = [](const Matrix<double>& x) {
        Matrix<double> out = x;
        for (Index r = 0; r < out.rows(); ++r) {
            const double n = out.row(r).norm();
            if (!(n > 0.0)) {
                throw NormalizationError("pairwise_similarity: row " + std::to_string(r) + " has zero norm", r);
            }
            out.row(r) /= n;
        }
        return out;
    };
    SimilarityMatrix sim;
    sim.tau = tau;
    sim.cosine = normalised(bef) * normalised(aft).transpose();
    sim.values = sim.cosine / tau;
    return sim;
}

VoteMap::VoteMap(GridShape grid)
    : grid_(grid), scores_(Matrix<double>::Zero(2 * grid.rows - 1, 2 * grid.cols - 1)) {}

double VoteMap::at(Shift s) const {
    if (std::abs(s.dy) > max_dy() || std::abs(s.dx) > max_dx()) return 0.0;
    return scores_(s.dy + max_dy(), s.dx + max_dx());
}

void VoteMap::add(Shift s, double score) { scores_(s.dy + max_dy(), s.dx + max_dx()) += score; }

Shift VoteMap::argmax() const {
    Shift best{0, 0};
    double best_score = at(best);
    for (int dy = -max_dy(); dy <= max_dy(); ++dy) {
        for (int dx = -max_dx(); dx <= max_dx(); ++dx) {
            const Shift s{dy, dx};
            const double score = at(s);
            if (score > best_score || (score == best_score && l1(s) < l1(best))) {
                best = s;
                best_score = score;
            }
        }
    }
    return best;
}

Shift displacement(int i, int j, GridShape grid) {
    return Shift{j / grid.cols - i / grid.cols, j % grid.cols - i % grid.cols};
}

VoteOutcome vote(const SimilarityMatrix& sim, GridShape grid) {
    const Index n = sim.values.rows();
    if (n == 0 || sim.values.cols() == 0) {
        throw DimensionError("vote: empty similarity matrix");
    }
    if (n != grid.size() || sim.values.cols() != n) {
        throw DimensionError("vote: similarity matrix is " + std::to_string(n) + "x" +
                             std::to_string(sim.values.cols()) + " but the grid has " + std::to_string(grid.size()) +
                             " patches");
    }
    VoteOutcome out{VoteMap(grid), Shift{}};
    for (int i = 0; i < n; ++i) {
        int best = 0;
        for (int j = 1; j < n; ++j) {
            const double s = sim.values(i, j);
            const double b = sim.values(i, best);
            if (s > b || (s == b && l1(displacement(i, j, grid)) < l1(displacement(i, best, grid)))) {
                best = j;
            }
        }
        out.vote_map.add(displacement(i, best, grid), std::max(sim.values(i, best), 0.0));
    }
    out.dominant_shift = out.vote_map.argmax();
    return out;
}

VoteResult build_masks(const SimilarityMatrix& sim, Shift dominant_shift, std::optional<int> radius, double theta,
                       GridShape grid) {
    if (radius && *radius < 0) {
        throw ConfigError("direction window radius must be non-negative");
    }
    if (!(theta >= -1.0 && theta <= 1.0)) {
        throw ConfigError("match threshold must lie in [-1, 1]");
    }
    const int n = static_cast<int>(sim.values.rows());
    if (n != grid.size() || sim.values.cols() != n) {
        throw DimensionError("build_masks: similarity matrix does not match the grid");
    }
    auto in_window = [&](int i, int j) {
        return !radius || chebyshev(displacement(i, j, grid), dominant_shift) <= *radius;
    };
    constexpr double kNone = -std::numeric_limits<double>::infinity();
    std::vector<int> best_aft(static_cast<std::size_t>(n), -1);
    std::vector<int> best_bef(static_cast<std::size_t>(n), -1);
    std::vector<double> best_aft_score(static_cast<std::size_t>(n), kNone);
    std::vector<double> best_bef_score(static_cast<std::size_t>(n), kNone);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (!in_window(i, j)) continue;
            const double s = sim.values(i, j);
            if (s > best_aft_score[static_cast<std::size_t>(i)]) {
                best_aft_score[static_cast<std::size_t>(i)] = s;
                best_aft[static_cast<std::size_t>(i)] = j;
            }
            if (s > best_bef_score[static_cast<std::size_t>(j)]) {
                best_bef_score[static_cast<std::size_t>(j)] = s;
                best_bef[static_cast<std::size_t>(j)] = i;
            }
        }
    }
    VoteResult out;
    out.dominant_shift = dominant_shift;
    out.mask_bef.assign(static_cast<std::size_t>(n), 0);
    out.mask_aft.assign(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        const int j = best_aft[static_cast<std::size_t>(i)];
        if (j < 0 || best_bef[static_cast<std::size_t>(j)] != i) continue;
        const double cos = sim.cosine.size() ? sim.cosine(i, j) : sim.values(i, j) * sim.tau;
        if (cos < theta) continue;
        out.kept_pairs.push_back({i, j, sim.values(i, j)});
        out.mask_bef[static_cast<std::size_t>(i)] = 1;
        out.mask_aft[static_cast<std::size_t>(j)] = 1;
    }
    return out;
}

VoteResult align(const Matrix<double>& bef, const Matrix<double>& aft, GridShape grid, const AlignmentConfig& config) {
    const SimilarityMatrix sim = pairwise_similarity(bef, aft, config.tau);
    VoteOutcome voted = vote(sim, grid);
    VoteResult result = build_masks(sim, voted.dominant_shift, config.radius, config.theta, grid);
    result.vote_map = std::move(voted.vote_map);
    return result;
}

std::pair<Mask, Mask> overlap_masks(Shift shift, GridShape grid) {
    const Rect b = overlap_rect_for(shift, grid.rows, grid.cols);
    const Rect a = overlap_rect_after(shift, grid.rows, grid.cols);
    Mask mb(static_cast<std::size_t>(grid.size()), 0);
    Mask ma(static_cast<std::size_t>(grid.size()), 0);
    for (int r = 0; r < grid.rows; ++r) {
        for (int c = 0; c < grid.cols; ++c) {
            const auto idx = static_cast<std::size_t>(r * grid.cols + c);
            mb[idx] = b.contains(r, c) ? 1 : 0;
            ma[idx] = a.contains(r, c) ? 1 : 0;
        }
    }
    return {mb, ma};
}

double mask_iou(const Mask& a, const Mask& b) {
    if (a.size() != b.size()) {
        throw DimensionError("mask_iou: mask lengths differ");
    }
    std::size_t inter = 0;
    std::size_t uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += (a[i] && b[i]) ? 1 : 0;
        uni += (a[i] || b[i]) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace hdccl
