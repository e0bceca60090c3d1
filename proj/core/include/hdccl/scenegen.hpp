#pragma once

// Synthetic aerial scene pairs with planted viewpoint shift, overlap rectangle,
// object changes and forward/reverse templated captions.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hdccl/tensor.hpp"

namespace hdccl {

/// Seed mixing used for every derived random stream.
std::uint64_t splitmix64(std::uint64_t x);

enum class ObjectClass : std::uint8_t { Empty, Building, Car, Tree, Road, ParkingLot };
enum class Color : std::uint8_t { Red, Green, Blue, White, Gray, Yellow };

inline constexpr int kNumClasses = 6;
inline constexpr int kNumColors = 6;
inline constexpr int kNumPrototypes = kNumClasses * kNumColors;

std::string_view to_string(ObjectClass c);
std::string_view to_string(Color c);
/// Throws SchemaError on an unknown name.
ObjectClass parse_object_class(std::string_view name);
Color parse_color(std::string_view name);

struct Cell {
    ObjectClass object = ObjectClass::Empty;
    Color color = Color::Red;

    [[nodiscard]] int prototype_index() const { return static_cast<int>(object) * kNumColors + static_cast<int>(color); }
    bool operator==(const Cell&) const = default;
};

struct SceneSpec {
    int height = 0;
    int width = 0;
    std::vector<Cell> cells;  // row-major

    SceneSpec() = default;
    SceneSpec(int h, int w) : height(h), width(w), cells(static_cast<std::size_t>(h * w)) {}

    [[nodiscard]] const Cell& at(int r, int c) const { return cells[static_cast<std::size_t>(r * width + c)]; }
    Cell& at(int r, int c) { return cells[static_cast<std::size_t>(r * width + c)]; }
    [[nodiscard]] int size() const { return height * width; }
    bool operator==(const SceneSpec&) const = default;
};

/// Displacement of content from the before image to the after image: the
/// before cell (r, c) is seen at (r + dy, c + dx) in the after image.
struct Shift {
    int dy = 0;
    int dx = 0;
    bool operator==(const Shift&) const = default;
    auto operator<=>(const Shift&) const = default;
};

struct Rect {
    int top = 0;
    int left = 0;
    int height = 0;
    int width = 0;

    [[nodiscard]] bool contains(int r, int c) const {
        return r >= top && r < top + height && c >= left && c < left + width;
    }
    [[nodiscard]] int area() const { return height * width; }
    bool operator==(const Rect&) const = default;
};

enum class ChangeKind : std::uint8_t { Add, Remove, Replace };
std::string_view to_string(ChangeKind k);
ChangeKind parse_change_kind(std::string_view name);

/// Position is in before-image coordinates and lies inside the overlap rectangle.
struct ChangeOp {
    ChangeKind kind = ChangeKind::Add;
    int row = 0;
    int col = 0;
    ObjectClass before_class = ObjectClass::Empty;
    ObjectClass after_class = ObjectClass::Empty;
    bool operator==(const ChangeOp&) const = default;
};

using TokenSeq = std::vector<std::string>;

struct PairRecord {
    std::string pair_id;
    SceneSpec before;
    SceneSpec after;
    Shift shift;
    Rect overlap_rect;  // before-image coordinates
    std::vector<ChangeOp> changes;
    std::vector<TokenSeq> captions_forward;
    std::vector<TokenSeq> captions_reverse;
    std::uint64_t seed = 0;
    bool operator==(const PairRecord&) const = default;
};

struct GenConfig {
    int height = 8;
    int width = 8;
    int max_shift = 3;
    int num_changes = 1;
    double min_overlap_fraction = 0.4;
    /// World cells closer than this (Chebyshev) never share a (class, color); 0 disables.
    int distinct_radius = 2;
    std::optional<Shift> forced_shift;
};

/// Overlap of the two views in before-image coordinates.
Rect overlap_rect_for(Shift shift, int height, int width);

/// The after-image rectangle covering the same content as `overlap_rect_for`.
Rect overlap_rect_after(Shift shift, int height, int width);

/// Direction word for the camera motion implied by a shift: left/right/up/down or static.
std::string_view direction_word(Shift shift);
std::string_view opposite_direction(std::string_view word);

PairRecord generate_pair(std::uint64_t seed, const GenConfig& config);

/// Deterministic split: ids are "<split>-<index>", seeds derived from (master_seed, split, index).
std::vector<PairRecord> generate_split(std::uint64_t master_seed, const std::string& split, int count,
                                       const GenConfig& config);

/// Fixed per-(class, color) prototype vectors of length d_in.
class PrototypeTable {
public:
    explicit PrototypeTable(int d_in, std::uint64_t seed = 1);

    [[nodiscard]] int dim() const { return static_cast<int>(table_.cols()); }
    [[nodiscard]] const Matrix<double>& table() const { return table_; }
    [[nodiscard]] Eigen::RowVectorXd prototype(const Cell& cell) const { return table_.row(cell.prototype_index()); }

private:
    Matrix<double> table_;  // kNumPrototypes x d_in
};

/// Rendered raw patches: one row per cell (row-major), prototype + N(0, noise_sigma) noise.
Matrix<double> render(const SceneSpec& scene, double noise_sigma, std::uint64_t seed, const PrototypeTable& prototypes);

void write_dataset(const std::vector<PairRecord>& records, const std::filesystem::path& path);
std::vector<PairRecord> read_dataset(const std::filesystem::path& path);

std::string to_json_line(const PairRecord& record);
/// `line_number` is used only in error messages.
PairRecord from_json_line(const std::string& line, std::size_t line_number = 1);

}  // namespace hdccl
