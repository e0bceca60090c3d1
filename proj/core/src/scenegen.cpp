#include "hdccl/scenegen.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "hdccl/errors.hpp"

namespace hdccl {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

namespace {

using json = nlohmann::json;

constexpr std::array<std::string_view, kNumClasses> kClassNames = {"empty", "building", "car",
                                                                   "tree",  "road",     "parking_lot"};
constexpr std::array<std::string_view, kNumColors> kColorNames = {"red", "green", "blue", "white", "gray", "yellow"};
constexpr std::array<std::string_view, 3> kKindNames = {"add", "remove", "replace"};

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char ch : s) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    return h;
}

int uniform_int(Rng& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Cell cell_from_index(int proto) {
    return Cell{static_cast<ObjectClass>(proto / kNumColors), static_cast<Color>(proto % kNumColors)};
}

// World grid large enough to hold both views.
struct World {
    int rows;
    int cols;
    std::vector<int> protos;

    int& at(int r, int c) { return protos[static_cast<std::size_t>(r * cols + c)]; }
    [[nodiscard]] int at(int r, int c) const { return protos[static_cast<std::size_t>(r * cols + c)]; }

    // Prototypes present within `radius` of (r, c), excluding (r, c) itself.
    [[nodiscard]] std::array<bool, kNumPrototypes> neighbourhood(int r, int c, int radius) const {
        std::array<bool, kNumPrototypes> used{};
        for (int rr = std::max(0, r - radius); rr <= std::min(rows - 1, r + radius); ++rr) {
            for (int cc = std::max(0, c - radius); cc <= std::min(cols - 1, c + radius); ++cc) {
                if ((rr != r || cc != c) && at(rr, cc) >= 0) {
                    used[static_cast<std::size_t>(at(rr, cc))] = true;
                }
            }
        }
        return used;
    }
};

// Uniform choice among prototypes accepted by `allowed`, preferring ones not in `used`.
template <typename Pred>
int choose_prototype(Rng& rng, const std::array<bool, kNumPrototypes>& used, Pred&& allowed) {
    std::vector<int> fresh;
    std::vector<int> any;
    for (int p = 0; p < kNumPrototypes; ++p) {
        if (!allowed(cell_from_index(p))) continue;
        any.push_back(p);
        if (!used[static_cast<std::size_t>(p)]) fresh.push_back(p);
    }
    const auto& pool = fresh.empty() ? any : fresh;
    return pool[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(pool.size()) - 1))];
}

struct CaptionEvent {
    Cell cell;
    bool appears;
};

TokenSeq event_tokens(const CaptionEvent& e) {
    return {"a", std::string(to_string(e.cell.color)), std::string(to_string(e.cell.object)),
            e.appears ? "appears" : "disappears"};
}

std::vector<TokenSeq> build_captions(const std::vector<CaptionEvent>& events, std::string_view direction) {
    const std::string dir(direction);
    const bool is_static = direction == "static";

    TokenSeq first;
    if (is_static) {
        first = {"the", "camera", "is", "static", "."};
    } else {
        first = {"the", "camera", "moves", dir, "."};
    }
    if (events.empty()) {
        first.insert(first.end(), {"the", "scene", "remains", "unchanged", "."});
    }
    for (const auto& e : events) {
        auto toks = event_tokens(e);
        first.insert(first.end(), toks.begin(), toks.end());
        first.push_back(".");
    }

    TokenSeq second;
    if (events.empty()) {
        second = {"the", "scene", "remains", "unchanged"};
    }
    for (std::size_t i = 0; i < events.size(); ++i) {
        if (i > 0) second.push_back("and");
        auto toks = event_tokens(events[i]);
        second.insert(second.end(), toks.begin(), toks.end());
    }
    if (is_static) {
        second.insert(second.end(), {"while", "the", "view", "is", "static", "."});
    } else {
        second.insert(second.end(), {"while", "the", "view", "shifts", dir, "."});
    }
    return {first, second};
}

void validate(const GenConfig& cfg) {
    if (cfg.height < 4 || cfg.width < 4) {
        throw ConfigError("grid must be at least 4x4, got " + std::to_string(cfg.height) + "x" +
                          std::to_string(cfg.width));
    }
    if (cfg.max_shift < 0 || cfg.max_shift >= std::min(cfg.height, cfg.width)) {
        throw ConfigError("max_shift must lie in [0, min(grid dims)), got " + std::to_string(cfg.max_shift));
    }
    if (!(cfg.min_overlap_fraction > 0.0) || cfg.min_overlap_fraction > 1.0) {
        throw ConfigError("min_overlap_fraction must lie in (0, 1]");
    }
    if (cfg.num_changes < 0) {
        throw ConfigError("num_changes must be non-negative");
    }
    if (cfg.distinct_radius < 0) {
        throw ConfigError("distinct_radius must be non-negative");
    }
}

bool overlap_ok(Shift s, const GenConfig& cfg) {
    const double area = static_cast<double>((cfg.height - std::abs(s.dy)) * (cfg.width - std::abs(s.dx)));
    return area + 1e-9 >= cfg.min_overlap_fraction * cfg.height * cfg.width;
}

json scene_to_json(const SceneSpec& s) {
    json rows = json::array();
    for (int r = 0; r < s.height; ++r) {
        json row = json::array();
        for (int c = 0; c < s.width; ++c) {
            row.push_back({std::string(to_string(s.at(r, c).object)), std::string(to_string(s.at(r, c).color))});
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

const json& field(const json& obj, const char* name) {
    if (!obj.is_object() || !obj.contains(name)) {
        throw SchemaError(std::string("missing field \"") + name + "\"", name);
    }
    return obj.at(name);
}

SceneSpec scene_from_json(const json& j, const char* name) {
    if (!j.is_array() || j.empty()) {
        throw SchemaError(std::string("field \"") + name + "\" must be a non-empty list of rows", name);
    }
    const int h = static_cast<int>(j.size());
    const int w = static_cast<int>(j.front().size());
    SceneSpec s(h, w);
    for (int r = 0; r < h; ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<int>(row.size()) != w) {
            throw SchemaError(std::string("field \"") + name + "\" has ragged rows", name);
        }
        for (int c = 0; c < w; ++c) {
            const auto& pair = row[static_cast<std::size_t>(c)];
            if (!pair.is_array() || pair.size() != 2) {
                throw SchemaError(std::string("field \"") + name + "\" cells must be [class, color]", name);
            }
            s.at(r, c) = Cell{parse_object_class(pair[0].get<std::string>()), parse_color(pair[1].get<std::string>())};
        }
    }
    return s;
}

}  // namespace

std::string_view to_string(ObjectClass c) { return kClassNames[static_cast<std::size_t>(c)]; }
std::string_view to_string(Color c) { return kColorNames[static_cast<std::size_t>(c)]; }
std::string_view to_string(ChangeKind k) { return kKindNames[static_cast<std::size_t>(k)]; }

ObjectClass parse_object_class(std::string_view name) {
    for (std::size_t i = 0; i < kClassNames.size(); ++i) {
        if (kClassNames[i] == name) return static_cast<ObjectClass>(i);
    }
    throw SchemaError("unknown object class \"" + std::string(name) + "\"", "class");
}

Color parse_color(std::string_view name) {
    for (std::size_t i = 0; i < kColorNames.size(); ++i) {
        if (kColorNames[i] == name) return static_cast<Color>(i);
    }
    throw SchemaError("unknown color \"" + std::string(name) + "\"", "color");
}

ChangeKind parse_change_kind(std::string_view name) {
    for (std::size_t i = 0; i < kKindNames.size(); ++i) {
        if (kKindNames[i] == name) return static_cast<ChangeKind>(i);
    }
    throw SchemaError("unknown change kind \"" + std::string(name) + "\"", "kind");
}

Rect overlap_rect_for(Shift shift, int height, int width) {
    Rect r;
    r.top = std::max(0, -shift.dy);
    r.left = std::max(0, -shift.dx);
    r.height = std::max(0, height - std::abs(shift.dy));
    r.width = std::max(0, width - std::abs(shift.dx));
    return r;
}

Rect overlap_rect_after(Shift shift, int height, int width) {
    Rect r = overlap_rect_for(shift, height, width);
    r.top += shift.dy;
    r.left += shift.dx;
    return r;
}

std::string_view direction_word(Shift s) {
    // Content moving by (dy, dx) means the camera moved the opposite way.
    if (s.dy == 0 && s.dx == 0) return "static";
    if (std::abs(s.dx) >= std::abs(s.dy)) return s.dx < 0 ? "right" : "left";
    return s.dy < 0 ? "down" : "up";
}

std::string_view opposite_direction(std::string_view word) {
    if (word == "left") return "right";
    if (word == "right") return "left";
    if (word == "up") return "down";
    if (word == "down") return "up";
    return word;
}

PairRecord generate_pair(std::uint64_t seed, const GenConfig& cfg) {
    validate(cfg);
    const int h = cfg.height;
    const int w = cfg.width;
    const int min_overlap = static_cast<int>(std::ceil(cfg.min_overlap_fraction * h * w - 1e-9));

    Rng rng(splitmix64(seed));

    Shift shift;
    if (cfg.forced_shift) {
        shift = *cfg.forced_shift;
        if (std::abs(shift.dy) > cfg.max_shift || std::abs(shift.dx) > cfg.max_shift) {
            throw ConfigError("forced shift exceeds max_shift");
        }
        if (!overlap_ok(shift, cfg)) {
            throw ConfigError("forced shift leaves less than min_overlap_fraction of the grid overlapping");
        }
    } else {
        std::vector<Shift> valid;
        for (int dy = -cfg.max_shift; dy <= cfg.max_shift; ++dy) {
            for (int dx = -cfg.max_shift; dx <= cfg.max_shift; ++dx) {
                if (overlap_ok({dy, dx}, cfg)) valid.push_back({dy, dx});
            }
        }
        shift = valid[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(valid.size()) - 1))];
    }
    const Rect overlap = overlap_rect_for(shift, h, w);
    const int capacity = cfg.forced_shift ? overlap.area() : min_overlap;
    if (cfg.num_changes > capacity) {
        throw CapacityError("requested " + std::to_string(cfg.num_changes) + " changes but the overlap holds only " +
                            std::to_string(capacity) + " cells");
    }

    // World coordinates: before cell (r, c) sits at (r + oy, c + ox).
    const int oy = std::max(0, shift.dy);
    const int ox = std::max(0, shift.dx);
    World world{h + std::abs(shift.dy), w + std::abs(shift.dx), {}};
    world.protos.assign(static_cast<std::size_t>(world.rows * world.cols), -1);
    for (int r = 0; r < world.rows; ++r) {
        for (int c = 0; c < world.cols; ++c) {
            const auto used = world.neighbourhood(r, c, cfg.distinct_radius);
            world.at(r, c) = choose_prototype(rng, used, [](const Cell&) { return true; });
        }
    }

    // Change positions: distinct overlap cells, kept in row-major order.
    std::vector<int> slots(static_cast<std::size_t>(overlap.area()));
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = static_cast<int>(i);
    std::shuffle(slots.begin(), slots.end(), rng);
    slots.resize(static_cast<std::size_t>(cfg.num_changes));
    std::sort(slots.begin(), slots.end());

    struct Planned {
        ChangeOp op;
        int after_proto;
    };
    std::vector<Planned> planned;
    for (int slot : slots) {
        const int r = overlap.top + slot / overlap.width;
        const int c = overlap.left + slot % overlap.width;
        const int wr = r + oy;
        const int wc = c + ox;
        const auto kind = static_cast<ChangeKind>(uniform_int(rng, 0, 2));
        const auto used = world.neighbourhood(wr, wc, cfg.distinct_radius);
        Cell current = cell_from_index(world.at(wr, wc));

        const bool need_empty_before = kind == ChangeKind::Add;
        if ((current.object == ObjectClass::Empty) != need_empty_before) {
            world.at(wr, wc) = choose_prototype(rng, used, [&](const Cell& cand) {
                return (cand.object == ObjectClass::Empty) == need_empty_before;
            });
            current = cell_from_index(world.at(wr, wc));
        }
        auto used_after = used;
        used_after[static_cast<std::size_t>(world.at(wr, wc))] = true;
        const int after = choose_prototype(rng, used_after, [&](const Cell& cand) {
            switch (kind) {
                case ChangeKind::Add:
                    return cand.object != ObjectClass::Empty;
                case ChangeKind::Remove:
                    return cand.object == ObjectClass::Empty;
                case ChangeKind::Replace:
                    return cand.object != ObjectClass::Empty && cand.object != current.object;
            }
            return false;
        });
        planned.push_back({ChangeOp{kind, r, c, current.object, cell_from_index(after).object}, after});
    }

    PairRecord rec;
    rec.seed = seed;
    rec.pair_id = "pair-" + std::to_string(seed);
    rec.shift = shift;
    rec.overlap_rect = overlap;
    rec.before = SceneSpec(h, w);
    rec.after = SceneSpec(h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            rec.before.at(r, c) = cell_from_index(world.at(r + oy, c + ox));
            rec.after.at(r, c) = cell_from_index(world.at(r - shift.dy + oy, c - shift.dx + ox));
        }
    }
    std::vector<CaptionEvent> forward;
    std::vector<CaptionEvent> reverse;
    for (const auto& p : planned) {
        const Cell before_cell = rec.before.at(p.op.row, p.op.col);
        const Cell after_cell = cell_from_index(p.after_proto);
        rec.after.at(p.op.row + shift.dy, p.op.col + shift.dx) = after_cell;
        rec.changes.push_back(p.op);
        if (p.op.kind != ChangeKind::Add) {
            forward.push_back({before_cell, false});
            reverse.push_back({before_cell, true});
        }
        if (p.op.kind != ChangeKind::Remove) {
            forward.push_back({after_cell, true});
            reverse.push_back({after_cell, false});
        }
    }
    // Disappearances are listed before appearances in both directions.
    const auto disappear_first = [](const CaptionEvent& a, const CaptionEvent& b) { return !a.appears && b.appears; };
    std::stable_sort(forward.begin(), forward.end(), disappear_first);
    std::stable_sort(reverse.begin(), reverse.end(), disappear_first);

    const std::string_view dir = direction_word(shift);
    rec.captions_forward = build_captions(forward, dir);
    rec.captions_reverse = build_captions(reverse, opposite_direction(dir));
    return rec;
}

std::vector<PairRecord> generate_split(std::uint64_t master_seed, const std::string& split, int count,
                                       const GenConfig& config) {
    if (count < 0) {
        throw ConfigError("pair count must be non-negative");
    }
    std::vector<PairRecord> out;
    out.reserve(static_cast<std::size_t>(count));
    const std::uint64_t base = splitmix64(master_seed ^ fnv1a(split));
    for (int i = 0; i < count; ++i) {
        const std::uint64_t seed = splitmix64(base + static_cast<std::uint64_t>(i)) >> 16;
        PairRecord rec = generate_pair(seed, config);
        std::ostringstream id;
        id << split << "-" << std::setw(6) << std::setfill('0') << i;
        rec.pair_id = id.str();
        out.push_back(std::move(rec));
    }
    return out;
}

PrototypeTable::PrototypeTable(int d_in, std::uint64_t seed) {
    if (d_in <= 0) {
        throw ConfigError("prototype dimension must be positive");
    }
    Rng rng(splitmix64(seed));
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix<double> gauss(d_in, kNumPrototypes);
    for (Index j = 0; j < gauss.cols(); ++j) {
        for (Index i = 0; i < gauss.rows(); ++i) gauss(i, j) = normal(rng);
    }
    const double target_norm = std::sqrt(static_cast<double>(d_in));
    if (d_in >= kNumPrototypes) {
        // Exactly orthogonal prototypes.
        Eigen::HouseholderQR<Matrix<double>> qr(gauss);
        Matrix<double> q = qr.householderQ() * Matrix<double>::Identity(d_in, kNumPrototypes);
        table_ = q.transpose() * target_norm;
    } else {
        table_ = gauss.transpose();
        for (Index i = 0; i < table_.rows(); ++i) table_.row(i) *= target_norm / table_.row(i).norm();
    }
}

Matrix<double> render(const SceneSpec& scene, double noise_sigma, std::uint64_t seed, const PrototypeTable& prototypes) {
    if (!(noise_sigma >= 0.0)) {
        throw ConfigError("noise_sigma must be non-negative");
    }
    const int n = scene.size();
    Matrix<double> out(n, prototypes.dim());
    for (int i = 0; i < n; ++i) {
        out.row(i) = prototypes.table().row(scene.cells[static_cast<std::size_t>(i)].prototype_index());
    }
    if (noise_sigma > 0.0) {
        Rng rng(splitmix64(seed ^ 0x5EED5EEDULL));
        std::normal_distribution<double> normal(0.0, noise_sigma);
        for (Index i = 0; i < out.rows(); ++i) {
            for (Index j = 0; j < out.cols(); ++j) out(i, j) += normal(rng);
        }
    }
    return out;
}

std::string to_json_line(const PairRecord& rec) {
    json j;
    j["pair_id"] = rec.pair_id;
    j["before"] = scene_to_json(rec.before);
    j["after"] = scene_to_json(rec.after);
    j["shift"] = {rec.shift.dy, rec.shift.dx};
    j["overlap_rect"] = {rec.overlap_rect.top, rec.overlap_rect.left, rec.overlap_rect.height, rec.overlap_rect.width};
    json changes = json::array();
    for (const auto& ch : rec.changes) {
        changes.push_back({{"kind", std::string(to_string(ch.kind))},
                           {"position", {ch.row, ch.col}},
                           {"before_class", std::string(to_string(ch.before_class))},
                           {"after_class", std::string(to_string(ch.after_class))}});
    }
    j["changes"] = std::move(changes);
    j["captions_forward"] = rec.captions_forward;
    j["captions_reverse"] = rec.captions_reverse;
    j["seed"] = rec.seed;
    return j.dump();
}

PairRecord from_json_line(const std::string& line, std::size_t line_number) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ParseError("line " + std::to_string(line_number) + ": malformed JSON (" + e.what() + ")", line_number);
    }
    if (!j.is_object()) {
        throw ParseError("line " + std::to_string(line_number) + ": expected a JSON object", line_number);
    }
    try {
        PairRecord rec;
        rec.pair_id = field(j, "pair_id").get<std::string>();
        rec.before = scene_from_json(field(j, "before"), "before");
        rec.after = scene_from_json(field(j, "after"), "after");
        const auto shift = field(j, "shift").get<std::vector<int>>();
        if (shift.size() != 2) throw SchemaError("field \"shift\" must hold [dy, dx]", "shift");
        rec.shift = {shift[0], shift[1]};
        const auto rect = field(j, "overlap_rect").get<std::vector<int>>();
        if (rect.size() != 4) {
            throw SchemaError("field \"overlap_rect\" must hold [top, left, height, width]", "overlap_rect");
        }
        rec.overlap_rect = {rect[0], rect[1], rect[2], rect[3]};
        for (const auto& ch : field(j, "changes")) {
            ChangeOp op;
            op.kind = parse_change_kind(field(ch, "kind").get<std::string>());
            const auto pos = field(ch, "position").get<std::vector<int>>();
            if (pos.size() != 2) throw SchemaError("change position must hold [row, col]", "position");
            op.row = pos[0];
            op.col = pos[1];
            op.before_class = parse_object_class(field(ch, "before_class").get<std::string>());
            op.after_class = parse_object_class(field(ch, "after_class").get<std::string>());
            rec.changes.push_back(op);
        }
        rec.captions_forward = field(j, "captions_forward").get<std::vector<TokenSeq>>();
        rec.captions_reverse = field(j, "captions_reverse").get<std::vector<TokenSeq>>();
        rec.seed = field(j, "seed").get<std::uint64_t>();
        return rec;
    } catch (const SchemaError& e) {
        throw SchemaError("line " + std::to_string(line_number) + ": " + e.what(), e.field());
    } catch (const json::exception& e) {
        throw SchemaError("line " + std::to_string(line_number) + ": wrong field type (" + e.what() + ")", "");
    }
}

void write_dataset(const std::vector<PairRecord>& records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    for (const auto& rec : records) {
        out << to_json_line(rec) << '\n';
    }
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

std::vector<PairRecord> read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<PairRecord> out;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        out.push_back(from_json_line(line, number));
    }
    return out;
}

}  // namespace hdccl
