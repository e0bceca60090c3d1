#include "hdccl/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>

#include "hdccl/errors.hpp"
#include "hdccl/evalkit.hpp"
#include "hdccl/gradcheck.hpp"
#include "hdccl/heatmap.hpp"
#include "hdccl/trainer.hpp"

namespace hdccl::cli {

namespace fs = std::filesystem;

namespace {

constexpr int kDefaultTrainPairs = 4000;

struct SeedOption {
    std::optional<std::uint64_t> flag;

    /// Explicit flag, then HDCCL_SEED, then `fallback`.
    [[nodiscard]] std::uint64_t resolve(std::uint64_t fallback) const {
        if (flag) return *flag;
        if (const char* env = std::getenv("HDCCL_SEED"); env != nullptr && *env != '\0') {
            try {
                std::size_t used = 0;
                const unsigned long long v = std::stoull(env, &used);
                if (used == std::string(env).size()) return v;
            } catch (const std::exception&) {
            }
            throw UsageError("HDCCL_SEED must be a non-negative integer, got \"" + std::string(env) + "\"");
        }
        return fallback;
    }
};

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("cannot write " + path.string());
}

void require_readable(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("no such file: " + path.string());
}

struct GenDataArgs {
    fs::path out;
    int pairs = 100;
    SeedOption seed;
    std::string split = "train";
    GenConfig gen;
    int max_shift = -1;
};

int gen_data(const GenDataArgs& a, std::ostream& out) {
    GenConfig gen = a.gen;
    if (a.max_shift >= 0) gen.max_shift = a.max_shift;
    if (a.pairs < 0) throw UsageError("--pairs must be non-negative");
    const auto records = generate_split(a.seed.resolve(1), a.split, a.pairs, gen);
    if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
    write_dataset(records, a.out);
    out << "wrote " << records.size() << " pairs to " << a.out.string() << "\n";
    return kExitOk;
}

struct TrainArgs {
    std::optional<fs::path> config;
    std::optional<fs::path> data;
    fs::path out = "run";
    std::optional<int> iterations;
    std::optional<fs::path> eval_data;
    int pairs = kDefaultTrainPairs;
    SeedOption seed;
    std::string variant = "full";
};

TrainConfig resolve_config(const TrainArgs& a) {
    TrainConfig config = a.config ? TrainConfig::load(*a.config) : TrainConfig{};
    config.seed = a.seed.resolve(config.seed);
    if (a.iterations) config.iterations = *a.iterations;
    apply_variant(config, a.variant);
    config.validate();
    return config;
}

void print_losses(const std::vector<LossReport>& log, std::ostream& out) {
    if (log.empty()) return;
    const LossReport& first = log.front();
    const LossReport& last = log.back();
    out << "steps " << log.size() << "  l_cap " << first.l_cap << " -> " << last.l_cap << "  total " << first.total
        << " -> " << last.total << "\n";
}

int train_command(const TrainArgs& a, std::ostream& out) {
    const TrainConfig config = resolve_config(a);
    if (a.data) require_readable(*a.data);
    if (a.eval_data) require_readable(*a.eval_data);
    const std::vector<PairRecord> records =
        a.data ? read_dataset(*a.data) : generate_split(config.seed, "train", a.pairs, GenConfig{});
    const TrainResult result = train(records, config, a.out);
    print_losses(result.log, out);
    out << "checkpoint written to " << (a.out / "checkpoint").string() << "\n";
    if (a.eval_data) {
        const auto test = read_dataset(*a.eval_data);
        const MetricReport report = evaluate_captions(caption_records(test, result.params, config, result.vocab), test);
        write_file(a.out / "metrics.json", report.to_json());
        out << report.to_table();
    }
    return kExitOk;
}

struct GradCheckArgs {
    std::string component = "all";
    double epsilon = 1e-5;
    int instances = 20;
    SeedOption seed;
    std::optional<fs::path> out;
    double tolerance = 1e-4;
};

int grad_check_command(const GradCheckArgs& a, std::ostream& out) {
    std::vector<GradComponent> components;
    if (a.component == "all") {
        components = all_grad_components();
    } else {
        components.push_back(parse_grad_component(a.component));
    }
    const std::uint64_t seed = a.seed.resolve(1);
    nlohmann::ordered_json reports = nlohmann::ordered_json::array();
    bool ok = true;
    for (GradComponent c : components) {
        const GradCheckReport report = grad_check(c, a.epsilon, seed, a.instances);
        const bool pass = report.max_rel_error() <= a.tolerance;
        ok = ok && pass;
        out << to_string(c) << "  max_rel_error " << report.max_rel_error() << "  " << (pass ? "ok" : "FAIL") << "\n";
        reports.push_back(nlohmann::ordered_json::parse(report.to_json()));
    }
    if (a.out) write_file(*a.out, reports.dump(2));
    return ok ? kExitOk : kExitRuntime;
}

struct EvalArgs {
    fs::path checkpoint;
    fs::path data;
    std::optional<fs::path> out;
    std::optional<fs::path> captions;
};

int eval_command(const EvalArgs& a, std::ostream& out) {
    require_readable(a.checkpoint / "manifest.json");
    require_readable(a.data);
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    const auto records = read_dataset(a.data);
    const auto hyps = caption_records(records, ckpt.params, ckpt.config, ckpt.vocab);
    const MetricReport report = evaluate_captions(hyps, records);
    if (a.out) write_file(*a.out, report.to_json());
    if (a.captions) {
        std::string text;
        for (std::size_t i = 0; i < hyps.size(); ++i) {
            nlohmann::ordered_json j;
            j["pair_id"] = records[i].pair_id;
            j["caption"] = hyps[i];
            text += j.dump() + "\n";
        }
        write_file(*a.captions, text);
    }
    out << report.to_table();
    return kExitOk;
}

struct HeatmapArgs {
    fs::path checkpoint;
    fs::path data;
    fs::path out = "heatmaps";
    int pairs = 1;
};

int heatmap_command(const HeatmapArgs& a, std::ostream& out) {
    require_readable(a.checkpoint / "manifest.json");
    require_readable(a.data);
    if (a.pairs < 1) throw UsageError("--pairs must be positive");
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    const auto records = read_dataset(a.data);
    const PrototypeTable prototypes(ckpt.config.model.d_in, ckpt.config.model.prototype_seed);
    fs::create_directories(a.out);
    const std::size_t n = std::min(records.size(), static_cast<std::size_t>(a.pairs));
    for (std::size_t i = 0; i < n; ++i) {
        const PairRecord& record = records[i];
        const PreparedPair pair = prepare_pair(record, ckpt.config.model, prototypes);
        write_pgm(a.out / (record.pair_id + ".vote_map.pgm"), pair.vote.vote_map.scores());
        write_pgm(a.out / (record.pair_id + ".cross_attention.pgm"),
                  cross_attention_map(pair, ckpt.config.model, ckpt.params));
        nlohmann::ordered_json j;
        j["pair_id"] = record.pair_id;
        j["dominant_shift"] = {pair.vote.dominant_shift.dy, pair.vote.dominant_shift.dx};
        j["planted_shift"] = {record.shift.dy, record.shift.dx};
        const Matrix<double>& s = pair.vote.vote_map.scores();
        nlohmann::ordered_json rows = nlohmann::ordered_json::array();
        for (Index r = 0; r < s.rows(); ++r) {
            std::vector<double> row(static_cast<std::size_t>(s.cols()));
            for (Index c = 0; c < s.cols(); ++c) row[static_cast<std::size_t>(c)] = s(r, c);
            rows.push_back(row);
        }
        j["vote_map"] = rows;
        write_file(a.out / (record.pair_id + ".vote_map.json"), j.dump(2));
    }
    out << "wrote heatmaps for " << n << " pairs to " << a.out.string() << "\n";
    return kExitOk;
}

std::string variant_list() {
    std::string s;
    for (const auto& v : ablation_variants()) s += (s.empty() ? "" : ", ") + v;
    return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Change captioning for partially overlapping image pairs", "hdccl"};
    app.require_subcommand(1, 1);
    app.set_help_all_flag("--help-all", "Show help for every command");

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic pair dataset as JSONL");
    gen_cmd->add_option("--out", gen.out, "Output JSONL path")->required();
    gen_cmd->add_option("--pairs", gen.pairs, "Number of pairs");
    gen_cmd->add_option("--seed", gen.seed.flag, "Master seed (default: HDCCL_SEED or 1)");
    gen_cmd->add_option("--split", gen.split, "Split name used in pair ids");
    gen_cmd->add_option("--height", gen.gen.height, "Grid rows");
    gen_cmd->add_option("--width", gen.gen.width, "Grid columns");
    gen_cmd->add_option("--max-shift", gen.max_shift, "Largest shift component");
    gen_cmd->add_option("--num-changes", gen.gen.num_changes, "Object changes per pair");

    TrainArgs train_args;
    auto add_train_options = [&](CLI::App* cmd) {
        cmd->add_option("--config", train_args.config, "TrainConfig JSON");
        cmd->add_option("--data", train_args.data, "Training JSONL (default: generated train split)");
        cmd->add_option("--pairs", train_args.pairs, "Pairs to generate when --data is absent");
        cmd->add_option("--out", train_args.out, "Run directory for the loss log and checkpoint");
        cmd->add_option("--iterations", train_args.iterations, "Override the iteration count");
        cmd->add_option("--eval", train_args.eval_data, "Held-out JSONL to evaluate after training");
        cmd->add_option("--seed", train_args.seed.flag, "Seed (default: config, overridden by HDCCL_SEED)");
    };
    auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
    add_train_options(train_cmd);
    auto* ablate_cmd = app.add_subcommand("ablate", "Train an ablation variant");
    add_train_options(ablate_cmd);
    ablate_cmd->add_option("--variant", train_args.variant, "One of: " + variant_list())->required();

    GradCheckArgs gc;
    auto* gc_cmd = app.add_subcommand("grad-check", "Compare analytic gradients with finite differences");
    gc_cmd->add_option("--component", gc.component, "Component name or \"all\"");
    gc_cmd->add_option("--epsilon", gc.epsilon, "Central-difference step");
    gc_cmd->add_option("--instances", gc.instances, "Random instances per component");
    gc_cmd->add_option("--tolerance", gc.tolerance, "Largest accepted relative error");
    gc_cmd->add_option("--seed", gc.seed.flag, "Seed (default: HDCCL_SEED or 1)");
    gc_cmd->add_option("--out", gc.out, "JSON report path");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Caption a dataset and score it");
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
    eval_cmd->add_option("--data", ev.data, "JSONL dataset")->required();
    eval_cmd->add_option("--out", ev.out, "MetricReport JSON path");
    eval_cmd->add_option("--captions", ev.captions, "Write generated captions as JSONL");

    HeatmapArgs hm;
    auto* hm_cmd = app.add_subcommand("heatmap", "Export vote maps and cross-attention as PGM images");
    hm_cmd->add_option("--checkpoint", hm.checkpoint, "Checkpoint directory")->required();
    hm_cmd->add_option("--data", hm.data, "JSONL dataset")->required();
    hm_cmd->add_option("--out", hm.out, "Output directory");
    hm_cmd->add_option("--pairs", hm.pairs, "Number of leading pairs to export");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        if (gen_cmd->parsed()) return gen_data(gen, out);
        if (train_cmd->parsed()) return train_command(train_args, out);
        if (ablate_cmd->parsed()) return train_command(train_args, out);
        if (gc_cmd->parsed()) return grad_check_command(gc, out);
        if (eval_cmd->parsed()) return eval_command(ev, out);
        if (hm_cmd->parsed()) return heatmap_command(hm, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, out, err);
}

}  // namespace hdccl::cli
