#pragma once

// Objective composition, the optimisation loop and checkpoint persistence.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hdccl/hcm_occ.hpp"
#include "hdccl/model.hpp"

namespace hdccl {

inline constexpr double kDefaultLambda = 0.01;

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 8;
    int iterations = 2000;
    double lambda = kDefaultLambda;
    double tau = kDefaultLossTemperature;
    double gamma = kDefaultMargin;
    std::optional<double> bandwidth;  // nullopt = median heuristic
    bool use_alignment = true;
    std::uint64_t seed = 1;
    std::string precision = "float";
    std::string vocab_path;  // empty = built-in caption vocabulary
    ModelConfig model;

    /// Throws ConfigError naming the offending field.
    void validate() const;

    [[nodiscard]] std::string to_json() const;
    /// Unknown keys are rejected; missing keys keep their defaults.
    static TrainConfig from_json(const std::string& text);
    static TrainConfig load(const std::filesystem::path& path);

    /// Full-scale optimisation settings: lr 2e-4, batch 32, 1e4 iterations, d = 512.
    static TrainConfig paper_preset();
};

/// Named ablation variants: full, no-mask, random-mask, random-direction-window,
/// no-direction-window, no-hcm-occ.
const std::vector<std::string>& ablation_variants();
/// Throws UsageError for an unknown variant.
void apply_variant(TrainConfig& config, const std::string& variant);

struct LossReport {
    int step = 0;
    double l_cap = 0.0;
    double l_glo = 0.0;
    double l_reg = 0.0;
    double l_hsic = 0.0;
    double l_align = 0.0;
    double total = 0.0;

    [[nodiscard]] std::string to_json() const;
    static LossReport from_json(const std::string& line);
};

/// l_cap + lambda (l_glo + l_reg + l_hsic + l_align). Throws NumericError naming
/// a non-finite part, ConfigError for negative lambda.
double total_loss(const LossReport& parts, double lambda);

/// Adam with β1 = 0.9, β2 = 0.999, eps = 1e-8 over a fixed parameter list.
template <typename T>
class Adam {
public:
    Adam(ParamList<T> params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    /// Applies one update from the accumulated gradients, then clears them.
    void step();
    [[nodiscard]] int steps() const { return t_; }

private:
    ParamList<T> params_;
    std::vector<Matrix<T>> m_;
    std::vector<Matrix<T>> v_;
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
};

/// Per-pair training inputs: prepared features plus the caption ids for both directions.
struct TrainingExample {
    const PreparedPair* pair = nullptr;
    std::vector<int> forward_ids;
    std::vector<int> reverse_ids;
};

template <typename T>
struct StepLosses {
    Var<T> cap;
    ContextLoss<T> con;
    Var<T> align;  // undefined when the alignment term is disabled
    Var<T> total;
    bool align_degenerate = false;
};

/// The full objective over one batch. `negatives[i]` is the batch index whose
/// direction vectors serve as negatives for example i.
template <typename T>
StepLosses<T> compute_losses(const std::vector<TrainingExample>& batch, const std::vector<std::size_t>& negatives,
                             const ModelParams<T>& params, const TrainConfig& config);

template <typename T>
LossReport report_of(const StepLosses<T>& losses, int step);

struct TrainResult {
    std::vector<LossReport> log;
    ModelParams<float> params;
    Vocab vocab;
};

/// Deterministic given config.seed. When `out_dir` is set, writes
/// out_dir/loss_log.jsonl and the checkpoint directory out_dir/checkpoint.
TrainResult train(const std::vector<PairRecord>& records, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);
TrainResult train(const std::filesystem::path& dataset_path, const TrainConfig& config,
                  const std::filesystem::path& out_dir);

struct Checkpoint {
    ModelParams<float> params;
    Vocab vocab;
    TrainConfig config;
};

/// Directory with params.bin (little-endian float32), manifest.json, vocab.json, config.json.
void save_checkpoint(const std::filesystem::path& dir, const ModelParams<float>& params, const Vocab& vocab,
                     const TrainConfig& config);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

Vocab load_vocab(const TrainConfig& config);

/// Greedy forward captions for each record.
std::vector<TokenSeq> caption_records(const std::vector<PairRecord>& records, const ModelParams<float>& params,
                                      const TrainConfig& config, const Vocab& vocab);

}  // namespace hdccl
