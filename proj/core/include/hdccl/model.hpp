#pragma once

// The full captioning model and the per-pair forward pass shared by training,
// evaluation and the command-line tool.

#include <cstdint>
#include <optional>
#include <string_view>

#include "hdccl/captioner.hpp"
#include "hdccl/distill.hpp"
#include "hdccl/shiftvote.hpp"

namespace hdccl {

/// How the overlap masks fed to the model are obtained.
enum class MaskPolicy {
    Voted,                  // shift voting with the direction window
    AllOnes,                // every patch treated as common
    Random,                 // Bernoulli(0.5) per patch
    RandomDirectionWindow,  // window centred on a random shift instead of the voted one
    NoDirectionWindow,      // plain mutual nearest neighbours
};

std::string_view to_string(MaskPolicy p);
MaskPolicy parse_mask_policy(std::string_view name);

/// Which change representations the decoder attends to.
enum class DecoderMemory { First, Both };

std::string_view to_string(DecoderMemory m);
DecoderMemory parse_decoder_memory(std::string_view name);

/// Patch features handed to the difference head.
enum class DistillFeatures {
    Encoder,          // embedded patches X_o
    EncoderPosition,  // X_o plus the learned position table
    Dalt,             // context-enhanced patches from the global DALT pass
};

std::string_view to_string(DistillFeatures f);
DistillFeatures parse_distill_features(std::string_view name);

struct ModelConfig {
    int d_in = 48;
    int d = 64;
    int heads = 2;
    int ffn_hidden = 128;
    GridShape grid{8, 8};
    int max_len = 32;
    double noise_sigma = 0.1;
    std::uint64_t prototype_seed = 1;
    double vote_tau = kDefaultSimilarityTemperature;
    std::optional<int> radius = kDefaultWindowRadius;
    double theta = kDefaultMatchThreshold;
    MaskPolicy mask_policy = MaskPolicy::Voted;
    DecoderMemory decoder_memory = DecoderMemory::First;
    DistillFeatures distill_features = DistillFeatures::Encoder;
    Activation activation = Activation::Tanh;

    /// Throws ConfigError on an inconsistent configuration.
    void validate() const;
};

template <typename T>
struct ModelParams {
    EncoderParams<T> encoder;
    DaltParams<T> dalt;
    DistillParams<T> distill;
    DecoderParams<T> decoder;

    ModelParams() = default;
    ModelParams(const ModelConfig& config, int vocab_size, std::uint64_t seed);

    [[nodiscard]] ParamList<T> parameters() const;
};

/// Rendered features and the (constant) masks of one pair.
struct PreparedPair {
    Matrix<double> raw_bef;
    Matrix<double> raw_aft;
    VoteResult vote;
    Mask mask_bef;
    Mask mask_aft;
};

/// Renders both views and derives masks according to config.mask_policy.
/// Deterministic in (record, config).
PreparedPair prepare_pair(const PairRecord& record, const ModelConfig& config, const PrototypeTable& prototypes);

template <typename T>
struct PairForward {
    PatchFeatures<T> x_bef;  // context-enhanced patch features from DALT
    PatchFeatures<T> x_aft;
    RegionFeatures<T> rf_bef;
    RegionFeatures<T> rf_aft;
    ContextVectors<T> cv_forward;
    ContextVectors<T> cv_reverse;
    DifferenceRepr<T> forward;  // D of the before image, images in (bef, aft) order
    DifferenceRepr<T> reverse;  // D of the after image, images in (aft, bef) order
    Var<T> memory_forward;      // what the decoder attends to
    Var<T> memory_reverse;
};

/// `with_reverse` = false skips the reverse pass (inference).
template <typename T>
PairForward<T> forward_pair(const PreparedPair& pair, const ModelConfig& config, const ModelParams<T>& params,
                            bool with_reverse = true);

/// Greedy caption for the forward direction.
template <typename T>
TokenSeq caption_pair(const PreparedPair& pair, const ModelConfig& config, const ModelParams<T>& params,
                      const Vocab& vocab);

}  // namespace hdccl
