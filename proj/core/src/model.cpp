#include "hdccl/model.hpp"

#include <random>

namespace hdccl {

namespace {

constexpr std::uint64_t kBeforeNoise = 0xB3F0B3F0ULL;
constexpr std::uint64_t kAfterNoise = 0xAF7EAF7EULL;
constexpr std::uint64_t kMaskNoise = 0x3A5C3A5CULL;

template <typename T>
Matrix<T> to_precision(const Matrix<double>& m) {
    return m.template cast<T>();
}

}  // namespace

std::string_view to_string(MaskPolicy p) {
    switch (p) {
        case MaskPolicy::Voted: return "voted";
        case MaskPolicy::AllOnes: return "all-ones";
        case MaskPolicy::Random: return "random";
        case MaskPolicy::RandomDirectionWindow: return "random-direction-window";
        case MaskPolicy::NoDirectionWindow: return "no-direction-window";
    }
    return "voted";
}

MaskPolicy parse_mask_policy(std::string_view name) {
    for (MaskPolicy p : {MaskPolicy::Voted, MaskPolicy::AllOnes, MaskPolicy::Random,
                         MaskPolicy::RandomDirectionWindow, MaskPolicy::NoDirectionWindow}) {
        if (to_string(p) == name) return p;
    }
    throw ConfigError("unknown mask policy \"" + std::string(name) + "\"");
}

std::string_view to_string(DecoderMemory m) { return m == DecoderMemory::First ? "first" : "both"; }

DecoderMemory parse_decoder_memory(std::string_view name) {
    if (name == "first") return DecoderMemory::First;
    if (name == "both") return DecoderMemory::Both;
    throw ConfigError("unknown decoder memory \"" + std::string(name) + "\"");
}

std::string_view to_string(DistillFeatures f) {
    switch (f) {
        case DistillFeatures::Encoder: return "encoder";
        case DistillFeatures::EncoderPosition: return "encoder+position";
        case DistillFeatures::Dalt: return "dalt";
    }
    return "dalt";
}

DistillFeatures parse_distill_features(std::string_view name) {
    for (DistillFeatures f : {DistillFeatures::Encoder, DistillFeatures::EncoderPosition, DistillFeatures::Dalt}) {
        if (to_string(f) == name) return f;
    }
    throw ConfigError("unknown distill features \"" + std::string(name) + "\"");
}

void ModelConfig::validate() const {
    if (d_in <= 0 || d <= 0 || ffn_hidden <= 0) throw ConfigError("model widths must be positive");
    if (heads <= 0 || d % heads != 0) {
        throw ConfigError("model width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) +
                          " heads");
    }
    if (grid.rows < 1 || grid.cols < 1) throw ConfigError("grid must be non-empty");
    if (max_len < 2) throw ConfigError("max_len must be at least 2");
    if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be non-negative");
    if (!(vote_tau > 0.0)) throw ConfigError("vote_tau must be positive");
    if (radius && *radius < 0) throw ConfigError("R must be non-negative");
    if (!(theta >= -1.0 && theta <= 1.0)) throw ConfigError("theta must lie in [-1, 1]");
}

template <typename T>
ModelParams<T>::ModelParams(const ModelConfig& config, int vocab_size, std::uint64_t seed) {
    config.validate();
    Rng rng(splitmix64(seed));
    encoder = EncoderParams<T>(config.d_in, config.d, rng, config.activation);
    dalt = DaltParams<T>(config.d, config.heads, config.ffn_hidden, config.grid.size(), rng);
    distill = DistillParams<T>(config.d, config.heads, rng);
    decoder = DecoderParams<T>(vocab_size, config.d, config.heads, config.ffn_hidden, config.max_len, rng);
}

template <typename T>
ParamList<T> ModelParams<T>::parameters() const {
    ParamList<T> out;
    encoder.collect(out, "encoder");
    dalt.collect(out, "dalt");
    distill.collect(out, "distill");
    decoder.collect(out, "decoder");
    return out;
}

PreparedPair prepare_pair(const PairRecord& record, const ModelConfig& config, const PrototypeTable& prototypes) {
    const GridShape grid{record.before.height, record.before.width};
    if (!(grid == config.grid)) {
        throw ConfigError("pair " + record.pair_id + " has a " + std::to_string(grid.rows) + "x" +
                          std::to_string(grid.cols) + " grid but the model expects " +
                          std::to_string(config.grid.rows) + "x" + std::to_string(config.grid.cols));
    }
    PreparedPair out;
    out.raw_bef = render(record.before, config.noise_sigma, record.seed ^ kBeforeNoise, prototypes);
    out.raw_aft = render(record.after, config.noise_sigma, record.seed ^ kAfterNoise, prototypes);

    const SimilarityMatrix sim = pairwise_similarity(out.raw_bef, out.raw_aft, config.vote_tau);
    VoteOutcome voted = vote(sim, grid);
    Rng rng(splitmix64(record.seed ^ kMaskNoise));
    Shift centre = voted.dominant_shift;
    std::optional<int> radius = config.radius;
    if (config.mask_policy == MaskPolicy::RandomDirectionWindow) {
        const int r_max = std::max(grid.rows, grid.cols) - 1;
        std::uniform_int_distribution<int> pick(-r_max, r_max);
        centre.dy = std::clamp(pick(rng), -(grid.rows - 1), grid.rows - 1);
        centre.dx = std::clamp(pick(rng), -(grid.cols - 1), grid.cols - 1);
    } else if (config.mask_policy == MaskPolicy::NoDirectionWindow) {
        radius.reset();
    }
    out.vote = build_masks(sim, centre, radius, config.theta, grid);
    out.vote.dominant_shift = voted.dominant_shift;
    out.vote.vote_map = std::move(voted.vote_map);

    const auto n = static_cast<std::size_t>(grid.size());
    switch (config.mask_policy) {
        case MaskPolicy::AllOnes:
            out.mask_bef.assign(n, 1);
            out.mask_aft.assign(n, 1);
            break;
        case MaskPolicy::Random: {
            std::bernoulli_distribution coin(0.5);
            out.mask_bef.resize(n);
            out.mask_aft.resize(n);
            for (auto& m : out.mask_bef) m = coin(rng) ? 1 : 0;
            for (auto& m : out.mask_aft) m = coin(rng) ? 1 : 0;
            break;
        }
        default:
            out.mask_bef = out.vote.mask_bef;
            out.mask_aft = out.vote.mask_aft;
            break;
    }
    return out;
}

template <typename T>
PairForward<T> forward_pair(const PreparedPair& pair, const ModelConfig& config, const ModelParams<T>& params,
                            bool with_reverse) {
    PairForward<T> out;
    const PatchFeatures<T> raw_bef = embed(to_precision<T>(pair.raw_bef), config.grid, ImageTag::Bef, params.encoder);
    const PatchFeatures<T> raw_aft = embed(to_precision<T>(pair.raw_aft), config.grid, ImageTag::Aft, params.encoder);
    out.rf_bef = encode_regions(decompose(raw_bef, pair.mask_bef), raw_bef, params.dalt);
    out.rf_aft = encode_regions(decompose(raw_aft, pair.mask_aft), raw_aft, params.dalt);
    switch (config.distill_features) {
        case DistillFeatures::Encoder:
            out.x_bef = raw_bef;
            out.x_aft = raw_aft;
            break;
        case DistillFeatures::EncoderPosition:
            out.x_bef = PatchFeatures<T>{add(raw_bef.features, params.dalt.position), config.grid, ImageTag::Bef};
            out.x_aft = PatchFeatures<T>{add(raw_aft.features, params.dalt.position), config.grid, ImageTag::Aft};
            break;
        case DistillFeatures::Dalt:
            out.x_bef = PatchFeatures<T>{out.rf_bef.patch_features, config.grid, ImageTag::Bef};
            out.x_aft = PatchFeatures<T>{out.rf_aft.patch_features, config.grid, ImageTag::Aft};
            break;
    }

    out.cv_forward = context_encode(out.rf_bef, out.rf_aft, params.distill);
    out.forward = distill_difference(out.x_bef, out.x_aft, pair.mask_bef, pair.mask_aft, out.cv_forward,
                                     params.distill);
    if (with_reverse || config.decoder_memory == DecoderMemory::Both) {
        out.cv_reverse = context_encode(out.rf_aft, out.rf_bef, params.distill);
        out.reverse = distill_difference(out.x_aft, out.x_bef, pair.mask_aft, pair.mask_bef, out.cv_reverse,
                                         params.distill);
    }
    if (config.decoder_memory == DecoderMemory::Both) {
        out.memory_forward = concat_rows<T>({out.forward.d, out.reverse.d});
        out.memory_reverse = concat_rows<T>({out.reverse.d, out.forward.d});
    } else {
        out.memory_forward = out.forward.d;
        out.memory_reverse = out.reverse.d;
    }
    return out;
}

template <typename T>
TokenSeq caption_pair(const PreparedPair& pair, const ModelConfig& config, const ModelParams<T>& params,
                      const Vocab& vocab) {
    NoGradGuard no_grad;
    const PairForward<T> fwd = forward_pair(pair, config, params, false);
    return vocab.decode(generate(fwd.memory_forward, params.decoder, config.max_len - 1));
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template PairForward<float> forward_pair<float>(const PreparedPair&, const ModelConfig&, const ModelParams<float>&,
                                                bool);
template PairForward<double> forward_pair<double>(const PreparedPair&, const ModelConfig&,
                                                  const ModelParams<double>&, bool);
template TokenSeq caption_pair<float>(const PreparedPair&, const ModelConfig&, const ModelParams<float>&,
                                      const Vocab&);
template TokenSeq caption_pair<double>(const PreparedPair&, const ModelConfig&, const ModelParams<double>&,
                                       const Vocab&);

}  // namespace hdccl
