#pragma once

// One-layer post-norm transformer decoder over the change representation D:
// masked self-attention, cross-attention to D, feed-forward, vocabulary projection.

#include <cstdint>
#include <vector>

#include "hdccl/nn.hpp"
#include "hdccl/vocab.hpp"

namespace hdccl {

struct CaptionBatch {
    std::vector<std::vector<int>> token_ids;          // B x m, PAD beyond each length
    std::vector<std::vector<std::uint8_t>> pad_mask;  // 1 where the token is real
    std::vector<int> lengths;

    /// Pads to the longest sequence. Each sequence must start with BOS and hold exactly one EOS, last.
    static CaptionBatch from_sequences(const std::vector<std::vector<int>>& sequences);

    [[nodiscard]] int size() const { return static_cast<int>(token_ids.size()); }
    [[nodiscard]] int width() const { return token_ids.empty() ? 0 : static_cast<int>(token_ids.front().size()); }
};

/// Fixed sinusoidal position table, rows = positions.
template <typename T>
Matrix<T> sinusoidal_positions(Index length, Index dim);

template <typename T>
struct DecoderParams {
    Var<T> embedding;  // u x d
    MultiHeadAttention<T> self_attention;
    LayerNorm<T> norm1;
    MultiHeadAttention<T> cross_attention;
    LayerNorm<T> norm2;
    FeedForward<T> ffn;
    LayerNorm<T> norm3;
    Linear<T> output;  // W_s, b_s
    int max_len = 32;

    DecoderParams() = default;
    DecoderParams(int vocab_size, Index dim, int heads, Index hidden, int max_length, Rng& rng)
        : embedding(Var<T>::parameter(random_normal<T>(vocab_size, dim, 0.1, rng))),
          self_attention(dim, heads, rng),
          norm1(dim),
          cross_attention(dim, heads, rng),
          norm2(dim),
          ffn(dim, hidden, rng),
          norm3(dim),
          output(dim, vocab_size, rng),
          max_len(max_length) {}

    [[nodiscard]] Index dim() const { return embedding.cols(); }
    [[nodiscard]] int vocab_size() const { return static_cast<int>(embedding.rows()); }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        out.push_back({prefix + ".embedding", embedding});
        self_attention.collect(out, prefix + ".self_attention");
        norm1.collect(out, prefix + ".norm1");
        cross_attention.collect(out, prefix + ".cross_attention");
        norm2.collect(out, prefix + ".norm2");
        ffn.collect(out, prefix + ".ffn");
        norm3.collect(out, prefix + ".norm3");
        output.collect(out, prefix + ".output");
    }
};

template <typename T>
struct DecodeOutput {
    Var<T> logits;  // m x u; row t scores the token at t + 1
    Var<T> hidden;  // Ĥ, m x d
    Var<T> text;    // post-self-attention states Ê, m x d
};

/// Teacher-forced pass over one id sequence. `cross_weights`, when non-null,
/// receives the per-head cross-attention matrices.
template <typename T>
DecodeOutput<T> decode_sequence(const Var<T>& memory, const std::vector<int>& ids, const DecoderParams<T>& params,
                                std::vector<Matrix<T>>* cross_weights = nullptr);

/// One memory (D) per batch row.
template <typename T>
std::vector<DecodeOutput<T>> decode_train(const std::vector<Var<T>>& memories, const CaptionBatch& batch,
                                          const DecoderParams<T>& params);

/// Summed next-token NLL over real targets of each sequence, averaged over the batch.
/// Throws EmptyTargetError when a sequence has nothing to predict.
template <typename T>
Var<T> caption_loss(const std::vector<Var<T>>& logits, const CaptionBatch& batch);

/// Greedy decoding from BOS over every id except PAD and BOS. Returns the ids after
/// BOS, ending at EOS or at max_len ids.
template <typename T>
std::vector<int> generate(const Var<T>& memory, const DecoderParams<T>& params, int max_len);

}  // namespace hdccl
