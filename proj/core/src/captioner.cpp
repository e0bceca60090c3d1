#include "hdccl/captioner.hpp"

#include <cmath>
#include <limits>

namespace hdccl {

CaptionBatch CaptionBatch::from_sequences(const std::vector<std::vector<int>>& sequences) {
    std::size_t width = 0;
    for (const auto& s : sequences) width = std::max(width, s.size());
    CaptionBatch batch;
    for (std::size_t b = 0; b < sequences.size(); ++b) {
        const auto& s = sequences[b];
        if (s.size() < 2 || s.front() != Vocab::kBos || s.back() != Vocab::kEos) {
            throw VocabularyError("caption " + std::to_string(b) + " must start with BOS and end with EOS");
        }
        for (std::size_t t = 0; t + 1 < s.size(); ++t) {
            if (s[t] == Vocab::kEos || s[t] == Vocab::kPad) {
                throw VocabularyError("caption " + std::to_string(b) + " has EOS or PAD before its end");
            }
        }
        std::vector<int> ids = s;
        ids.resize(width, Vocab::kPad);
        std::vector<std::uint8_t> mask(width, 0);
        std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(s.size()), 1);
        batch.token_ids.push_back(std::move(ids));
        batch.pad_mask.push_back(std::move(mask));
        batch.lengths.push_back(static_cast<int>(s.size()));
    }
    return batch;
}

template <typename T>
Matrix<T> sinusoidal_positions(Index length, Index dim) {
    Matrix<T> pe(length, dim);
    for (Index pos = 0; pos < length; ++pos) {
        for (Index i = 0; i < dim; ++i) {
            const double rate = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
            const double angle = static_cast<double>(pos) / rate;
            pe(pos, i) = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    }
    return pe;
}

template <typename T>
DecodeOutput<T> decode_sequence(const Var<T>& memory, const std::vector<int>& ids, const DecoderParams<T>& params,
                                std::vector<Matrix<T>>* cross_weights) {
    const auto m = static_cast<Index>(ids.size());
    if (m == 0) {
        throw LengthError("decode: empty token sequence");
    }
    if (m > params.max_len) {
        throw LengthError("decode: sequence of length " + std::to_string(m) + " exceeds the maximum " +
                          std::to_string(params.max_len));
    }
    if (memory.cols() != params.dim() || memory.rows() == 0) {
        throw DimensionError("decode: memory must be non-empty with width " + std::to_string(params.dim()));
    }
    std::vector<Index> rows;
    rows.reserve(ids.size());
    for (int id : ids) {
        if (id < 0 || id >= params.vocab_size()) {
            throw VocabularyError("decode: token id " + std::to_string(id) + " is outside [0, " +
                                  std::to_string(params.vocab_size()) + ")");
        }
        rows.push_back(id);
    }
    Matrix<T> causal = Matrix<T>::Zero(m, m);
    for (Index i = 0; i < m; ++i) {
        for (Index j = i + 1; j < m; ++j) causal(i, j) = -std::numeric_limits<T>::infinity();
    }
    Var<T> e = add(gather_rows(params.embedding, rows), Var<T>::constant(sinusoidal_positions<T>(m, params.dim())));
    DecodeOutput<T> out;
    out.text = params.norm1(add(e, params.self_attention(e, e, &causal)));
    Var<T> h = params.norm2(add(out.text, params.cross_attention(out.text, memory, nullptr, cross_weights)));
    out.hidden = params.norm3(add(h, params.ffn(h)));
    out.logits = params.output(out.hidden);
    return out;
}

template <typename T>
std::vector<DecodeOutput<T>> decode_train(const std::vector<Var<T>>& memories, const CaptionBatch& batch,
                                          const DecoderParams<T>& params) {
    if (static_cast<int>(memories.size()) != batch.size()) {
        throw DimensionError("decode_train: " + std::to_string(memories.size()) + " memories for " +
                             std::to_string(batch.size()) + " captions");
    }
    std::vector<DecodeOutput<T>> out;
    out.reserve(memories.size());
    for (std::size_t b = 0; b < memories.size(); ++b) {
        out.push_back(decode_sequence(memories[b], batch.token_ids[b], params));
    }
    return out;
}

template <typename T>
Var<T> caption_loss(const std::vector<Var<T>>& logits, const CaptionBatch& batch) {
    if (static_cast<int>(logits.size()) != batch.size() || logits.empty()) {
        throw DimensionError("caption_loss: logits and batch sizes differ or are empty");
    }
    std::vector<Var<T>> per_sequence;
    per_sequence.reserve(logits.size());
    for (std::size_t b = 0; b < logits.size(); ++b) {
        const auto& ids = batch.token_ids[b];
        const auto& mask = batch.pad_mask[b];
        std::vector<std::pair<Index, Index>> targets;
        for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
            if (mask[t + 1]) targets.emplace_back(static_cast<Index>(t), ids[t + 1]);
        }
        if (targets.empty()) {
            throw EmptyTargetError("caption_loss: sequence " + std::to_string(b) + " has no target tokens");
        }
        if (logits[b].rows() != static_cast<Index>(ids.size())) {
            throw DimensionError("caption_loss: logits rows do not match sequence " + std::to_string(b));
        }
        per_sequence.push_back(sum(pick(log_softmax_rows(logits[b]), targets)));
    }
    return scale(mean(concat_rows(per_sequence)), T(-1));
}

template <typename T>
std::vector<int> generate(const Var<T>& memory, const DecoderParams<T>& params, int max_len) {
    if (max_len < 2) {
        throw ConfigError("generate: max_len must be at least 2");
    }
    NoGradGuard no_grad;
    const int limit = std::min(max_len, params.max_len - 1);
    std::vector<int> ids = {Vocab::kBos};
    std::vector<int> out;
    while (static_cast<int>(out.size()) < limit) {
        const DecodeOutput<T> step = decode_sequence(memory, ids, params);
        const auto last = step.logits.value().row(step.logits.rows() - 1);
        // PAD and BOS are never emitted.
        Index best = Vocab::kEos;
        for (Index k = Vocab::kEos + 1; k < last.cols(); ++k) {
            if (last(k) > last(best)) best = k;
        }
        const int id = static_cast<int>(best);
        out.push_back(id);
        if (id == Vocab::kEos) break;
        ids.push_back(id);
    }
    return out;
}

#define HDCCL_INSTANTIATE_CAPTIONER(T)                                                                           \
    template Matrix<T> sinusoidal_positions<T>(Index, Index);                                                    \
    template DecodeOutput<T> decode_sequence<T>(const Var<T>&, const std::vector<int>&, const DecoderParams<T>&, \
                                                std::vector<Matrix<T>>*);                                        \
    template std::vector<DecodeOutput<T>> decode_train<T>(const std::vector<Var<T>>&, const CaptionBatch&,       \
                                                          const DecoderParams<T>&);                              \
    template Var<T> caption_loss<T>(const std::vector<Var<T>>&, const CaptionBatch&);                            \
    template std::vector<int> generate<T>(const Var<T>&, const DecoderParams<T>&, int);

HDCCL_INSTANTIATE_CAPTIONER(float)
HDCCL_INSTANTIATE_CAPTIONER(double)

}  // namespace hdccl
