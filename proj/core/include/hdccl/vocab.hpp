#pragma once

// Token <-> id mapping for the caption decoder.

#include <string>
#include <unordered_map>
#include <vector>

#include "hdccl/scenegen.hpp"

namespace hdccl {

class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    /// Specials only.
    Vocab();
    /// Specials followed by `tokens` in order; duplicates are ignored.
    explicit Vocab(const std::vector<std::string>& tokens);

    /// Every word the caption templates can produce.
    static Vocab caption_default();

    [[nodiscard]] int size() const { return static_cast<int>(tokens_.size()); }
    [[nodiscard]] bool contains(const std::string& token) const { return ids_.count(token) != 0; }
    /// Unknown tokens map to kUnk.
    [[nodiscard]] int id(const std::string& token) const;
    /// Throws VocabularyError for an out-of-range id.
    [[nodiscard]] const std::string& token(int id) const;
    [[nodiscard]] const std::vector<std::string>& tokens() const { return tokens_; }

    /// [BOS, ids..., EOS]
    [[nodiscard]] std::vector<int> encode(const TokenSeq& words) const;
    /// Drops specials and stops at the first EOS.
    [[nodiscard]] TokenSeq decode(const std::vector<int>& ids) const;

    /// JSON object token -> id.
    [[nodiscard]] std::string to_json() const;
    static Vocab from_json(const std::string& text);

    bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

private:
    void add(const std::string& token);

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

}  // namespace hdccl
