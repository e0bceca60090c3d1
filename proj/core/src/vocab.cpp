#include "hdccl/vocab.hpp"

#include <json.hpp>

#include "hdccl/errors.hpp"

namespace hdccl {

Vocab::Vocab() {
    for (const char* s : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(s);
}

Vocab::Vocab(const std::vector<std::string>& tokens) : Vocab() {
    for (const auto& t : tokens) add(t);
}

void Vocab::add(const std::string& token) {
    if (ids_.count(token)) return;
    ids_.emplace(token, static_cast<int>(tokens_.size()));
    tokens_.push_back(token);
}

Vocab Vocab::caption_default() {
    std::vector<std::string> words = {"the",    "camera", "moves",  "is",    "static", "left",   "right",
                                      "up",     "down",   ".",      "a",     "appears", "disappears",
                                      "scene",  "remains", "unchanged", "and", "while", "view", "shifts"};
    for (int c = 0; c < kNumColors; ++c) words.emplace_back(to_string(static_cast<Color>(c)));
    for (int k = 1; k < kNumClasses; ++k) words.emplace_back(to_string(static_cast<ObjectClass>(k)));
    return Vocab(words);
}

int Vocab::id(const std::string& token) const {
    const auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size()) {
        throw VocabularyError("token id " + std::to_string(id) + " is outside [0, " + std::to_string(size()) + ")");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const TokenSeq& words) const {
    std::vector<int> out;
    out.reserve(words.size() + 2);
    out.push_back(kBos);
    for (const auto& w : words) out.push_back(id(w));
    out.push_back(kEos);
    return out;
}

TokenSeq Vocab::decode(const std::vector<int>& ids) const {
    TokenSeq out;
    for (int i : ids) {
        if (i == kEos) break;
        if (i == kPad || i == kBos) continue;
        out.push_back(token(i));
    }
    return out;
}

std::string Vocab::to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = static_cast<int>(i);
    return j.dump(2);
}

Vocab Vocab::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("vocab: ") + e.what(), 1);
    }
    if (!j.is_object()) {
        throw SchemaError("vocab: expected an object of token -> id", "vocab");
    }
    std::vector<std::string> by_id(j.size());
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!it.value().is_number_integer()) {
            throw SchemaError("vocab: id of '" + it.key() + "' is not an integer", it.key());
        }
        const auto id = it.value().get<long long>();
        if (id < 0 || id >= static_cast<long long>(by_id.size()) || !by_id[static_cast<std::size_t>(id)].empty()) {
            throw VocabularyError("vocab: ids must be dense and unique, bad id for '" + it.key() + "'");
        }
        by_id[static_cast<std::size_t>(id)] = it.key();
    }
    Vocab v;
    const Vocab specials;
    for (int s = 0; s < specials.size(); ++s) {
        if (s >= static_cast<int>(by_id.size()) || by_id[static_cast<std::size_t>(s)] != specials.token(s)) {
            throw VocabularyError("vocab: special token " + specials.token(s) + " must have id " + std::to_string(s));
        }
    }
    for (std::size_t i = static_cast<std::size_t>(specials.size()); i < by_id.size(); ++i) v.add(by_id[i]);
    return v;
}

}  // namespace hdccl
