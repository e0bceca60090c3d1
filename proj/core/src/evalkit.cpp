#include "hdccl/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <set>
#include <sstream>

#include "hdccl/errors.hpp"

namespace hdccl {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const TokenSeq& s, std::size_t n) {
    NgramCounts out;
    if (s.size() < n) return out;
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
        ++out[std::vector<std::string>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                       s.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return out;
}

void check_corpus(std::size_t hyps, const std::vector<std::vector<TokenSeq>>& refs, const char* what) {
    if (hyps == 0) throw DimensionError(std::string(what) + ": empty corpus");
    if (hyps != refs.size()) throw DimensionError(std::string(what) + ": hypothesis and reference counts differ");
    for (const auto& r : refs) {
        if (r.empty()) throw DimensionError(std::string(what) + ": every hypothesis needs a reference");
    }
}

}  // namespace

BleuResult bleu4_details(const std::vector<TokenSeq>& hypotheses,
                         const std::vector<std::vector<TokenSeq>>& references) {
    check_corpus(hypotheses.size(), references, "bleu4");
    BleuResult res;
    std::array<std::size_t, 4> matched{};
    std::array<std::size_t, 4> total{};
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        const TokenSeq& hyp = hypotheses[i];
        if (hyp.empty()) ++res.empty_hypotheses;
        res.hypothesis_length += hyp.size();
        std::size_t best_len = references[i].front().size();
        for (const auto& ref : references[i]) {
            const auto diff = [&](std::size_t len) {
                return len > hyp.size() ? len - hyp.size() : hyp.size() - len;
            };
            if (diff(ref.size()) < diff(best_len) || (diff(ref.size()) == diff(best_len) && ref.size() < best_len)) {
                best_len = ref.size();
            }
        }
        res.reference_length += best_len;
        for (std::size_t n = 1; n <= 4; ++n) {
            const NgramCounts h = ngrams(hyp, n);
            NgramCounts max_ref;
            for (const auto& ref : references[i]) {
                for (const auto& [g, c] : ngrams(ref, n)) max_ref[g] = std::max(max_ref[g], c);
            }
            for (const auto& [g, c] : h) {
                const auto it = max_ref.find(g);
                matched[n - 1] += std::min(c, it == max_ref.end() ? std::size_t{0} : it->second);
                total[n - 1] += c;
            }
        }
    }
    double log_sum = 0.0;
    bool zero = false;
    for (std::size_t n = 0; n < 4; ++n) {
        res.precisions[n] = total[n] == 0 ? 0.0 : static_cast<double>(matched[n]) / static_cast<double>(total[n]);
        if (res.precisions[n] == 0.0) {
            zero = true;
        } else {
            log_sum += std::log(res.precisions[n]);
        }
    }
    const double c = static_cast<double>(res.hypothesis_length);
    const double r = static_cast<double>(res.reference_length);
    res.brevity_penalty = c == 0.0 ? 0.0 : (c > r ? 1.0 : std::exp(1.0 - r / c));
    res.score = zero ? 0.0 : res.brevity_penalty * std::exp(log_sum / 4.0);
    return res;
}

double bleu4(const std::vector<TokenSeq>& hypotheses, const std::vector<std::vector<TokenSeq>>& references) {
    return bleu4_details(hypotheses, references).score;
}

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0);
    std::vector<std::size_t> cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l(const std::vector<TokenSeq>& hypotheses, const std::vector<std::vector<TokenSeq>>& references,
               double beta) {
    check_corpus(hypotheses.size(), references, "rouge_l");
    if (!(beta > 0.0)) throw ConfigError("rouge_l: beta must be positive");
    double total = 0.0;
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        double best = 0.0;
        for (const auto& ref : references[i]) {
            const auto lcs = static_cast<double>(lcs_length(hypotheses[i], ref));
            if (lcs == 0.0) continue;
            const double p = lcs / static_cast<double>(hypotheses[i].size());
            const double r = lcs / static_cast<double>(ref.size());
            const double f = (1.0 + beta * beta) * p * r / (r + beta * beta * p);
            best = std::max(best, f);
        }
        total += best;
    }
    return total / static_cast<double>(hypotheses.size());
}

ObjectLexicon default_object_lexicon() {
    ObjectLexicon lex;
    for (int k = 1; k < kNumClasses; ++k) {
        const std::string name(to_string(static_cast<ObjectClass>(k)));
        lex[name] = name;
    }
    return lex;
}

VerbLexicon default_verb_lexicon() { return {{"appears", VerbFamily::Appear}, {"disappears", VerbFamily::Disappear}}; }

std::vector<ObjectMention> parse_mentions(const TokenSeq& caption, const ObjectLexicon& objects,
                                          const VerbLexicon& verbs) {
    std::vector<ObjectMention> out;
    for (std::size_t i = 0; i < caption.size(); ++i) {
        const auto obj = objects.find(caption[i]);
        if (obj == objects.end()) continue;
        ObjectMention m{obj->second, std::nullopt};
        for (std::size_t j = i + 1; j < caption.size(); ++j) {
            if (caption[j] == "." || objects.count(caption[j])) break;
            const auto v = verbs.find(caption[j]);
            if (v != verbs.end()) {
                m.verb = v->second;
                break;
            }
        }
        out.push_back(std::move(m));
    }
    return out;
}

std::optional<double> ObjectStatsRow::accuracy() const {
    const int denom = pred_a + pred_d + pred_desc;
    if (denom == 0) return std::nullopt;
    return static_cast<double>(corr_a + corr_d + co_mentioned) / static_cast<double>(denom);
}

std::vector<ObjectStatsRow> object_change_stats(const std::vector<TokenSeq>& hypotheses,
                                                const std::vector<TokenSeq>& references,
                                                const ObjectLexicon& objects, const VerbLexicon& verbs) {
    if (objects.empty() || verbs.empty()) throw ConfigError("object_change_stats: lexicons must be non-empty");
    if (hypotheses.size() != references.size()) {
        throw DimensionError("object_change_stats: hypothesis and reference counts differ");
    }
    std::vector<std::string> names;
    for (const auto& [surface, object] : objects) {
        if (std::find(names.begin(), names.end(), object) == names.end()) names.push_back(object);
    }
    std::vector<ObjectStatsRow> rows;
    for (const auto& n : names) rows.push_back(ObjectStatsRow{n});

    struct Status {
        bool mentioned = false, appear = false, disappear = false;
    };
    auto status_of = [&](const TokenSeq& caption) {
        std::map<std::string, Status> s;
        for (const auto& m : parse_mentions(caption, objects, verbs)) {
            Status& st = s[m.object];
            st.mentioned = true;
            if (m.verb == VerbFamily::Appear) st.appear = true;
            if (m.verb == VerbFamily::Disappear) st.disappear = true;
        }
        return s;
    };
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        const auto hyp = status_of(hypotheses[i]);
        const auto ref = status_of(references[i]);
        for (auto& row : rows) {
            const auto h = hyp.find(row.object);
            if (h == hyp.end()) continue;
            const auto r = ref.find(row.object);
            const Status rs = r == ref.end() ? Status{} : r->second;
            const Status& hs = h->second;
            if (hs.appear) {
                ++row.pred_a;
                if (rs.appear) ++row.corr_a;
            }
            if (hs.disappear) {
                ++row.pred_d;
                if (rs.disappear) ++row.corr_d;
            }
            if (!hs.appear && !hs.disappear) {
                ++row.pred_desc;
                if (rs.mentioned) ++row.co_mentioned;
            }
        }
    }
    return rows;
}

double change_detection_acc(const std::vector<TokenSeq>& hypotheses, const std::vector<PairRecord>& records) {
    if (hypotheses.size() != records.size()) {
        throw DimensionError("change_detection_acc: " + std::to_string(hypotheses.size()) + " hypotheses for " +
                             std::to_string(records.size()) + " pairs");
    }
    if (records.empty()) throw DimensionError("change_detection_acc: no pairs");
    const ObjectLexicon objects = default_object_lexicon();
    const VerbLexicon verbs = default_verb_lexicon();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        std::set<std::pair<std::string, VerbFamily>> stated;
        for (const auto& m : parse_mentions(hypotheses[i], objects, verbs)) {
            if (m.verb) stated.emplace(m.object, *m.verb);
        }
        std::set<std::pair<std::string, VerbFamily>> required;
        for (const auto& c : records[i].changes) {
            if (c.kind != ChangeKind::Remove) required.emplace(std::string(to_string(c.after_class)), VerbFamily::Appear);
            if (c.kind != ChangeKind::Add) {
                required.emplace(std::string(to_string(c.before_class)), VerbFamily::Disappear);
            }
        }
        const bool ok = required.empty() ? stated.empty()
                                         : std::includes(stated.begin(), stated.end(), required.begin(), required.end());
        if (ok) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(records.size());
}

std::string MetricReport::to_json() const {
    nlohmann::ordered_json j;
    j["bleu4"] = bleu4;
    j["rouge_l"] = rouge_l;
    j["change_detection_acc"] = change_detection_acc;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : object_stats) {
        nlohmann::ordered_json row;
        row["object"] = r.object;
        row["pred_a"] = r.pred_a;
        row["pred_d"] = r.pred_d;
        row["pred_desc"] = r.pred_desc;
        row["corr_a"] = r.corr_a;
        row["corr_d"] = r.corr_d;
        row["co_mentioned"] = r.co_mentioned;
        const auto acc = r.accuracy();
        row["accuracy"] = acc ? nlohmann::ordered_json(*acc) : nlohmann::ordered_json(nullptr);
        rows.push_back(row);
    }
    j["object_stats"] = rows;
    return j.dump(2);
}

std::string MetricReport::to_table() const {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-22s %8.4f\n%-22s %8.4f\n%-22s %8.4f\n", "BLEU-4", bleu4, "ROUGE-L", rouge_l,
                  "change_detection_acc", change_detection_acc);
    out << buf;
    std::snprintf(buf, sizeof buf, "%-12s %7s %7s %9s %7s %7s %12s %9s\n", "object", "pred_a", "pred_d", "pred_desc",
                  "corr_a", "corr_d", "co_mentioned", "accuracy");
    out << buf;
    for (const auto& r : object_stats) {
        const auto acc = r.accuracy();
        char acc_text[16];
        if (acc) {
            std::snprintf(acc_text, sizeof acc_text, "%.1f%%", 100.0 * *acc);
        } else {
            std::snprintf(acc_text, sizeof acc_text, "NA");
        }
        std::snprintf(buf, sizeof buf, "%-12s %7d %7d %9d %7d %7d %12d %9s\n", r.object.c_str(), r.pred_a, r.pred_d,
                      r.pred_desc, r.corr_a, r.corr_d, r.co_mentioned, acc_text);
        out << buf;
    }
    return out.str();
}

MetricReport evaluate_captions(const std::vector<TokenSeq>& hypotheses, const std::vector<PairRecord>& records) {
    std::vector<std::vector<TokenSeq>> refs;
    std::vector<TokenSeq> first_refs;
    refs.reserve(records.size());
    for (const auto& r : records) {
        refs.push_back(r.captions_forward);
        first_refs.push_back(r.captions_forward.empty() ? TokenSeq{} : r.captions_forward.front());
    }
    MetricReport report;
    report.bleu4 = bleu4(hypotheses, refs);
    report.rouge_l = rouge_l(hypotheses, refs);
    report.change_detection_acc = change_detection_acc(hypotheses, records);
    report.object_stats = object_change_stats(hypotheses, first_refs, default_object_lexicon(), default_verb_lexicon());
    return report;
}

}  // namespace hdccl
