#pragma once

// Caption metrics and change-level accuracy against generated ground truth.

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hdccl/scenegen.hpp"

namespace hdccl {

struct BleuResult {
    double score = 0.0;
    std::array<double, 4> precisions{};
    double brevity_penalty = 0.0;
    std::size_t hypothesis_length = 0;
    std::size_t reference_length = 0;
    std::size_t empty_hypotheses = 0;  // items scored as zero
};

/// Corpus BLEU-4: clipped n-gram precisions (n = 1..4), uniform geometric mean,
/// brevity penalty against the closest reference length, no smoothing.
BleuResult bleu4_details(const std::vector<TokenSeq>& hypotheses, const std::vector<std::vector<TokenSeq>>& references);
double bleu4(const std::vector<TokenSeq>& hypotheses, const std::vector<std::vector<TokenSeq>>& references);

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b);

/// Mean over items of the best-reference LCS F-measure.
double rouge_l(const std::vector<TokenSeq>& hypotheses, const std::vector<std::vector<TokenSeq>>& references,
               double beta = 1.0);

enum class VerbFamily { Appear, Disappear };

using ObjectLexicon = std::map<std::string, std::string>;  // surface token -> object
using VerbLexicon = std::map<std::string, VerbFamily>;     // surface token -> family

ObjectLexicon default_object_lexicon();
VerbLexicon default_verb_lexicon();

/// One (object, verb) statement per object mention: the verb is the first verb
/// token after the object and before the next object or ".". Mentions with no
/// such verb carry nullopt.
struct ObjectMention {
    std::string object;
    std::optional<VerbFamily> verb;
};
std::vector<ObjectMention> parse_mentions(const TokenSeq& caption, const ObjectLexicon& objects,
                                          const VerbLexicon& verbs);

struct ObjectStatsRow {
    std::string object;
    int pred_a = 0;
    int pred_d = 0;
    int pred_desc = 0;
    int corr_a = 0;
    int corr_d = 0;
    int co_mentioned = 0;

    /// (corr_a + corr_d + co_mentioned) / (pred_a + pred_d + pred_desc); nullopt when the denominator is 0.
    [[nodiscard]] std::optional<double> accuracy() const;
};

/// Per image and object: Pred-A / Pred-D when the hypothesis states that change,
/// Pred-Desc when it mentions the object with neither; Corr-A / Corr-D when the
/// reference states the same change; Co-Mentioned when a Pred-Desc object is
/// also mentioned by the reference. Rows follow the object lexicon's order of objects.
std::vector<ObjectStatsRow> object_change_stats(const std::vector<TokenSeq>& hypotheses,
                                                const std::vector<TokenSeq>& references,
                                                const ObjectLexicon& objects, const VerbLexicon& verbs);

/// Fraction of pairs whose hypothesis states every planted change with the right
/// verb family (add: new class appears; remove: old class disappears; replace:
/// both). A pair without changes counts when the hypothesis states no change.
double change_detection_acc(const std::vector<TokenSeq>& hypotheses, const std::vector<PairRecord>& records);

struct MetricReport {
    double bleu4 = 0.0;
    double rouge_l = 0.0;
    double change_detection_acc = 0.0;
    std::vector<ObjectStatsRow> object_stats;

    [[nodiscard]] std::string to_json() const;
    /// Fixed-order plain-text table.
    [[nodiscard]] std::string to_table() const;
};

/// All metrics against the forward captions of `records`.
MetricReport evaluate_captions(const std::vector<TokenSeq>& hypotheses, const std::vector<PairRecord>& records);

}  // namespace hdccl
