#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <sstream>

#include "hdccl/errors.hpp"
#include "hdccl/evalkit.hpp"

using namespace hdccl;

namespace {

TokenSeq words(const std::string& text) {
    std::istringstream in(text);
    TokenSeq out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

std::vector<std::vector<TokenSeq>> single(const std::vector<TokenSeq>& refs) {
    std::vector<std::vector<TokenSeq>> out;
    for (const auto& r : refs) out.push_back({r});
    return out;
}

const ObjectStatsRow& row_for(const std::vector<ObjectStatsRow>& rows, const std::string& object) {
    const auto it = std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.object == object; });
    REQUIRE(it != rows.end());
    return *it;
}

void repeat(std::vector<TokenSeq>& hyps, std::vector<TokenSeq>& refs, int n, const std::string& hyp,
            const std::string& ref) {
    for (int i = 0; i < n; ++i) {
        hyps.push_back(words(hyp));
        refs.push_back(words(ref));
    }
}

}  // namespace

TEST_CASE("bleu of identical corpora is one") {
    const std::vector<TokenSeq> c = {words("a red car appears on the left"), words("the scene is static .")};
    CHECK(bleu4(c, single(c)) == doctest::Approx(1.0));
}

TEST_CASE("bleu with one differing final token") {
    const auto r = bleu4_details({words("a b c d e")}, single({words("a b c d f")}));
    CHECK(r.precisions[0] == doctest::Approx(4.0 / 5.0));
    CHECK(r.precisions[1] == doctest::Approx(3.0 / 4.0));
    CHECK(r.precisions[2] == doctest::Approx(2.0 / 3.0));
    CHECK(r.precisions[3] == doctest::Approx(1.0 / 2.0));
    CHECK(r.brevity_penalty == doctest::Approx(1.0));
    CHECK(r.score == doctest::Approx(std::pow(0.2, 0.25)).epsilon(1e-12));
    CHECK(r.score == doctest::Approx(0.6687).epsilon(1e-4));
}

TEST_CASE("bleu without shared unigrams is zero") {
    CHECK(bleu4({words("x y z w")}, single({words("a b c d")})) == 0.0);
}

TEST_CASE("bleu brevity penalty and clipping") {
    const auto r = bleu4_details({words("a b c d")}, single({words("a b c d e f")}));
    CHECK(r.brevity_penalty == doctest::Approx(std::exp(1.0 - 6.0 / 4.0)));
    CHECK(r.score == doctest::Approx(std::exp(-0.5)));
    const auto clipped = bleu4_details({words("the the the the")}, single({words("the cat is here")}));
    CHECK(clipped.precisions[0] == doctest::Approx(0.25));
}

TEST_CASE("bleu picks the closest reference length") {
    const auto r = bleu4_details({words("a b c d")}, {{words("a b c d e f g h"), words("a b c d e")}});
    CHECK(r.reference_length == 5);
}

TEST_CASE("bleu deleting a matched 4-gram does not increase the score") {
    const TokenSeq ref = words("a red car appears near the green tree");
    const double full = bleu4({ref}, single({ref}));
    const double cut = bleu4({words("a red car appears near the green")}, single({ref}));
    CHECK(cut <= full);
}

TEST_CASE("bleu input validation") {
    CHECK_THROWS_AS(bleu4({}, {}), DimensionError);
    CHECK_THROWS_AS(bleu4({words("a")}, {}), DimensionError);
    CHECK_THROWS_AS(bleu4({words("a")}, {{}}), DimensionError);
    const auto r = bleu4_details({TokenSeq{}, words("a b c d")}, single({words("a b c d"), words("a b c d")}));
    CHECK(r.empty_hypotheses == 1);
}

TEST_CASE("rouge-l") {
    CHECK(lcs_length(words("a b c"), words("a c b")) == 2);
    CHECK(rouge_l({words("a b c")}, single({words("a b c")})) == doctest::Approx(1.0));
    CHECK(rouge_l({words("a b c")}, single({words("a c b")})) == doctest::Approx(2.0 / 3.0));
    CHECK(rouge_l({words("a b c")}, single({words("x y z")})) == 0.0);
    CHECK(rouge_l({words("a b c"), words("a b c")}, single({words("a b c"), words("x y")})) == doctest::Approx(0.5));
    CHECK(rouge_l({words("a b c")}, {{words("x y"), words("a b c")}}) == doctest::Approx(1.0));
}

TEST_CASE("mention parsing binds the next verb") {
    const auto m = parse_mentions(words("a car appears and a tree . a building disappears"), default_object_lexicon(),
                                  default_verb_lexicon());
    REQUIRE(m.size() == 3);
    CHECK(m[0].object == "car");
    CHECK(m[0].verb == VerbFamily::Appear);
    CHECK(m[1].object == "tree");
    CHECK_FALSE(m[1].verb.has_value());
    CHECK(m[2].verb == VerbFamily::Disappear);
}

TEST_CASE("object statistics reproduce the car row") {
    std::vector<TokenSeq> hyps, refs;
    repeat(hyps, refs, 2, "a car appears", "a car appears");
    repeat(hyps, refs, 4, "a car appears", "a tree appears");
    repeat(hyps, refs, 4, "a car disappears", "a car appears");
    repeat(hyps, refs, 6, "a car on the left", "a car remains");
    repeat(hyps, refs, 8, "a car on the left", "a tree disappears");
    const auto rows = object_change_stats(hyps, refs, default_object_lexicon(), default_verb_lexicon());
    const auto& car = row_for(rows, "car");
    CHECK(car.pred_a == 6);
    CHECK(car.pred_d == 4);
    CHECK(car.pred_desc == 14);
    CHECK(car.corr_a == 2);
    CHECK(car.corr_d == 0);
    CHECK(car.co_mentioned == 6);
    REQUIRE(car.accuracy().has_value());
    CHECK(*car.accuracy() == doctest::Approx(8.0 / 24.0));
    CHECK(100.0 * *car.accuracy() == doctest::Approx(33.3).epsilon(0.002));
    CHECK_FALSE(row_for(rows, "tree").accuracy().has_value());
}

TEST_CASE("object statistics self agreement") {
    const std::vector<TokenSeq> c = {words("a car appears")};
    const auto rows = object_change_stats(c, c, default_object_lexicon(), default_verb_lexicon());
    const auto& car = row_for(rows, "car");
    CHECK(car.pred_a == 1);
    CHECK(car.corr_a == 1);
    CHECK(*car.accuracy() == 1.0);
    CHECK_THROWS_AS(object_change_stats(c, {}, default_object_lexicon(), default_verb_lexicon()), DimensionError);
    CHECK_THROWS_AS(object_change_stats(c, c, {}, default_verb_lexicon()), ConfigError);
}

TEST_CASE("change detection accuracy") {
    const auto records = generate_split(4, "test", 30, GenConfig{});
    std::vector<TokenSeq> truth, empty(records.size());
    for (const auto& r : records) truth.push_back(r.captions_forward.front());
    CHECK(change_detection_acc(truth, records) == 1.0);
    CHECK(change_detection_acc(empty, records) == 0.0);
    CHECK_THROWS_AS(change_detection_acc(std::vector<TokenSeq>(3), records), DimensionError);
}

TEST_CASE("change detection requires both verbs for a replacement") {
    GenConfig g;
    PairRecord rec;
    for (std::uint64_t seed = 1; seed < 500; ++seed) {
        rec = generate_pair(seed, g);
        if (!rec.changes.empty() && rec.changes[0].kind == ChangeKind::Replace) break;
    }
    REQUIRE(rec.changes[0].kind == ChangeKind::Replace);
    const std::string before(to_string(rec.changes[0].before_class));
    const std::string after(to_string(rec.changes[0].after_class));
    CHECK(change_detection_acc({words("a " + after + " appears")}, {rec}) == 0.0);
    CHECK(change_detection_acc({words("a " + after + " appears . a " + before + " disappears")}, {rec}) == 1.0);
}

TEST_CASE("metrics are invariant to joint reordering") {
    const auto records = generate_split(6, "test", 12, GenConfig{});
    std::vector<TokenSeq> hyps;
    for (std::size_t i = 0; i < records.size(); ++i) {
        hyps.push_back(i % 3 == 0 ? words("a car appears") : records[i].captions_forward.front());
    }
    const MetricReport a = evaluate_captions(hyps, records);
    auto rev_records = records;
    auto rev_hyps = hyps;
    std::reverse(rev_records.begin(), rev_records.end());
    std::reverse(rev_hyps.begin(), rev_hyps.end());
    const MetricReport b = evaluate_captions(rev_hyps, rev_records);
    CHECK(a.bleu4 == doctest::Approx(b.bleu4).epsilon(1e-12));
    CHECK(a.rouge_l == doctest::Approx(b.rouge_l).epsilon(1e-12));
    CHECK(a.change_detection_acc == b.change_detection_acc);
    CHECK(a.to_table() == b.to_table());
    CHECK_THROWS_AS(evaluate_captions(std::vector<TokenSeq>(hyps.begin(), hyps.end() - 1), records), DimensionError);
}

TEST_CASE("report serialisation") {
    const auto records = generate_split(6, "test", 5, GenConfig{});
    std::vector<TokenSeq> hyps;
    for (const auto& r : records) hyps.push_back(r.captions_forward.front());
    const MetricReport m = evaluate_captions(hyps, records);
    const auto j = nlohmann::json::parse(m.to_json());
    CHECK(j.at("bleu4").get<double>() == doctest::Approx(1.0));
    CHECK(j.at("change_detection_acc").get<double>() == 1.0);
    CHECK(j.at("object_stats").size() == m.object_stats.size());
    CHECK(m.to_table().find("BLEU-4") != std::string::npos);
}
