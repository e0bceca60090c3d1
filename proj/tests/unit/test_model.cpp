#include <doctest.h>

#include "hdccl/errors.hpp"
#include "hdccl/model.hpp"
#include "hdccl/vocab.hpp"

using namespace hdccl;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.d = 8;
    c.heads = 2;
    c.ffn_hidden = 16;
    return c;
}

PairRecord sample_pair(std::uint64_t seed) { return generate_pair(seed, GenConfig{}); }

bool same(const Matrix<double>& a, const Matrix<double>& b) { return a.rows() == b.rows() && a == b; }

}  // namespace

TEST_CASE("enum names round trip") {
    for (MaskPolicy p : {MaskPolicy::Voted, MaskPolicy::AllOnes, MaskPolicy::Random, MaskPolicy::RandomDirectionWindow,
                         MaskPolicy::NoDirectionWindow}) {
        CHECK(parse_mask_policy(to_string(p)) == p);
    }
    for (DecoderMemory m : {DecoderMemory::First, DecoderMemory::Both}) CHECK(parse_decoder_memory(to_string(m)) == m);
    for (DistillFeatures f : {DistillFeatures::Encoder, DistillFeatures::EncoderPosition, DistillFeatures::Dalt}) {
        CHECK(parse_distill_features(to_string(f)) == f);
    }
    CHECK_THROWS_AS(parse_mask_policy("sometimes"), ConfigError);
    CHECK_THROWS_AS(parse_decoder_memory("all"), ConfigError);
    CHECK_THROWS_AS(parse_distill_features("pixels"), ConfigError);
}

TEST_CASE("model config validation") {
    ModelConfig c = small_config();
    CHECK_NOTHROW(c.validate());
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.max_len = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.theta = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.vote_tau = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.radius = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("prepare_pair is deterministic") {
    const ModelConfig c = small_config();
    const PrototypeTable protos(c.d_in, c.prototype_seed);
    const PairRecord r = sample_pair(11);
    const PreparedPair a = prepare_pair(r, c, protos);
    const PreparedPair b = prepare_pair(r, c, protos);
    CHECK(same(a.raw_bef, b.raw_bef));
    CHECK(same(a.raw_aft, b.raw_aft));
    CHECK(a.mask_bef == b.mask_bef);
    CHECK(a.mask_aft == b.mask_aft);
    CHECK(a.raw_bef.rows() == c.grid.size());
    CHECK(a.raw_bef.cols() == c.d_in);
}

TEST_CASE("voted masks match align on the rendered views") {
    const ModelConfig c = small_config();
    const PrototypeTable protos(c.d_in, c.prototype_seed);
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const PreparedPair p = prepare_pair(sample_pair(seed), c, protos);
        const VoteResult ref = align(p.raw_bef, p.raw_aft, c.grid, AlignmentConfig{c.vote_tau, c.radius, c.theta});
        CHECK(p.mask_bef == ref.mask_bef);
        CHECK(p.mask_aft == ref.mask_aft);
        CHECK(p.vote.dominant_shift == ref.dominant_shift);
    }
}

TEST_CASE("mask policies") {
    ModelConfig c = small_config();
    const PrototypeTable protos(c.d_in, c.prototype_seed);
    const PairRecord r = sample_pair(5);
    const auto n = static_cast<std::size_t>(c.grid.size());

    SUBCASE("all ones") {
        c.mask_policy = MaskPolicy::AllOnes;
        const PreparedPair p = prepare_pair(r, c, protos);
        CHECK(p.mask_bef == Mask(n, 1));
        CHECK(p.mask_aft == Mask(n, 1));
    }
    SUBCASE("random is deterministic and mixed") {
        c.mask_policy = MaskPolicy::Random;
        const PreparedPair p = prepare_pair(r, c, protos);
        const PreparedPair q = prepare_pair(r, c, protos);
        CHECK(p.mask_bef == q.mask_bef);
        CHECK(p.mask_aft == q.mask_aft);
        int ones = 0;
        for (auto m : p.mask_bef) ones += m;
        CHECK(ones > 0);
        CHECK(ones < static_cast<int>(n));
    }
    SUBCASE("no direction window equals unwindowed matching") {
        c.mask_policy = MaskPolicy::NoDirectionWindow;
        const PreparedPair p = prepare_pair(r, c, protos);
        const SimilarityMatrix sim = pairwise_similarity(p.raw_bef, p.raw_aft, c.vote_tau);
        const VoteResult ref = build_masks(sim, vote(sim, c.grid).dominant_shift, std::nullopt, c.theta, c.grid);
        CHECK(p.mask_bef == ref.mask_bef);
        CHECK(p.mask_aft == ref.mask_aft);
    }
    SUBCASE("random direction window keeps the voted shift for reporting") {
        c.mask_policy = MaskPolicy::RandomDirectionWindow;
        const PreparedPair p = prepare_pair(r, c, protos);
        c.mask_policy = MaskPolicy::Voted;
        const PreparedPair v = prepare_pair(r, c, protos);
        CHECK(p.vote.dominant_shift == v.vote.dominant_shift);
        CHECK(p.mask_bef.size() == n);
    }
}

TEST_CASE("grid mismatch is a configuration error") {
    ModelConfig c = small_config();
    c.grid = GridShape{6, 6};
    const PrototypeTable protos(c.d_in, c.prototype_seed);
    CHECK_THROWS_AS(prepare_pair(sample_pair(1), c, protos), ConfigError);
}

TEST_CASE("forward pass shapes") {
    for (DecoderMemory mem : {DecoderMemory::First, DecoderMemory::Both}) {
        ModelConfig c = small_config();
        c.decoder_memory = mem;
        const PrototypeTable protos(c.d_in, c.prototype_seed);
        const ModelParams<double> params(c, Vocab::caption_default().size(), 3);
        const PreparedPair p = prepare_pair(sample_pair(2), c, protos);
        const auto f = forward_pair(p, c, params);
        const Index n = c.grid.size();
        CHECK(f.forward.d.value().rows() == n);
        CHECK(f.forward.d.value().cols() == c.d);
        CHECK(f.reverse.d.value().rows() == n);
        CHECK(f.memory_forward.value().rows() == (mem == DecoderMemory::Both ? 2 * n : n));
        CHECK(f.memory_forward.value().allFinite());
    }
}

TEST_CASE("reverse representation equals the forward pass on swapped images") {
    for (DistillFeatures feat : {DistillFeatures::Encoder, DistillFeatures::EncoderPosition, DistillFeatures::Dalt}) {
        ModelConfig c = small_config();
        c.distill_features = feat;
        const PrototypeTable protos(c.d_in, c.prototype_seed);
        const ModelParams<double> params(c, Vocab::caption_default().size(), 4);
        const PreparedPair p = prepare_pair(sample_pair(9), c, protos);
        PreparedPair swapped = p;
        std::swap(swapped.raw_bef, swapped.raw_aft);
        std::swap(swapped.mask_bef, swapped.mask_aft);
        const auto f = forward_pair(p, c, params);
        const auto g = forward_pair(swapped, c, params);
        CHECK((f.reverse.d.value() - g.forward.d.value()).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((f.forward.d.value() - g.reverse.d.value()).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("forward pass without reverse leaves the reverse undefined") {
    const ModelConfig c = small_config();
    const PrototypeTable protos(c.d_in, c.prototype_seed);
    const ModelParams<double> params(c, Vocab::caption_default().size(), 4);
    const PreparedPair p = prepare_pair(sample_pair(9), c, protos);
    const auto f = forward_pair(p, c, params, false);
    CHECK_FALSE(f.reverse.d.defined());
    CHECK(f.forward.d.defined());
}

TEST_CASE("parameter initialisation is seeded") {
    const ModelConfig c = small_config();
    const int v = Vocab::caption_default().size();
    const ModelParams<double> a(c, v, 7);
    const ModelParams<double> b(c, v, 7);
    const ModelParams<double> d(c, v, 8);
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    const auto pd = d.parameters();
    REQUIRE(pa.size() == pb.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].var.value() == pb[i].var.value());
        if (pa[i].var.value() != pd[i].var.value()) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("greedy captions use only vocabulary words") {
    const ModelConfig c = small_config();
    const PrototypeTable protos(c.d_in, c.prototype_seed);
    const Vocab vocab = Vocab::caption_default();
    const ModelParams<float> params(c, vocab.size(), 4);
    const TokenSeq caption = caption_pair(prepare_pair(sample_pair(3), c, protos), c, params, vocab);
    CHECK(static_cast<int>(caption.size()) <= c.max_len - 1);
    for (const auto& w : caption) CHECK(vocab.contains(w));
}
