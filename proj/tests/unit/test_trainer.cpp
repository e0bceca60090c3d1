#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include "hdccl/errors.hpp"
#include "hdccl/trainer.hpp"

using namespace hdccl;
namespace fs = std::filesystem;

namespace {

TrainConfig small_config(int iterations) {
    TrainConfig c;
    c.model.d = 16;
    c.model.heads = 2;
    c.model.ffn_hidden = 32;
    c.batch_size = 4;
    c.iterations = iterations;
    return c;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("hdccl_trainer_" + name);
    fs::remove_all(p);
    return p;
}

std::vector<double> window_means(const std::vector<LossReport>& log, std::size_t window) {
    std::vector<double> out;
    for (std::size_t start = 0; start + window <= log.size(); start += window) {
        double s = 0.0;
        for (std::size_t i = start; i < start + window; ++i) s += log[i].l_cap;
        out.push_back(s / static_cast<double>(window));
    }
    return out;
}

}  // namespace

TEST_CASE("total loss composition") {
    LossReport r;
    r.l_cap = 1.0;
    CHECK(total_loss(r, 0.0) == doctest::Approx(1.0));
    r.l_glo = 0.2;
    r.l_reg = 0.2;
    r.l_hsic = 0.1;
    r.l_align = 0.3;
    CHECK(total_loss(r, 0.0) == doctest::Approx(1.0));
    CHECK(total_loss(r, 0.01) == doctest::Approx(1.008).epsilon(1e-12));
    CHECK(kDefaultLambda == 0.01);
    CHECK(TrainConfig{}.lambda == 0.01);
    CHECK_THROWS_AS(total_loss(r, -0.1), ConfigError);
}

TEST_CASE("non-finite loss parts are named") {
    LossReport r;
    r.l_cap = 1.0;
    r.l_hsic = std::numeric_limits<double>::quiet_NaN();
    try {
        total_loss(r, 0.01);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("l_hsic") != std::string::npos);
    }
    r.l_hsic = 0.0;
    r.l_cap = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(total_loss(r, 0.01), NumericError);
}

TEST_CASE("adam matches the closed-form update") {
    Matrix<double> init(1, 3);
    init << 1.0, -2.0, 0.5;
    auto p = Var<double>::parameter(init);
    Adam<double> opt({{"p", p}}, 0.1);
    Matrix<double> ref = init;
    Matrix<double> m = Matrix<double>::Zero(1, 3);
    Matrix<double> v = Matrix<double>::Zero(1, 3);
    for (int t = 1; t <= 3; ++t) {
        backward(sum(mul(p, p)));
        const Matrix<double> g = 2.0 * ref;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g.cwiseProduct(g);
        const Matrix<double> mh = m / (1.0 - std::pow(0.9, t));
        const Matrix<double> vh = v / (1.0 - std::pow(0.999, t));
        ref.array() -= 0.1 * mh.array() / (vh.array().sqrt() + 1e-8);
        opt.step();
        CHECK((p.value() - ref).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(p.grad().isZero());
    }
    CHECK(opt.steps() == 3);
}

TEST_CASE("config json round trip and strict keys") {
    TrainConfig c = small_config(17);
    c.bandwidth = 0.5;
    c.model.radius.reset();
    c.model.mask_policy = MaskPolicy::Random;
    const TrainConfig back = TrainConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.iterations == 17);
    CHECK_FALSE(back.model.radius.has_value());
    CHECK(*back.bandwidth == 0.5);

    CHECK_THROWS_AS(TrainConfig::from_json(R"({"learning_rate": 0.1, "lr": 0.1})"), ConfigError);
    CHECK_THROWS_AS(TrainConfig::from_json("{not json"), ConfigError);
    CHECK_THROWS_AS(TrainConfig::from_json(R"({"batch_size": "eight"})"), ConfigError);
    CHECK(TrainConfig::from_json("{}").to_json() == TrainConfig{}.to_json());
}

TEST_CASE("config validation") {
    TrainConfig c;
    c.batch_size = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.learning_rate = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.lambda = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.precision = "half";
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.model.heads = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("missing config file names the path") {
    const fs::path p = scratch("missing") / "nope.json";
    try {
        (void)TrainConfig::load(p);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("nope.json") != std::string::npos);
    }
}

TEST_CASE("full-scale preset") {
    const TrainConfig p = TrainConfig::paper_preset();
    CHECK(p.learning_rate == 2e-4);
    CHECK(p.batch_size == 32);
    CHECK(p.iterations == 10000);
    CHECK(p.model.d == 512);
    CHECK(p.lambda == 0.01);
    CHECK_NOTHROW(p.validate());
}

TEST_CASE("ablation variants") {
    CHECK(ablation_variants().size() == 6);
    TrainConfig c;
    apply_variant(c, "no-mask");
    CHECK(c.model.mask_policy == MaskPolicy::AllOnes);
    apply_variant(c, "full");
    CHECK(c.model.mask_policy == MaskPolicy::Voted);
    CHECK(c.use_alignment);
    apply_variant(c, "random-mask");
    CHECK(c.model.mask_policy == MaskPolicy::Random);
    apply_variant(c, "random-direction-window");
    CHECK(c.model.mask_policy == MaskPolicy::RandomDirectionWindow);
    apply_variant(c, "no-direction-window");
    CHECK(c.model.mask_policy == MaskPolicy::NoDirectionWindow);
    apply_variant(c, "no-hcm-occ");
    CHECK_FALSE(c.use_alignment);
    CHECK_THROWS_AS(apply_variant(c, "no-decoder"), UsageError);
}

TEST_CASE("loss report json round trip") {
    LossReport r{12, 3.5, 0.25, 0.5, 0.125, 0.75, 3.51625};
    const LossReport back = LossReport::from_json(r.to_json());
    CHECK(back.step == 12);
    CHECK(back.l_cap == r.l_cap);
    CHECK(back.l_glo == r.l_glo);
    CHECK(back.l_reg == r.l_reg);
    CHECK(back.l_hsic == r.l_hsic);
    CHECK(back.l_align == r.l_align);
    CHECK(back.total == r.total);
    CHECK_THROWS_AS(LossReport::from_json(R"({"step": 1})"), SchemaError);
    CHECK_THROWS_AS(LossReport::from_json("[1,"), ParseError);
}

TEST_CASE("training rejects unusable inputs") {
    const auto records = generate_split(1, "train", 3, GenConfig{});
    CHECK_THROWS_AS(train(records, small_config(1)), BatchSizeError);
    TrainConfig c = small_config(1);
    c.precision = "double";
    CHECK_THROWS_AS(train(generate_split(1, "train", 8, GenConfig{}), c), ConfigError);
    c = small_config(1);
    c.model.grid = GridShape{6, 6};
    CHECK_THROWS_AS(train(generate_split(1, "train", 8, GenConfig{}), c), ConfigError);
}

TEST_CASE("training is deterministic and logs the objective identity") {
    const auto records = generate_split(3, "train", 32, GenConfig{});
    const TrainConfig c = small_config(12);
    const TrainResult a = train(records, c);
    const TrainResult b = train(records, c);
    REQUIRE(a.log.size() == 12);
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].step == static_cast<int>(i) + 1);
        CHECK(a.log[i].total == b.log[i].total);
        CHECK(a.log[i].l_cap == b.log[i].l_cap);
        CHECK(a.log[i].total == doctest::Approx(total_loss(a.log[i], c.lambda)).epsilon(1e-5));
        CHECK(a.log[i].l_align >= 0.0);
    }
    const auto pa = a.params.parameters();
    const auto pb = b.params.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].var.value() == pb[i].var.value());
}

TEST_CASE("disabling the alignment term drops it from the objective") {
    const auto records = generate_split(3, "train", 16, GenConfig{});
    TrainConfig c = small_config(3);
    c.use_alignment = false;
    const TrainResult r = train(records, c);
    for (const auto& rep : r.log) {
        CHECK(rep.l_align == 0.0);
        CHECK(rep.total == doctest::Approx(rep.l_cap + c.lambda * (rep.l_glo + rep.l_reg + rep.l_hsic)).epsilon(1e-5));
    }
}

TEST_CASE("caption loss decreases over 50-step windows") {
    const auto records = generate_split(5, "train", 64, GenConfig{});
    const TrainResult r = train(records, small_config(200));
    const auto means = window_means(r.log, 50);
    REQUIRE(means.size() == 4);
    for (std::size_t i = 1; i < means.size(); ++i) {
        CAPTURE(i);
        CHECK(means[i] < means[i - 1]);
    }
}

TEST_CASE("checkpoint round trip reproduces the model") {
    const auto records = generate_split(7, "train", 16, GenConfig{});
    const fs::path dir = scratch("ckpt");
    const TrainConfig c = small_config(4);
    const TrainResult r = train(records, c, dir);
    CHECK(fs::exists(dir / "loss_log.jsonl"));
    for (const char* f : {"params.bin", "manifest.json", "vocab.json", "config.json"}) {
        CHECK(fs::exists(dir / "checkpoint" / f));
    }
    std::ifstream log(dir / "loss_log.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
        const LossReport rep = LossReport::from_json(line);
        CHECK(rep.total == doctest::Approx(r.log[static_cast<std::size_t>(lines)].total));
        ++lines;
    }
    CHECK(lines == 4);

    const Checkpoint ck = load_checkpoint(dir / "checkpoint");
    CHECK(ck.config.to_json() == c.to_json());
    CHECK(ck.vocab.tokens() == r.vocab.tokens());
    const auto pa = r.params.parameters();
    const auto pb = ck.params.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(pa[i].var.value() == pb[i].var.value());
    }
    const PrototypeTable protos(c.model.d_in, c.model.prototype_seed);
    const PreparedPair p = prepare_pair(records[0], c.model, protos);
    const auto fa = forward_pair(p, c.model, r.params, false);
    const auto fb = forward_pair(p, c.model, ck.params, false);
    CHECK(fa.forward.d.value() == fb.forward.d.value());
    CHECK(caption_records(records, r.params, c, r.vocab) == caption_records(records, ck.params, ck.config, ck.vocab));

    fs::remove(dir / "checkpoint" / "params.bin");
    CHECK_THROWS_AS(load_checkpoint(dir / "checkpoint"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("masks receive no gradient") {
    const auto records = generate_split(9, "train", 4, GenConfig{});
    TrainConfig c = small_config(1);
    const PrototypeTable protos(c.model.d_in, c.model.prototype_seed);
    const Vocab vocab = Vocab::caption_default();
    const ModelParams<double> params(c.model, vocab.size(), 1);
    std::vector<PreparedPair> prepared;
    for (const auto& r : records) prepared.push_back(prepare_pair(r, c.model, protos));
    const std::vector<PreparedPair> before = prepared;
    std::vector<TrainingExample> batch;
    for (std::size_t i = 0; i < records.size(); ++i) {
        batch.push_back({&prepared[i], vocab.encode(records[i].captions_forward[0]),
                         vocab.encode(records[i].captions_reverse[0])});
    }
    const auto losses = compute_losses(batch, {1, 2, 3, 0}, params, c);
    backward(losses.total);
    for (std::size_t i = 0; i < prepared.size(); ++i) {
        CHECK(prepared[i].mask_bef == before[i].mask_bef);
        CHECK(prepared[i].mask_aft == before[i].mask_aft);
    }
    int with_grad = 0;
    for (const auto& p : params.parameters()) {
        if (p.var.grad().size() != 0 && p.var.grad().allFinite()) ++with_grad;
    }
    CHECK(with_grad > 0);
    CHECK_THROWS_AS(compute_losses(batch, {0, 2, 3, 1}, params, c), DimensionError);
    CHECK_THROWS_AS(compute_losses(std::vector<TrainingExample>{batch[0]}, {0}, params, c), BatchSizeError);
}
