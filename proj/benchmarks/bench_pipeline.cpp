#include <benchmark/benchmark.h>

#include "hdccl/evalkit.hpp"
#include "hdccl/trainer.hpp"

using namespace hdccl;

namespace {

void BM_RenderAndAlign(benchmark::State& state) {
    GenConfig gen;
    gen.height = gen.width = static_cast<int>(state.range(0));
    const PairRecord rec = generate_pair(3, gen);
    const PrototypeTable protos(48);
    const GridShape grid{gen.height, gen.width};
    for (auto _ : state) {
        const auto bef = render(rec.before, 0.1, 1, protos);
        const auto aft = render(rec.after, 0.1, 2, protos);
        benchmark::DoNotOptimize(align(bef, aft, grid));
    }
}
BENCHMARK(BM_RenderAndAlign)->Arg(8)->Arg(16)->Unit(benchmark::kMicrosecond);

void BM_ForwardPair(benchmark::State& state) {
    ModelConfig c;
    c.d = static_cast<int>(state.range(0));
    c.ffn_hidden = 2 * c.d;
    const PrototypeTable protos(c.d_in, c.prototype_seed);
    const ModelParams<float> params(c, Vocab::caption_default().size(), 1);
    const PreparedPair pair = prepare_pair(generate_pair(5, GenConfig{}), c, protos);
    NoGradGuard no_grad;
    for (auto _ : state) benchmark::DoNotOptimize(forward_pair(pair, c, params, true).forward.d.value().sum());
}
BENCHMARK(BM_ForwardPair)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_CaptionPair(benchmark::State& state) {
    const ModelConfig c;
    const PrototypeTable protos(c.d_in, c.prototype_seed);
    const Vocab vocab = Vocab::caption_default();
    const ModelParams<float> params(c, vocab.size(), 1);
    const PreparedPair pair = prepare_pair(generate_pair(5, GenConfig{}), c, protos);
    for (auto _ : state) benchmark::DoNotOptimize(caption_pair(pair, c, params, vocab));
}
BENCHMARK(BM_CaptionPair)->Unit(benchmark::kMicrosecond);

void BM_TrainStep(benchmark::State& state) {
    TrainConfig config;
    config.batch_size = static_cast<int>(state.range(0));
    const auto records = generate_split(1, "train", config.batch_size, GenConfig{});
    const PrototypeTable protos(config.model.d_in, config.model.prototype_seed);
    const Vocab vocab = Vocab::caption_default();
    const ModelParams<float> params(config.model, vocab.size(), 1);
    Adam<float> optimizer(params.parameters(), config.learning_rate);
    std::vector<PreparedPair> prepared;
    for (const auto& r : records) prepared.push_back(prepare_pair(r, config.model, protos));
    std::vector<TrainingExample> batch;
    std::vector<std::size_t> negatives;
    for (std::size_t i = 0; i < records.size(); ++i) {
        batch.push_back({&prepared[i], vocab.encode(records[i].captions_forward[0]),
                         vocab.encode(records[i].captions_reverse[0])});
        negatives.push_back((i + 1) % records.size());
    }
    for (auto _ : state) {
        const auto losses = compute_losses(batch, negatives, params, config);
        backward(losses.total);
        optimizer.step();
    }
}
BENCHMARK(BM_TrainStep)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_EvaluateCaptions(benchmark::State& state) {
    const auto records = generate_split(2, "test", static_cast<int>(state.range(0)), GenConfig{});
    std::vector<TokenSeq> hyps;
    for (const auto& r : records) hyps.push_back(r.captions_forward.back());
    for (auto _ : state) benchmark::DoNotOptimize(evaluate_captions(hyps, records).bleu4);
}
BENCHMARK(BM_EvaluateCaptions)->Arg(200)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
