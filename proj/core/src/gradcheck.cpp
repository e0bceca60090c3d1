#include "hdccl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <map>

#include "hdccl/trainer.hpp"

namespace hdccl {

namespace {

using M = Matrix<double>;
using V = Var<double>;

V param(Index rows, Index cols, Rng& rng, double scale = 1.0) {
    return V::parameter(random_normal<double>(rows, cols, scale, rng));
}

V weighted_sum(const V& x, const M& weights) { return sum(mul(x, V::constant(weights))); }

void append(ParamList<double>& out, const std::string& name, const V& v) { out.push_back({name, v}); }

/// Random affine params and a loss closure for one instance of a component.
struct Instance {
    ParamList<double> params;
    std::function<V()> loss;
};

Instance probe_instance(Rng& rng) {
    V theta = param(3, 2, rng);
    return {{{"theta", theta}}, [theta] { return sum(mul(theta, theta)); }};
}

Instance info_nce_instance(Rng& rng) {
    V a = param(4, 3, rng);
    V b = param(4, 3, rng);
    return {{{"a", a}, {"b", b}}, [a, b] { return info_nce(a, b, kDefaultLossTemperature); }};
}

Instance hsic_instance(Rng& rng) {
    V x = param(5, 3, rng);
    V y = param(5, 3, rng);
    return {{{"x", x}, {"y", y}}, [x, y] { return hsic_loss(x, y); }};
}

Instance alignment_instance(Rng& rng) {
    // Resample until both hinges are away from their kink and at least one is active.
    for (;;) {
        V dd = param(1, 4, rng);
        V dt = param(1, 4, rng);
        V nd = param(1, 4, rng);
        V nt = param(1, 4, rng);
        auto cos = [](const V& u, const V& v) { return cosine(u, v).item(); };
        const double pos = cos(dt, dd);
        const double s1 = kDefaultMargin - pos + cos(dt, nd);
        const double s2 = kDefaultMargin - pos + cos(dd, nt);
        if (std::abs(s1) <= 1e-3 || std::abs(s2) <= 1e-3 || (s1 <= 0 && s2 <= 0)) continue;
        return {{{"delta_d", dd}, {"delta_t", dt}, {"negative_d", nd}, {"negative_t", nt}}, [dd, dt, nd, nt] {
                    DirectionalVectors<double> dv{dd, dt, {nd}, {nt}};
                    return alignment_loss(dv).value;
                }};
    }
}

Instance caption_instance(Rng& rng) {
    auto params = std::make_shared<DecoderParams<double>>(7, 4, 2, 6, 8, rng);
    V memory = param(3, 4, rng);
    const CaptionBatch batch = CaptionBatch::from_sequences({{1, 4, 5, 6, 2}, {1, 6, 2}});
    Instance inst;
    params->collect(inst.params, "decoder");
    append(inst.params, "memory", memory);
    inst.loss = [params, memory, batch] {
        const auto out = decode_train<double>({memory, memory}, batch, *params);
        return caption_loss<double>({out[0].logits, out[1].logits}, batch);
    };
    return inst;
}

Mask random_mask(Index n, Rng& rng) {
    Mask m(static_cast<std::size_t>(n));
    std::bernoulli_distribution coin(0.6);
    for (auto& v : m) v = coin(rng) ? 1 : 0;
    return m;
}

RegionFeatures<double> random_regions(Index n, Index d, Rng& rng) {
    RegionFeatures<double> rf;
    rf.patch_features = param(n, d, rng);
    for (auto& c : rf.cls) c = param(1, d, rng);
    return rf;
}

void collect_regions(ParamList<double>& out, const std::string& prefix, const RegionFeatures<double>& rf) {
    append(out, prefix + ".patches", rf.patch_features);
    for (Region r : kRegions) append(out, prefix + ".cls_" + std::string(to_string(r)), rf.cls_of(r));
}

Instance distill_instance(Rng& rng) {
    const Index n = 4, d = 4;
    auto params = std::make_shared<DistillParams<double>>(d, 2, rng);
    const RegionFeatures<double> bef = random_regions(n, d, rng);
    const RegionFeatures<double> aft = random_regions(n, d, rng);
    const Mask mb = random_mask(n, rng);
    const Mask ma = random_mask(n, rng);
    const M weights = random_normal<double>(n, d, 1.0, rng);
    Instance inst;
    params->collect(inst.params, "distill");
    collect_regions(inst.params, "bef", bef);
    collect_regions(inst.params, "aft", aft);
    inst.loss = [=] {
        const ContextVectors<double> cv = context_encode(bef, aft, *params);
        const GridShape grid{2, 2};
        const DifferenceRepr<double> rep =
            distill_difference(PatchFeatures<double>{bef.patch_features, grid, ImageTag::Bef},
                               PatchFeatures<double>{aft.patch_features, grid, ImageTag::Aft}, mb, ma, cv, *params);
        return weighted_sum(rep.d, weights);
    };
    return inst;
}

Instance context_instance(Rng& rng) {
    const Index d = 4;
    auto params = std::make_shared<DistillParams<double>>(d, 2, rng);
    std::vector<std::pair<RegionFeatures<double>, RegionFeatures<double>>> batch;
    Instance inst;
    params->collect(inst.params, "distill");
    for (int b = 0; b < 4; ++b) {
        batch.emplace_back(random_regions(1, d, rng), random_regions(1, d, rng));
        for (Region r : kRegions) {
            append(inst.params, "bef" + std::to_string(b) + ".cls_" + std::string(to_string(r)),
                   batch.back().first.cls_of(r));
            append(inst.params, "aft" + std::to_string(b) + ".cls_" + std::string(to_string(r)),
                   batch.back().second.cls_of(r));
        }
    }
    inst.loss = [params, batch] {
        std::vector<ContextVectors<double>> cvs;
        for (const auto& [bef, aft] : batch) cvs.push_back(context_encode(bef, aft, *params));
        return context_loss(cvs).con;
    };
    return inst;
}

Instance dalt_instance(Rng& rng) {
    const Index n = 6, d = 4;
    auto params = std::make_shared<DaltParams<double>>(d, 2, 6, n, rng);
    V x = param(n, d, rng);
    const Mask mask = random_mask(n, rng);
    const M w_patch = random_normal<double>(n, d, 1.0, rng);
    std::array<M, 3> w_cls;
    for (auto& w : w_cls) w = random_normal<double>(1, d, 1.0, rng);
    Instance inst;
    params->collect(inst.params, "dalt");
    append(inst.params, "features", x);
    inst.loss = [=] {
        const PatchFeatures<double> pf{x, GridShape{2, 3}, ImageTag::Bef};
        const RegionFeatures<double> rf = encode_regions(decompose(pf, mask), pf, *params);
        V total = weighted_sum(rf.patch_features, w_patch);
        for (Region r : kRegions) {
            total = add(total, weighted_sum(rf.cls_of(r), w_cls[static_cast<std::size_t>(r)]));
        }
        return total;
    };
    return inst;
}

Instance patchenc_instance(Rng& rng) {
    auto params = std::make_shared<EncoderParams<double>>(5, 4, rng);
    const M raw = random_normal<double>(4, 5, 1.0, rng);
    const M weights = random_normal<double>(4, 4, 1.0, rng);
    Instance inst;
    params->collect(inst.params, "encoder");
    inst.loss = [=] { return weighted_sum(embed(raw, GridShape{2, 2}, ImageTag::Bef, *params).features, weights); };
    return inst;
}

Instance full_instance(Rng& rng) {
    TrainConfig config;
    config.model.d_in = 8;
    config.model.d = 4;
    config.model.heads = 2;
    config.model.ffn_hidden = 6;
    config.model.grid = GridShape{4, 4};
    config.model.max_len = 24;
    config.batch_size = 3;
    GenConfig gen;
    gen.height = 4;
    gen.width = 4;
    gen.max_shift = 1;
    const Vocab vocab = Vocab::caption_default();
    const std::uint64_t seed = rng();
    auto params = std::make_shared<ModelParams<double>>(config.model, vocab.size(), seed);
    const PrototypeTable prototypes(config.model.d_in, config.model.prototype_seed);
    auto prepared = std::make_shared<std::vector<PreparedPair>>();
    std::vector<TrainingExample> batch;
    std::vector<PairRecord> records;
    for (int i = 0; i < config.batch_size; ++i) records.push_back(generate_pair(seed + static_cast<std::uint64_t>(i), gen));
    for (const auto& r : records) prepared->push_back(prepare_pair(r, config.model, prototypes));
    for (std::size_t i = 0; i < records.size(); ++i) {
        batch.push_back(TrainingExample{&(*prepared)[i], vocab.encode(records[i].captions_forward[0]),
                                        vocab.encode(records[i].captions_reverse[0])});
    }
    const std::vector<std::size_t> negatives = {1, 2, 0};
    Instance inst;
    inst.params = params->parameters();
    inst.loss = [params, prepared, batch, negatives, config] {
        return compute_losses(batch, negatives, *params, config).total;
    };
    return inst;
}

Instance make_instance(GradComponent c, Rng& rng) {
    switch (c) {
        case GradComponent::Probe: return probe_instance(rng);
        case GradComponent::InfoNce: return info_nce_instance(rng);
        case GradComponent::Hsic: return hsic_instance(rng);
        case GradComponent::Alignment: return alignment_instance(rng);
        case GradComponent::Caption: return caption_instance(rng);
        case GradComponent::Distill: return distill_instance(rng);
        case GradComponent::Context: return context_instance(rng);
        case GradComponent::Dalt: return dalt_instance(rng);
        case GradComponent::Patchenc: return patchenc_instance(rng);
        case GradComponent::Full: return full_instance(rng);
    }
    throw UsageError("unknown gradient component");
}

}  // namespace

std::string_view to_string(GradComponent c) {
    switch (c) {
        case GradComponent::Probe: return "probe";
        case GradComponent::InfoNce: return "info_nce";
        case GradComponent::Hsic: return "hsic";
        case GradComponent::Alignment: return "alignment";
        case GradComponent::Caption: return "caption";
        case GradComponent::Distill: return "distill";
        case GradComponent::Context: return "context";
        case GradComponent::Dalt: return "dalt";
        case GradComponent::Patchenc: return "patchenc";
        case GradComponent::Full: return "full";
    }
    return "?";
}

const std::vector<GradComponent>& all_grad_components() {
    static const std::vector<GradComponent> all = {
        GradComponent::Probe,   GradComponent::InfoNce, GradComponent::Hsic, GradComponent::Alignment,
        GradComponent::Caption, GradComponent::Distill, GradComponent::Context, GradComponent::Dalt,
        GradComponent::Patchenc, GradComponent::Full};
    return all;
}

GradComponent parse_grad_component(std::string_view name) {
    for (GradComponent c : all_grad_components()) {
        if (to_string(c) == name) return c;
    }
    throw UsageError("unknown gradient component \"" + std::string(name) + "\"");
}

double GradCheckReport::max_rel_error() const {
    double m = 0.0;
    for (const auto& b : blocks) m = std::max(m, b.max_rel_error);
    return m;
}

std::string GradCheckReport::to_json() const {
    nlohmann::ordered_json j;
    j["component"] = std::string(to_string(component));
    j["instances"] = instances;
    j["epsilon"] = epsilon;
    j["max_rel_error"] = max_rel_error();
    nlohmann::ordered_json blocks_json = nlohmann::ordered_json::array();
    for (const auto& b : blocks) blocks_json.push_back({{"block", b.name}, {"max_rel_error", b.max_rel_error}});
    j["blocks"] = blocks_json;
    return j.dump(2);
}

double relative_error(const Matrix<double>& analytic, const Matrix<double>& numeric) {
    const double denom = std::max({analytic.norm(), numeric.norm(), 1e-4});
    return (analytic - numeric).norm() / denom;
}

std::vector<BlockError> check_gradients(const ParamList<double>& params, const std::function<Var<double>()>& loss,
                                        double epsilon) {
    for (const auto& p : params) p.var.shared()->grad.resize(0, 0);
    backward(loss());
    std::vector<BlockError> out;
    NoGradGuard no_grad;
    for (const auto& p : params) {
        Var<double> v = p.var;
        const Matrix<double> analytic = v.grad();
        Matrix<double> numeric(v.rows(), v.cols());
        for (Index c = 0; c < v.cols(); ++c) {
            for (Index r = 0; r < v.rows(); ++r) {
                const double saved = v.value()(r, c);
                v.mutable_value()(r, c) = saved + epsilon;
                const double up = loss().item();
                v.mutable_value()(r, c) = saved - epsilon;
                const double down = loss().item();
                v.mutable_value()(r, c) = saved;
                numeric(r, c) = (up - down) / (2.0 * epsilon);
            }
        }
        out.push_back({p.name, relative_error(analytic, numeric)});
    }
    for (const auto& p : params) p.var.shared()->grad.resize(0, 0);
    return out;
}

GradCheckReport grad_check(GradComponent component, double epsilon, std::uint64_t seed, int instances) {
    if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) throw ConfigError("grad_check: epsilon must lie in [1e-7, 1e-3]");
    if (instances < 1) throw ConfigError("grad_check: at least one instance is required");
    GradCheckReport report;
    report.component = component;
    report.instances = instances;
    report.epsilon = epsilon;
    Rng rng(splitmix64(seed));
    std::vector<std::string> order;
    std::map<std::string, double> worst;
    for (int i = 0; i < instances; ++i) {
        Instance inst = make_instance(component, rng);
        for (const auto& b : check_gradients(inst.params, inst.loss, epsilon)) {
            if (!worst.count(b.name)) order.push_back(b.name);
            worst[b.name] = std::max(worst[b.name], b.max_rel_error);
        }
    }
    for (const auto& name : order) report.blocks.push_back({name, worst[name]});
    return report;
}

}  // namespace hdccl
