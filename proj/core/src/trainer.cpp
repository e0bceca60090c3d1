#include "hdccl/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <set>
#include <unordered_map>
#include <sstream>

namespace hdccl {

namespace {

using json = nlohmann::ordered_json;

constexpr std::uint64_t kBatchStream = 0x7A117A11ULL;

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

template <typename V>
V get_as(const json& j, const std::string& key) {
    try {
        return j.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config field \"" + key + "\" has the wrong type");
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (iterations < 0) throw ConfigError("iterations must be non-negative");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
    if (bandwidth && !(*bandwidth > 0.0)) throw ConfigError("bandwidth must be positive or \"median\"");
    if (precision != "float" && precision != "double") throw ConfigError("precision must be \"float\" or \"double\"");
    model.validate();
}

std::string TrainConfig::to_json() const {
    json j;
    j["learning_rate"] = learning_rate;
    j["batch_size"] = batch_size;
    j["iterations"] = iterations;
    j["lambda"] = lambda;
    j["tau"] = tau;
    j["gamma"] = gamma;
    if (bandwidth) {
        j["bandwidth"] = *bandwidth;
    } else {
        j["bandwidth"] = "median";
    }
    j["use_alignment"] = use_alignment;
    j["seed"] = seed;
    j["precision"] = precision;
    j["vocab_path"] = vocab_path;
    j["d_in"] = model.d_in;
    j["d"] = model.d;
    j["heads"] = model.heads;
    j["ffn_hidden"] = model.ffn_hidden;
    j["grid"] = {model.grid.rows, model.grid.cols};
    j["max_len"] = model.max_len;
    j["noise_sigma"] = model.noise_sigma;
    j["prototype_seed"] = model.prototype_seed;
    j["vote_tau"] = model.vote_tau;
    if (model.radius) {
        j["R"] = *model.radius;
    } else {
        j["R"] = "inf";
    }
    j["theta"] = model.theta;
    j["mask_policy"] = std::string(to_string(model.mask_policy));
    j["decoder_memory"] = std::string(to_string(model.decoder_memory));
    j["distill_features"] = std::string(to_string(model.distill_features));
    j["activation"] = std::string(to_string(model.activation));
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> known = {
        "learning_rate", "batch_size", "iterations", "lambda",   "tau",         "gamma",          "bandwidth",
        "use_alignment", "seed",       "precision",  "vocab_path", "d_in",      "d",              "heads",
        "ffn_hidden",    "grid",       "max_len",    "noise_sigma", "prototype_seed", "vote_tau", "R",
        "theta",         "mask_policy", "decoder_memory", "distill_features", "activation"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key())) throw ConfigError("unknown config field \"" + it.key() + "\"");
    }
    TrainConfig c;
    auto has = [&](const char* k) { return j.contains(k); };
    if (has("learning_rate")) c.learning_rate = get_as<double>(j, "learning_rate");
    if (has("batch_size")) c.batch_size = get_as<int>(j, "batch_size");
    if (has("iterations")) c.iterations = get_as<int>(j, "iterations");
    if (has("lambda")) c.lambda = get_as<double>(j, "lambda");
    if (has("tau")) c.tau = get_as<double>(j, "tau");
    if (has("gamma")) c.gamma = get_as<double>(j, "gamma");
    if (has("bandwidth")) {
        if (j["bandwidth"].is_string()) {
            if (j["bandwidth"].get<std::string>() != "median") {
                throw ConfigError("config field \"bandwidth\" must be a number or \"median\"");
            }
            c.bandwidth.reset();
        } else {
            c.bandwidth = get_as<double>(j, "bandwidth");
        }
    }
    if (has("use_alignment")) c.use_alignment = get_as<bool>(j, "use_alignment");
    if (has("seed")) c.seed = get_as<std::uint64_t>(j, "seed");
    if (has("precision")) c.precision = get_as<std::string>(j, "precision");
    if (has("vocab_path")) c.vocab_path = get_as<std::string>(j, "vocab_path");
    if (has("d_in")) c.model.d_in = get_as<int>(j, "d_in");
    if (has("d")) c.model.d = get_as<int>(j, "d");
    if (has("heads")) c.model.heads = get_as<int>(j, "heads");
    if (has("ffn_hidden")) c.model.ffn_hidden = get_as<int>(j, "ffn_hidden");
    if (has("grid")) {
        const auto g = get_as<std::vector<int>>(j, "grid");
        if (g.size() != 2) throw ConfigError("config field \"grid\" must be [rows, cols]");
        c.model.grid = GridShape{g[0], g[1]};
    }
    if (has("max_len")) c.model.max_len = get_as<int>(j, "max_len");
    if (has("noise_sigma")) c.model.noise_sigma = get_as<double>(j, "noise_sigma");
    if (has("prototype_seed")) c.model.prototype_seed = get_as<std::uint64_t>(j, "prototype_seed");
    if (has("vote_tau")) c.model.vote_tau = get_as<double>(j, "vote_tau");
    if (has("R")) {
        if (j["R"].is_string() || j["R"].is_null()) {
            if (!j["R"].is_null() && j["R"].get<std::string>() != "inf") {
                throw ConfigError("config field \"R\" must be an integer or \"inf\"");
            }
            c.model.radius.reset();
        } else {
            c.model.radius = get_as<int>(j, "R");
        }
    }
    if (has("theta")) c.model.theta = get_as<double>(j, "theta");
    if (has("mask_policy")) c.model.mask_policy = parse_mask_policy(get_as<std::string>(j, "mask_policy"));
    if (has("decoder_memory")) {
        c.model.decoder_memory = parse_decoder_memory(get_as<std::string>(j, "decoder_memory"));
    }
    if (has("distill_features")) {
        c.model.distill_features = parse_distill_features(get_as<std::string>(j, "distill_features"));
    }
    if (has("activation")) c.model.activation = parse_activation(get_as<std::string>(j, "activation"));
    c.validate();
    return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw IoError("config file not found: " + path.string());
    }
    return from_json(read_text(path));
}

TrainConfig TrainConfig::paper_preset() {
    TrainConfig c;
    c.learning_rate = 2e-4;
    c.batch_size = 32;
    c.iterations = 10000;
    c.model.d = 512;
    c.model.ffn_hidden = 2048;
    c.model.heads = 8;
    return c;
}

const std::vector<std::string>& ablation_variants() {
    static const std::vector<std::string> names = {"full",          "no-mask",   "random-mask", "random-direction-window",
                                                   "no-direction-window", "no-hcm-occ"};
    return names;
}

void apply_variant(TrainConfig& config, const std::string& variant) {
    if (variant == "full") {
        config.model.mask_policy = MaskPolicy::Voted;
        config.use_alignment = true;
    } else if (variant == "no-mask") {
        config.model.mask_policy = MaskPolicy::AllOnes;
    } else if (variant == "random-mask") {
        config.model.mask_policy = MaskPolicy::Random;
    } else if (variant == "random-direction-window") {
        config.model.mask_policy = MaskPolicy::RandomDirectionWindow;
    } else if (variant == "no-direction-window") {
        config.model.mask_policy = MaskPolicy::NoDirectionWindow;
    } else if (variant == "no-hcm-occ") {
        config.use_alignment = false;
    } else {
        throw UsageError("unknown ablation variant \"" + variant + "\"");
    }
}

std::string LossReport::to_json() const {
    json j;
    j["step"] = step;
    j["l_cap"] = l_cap;
    j["l_glo"] = l_glo;
    j["l_reg"] = l_reg;
    j["l_hsic"] = l_hsic;
    j["l_align"] = l_align;
    j["total"] = total;
    return j.dump();
}

LossReport LossReport::from_json(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("loss report: ") + e.what(), 1);
    }
    LossReport r;
    auto field = [&](const char* k) -> const json& {
        if (!j.contains(k)) throw SchemaError(std::string("loss report is missing \"") + k + "\"", k);
        return j[k];
    };
    r.step = field("step").get<int>();
    r.l_cap = field("l_cap").get<double>();
    r.l_glo = field("l_glo").get<double>();
    r.l_reg = field("l_reg").get<double>();
    r.l_hsic = field("l_hsic").get<double>();
    r.l_align = field("l_align").get<double>();
    r.total = field("total").get<double>();
    return r;
}

double total_loss(const LossReport& parts, double lambda) {
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    const std::pair<const char*, double> named[] = {{"l_cap", parts.l_cap},   {"l_glo", parts.l_glo},
                                                    {"l_reg", parts.l_reg},   {"l_hsic", parts.l_hsic},
                                                    {"l_align", parts.l_align}};
    for (const auto& [name, v] : named) {
        if (!std::isfinite(v)) throw NumericError(std::string("loss part ") + name + " is not finite");
    }
    return parts.l_cap + lambda * (parts.l_glo + parts.l_reg + parts.l_hsic + parts.l_align);
}

template <typename T>
Adam<T>::Adam(ParamList<T> params, double learning_rate, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.push_back(Matrix<T>::Zero(p.var.rows(), p.var.cols()));
        v_.push_back(Matrix<T>::Zero(p.var.rows(), p.var.cols()));
    }
}

template <typename T>
void Adam<T>::step() {
    ++t_;
    const T b1 = static_cast<T>(beta1_);
    const T b2 = static_cast<T>(beta2_);
    const T c1 = static_cast<T>(1.0 - std::pow(beta1_, t_));
    const T c2 = static_cast<T>(1.0 - std::pow(beta2_, t_));
    const T lr = static_cast<T>(lr_);
    const T eps = static_cast<T>(eps_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Var<T> p = params_[i].var;
        Node<T>* node = p.node();
        if (node->grad.size() == 0) continue;
        const Matrix<T>& g = node->grad;
        m_[i] = b1 * m_[i] + (T(1) - b1) * g;
        v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseProduct(g);
        p.mutable_value().array() -=
            lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
        p.zero_grad();
    }
}

template <typename T>
StepLosses<T> compute_losses(const std::vector<TrainingExample>& batch, const std::vector<std::size_t>& negatives,
                             const ModelParams<T>& params, const TrainConfig& config) {
    const std::size_t b = batch.size();
    if (b < 2) throw BatchSizeError("training batch must hold at least 2 pairs");
    if (config.use_alignment && negatives.size() != b) {
        throw DimensionError("compute_losses: one negative index per example is required");
    }
    std::vector<PairForward<T>> passes;
    passes.reserve(b);
    std::vector<Var<T>> memories;
    std::vector<std::vector<int>> sequences;
    for (const auto& ex : batch) {
        passes.push_back(forward_pair(*ex.pair, config.model, params, true));
    }
    for (std::size_t i = 0; i < b; ++i) {
        memories.push_back(passes[i].memory_forward);
        sequences.push_back(batch[i].forward_ids);
    }
    for (std::size_t i = 0; i < b; ++i) {
        memories.push_back(passes[i].memory_reverse);
        sequences.push_back(batch[i].reverse_ids);
    }
    const CaptionBatch captions = CaptionBatch::from_sequences(sequences);
    const auto decoded = decode_train(memories, captions, params.decoder);
    std::vector<Var<T>> logits;
    logits.reserve(decoded.size());
    for (const auto& d : decoded) logits.push_back(d.logits);

    StepLosses<T> out;
    out.cap = caption_loss(logits, captions);
    std::vector<ContextVectors<T>> contexts;
    contexts.reserve(b);
    for (const auto& p : passes) contexts.push_back(p.cv_forward);
    out.con = context_loss(contexts, config.tau, config.bandwidth);

    Var<T> aux = out.con.con;
    if (config.use_alignment) {
        std::vector<DirectionalVectors<T>> dirs;
        dirs.reserve(b);
        for (std::size_t i = 0; i < b; ++i) {
            const Var<T> t_fwd = slice_rows(decoded[i].text, 0, captions.lengths[i]);
            const Var<T> t_rev = slice_rows(decoded[b + i].text, 0, captions.lengths[b + i]);
            dirs.push_back(directional_vectors(passes[i].forward.d, passes[i].reverse.d, t_fwd, t_rev));
        }
        std::vector<Var<T>> per_pair;
        per_pair.reserve(b);
        for (std::size_t i = 0; i < b; ++i) {
            const std::size_t j = negatives[i];
            if (j >= b || j == i) throw DimensionError("compute_losses: negative must be another batch element");
            dirs[i].negatives_d = {dirs[j].delta_d};
            dirs[i].negatives_t = {dirs[j].delta_t};
            AlignmentLoss<T> a = alignment_loss(dirs[i], config.gamma);
            out.align_degenerate = out.align_degenerate || a.degenerate;
            per_pair.push_back(a.value);
        }
        out.align = mean(concat_rows(per_pair));
        aux = add(aux, out.align);
    }
    out.total = add(out.cap, scale(aux, static_cast<T>(config.lambda)));
    return out;
}

template <typename T>
LossReport report_of(const StepLosses<T>& losses, int step) {
    LossReport r;
    r.step = step;
    r.l_cap = static_cast<double>(losses.cap.item());
    r.l_glo = static_cast<double>(losses.con.glo.item());
    r.l_reg = static_cast<double>(losses.con.reg.item());
    r.l_hsic = static_cast<double>(losses.con.hsic.item());
    r.l_align = losses.align.defined() ? static_cast<double>(losses.align.item()) : 0.0;
    r.total = static_cast<double>(losses.total.item());
    return r;
}

Vocab load_vocab(const TrainConfig& config) {
    if (config.vocab_path.empty()) return Vocab::caption_default();
    return Vocab::from_json(read_text(config.vocab_path));
}

TrainResult train(const std::vector<PairRecord>& records, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& out_dir) {
    config.validate();
    if (config.precision != "float") {
        throw ConfigError("training runs in single precision; double precision is reserved for gradient checks");
    }
    if (records.size() < static_cast<std::size_t>(config.batch_size)) {
        throw BatchSizeError("dataset holds " + std::to_string(records.size()) + " pairs, fewer than batch_size " +
                             std::to_string(config.batch_size));
    }
    TrainResult result;
    result.vocab = load_vocab(config);
    const PrototypeTable prototypes(config.model.d_in, config.model.prototype_seed);

    std::vector<std::vector<std::vector<int>>> fwd_ids(records.size());
    std::vector<std::vector<std::vector<int>>> rev_ids(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!(GridShape{records[i].before.height, records[i].before.width} == config.model.grid)) {
            throw ConfigError("pair " + records[i].pair_id + " does not match the configured grid");
        }
        for (const auto& c : records[i].captions_forward) fwd_ids[i].push_back(result.vocab.encode(c));
        for (const auto& c : records[i].captions_reverse) rev_ids[i].push_back(result.vocab.encode(c));
        if (fwd_ids[i].empty() || fwd_ids[i].size() != rev_ids[i].size()) {
            throw SchemaError("pair " + records[i].pair_id + " needs matching forward and reverse captions",
                              "captions_forward");
        }
    }

    result.params = ModelParams<float>(config.model, result.vocab.size(), config.seed);
    Adam<float> optimizer(result.params.parameters(), config.learning_rate);
    Rng rng(splitmix64(config.seed ^ kBatchStream));

    std::ofstream log_file;
    if (out_dir) {
        std::filesystem::create_directories(*out_dir);
        log_file.open(*out_dir / "loss_log.jsonl", std::ios::binary | std::ios::trunc);
        if (!log_file) throw IoError("cannot write " + (*out_dir / "loss_log.jsonl").string());
    }

    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;
    const auto b = static_cast<std::size_t>(config.batch_size);

    for (int step = 1; step <= config.iterations; ++step) {
        if (cursor + b > order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        std::vector<PreparedPair> prepared;
        prepared.reserve(b);
        for (std::size_t k = 0; k < b; ++k) {
            prepared.push_back(prepare_pair(records[order[cursor + k]], config.model, prototypes));
        }
        std::vector<TrainingExample> batch;
        batch.reserve(b);
        for (std::size_t k = 0; k < b; ++k) {
            const std::size_t idx = order[cursor + k];
            const int variants = static_cast<int>(fwd_ids[idx].size());
            const auto v = static_cast<std::size_t>(std::uniform_int_distribution<int>(0, variants - 1)(rng));
            batch.push_back(TrainingExample{&prepared[k], fwd_ids[idx][v], rev_ids[idx][v]});
        }
        cursor += b;
        std::vector<std::size_t> negatives(b);
        for (std::size_t k = 0; k < b; ++k) {
            std::size_t j = static_cast<std::size_t>(std::uniform_int_distribution<int>(0, static_cast<int>(b) - 2)(rng));
            negatives[k] = j >= k ? j + 1 : j;
        }

        StepLosses<float> losses = compute_losses(batch, negatives, result.params, config);
        LossReport report = report_of(losses, step);
        if (!std::isfinite(report.total)) {
            throw NumericError("training diverged at step " + std::to_string(step) + " (total loss is not finite)");
        }
        total_loss(report, config.lambda);
        backward(losses.total);
        optimizer.step();
        result.log.push_back(report);
        if (log_file.is_open()) log_file << report.to_json() << '\n';
    }
    if (out_dir) {
        log_file.close();
        save_checkpoint(*out_dir / "checkpoint", result.params, result.vocab, config);
    }
    return result;
}

TrainResult train(const std::filesystem::path& dataset_path, const TrainConfig& config,
                  const std::filesystem::path& out_dir) {
    return train(read_dataset(dataset_path), config, out_dir);
}

void save_checkpoint(const std::filesystem::path& dir, const ModelParams<float>& params, const Vocab& vocab,
                     const TrainConfig& config) {
    static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
    std::filesystem::create_directories(dir);
    std::ofstream bin(dir / "params.bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw IoError("cannot write " + (dir / "params.bin").string());
    json manifest;
    manifest["dtype"] = "float32";
    manifest["byte_order"] = "little";
    manifest["layout"] = "row-major";
    json tensors = json::array();
    std::uint64_t offset = 0;
    for (const auto& p : params.parameters()) {
        const Matrix<float>& m = p.var.value();
        const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
        bin.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(float)));
        tensors.push_back({{"name", p.name},
                           {"shape", {m.rows(), m.cols()}},
                           {"dtype", "float32"},
                           {"offset", offset}});
        offset += static_cast<std::uint64_t>(rm.size() * sizeof(float));
    }
    manifest["tensors"] = tensors;
    if (!bin) throw IoError("failed writing " + (dir / "params.bin").string());
    write_text(dir / "manifest.json", manifest.dump(2));
    write_text(dir / "vocab.json", vocab.to_json());
    write_text(dir / "config.json", config.to_json());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    for (const char* f : {"params.bin", "manifest.json", "vocab.json", "config.json"}) {
        if (!std::filesystem::exists(dir / f)) throw IoError("checkpoint file missing: " + (dir / f).string());
    }
    Checkpoint ck{ModelParams<float>{}, Vocab::from_json(read_text(dir / "vocab.json")),
                  TrainConfig::from_json(read_text(dir / "config.json"))};
    ck.params = ModelParams<float>(ck.config.model, ck.vocab.size(), ck.config.seed);
    json manifest;
    try {
        manifest = json::parse(read_text(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("manifest: ") + e.what(), 1);
    }
    const std::string blob = read_text(dir / "params.bin");
    std::unordered_map<std::string, const json*> by_name;
    for (const auto& t : manifest.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;
    for (auto& p : ck.params.parameters()) {
        const auto it = by_name.find(p.name);
        if (it == by_name.end()) throw SchemaError("checkpoint has no tensor " + p.name, p.name);
        const json& t = *it->second;
        const auto shape = t.at("shape").get<std::vector<Index>>();
        if (shape.size() != 2 || shape[0] != p.var.rows() || shape[1] != p.var.cols()) {
            throw DimensionError("checkpoint tensor " + p.name + " has an unexpected shape");
        }
        const auto offset = t.at("offset").get<std::uint64_t>();
        const auto bytes = static_cast<std::uint64_t>(shape[0] * shape[1]) * sizeof(float);
        if (offset + bytes > blob.size()) throw IoError("params.bin is truncated at " + p.name);
        Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(shape[0], shape[1]);
        std::memcpy(rm.data(), blob.data() + offset, bytes);
        p.var.mutable_value() = rm;
    }
    return ck;
}

std::vector<TokenSeq> caption_records(const std::vector<PairRecord>& records, const ModelParams<float>& params,
                                      const TrainConfig& config, const Vocab& vocab) {
    const PrototypeTable prototypes(config.model.d_in, config.model.prototype_seed);
    std::vector<TokenSeq> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        out.push_back(caption_pair(prepare_pair(r, config.model, prototypes), config.model, params, vocab));
    }
    return out;
}

template class Adam<float>;
template class Adam<double>;
template StepLosses<float> compute_losses<float>(const std::vector<TrainingExample>&, const std::vector<std::size_t>&,
                                                 const ModelParams<float>&, const TrainConfig&);
template StepLosses<double> compute_losses<double>(const std::vector<TrainingExample>&,
                                                   const std::vector<std::size_t>&, const ModelParams<double>&,
                                                   const TrainConfig&);
template LossReport report_of<float>(const StepLosses<float>&, int);
template LossReport report_of<double>(const StepLosses<double>&, int);

}  // namespace hdccl
