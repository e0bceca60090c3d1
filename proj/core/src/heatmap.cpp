#include "hdccl/heatmap.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "hdccl/errors.hpp"

namespace hdccl {

std::string to_pgm(const Matrix<double>& values) {
    if (values.size() == 0) throw DimensionError("to_pgm: empty image");
    if (!values.allFinite()) throw NumericError("to_pgm: non-finite value");
    const double lo = values.minCoeff();
    const double range = values.maxCoeff() - lo;
    std::ostringstream out;
    out << "P2\n" << values.cols() << ' ' << values.rows() << "\n255\n";
    for (Index r = 0; r < values.rows(); ++r) {
        for (Index c = 0; c < values.cols(); ++c) {
            const long level = range > 0.0 ? std::lround(255.0 * (values(r, c) - lo) / range) : 0L;
            out << (c == 0 ? "" : " ") << level;
        }
        out << '\n';
    }
    return out.str();
}

void write_pgm(const std::filesystem::path& path, const Matrix<double>& values) {
    const std::string text = to_pgm(values);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("cannot write " + path.string());
}

template <typename T>
Matrix<double> cross_attention_map(const PreparedPair& pair, const ModelConfig& config, const ModelParams<T>& params) {
    NoGradGuard no_grad;
    const PairForward<T> fwd = forward_pair(pair, config, params, false);
    std::vector<int> ids = generate(fwd.memory_forward, params.decoder, config.max_len - 1);
    ids.insert(ids.begin(), Vocab::kBos);
    std::vector<Matrix<T>> weights;
    decode_sequence(fwd.memory_forward, ids, params.decoder, &weights);
    Matrix<double> avg = Matrix<double>::Zero(weights.front().rows(), weights.front().cols());
    for (const auto& w : weights) avg += w.template cast<double>();
    avg /= static_cast<double>(weights.size());
    // Row t attends while predicting token t + 1; the last row predicts past the caption.
    return avg.topRows(avg.rows() - 1);
}

template Matrix<double> cross_attention_map<float>(const PreparedPair&, const ModelConfig&, const ModelParams<float>&);
template Matrix<double> cross_attention_map<double>(const PreparedPair&, const ModelConfig&,
                                                     const ModelParams<double>&);

}  // namespace hdccl
