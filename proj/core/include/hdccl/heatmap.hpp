#pragma once

// Grayscale ASCII PGM (P2) export of vote maps and decoder cross-attention.

#include <filesystem>
#include <string>

#include "hdccl/model.hpp"
#include "hdccl/vocab.hpp"

namespace hdccl {

/// Min-max scales `values` to 0..255 (all zeros when constant) and formats a P2 image,
/// one text line per matrix row.
std::string to_pgm(const Matrix<double>& values);

/// Throws IoError naming the path on failure.
void write_pgm(const std::filesystem::path& path, const Matrix<double>& values);

/// Head-averaged decoder cross-attention for the greedy forward caption:
/// one row per generated token (including EOS when reached), one column per patch.
template <typename T>
Matrix<double> cross_attention_map(const PreparedPair& pair, const ModelConfig& config, const ModelParams<T>& params);

}  // namespace hdccl
