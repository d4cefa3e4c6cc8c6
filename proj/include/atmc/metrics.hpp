#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "atmc/attacks.hpp"
#include "atmc/dataset.hpp"
#include "atmc/graph.hpp"
#include "atmc/model.hpp"

namespace atmc {

/// Attack from a budget on the 0–255 pixel scale. A zero budget for pgd or
/// fgsm yields the clean (none) attack.
AttackConfig attack_from_raw(AttackFamily family, double delta_255, int steps,
                             double wrm_gamma = 1.3);

/// Σ over live matrices of b·‖M‖₀ + 32·|M|₀; at b = 32 the codebook term is
/// dropped. Biases and sparse-index storage are not counted.
std::uint64_t model_size_bits(const ModelParams& model, int bits);

/// 32 bits per weight of the unfactorized dense network.
std::uint64_t dense_size_bits(const ArchitectureSpec& arch);

/// model_size_bits / dense_size_bits.
double compression_ratio(const ModelParams& model, int bits);

struct Accuracy {
  double ta = 0.0;   // clean
  double ata = 0.0;  // under the attack, each sample attacked independently
};

/// Accuracy on the whole dataset, processed in fixed batches.
Accuracy evaluate(const ModelParams& model, const Dataset& data, const AttackConfig& attack,
                  Precision precision = Precision::f64, std::size_t batch = 250);

struct MetricsRow {
  std::string pipeline;
  std::string dataset;
  std::string arch;
  std::size_t k = 0;  // kNoSparsityLimit is written as "inf"
  int bits = 32;
  std::size_t nnz = 0;
  std::vector<std::size_t> distinct;  // |M|₀ per live matrix
  std::uint64_t size_bits = 0;
  double compression_ratio = 0.0;
  std::uint64_t checkpoint_bytes = 0;
  double ta = 0.0;
  double ata = 0.0;
  std::string attack;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
};

/// Fills the size columns from a finalized model.
MetricsRow describe_model(const ModelParams& model, int bits);

/// Columns, in order:
///   pipeline,dataset,arch,k,bits,nnz,distinct,size_bits,compression_ratio,
///   checkpoint_bytes,ta,ata,attack,seed[,wall_seconds]
/// `distinct` joins per-matrix counts with ';'. A leading '#' line records the
/// compression-ratio denominator. Wall time is optional so that repeated runs
/// can produce identical files.
std::string csv_header(bool wall_time = false);
std::string csv_line(const MetricsRow& row, bool wall_time = false);
void write_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows,
               bool wall_time = false);
/// Reads files written by write_csv; throws FormatError on malformed rows.
std::vector<MetricsRow> read_csv(const std::filesystem::path& path);

}  // namespace atmc
