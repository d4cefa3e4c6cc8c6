#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "atmc/model.hpp"

namespace atmc {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (little-endian):
///   "ATMC", u32 version, architecture descriptor, u8 parameterization, u8 bits,
///   per layer {u8 transposed, u32 n, n × f32 bias},
///   per live matrix {u8 role, u32 rows, u32 cols, u8 b,
///     b < 32: u32 levels, levels × f32 codebook, entries as codebook indices
///             packed LSB-first in ceil(log2(2^b + 1)) bits (0 = zero);
///     b = 32: rows·cols × f32},
///   u32 crc32 of everything before it.
/// Matrices that are not live (U and C of a dense model) are implied.
struct Checkpoint {
  ModelParams model;
  int bits = 32;
};

/// Throws ConfigError when a value is not exactly representable as float32 or
/// a matrix has more than 2^bits distinct nonzeros.
std::vector<std::uint8_t> encode_checkpoint(const ModelParams& model, int bits);
/// Throws FormatError on bad magic, version mismatch, checksum failure or truncation.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Returns the number of bytes written.
std::uint64_t save_checkpoint(const ModelParams& model, int bits, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Index width for a b-bit codebook plus the zero level.
int index_bits(int bits);

}  // namespace atmc
