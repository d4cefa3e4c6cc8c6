#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "atmc/dataset.hpp"

namespace atmc {

/// Parsed IDX ubyte file: big-endian header, then raw bytes.
struct IdxFile {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;
};

/// Parses an IDX file whose magic must equal `expected_magic`
/// (0x00000803 images, 0x00000801 labels). Throws FormatError naming the
/// byte offset of the first problem.
IdxFile parse_idx(std::span<const std::uint8_t> raw, std::uint32_t expected_magic,
                  const std::string& what = "idx");

/// Images (N×1×H×W, byte/255) and labels from a pair of IDX buffers.
Dataset decode_idx_pair(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels,
                        std::size_t classes = 10);

Dataset load_idx_pair(const std::filesystem::path& images, const std::filesystem::path& labels);

/// train-images-idx3-ubyte etc. from `dir`.
DataSplit load_mnist(const std::filesystem::path& dir);

/// `explicit_dir` if non-empty, else $ATMC_DATA_DIR, else "data/mnist".
std::filesystem::path resolve_mnist_dir(const std::string& explicit_dir);

}  // namespace atmc
