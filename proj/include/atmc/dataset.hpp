#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "atmc/tensor.hpp"

namespace atmc {

/// Images as N×C×H×W with pixels on [0,1], one label per image.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t classes = 10;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }

  /// Rows [offset, offset + count), clipped to the end.
  Dataset slice(std::size_t offset, std::size_t count) const;
  /// Images of the given rows, in order.
  Tensor gather(std::span<const std::size_t> rows) const;
  std::vector<int> gather_labels(std::span<const std::size_t> rows) const;
};

struct DataSplit {
  std::string name;
  Dataset train;
  Dataset test;
};

/// Gaussian-blob image classes. Each class has a prototype image (one bump per
/// channel at a random position); samples are prototype + N(0, noise²) per
/// pixel, clamped to [0,1]. A sample is redrawn until its distance to every
/// bisecting hyperplane between its prototype and another is at least `margin`,
/// so the nearest-prototype rule separates the classes linearly with that margin.
struct SynthSpec {
  std::size_t classes = 2;
  std::size_t channels = 1;
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t train = 512;
  std::size_t test = 256;
  double noise = 0.2;
  double margin = 0.25;
  double amplitude = 0.8;
  double blob_width = 0.15;  // bump standard deviation as a fraction of the image side

  void validate() const;
};

/// classes × C×H×W prototype images.
Tensor synth_prototypes(const SynthSpec& spec, std::uint64_t seed);
/// Deterministic per (spec, seed); train and test come from separate streams.
DataSplit synth_dataset(const SynthSpec& spec, std::uint64_t seed);

}  // namespace atmc
