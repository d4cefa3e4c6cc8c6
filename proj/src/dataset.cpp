#include "atmc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "atmc/error.hpp"

namespace atmc {

Dataset Dataset::slice(std::size_t offset, std::size_t count) const {
  const std::size_t n = size();
  const std::size_t begin = std::min(offset, n);
  const std::size_t end = std::min(n, begin + count);
  std::vector<std::size_t> rows(end - begin);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = begin + i;
  return Dataset{gather(rows), gather_labels(rows), classes};
}

Tensor Dataset::gather(std::span<const std::size_t> rows) const {
  if (images.rank() != 4) throw ShapeError("dataset images must be N×C×H×W");
  const std::size_t per = images.size() / images.dim(0);
  Tensor out({rows.size(), images.dim(1), images.dim(2), images.dim(3)});
  const auto src = images.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= images.dim(0)) throw ShapeError("dataset row out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(rows[i] * per), per,
                dst.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> rows) const {
  std::vector<int> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = labels.at(rows[i]);
  return out;
}

void SynthSpec::validate() const {
  if (classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (channels == 0 || height == 0 || width == 0) throw ConfigError("synthetic image is empty");
  if (train == 0 || test == 0) throw ConfigError("synthetic split sizes must be > 0");
  if (noise < 0.0 || margin < 0.0 || !(amplitude > 0.0) || !(blob_width > 0.0)) {
    throw ConfigError("synthetic noise, margin, amplitude and blob width must be positive");
  }
}

Tensor synth_prototypes(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0.2, 0.8);
  const std::size_t plane = spec.height * spec.width;
  Tensor out({spec.classes, spec.channels, spec.height, spec.width});
  const double s = spec.blob_width * static_cast<double>(std::max(spec.height, spec.width));
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t ch = 0; ch < spec.channels; ++ch) {
      const double cy = pos(rng) * static_cast<double>(spec.height - 1);
      const double cx = pos(rng) * static_cast<double>(spec.width - 1);
      double* img = out.data().data() + (c * spec.channels + ch) * plane;
      for (std::size_t y = 0; y < spec.height; ++y) {
        for (std::size_t x = 0; x < spec.width; ++x) {
          const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          img[y * spec.width + x] = spec.amplitude * std::exp(-d2 / (2.0 * s * s));
        }
      }
    }
  }
  return out;
}

namespace {

// Smallest distance from x to the bisector between prototype `label` and any other.
double prototype_margin(const Tensor& protos, std::size_t per, const double* x, std::size_t label) {
  const double* a = protos.data().data() + label * per;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < protos.dim(0); ++c) {
    if (c == label) continue;
    const double* b = protos.data().data() + c * per;
    double dot = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      const double w = a[i] - b[i];
      dot += w * (x[i] - 0.5 * (a[i] + b[i]));
      norm += w * w;
    }
    best = std::min(best, norm > 0.0 ? dot / std::sqrt(norm) : -1.0);
  }
  return best;
}

Dataset draw_split(const SynthSpec& spec, const Tensor& protos, std::size_t count,
                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spec.noise);
  const std::size_t per = spec.channels * spec.height * spec.width;
  Dataset d;
  d.classes = spec.classes;
  d.images = Tensor({count, spec.channels, spec.height, spec.width});
  d.labels.resize(count);
  std::vector<double> x(per);
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t label = n % spec.classes;
    const double* proto = protos.data().data() + label * per;
    int attempts = 0;
    do {
      if (++attempts > 1000) {
        throw ConfigError("synthetic margin " + std::to_string(spec.margin) +
                          " is unattainable at noise " + std::to_string(spec.noise));
      }
      for (std::size_t i = 0; i < per; ++i) x[i] = std::clamp(proto[i] + noise(rng), 0.0, 1.0);
    } while (prototype_margin(protos, per, x.data(), label) < spec.margin);
    std::copy(x.begin(), x.end(), d.images.data().begin() + static_cast<std::ptrdiff_t>(n * per));
    d.labels[n] = static_cast<int>(label);
  }
  return d;
}

}  // namespace

DataSplit synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
  const Tensor protos = synth_prototypes(spec, seed);
  DataSplit s;
  s.name = "synth";
  s.train = draw_split(spec, protos, spec.train, seed ^ 0x5851F42D4C957F2DULL);
  s.test = draw_split(spec, protos, spec.test, seed ^ 0x14057B7EF767814FULL);
  return s;
}

}  // namespace atmc
