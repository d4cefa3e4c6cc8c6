#include "atmc/mnist.hpp"

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "atmc/error.hpp"

namespace atmc {

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> raw, std::size_t offset) {
  return (std::uint32_t{raw[offset]} << 24) | (std::uint32_t{raw[offset + 1]} << 16) |
         (std::uint32_t{raw[offset + 2]} << 8) | std::uint32_t{raw[offset + 3]};
}

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex;
  os.width(8);
  os.fill('0');
  os << v;
  return os.str();
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

IdxFile parse_idx(std::span<const std::uint8_t> raw, std::uint32_t expected_magic,
                  const std::string& what) {
  if (raw.size() < 4) {
    throw FormatError(what + ": truncated header, file has " + std::to_string(raw.size()) +
                      " bytes, magic needs 4 at offset 0");
  }
  const std::uint32_t magic = read_be32(raw, 0);
  if (magic != expected_magic) {
    throw FormatError(what + ": bad magic " + hex32(magic) + " at offset 0, expected " +
                      hex32(expected_magic));
  }
  const std::size_t rank = expected_magic & 0xFF;
  const std::size_t header = 4 + 4 * rank;
  if (raw.size() < header) {
    throw FormatError(what + ": truncated dimension header, need " + std::to_string(header) +
                      " bytes, file ends at offset " + std::to_string(raw.size()));
  }
  IdxFile out;
  std::size_t payload = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    const std::uint32_t d = read_be32(raw, 4 + 4 * i);
    if (d == 0) {
      throw FormatError(what + ": zero dimension at offset " + std::to_string(4 + 4 * i));
    }
    out.dims.push_back(d);
    payload *= d;
  }
  if (raw.size() < header + payload) {
    throw FormatError(what + ": truncated payload, expected " + std::to_string(payload) +
                      " bytes from offset " + std::to_string(header) + ", found " +
                      std::to_string(raw.size() - header));
  }
  if (raw.size() > header + payload) {
    throw FormatError(what + ": " + std::to_string(raw.size() - header - payload) +
                      " trailing bytes after offset " + std::to_string(header + payload));
  }
  out.bytes.assign(raw.begin() + static_cast<std::ptrdiff_t>(header), raw.end());
  return out;
}

Dataset decode_idx_pair(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels,
                        std::size_t classes) {
  const IdxFile img = parse_idx(images, 0x00000803, "images");
  const IdxFile lab = parse_idx(labels, 0x00000801, "labels");
  if (img.dims[0] != lab.dims[0]) {
    throw FormatError("count mismatch: images header at offset 4 declares " +
                      std::to_string(img.dims[0]) + " items, labels header at offset 4 declares " +
                      std::to_string(lab.dims[0]));
  }
  Dataset d;
  d.classes = classes;
  d.images = Tensor({img.dims[0], 1, img.dims[1], img.dims[2]});
  for (std::size_t i = 0; i < img.bytes.size(); ++i) d.images[i] = img.bytes[i] / 255.0;
  d.labels.resize(lab.bytes.size());
  for (std::size_t i = 0; i < lab.bytes.size(); ++i) {
    if (lab.bytes[i] >= classes) {
      throw FormatError("labels: value " + std::to_string(lab.bytes[i]) + " at offset " +
                        std::to_string(8 + i) + " is not below " + std::to_string(classes));
    }
    d.labels[i] = lab.bytes[i];
  }
  return d;
}

Dataset load_idx_pair(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  try {
    return decode_idx_pair(img, lab);
  } catch (const FormatError& e) {
    throw FormatError(images.filename().string() + "/" + labels.filename().string() + ": " +
                      e.what());
  }
}

DataSplit load_mnist(const std::filesystem::path& dir) {
  DataSplit s;
  s.name = "mnist";
  s.train = load_idx_pair(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
  s.test = load_idx_pair(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
  return s;
}

std::filesystem::path resolve_mnist_dir(const std::string& explicit_dir) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* env = std::getenv("ATMC_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return "data/mnist";
}

}  // namespace atmc
