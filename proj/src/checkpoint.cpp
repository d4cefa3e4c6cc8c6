#include "atmc/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "atmc/error.hpp"

namespace atmc {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v, const char* what) {
    const float f = static_cast<float>(v);
    if (!std::isfinite(v) || static_cast<double>(f) != v) {
      throw ConfigError(std::string(what) + " value is not an exact float32; finalize the model first");
    }
    u32(std::bit_cast<std::uint32_t>(f));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{in_[pos_++]} << (8 * i);
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated at offset " + std::to_string(pos_));
    }
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFu) throw ConfigError(std::string(what) + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

void write_arch(Writer& w, const ArchitectureSpec& a) {
  w.str(a.name);
  w.u32(checked_u32(a.in_channels, "channels"));
  w.u32(checked_u32(a.in_height, "height"));
  w.u32(checked_u32(a.in_width, "width"));
  w.u32(checked_u32(a.classes, "classes"));
  w.u32(checked_u32(a.layers.size(), "layer count"));
  for (const LayerSpec& l : a.layers) {
    w.u8(l.kind == LayerKind::conv ? 1 : 0);
    w.u32(checked_u32(l.in, "layer input"));
    w.u32(checked_u32(l.out, "layer output"));
    w.u32(checked_u32(l.kernel, "kernel"));
    w.u32(checked_u32(l.stride, "stride"));
    w.u32(checked_u32(l.pad, "pad"));
    w.u8(l.relu ? 1 : 0);
    w.u32(checked_u32(l.pool, "pool"));
  }
}

ArchitectureSpec read_arch(Reader& r) {
  ArchitectureSpec a;
  a.name = r.str();
  a.in_channels = r.u32();
  a.in_height = r.u32();
  a.in_width = r.u32();
  a.classes = r.u32();
  const std::uint32_t n = r.u32();
  if (n > 1024) throw FormatError("checkpoint declares " + std::to_string(n) + " layers");
  for (std::uint32_t i = 0; i < n; ++i) {
    LayerSpec l;
    const std::uint8_t kind = r.u8();
    if (kind > 1) throw FormatError("checkpoint layer " + std::to_string(i) + " has unknown kind");
    l.kind = kind == 1 ? LayerKind::conv : LayerKind::fc;
    l.in = r.u32();
    l.out = r.u32();
    l.kernel = r.u32();
    l.stride = r.u32();
    l.pad = r.u32();
    l.relu = r.u8() != 0;
    l.pool = r.u32();
    a.layers.push_back(l);
  }
  try {
    a.weight_shapes();
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint architecture is inconsistent: ") + e.what());
  }
  return a;
}

void write_matrix(Writer& w, const Tensor& m, MatrixRole role, int bits) {
  w.u8(static_cast<std::uint8_t>(role));
  w.u32(checked_u32(m.dim(0), "rows"));
  w.u32(checked_u32(m.dim(1), "cols"));
  w.u8(static_cast<std::uint8_t>(bits));
  const auto d = m.data();
  if (bits >= 32) {
    for (double v : d) w.f32(v, "matrix");
    return;
  }
  std::vector<double> levels;
  for (double v : d) {
    if (v != 0.0) levels.push_back(v);
  }
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  if (levels.size() > (std::size_t{1} << bits)) {
    throw ConfigError("matrix has " + std::to_string(levels.size()) +
                      " distinct nonzeros, more than 2^" + std::to_string(bits));
  }
  w.u32(static_cast<std::uint32_t>(levels.size()));
  for (double v : levels) w.f32(v, "codebook");
  const int width = index_bits(bits);
  std::uint64_t acc = 0;
  int filled = 0;
  for (double v : d) {
    if (v == 0.0 && std::signbit(v)) throw ConfigError("negative zero in a quantized matrix");
    const std::uint64_t idx =
        v == 0.0 ? 0
                 : static_cast<std::uint64_t>(
                       std::lower_bound(levels.begin(), levels.end(), v) - levels.begin()) + 1;
    acc |= idx << filled;
    filled += width;
    while (filled >= 8) {
      w.u8(static_cast<std::uint8_t>(acc & 0xFF));
      acc >>= 8;
      filled -= 8;
    }
  }
  if (filled > 0) w.u8(static_cast<std::uint8_t>(acc & 0xFF));
}

void read_matrix(Reader& r, Tensor& m, MatrixRole role, int model_bits) {
  const std::uint8_t stored_role = r.u8();
  if (stored_role != static_cast<std::uint8_t>(role)) {
    throw FormatError("checkpoint matrix role mismatch at offset " + std::to_string(r.pos() - 1));
  }
  const std::size_t rows = r.u32(), cols = r.u32();
  if (rows != m.dim(0) || cols != m.dim(1)) {
    throw FormatError("checkpoint matrix is " + std::to_string(rows) + "x" + std::to_string(cols) +
                      ", architecture needs " + std::to_string(m.dim(0)) + "x" +
                      std::to_string(m.dim(1)));
  }
  const int bits = r.u8();
  if (bits != model_bits) throw FormatError("checkpoint matrix bit width differs from header");
  auto d = m.data();
  if (bits >= 32) {
    for (double& v : d) v = r.f32();
    return;
  }
  const std::uint32_t count = r.u32();
  if (count > (std::uint64_t{1} << bits)) throw FormatError("checkpoint codebook too large");
  std::vector<double> levels(count);
  for (double& v : levels) v = r.f32();
  const int width = index_bits(bits);
  const std::size_t nbytes = (d.size() * static_cast<std::size_t>(width) + 7) / 8;
  const auto packed = r.take(nbytes);
  std::uint64_t acc = 0;
  int filled = 0;
  std::size_t next = 0;
  const std::uint64_t mask = (std::uint64_t{1} << width) - 1;
  for (double& v : d) {
    while (filled < width) {
      acc |= std::uint64_t{packed[next++]} << filled;
      filled += 8;
    }
    const std::uint64_t idx = acc & mask;
    acc >>= width;
    filled -= width;
    if (idx > count) throw FormatError("checkpoint codebook index out of range");
    v = idx == 0 ? 0.0 : levels[idx - 1];
  }
}

}  // namespace

int index_bits(int bits) {
  // ceil(log2(2^b + 1)) = b + 1
  return std::bit_width(std::uint64_t{1} << bits);
}

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& model, int bits) {
  if (bits < 1 || bits > 32) throw ConfigError("bits must be in [1, 32]");
  Writer w;
  for (char c : std::string("ATMC")) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kCheckpointVersion);
  write_arch(w, model.arch());
  w.u8(model.parameterization() == Parameterization::dense ? 0 : 1);
  w.u8(static_cast<std::uint8_t>(bits));
  for (const ParamTriple& t : model.layers()) {
    w.u8(t.transposed ? 1 : 0);
    w.u32(checked_u32(t.bias.size(), "bias"));
    for (double v : t.bias.data()) w.f32(v, "bias");
  }
  for (const MatrixId& id : model.matrix_ids()) write_matrix(w, model.matrix(id), id.role, bits);
  w.u32(crc(w.bytes()));
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) {
    throw FormatError("checkpoint truncated: " + std::to_string(bytes.size()) + " bytes");
  }
  if (std::memcmp(bytes.data(), "ATMC", 4) != 0) throw FormatError("checkpoint has bad magic");
  Reader r(bytes);
  r.take(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  if (crc(body) != tail.u32()) throw FormatError("checkpoint checksum mismatch (corrupt or truncated)");
  Reader in(body);
  in.take(8);

  const ArchitectureSpec arch = read_arch(in);
  const std::uint8_t param = in.u8();
  if (param > 1) throw FormatError("checkpoint has unknown parameterization");
  Checkpoint out;
  out.bits = in.u8();
  if (out.bits < 1 || out.bits > 32) throw FormatError("checkpoint bit width out of range");
  const auto kind = param == 0 ? Parameterization::dense : Parameterization::factorized;
  ModelParams model = init_factorized(arch, 0, kind);
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    ParamTriple& t = model.layer(l);
    const bool transposed = in.u8() != 0;
    if (transposed != t.transposed) throw FormatError("checkpoint layer orientation mismatch");
    if (in.u32() != t.bias.size()) throw FormatError("checkpoint bias length mismatch");
    for (double& v : t.bias.values()) v = in.f32();
  }
  for (const MatrixId& id : model.matrix_ids()) read_matrix(in, model.matrix(id), id.role, out.bits);
  if (in.remaining() != 0) {
    throw FormatError("checkpoint has " + std::to_string(in.remaining()) + " unexpected bytes");
  }
  out.model = std::move(model);
  return out;
}

std::uint64_t save_checkpoint(const ModelParams& model, int bits, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model, bits);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
  return bytes.size();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace atmc
