#include "atmc/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "atmc/error.hpp"
#include "atmc/projections.hpp"

namespace atmc {

namespace {

constexpr const char* kRatioNote =
    "# compression_ratio = size_bits / (32 * weights of the unfactorized dense network)";

std::string format_double(double v, const char* fmt) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::size_t count_correct(const std::vector<int>& pred, std::span<const int> labels) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return hit;
}

}  // namespace

AttackConfig attack_from_raw(AttackFamily family, double delta_255, int steps,
                             double wrm_gamma) {
  if (!(delta_255 >= 0.0)) throw ConfigError("attack budget must be >= 0");
  const double delta = delta_255 / kPixelScale;
  switch (family) {
    case AttackFamily::none:
      if (delta_255 != 0.0) throw ConfigError("attack none takes no budget (got delta > 0)");
      return AttackConfig::none();
    case AttackFamily::pgd:
      return delta == 0.0 ? AttackConfig::none() : AttackConfig::pgd(delta, steps);
    case AttackFamily::fgsm:
      return delta == 0.0 ? AttackConfig::none() : AttackConfig::fgsm(delta);
    case AttackFamily::wrm:
      if (delta == 0.0) throw ConfigError("wrm needs delta > 0 to set its step size");
      return AttackConfig::wrm(wrm_gamma, steps, delta);
  }
  throw ConfigError("unknown attack family");
}

std::uint64_t model_size_bits(const ModelParams& model, int bits) {
  if (bits < 1 || bits > 32) throw ConfigError("bits must be in [1, 32]");
  std::uint64_t total = 0;
  for (const MatrixId& id : model.matrix_ids()) {
    const Tensor& m = model.matrix(id);
    total += static_cast<std::uint64_t>(bits) * count_l0(m);
    if (bits < 32) total += 32 * count_distinct_nonzero(m);
  }
  return total;
}

std::uint64_t dense_size_bits(const ArchitectureSpec& arch) {
  return 32 * static_cast<std::uint64_t>(arch.dense_weight_count());
}

double compression_ratio(const ModelParams& model, int bits) {
  return static_cast<double>(model_size_bits(model, bits)) /
         static_cast<double>(dense_size_bits(model.arch()));
}

Accuracy evaluate(const ModelParams& model, const Dataset& data, const AttackConfig& attack,
                  Precision precision, std::size_t batch) {
  attack.validate();
  if (data.size() == 0) throw ConfigError("evaluation set is empty");
  if (batch == 0) throw ConfigError("evaluation batch must be >= 1");
  const Network net(model, precision);
  std::size_t clean = 0, attacked = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += batch) {
    const Dataset part = data.slice(begin, batch);
    const auto clean_pred = net.predict(part.images);
    clean += count_correct(clean_pred, part.labels);
    if (attack.family == AttackFamily::none) {
      attacked += count_correct(clean_pred, part.labels);
    } else {
      attacked += count_correct(net.predict(run_attack(net, part.images, part.labels, attack)),
                                part.labels);
    }
  }
  const double n = static_cast<double>(data.size());
  return {static_cast<double>(clean) / n, static_cast<double>(attacked) / n};
}

MetricsRow describe_model(const ModelParams& model, int bits) {
  MetricsRow row;
  row.arch = model.arch().name;
  row.bits = bits;
  row.nnz = model.total_nnz();
  for (const MatrixId& id : model.matrix_ids()) {
    row.distinct.push_back(count_distinct_nonzero(model.matrix(id)));
  }
  row.size_bits = model_size_bits(model, bits);
  row.compression_ratio = compression_ratio(model, bits);
  return row;
}

std::string csv_header(bool wall_time) {
  std::string h =
      "pipeline,dataset,arch,k,bits,nnz,distinct,size_bits,compression_ratio,checkpoint_bytes,"
      "ta,ata,attack,seed";
  if (wall_time) h += ",wall_seconds";
  return h;
}

std::string csv_line(const MetricsRow& r, bool wall_time) {
  std::ostringstream os;
  os << r.pipeline << ',' << r.dataset << ',' << r.arch << ',';
  if (r.k == kNoSparsityLimit) {
    os << "inf";
  } else {
    os << r.k;
  }
  os << ',' << r.bits << ',' << r.nnz << ',';
  for (std::size_t i = 0; i < r.distinct.size(); ++i) os << (i ? ";" : "") << r.distinct[i];
  os << ',' << r.size_bits << ',' << format_double(r.compression_ratio, "%.9g") << ','
     << r.checkpoint_bytes << ',' << format_double(r.ta, "%.6f") << ','
     << format_double(r.ata, "%.6f") << ',' << r.attack << ',' << r.seed;
  if (wall_time) os << ',' << format_double(r.wall_seconds, "%.3f");
  return os.str();
}

void write_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows,
               bool wall_time) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << kRatioNote << '\n' << csv_header(wall_time) << '\n';
  for (const MetricsRow& r : rows) out << csv_line(r, wall_time) << '\n';
  if (!out) throw FormatError("write failed for " + path.string());
}

std::vector<MetricsRow> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  std::vector<std::string> header;
  std::vector<MetricsRow> rows;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split(line, ',');
    if (header.empty()) {
      header = cells;
      if (header.size() < 14 || csv_header(header.size() == 15) != line) {
        throw FormatError(path.string() + ": line " + std::to_string(line_no) +
                          ": unexpected header");
      }
      continue;
    }
    if (cells.size() != header.size()) {
      throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " columns, found " +
                        std::to_string(cells.size()));
    }
    try {
      MetricsRow r;
      r.pipeline = cells[0];
      r.dataset = cells[1];
      r.arch = cells[2];
      r.k = cells[3] == "inf" ? kNoSparsityLimit : std::stoull(cells[3]);
      r.bits = std::stoi(cells[4]);
      r.nnz = std::stoull(cells[5]);
      for (const std::string& d : split(cells[6], ';')) {
        if (!d.empty()) r.distinct.push_back(std::stoull(d));
      }
      r.size_bits = std::stoull(cells[7]);
      r.compression_ratio = std::stod(cells[8]);
      r.checkpoint_bytes = std::stoull(cells[9]);
      r.ta = std::stod(cells[10]);
      r.ata = std::stod(cells[11]);
      r.attack = cells[12];
      r.seed = std::stoull(cells[13]);
      if (cells.size() == 15) r.wall_seconds = std::stod(cells[14]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ": line " + std::to_string(line_no) +
                        ": malformed number");
    }
  }
  if (header.empty()) throw FormatError(path.string() + ": missing header");
  return rows;
}

}  // namespace atmc
