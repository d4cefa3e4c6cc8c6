#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <fstream>
#include <optional>

#include "atmc/baselines.hpp"
#include "atmc/checkpoint.hpp"
#include "atmc/error.hpp"
#include "atmc/metrics.hpp"
#include "atmc/mnist.hpp"
#include "atmc/plot.hpp"

namespace atmc {

namespace {

struct DataFlags {
  std::string dataset = "synth";
  std::string data_dir;
  std::size_t train_size = 0;  // 0: all (mnist) or 2000 (synth)
  std::size_t test_size = 0;   // 0: all (mnist) or 500 (synth)
  std::size_t image_size = 28;
  std::size_t classes = 10;
  double noise = 0.3;
};

struct AttackFlags {
  std::string family = "pgd";
  std::optional<double> delta;  // 76 unless the attack is none
  int steps = 16;
  double gamma = 1.3;
};

struct TrainFlags {
  std::string arch;
  std::string pipeline = "atmc";
  std::vector<std::size_t> k;
  double ratio = 0.0;
  double rank_fraction = 0.5;
  std::vector<int> bits;
  double rho = 1e-2;
  int epochs = 10;
  int finetune_epochs = -1;
  double lr = 0.05;
  double finetune_lr = 0.0;
  std::size_t batch = 128;
  double momentum = 0.9;
  double ramp_epochs = -1.0;
  int mirror_period = 1;
};

struct Common {
  DataFlags data;
  AttackFlags attack;
  TrainFlags train;
  std::string precision = "f32";
  std::uint64_t seed = 0;
  std::string out;
  std::string metrics;
  std::string checkpoint;
  std::string in;
  std::string title = "accuracy vs compression ratio";
  bool wall_time = false;
};

void add_data_flags(CLI::App* app, DataFlags& d) {
  app->add_option("--dataset", d.dataset, "mnist or synth")->check(CLI::IsMember({"mnist", "synth"}));
  app->add_option("--data-dir", d.data_dir, "MNIST directory (else $ATMC_DATA_DIR, else data/mnist)");
  app->add_option("--train-size", d.train_size, "training examples used (0: default)");
  app->add_option("--test-size", d.test_size, "test examples used (0: default)");
  app->add_option("--image-size", d.image_size, "synthetic image side")->check(CLI::IsMember({8, 28}));
  app->add_option("--classes", d.classes, "synthetic class count");
  app->add_option("--noise", d.noise, "synthetic per-pixel noise");
}

void add_attack_flags(CLI::App* app, AttackFlags& a) {
  app->add_option("--attack", a.family, "none, pgd, fgsm or wrm")
      ->check(CLI::IsMember({"none", "pgd", "fgsm", "wrm"}));
  app->add_option("--delta", a.delta, "l-inf budget on the 0-255 scale (default 76, none: 0)");
  app->add_option("--steps", a.steps, "attack iterations");
  app->add_option("--gamma", a.gamma, "wrm transport penalty");
}

void add_train_flags(CLI::App* app, TrainFlags& t, bool sweep) {
  app->add_option("--arch", t.arch, "lenet or mlp-small (default: lenet on mnist)");
  app->add_option("--pipeline", t.pipeline, "nap, da, ap, al0, alr, atmc, atmc-uniform-pq");
  app->add_option("--k", t.k, sweep ? "comma-separated nonzero budgets" : "nonzero budget")
      ->delimiter(',');
  if (!sweep) app->add_option("--ratio", t.ratio, "kept fraction of dense weights (instead of --k)");
  app->add_option("--rank-fraction", t.rank_fraction, "alr rank as a fraction of min(m, n)");
  app->add_option("--bits", t.bits, sweep ? "comma-separated bit widths (default 8,32)" : "bit width")
      ->delimiter(',');
  app->add_option("--rho", t.rho, "ADMM penalty");
  app->add_option("--epochs", t.epochs, "pre-training epochs");
  app->add_option("--finetune-epochs", t.finetune_epochs, "compression epochs (default half)");
  app->add_option("--lr", t.lr, "pre-training learning rate");
  app->add_option("--finetune-lr", t.finetune_lr, "compression learning rate (default --lr)");
  app->add_option("--batch", t.batch, "minibatch size");
  app->add_option("--momentum", t.momentum, "SGD momentum");
  app->add_option("--ramp-epochs", t.ramp_epochs, "attack budget ramp (default 0.3 x epochs)");
  app->add_option("--mirror-period", t.mirror_period, "steps between mirror and dual updates");
}

void add_run_flags(CLI::App* app, Common& c) {
  app->add_option("--precision", c.precision, "f32 or f64 arithmetic")->check(CLI::IsMember({"f32", "f64"}));
  app->add_option("--seed", c.seed, "random seed");
}

Precision parse_precision(const std::string& p) { return p == "f64" ? Precision::f64 : Precision::f32; }

ArchitectureSpec arch_for(const Common& c) {
  const DataFlags& d = c.data;
  const bool mnist = d.dataset == "mnist";
  const std::string name = !c.train.arch.empty() ? c.train.arch : (mnist ? "lenet" : "mlp-small");
  const std::size_t side = mnist ? 28 : d.image_size;
  return ArchitectureSpec::preset(name, 1, side, side, mnist ? 10 : d.classes);
}

AttackConfig attack_for(const AttackFlags& a) {
  if (a.steps < 1) throw ConfigError("--steps must be >= 1");
  const AttackFamily family = parse_attack_family(a.family);
  const double delta = a.delta.value_or(family == AttackFamily::none ? 0.0 : 76.0);
  return attack_from_raw(family, delta, a.steps, a.gamma);
}

void check_data_flags(const DataFlags& d) {
  if (d.dataset == "synth") {
    SynthSpec s;
    s.classes = d.classes;
    s.noise = d.noise;
    s.validate();
  } else if (d.image_size != 28 || d.classes != 10) {
    throw ConfigError("--image-size and --classes apply to synth data only");
  }
}

DataSplit load_data(const DataFlags& d, std::uint64_t seed) {
  DataSplit split;
  if (d.dataset == "mnist") {
    split = load_mnist(resolve_mnist_dir(d.data_dir));
    if (d.train_size) split.train = split.train.slice(0, d.train_size);
    if (d.test_size) split.test = split.test.slice(0, d.test_size);
    return split;
  }
  SynthSpec s;
  s.classes = d.classes;
  s.height = s.width = d.image_size;
  s.noise = d.noise;
  s.train = d.train_size ? d.train_size : 2000;
  s.test = d.test_size ? d.test_size : 500;
  return synth_dataset(s, seed);
}

PipelineSpec pipeline_for(const Common& c) {
  const TrainFlags& t = c.train;
  PipelineSpec p;
  p.kind = parse_pipeline(t.pipeline);
  p.arch = arch_for(c);
  if (t.k.size() == 1) {
    if (t.ratio != 0.0) throw ConfigError("--k and --ratio are mutually exclusive");
    p.k = t.k[0];
  } else if (t.k.size() > 1) {
    throw ConfigError("train takes a single --k value; use sweep for a list");
  }
  if (t.ratio != 0.0) p.ratio = t.ratio;
  p.rank_fraction = t.rank_fraction;
  if (t.bits.size() > 1) throw ConfigError("train takes a single --bits value; use sweep for a list");
  p.bits = t.bits.empty() ? 32 : t.bits[0];
  p.train.epochs = t.epochs;
  p.train.lr = t.lr;
  p.train.batch_size = t.batch;
  p.train.momentum = t.momentum;
  p.train.attack_ramp_epochs = t.ramp_epochs >= 0.0 ? t.ramp_epochs : 0.3 * t.epochs;
  p.train.mirror_period = t.mirror_period;
  p.train.precision = parse_precision(c.precision);
  p.train.seed = c.seed;
  p.train.compression.rho = t.rho;
  p.train.compression.seed = c.seed;
  p.train.attack = attack_for(c.attack);
  p.finetune_epochs = t.finetune_epochs;
  p.finetune_lr = t.finetune_lr;
  p.init_seed = c.seed;
  p.validate();
  return p;
}

MetricsRow row_for(const ModelParams& model, int bits, const std::string& pipeline,
                   std::size_t k, const Common& c, const DataSplit& data, const AttackConfig& attack) {
  MetricsRow row = describe_model(model, bits);
  row.pipeline = pipeline;
  row.dataset = c.data.dataset;
  row.k = k;
  row.checkpoint_bytes = encode_checkpoint(model, bits).size();
  const Accuracy acc = evaluate(model, data.test, attack, parse_precision(c.precision));
  row.ta = acc.ta;
  row.ata = acc.ata;
  row.attack = attack.describe();
  row.seed = c.seed;
  return row;
}

void emit(const std::vector<MetricsRow>& rows, const std::string& path, bool wall_time,
          std::ostream& out) {
  if (!path.empty()) {
    write_csv(path, rows, wall_time);
    return;
  }
  out << csv_header(wall_time) << '\n';
  for (const MetricsRow& r : rows) out << csv_line(r, wall_time) << '\n';
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_train(const Common& c, std::ostream& out) {
  check_data_flags(c.data);
  const PipelineSpec spec = pipeline_for(c);
  const auto t0 = std::chrono::steady_clock::now();
  const DataSplit data = load_data(c.data, c.seed);
  const PipelineResult res = run_pipeline(spec, data.train);
  const int bits = spec.bits;
  if (!c.out.empty()) save_checkpoint(res.model, bits, c.out);
  MetricsRow row = row_for(res.model, bits, c.train.pipeline, spec.budget(), c, data, spec.train.attack);
  row.wall_seconds = seconds_since(t0);
  emit({row}, c.metrics, c.wall_time, out);
  return 0;
}

int cmd_eval(const Common& c, std::ostream& out) {
  check_data_flags(c.data);
  const AttackConfig attack = attack_for(c.attack);
  const auto t0 = std::chrono::steady_clock::now();
  const Checkpoint ck = load_checkpoint(c.checkpoint);
  const DataSplit data = load_data(c.data, c.seed);
  if (data.test.channels() * data.test.height() * data.test.width() != ck.model.arch().input_size() ||
      data.test.classes != ck.model.arch().classes) {
    throw ConfigError("checkpoint architecture does not match the dataset");
  }
  MetricsRow row = row_for(ck.model, ck.bits, "checkpoint", kNoSparsityLimit, c, data, attack);
  row.wall_seconds = seconds_since(t0);
  emit({row}, c.out, c.wall_time, out);
  return 0;
}

int cmd_sweep(Common c, std::ostream& out) {
  check_data_flags(c.data);
  if (c.train.k.empty()) throw ConfigError("sweep needs --k with at least one budget");
  if (c.out.empty()) throw ConfigError("sweep needs --out for the CSV file");
  const std::vector<std::size_t> ks = c.train.k;
  const std::vector<int> bits = c.train.bits.empty() ? std::vector<int>{8, 32} : c.train.bits;
  std::vector<PipelineSpec> specs;
  for (std::size_t k : ks) {
    for (int b : bits) {
      c.train.k = {k};
      c.train.bits = {b};
      specs.push_back(pipeline_for(c));
    }
  }
  const DataSplit data = load_data(c.data, c.seed);
  const ModelParams pre = pretrain(specs.front(), data.train).state.theta;
  std::vector<MetricsRow> rows;
  for (const PipelineSpec& spec : specs) {
    const auto t0 = std::chrono::steady_clock::now();
    const PipelineResult res = run_pipeline(spec, data.train, &pre);
    rows.push_back(row_for(res.model, spec.bits, c.train.pipeline, spec.budget(), c, data,
                           spec.train.attack));
    rows.back().wall_seconds = seconds_since(t0);
    out << csv_line(rows.back(), c.wall_time) << '\n';
  }
  write_csv(c.out, rows, c.wall_time);
  return 0;
}

int cmd_plot(const Common& c) {
  if (c.in.empty() || c.out.empty()) throw ConfigError("plot needs --in and --out");
  write_plot_svg(read_csv(c.in), c.title, c.out);
  return 0;
}

}  // namespace

int cli_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Common c;
  CLI::App app{"Adversarially trained model compression: train, evaluate, sweep and plot."};
  app.require_subcommand(1);

  CLI::App* train = app.add_subcommand("train", "run a pipeline, save a checkpoint, print metrics");
  add_data_flags(train, c.data);
  add_attack_flags(train, c.attack);
  add_train_flags(train, c.train, false);
  add_run_flags(train, c);
  train->add_option("--out", c.out, "checkpoint file to write");
  train->add_option("--metrics", c.metrics, "CSV file for the metrics row (default stdout)");
  train->add_flag("--wall-time", c.wall_time, "add a wall_seconds column");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint under an attack");
  add_data_flags(eval, c.data);
  add_attack_flags(eval, c.attack);
  add_run_flags(eval, c);
  eval->add_option("--checkpoint", c.checkpoint, "checkpoint file")->required();
  eval->add_option("--out", c.out, "CSV file for the metrics row (default stdout)");
  eval->add_flag("--wall-time", c.wall_time, "add a wall_seconds column");

  CLI::App* sweep = app.add_subcommand("sweep", "k list x bits list -> CSV of metrics rows");
  add_data_flags(sweep, c.data);
  add_attack_flags(sweep, c.attack);
  add_train_flags(sweep, c.train, true);
  add_run_flags(sweep, c);
  sweep->add_option("--out", c.out, "CSV file to write")->required();
  sweep->add_flag("--wall-time", c.wall_time, "add a wall_seconds column");

  CLI::App* plot = app.add_subcommand("plot", "CSV -> SVG of TA/ATA vs compression ratio");
  plot->add_option("--in", c.in, "metrics CSV")->required();
  plot->add_option("--out", c.out, "SVG file to write")->required();
  plot->add_option("--title", c.title, "plot title");

  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    std::string msg = e.what();
    err << "atmc: error: " << msg.substr(0, msg.find('\n')) << '\n';
    return 2;
  }
  try {
    if (train->parsed()) return cmd_train(c, out);
    if (eval->parsed()) return cmd_eval(c, out);
    if (sweep->parsed()) return cmd_sweep(c, out);
    return cmd_plot(c);
  } catch (const ConfigError& e) {
    err << "atmc: error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "atmc: error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace atmc
