#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "CLI11.hpp"
#include "psconv/checkpoint.hpp"
#include "psconv/cost.hpp"
#include "psconv/error.hpp"
#include "psconv/gradcheck.hpp"
#include "psconv/kernels.hpp"
#include "psconv/mask.hpp"
#include "psconv/rng.hpp"
#include "psconv/train.hpp"

namespace psconv::cli {

namespace fs = std::filesystem;

namespace {

// Bad flag values discovered after parsing; maps to exit code 1.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) parts.push_back(item);
  return parts;
}

std::size_t parse_count(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty() || s[0] == '-' || v == 0) {
    throw std::invalid_argument("bad " + what + " '" + s + "'");
  }
  return static_cast<std::size_t>(v);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

const std::uint64_t kTestSeedSalt = 0x7e57;

void apply_thread_env() {
  if (const char* v = std::getenv("PSCONV_THREADS")) {
    const int n = std::atoi(v);
    if (n > 0) kernels::set_thread_limit(n);
  }
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  std::string arch = "resnet18";
  int kss = 9;
  double width_mult = 1.0;
  int num_classes = 10;
  int input_size = 32;
  std::string format = "table";
  int baseline_kss = 9;
  bool compare = false;
};

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
  ArchSpec spec;
  try {
    spec.family = parse_family(a.arch);
    spec.kss = a.kss;
    spec.width_mult = a.width_mult;
    spec.num_classes = a.num_classes;
    spec.input_size = a.input_size;
    spec.validate();
    if (a.baseline_kss < 1 || a.baseline_kss > 9) throw std::invalid_argument("--baseline-kss must be in [1, 9]");
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto report = count_model(spec, a.baseline_kss);
  std::vector<ComparisonRow> rows;
  if (a.compare) rows = compare_with_published(spec, parse_reference_tables(bundled_reference_tables()));
  if (a.format == "json") {
    auto j = to_json(report);
    if (a.compare) j["comparison"] = to_json(rows);
    out << j.dump(2) << "\n";
  } else {
    out << format_table(report);
    if (a.compare) out << "\n" << format_comparison(rows);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string arch = "resnet18";
  int kss = 9;
  double width_mult = 1.0;
  std::string data;
  std::string test_data;
  int epochs = 60;
  int batch_size = 0;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double lr_decay = 0.2;
  std::vector<int> milestones{40, 55};
  std::uint64_t seed = 0;
  std::string out;
  bool deterministic = false;
  bool mask_grads = false;
  std::string resume;
  std::size_t train_n = 0, val_n = 0;
  bool epochs_given = false;
};

struct EvalLine {
  double val = 0.0;
  std::optional<double> test;
};

EvalLine evaluate_all(Model<float>& model, const LoadedData& data) {
  EvalLine e;
  e.val = evaluate(model, data.val);
  if (data.test) e.test = evaluate(model, *data.test);
  return e;
}

std::string describe(const EvalLine& e) {
  std::string s = "val_acc=" + fmt("%.6f", e.val);
  if (e.test) s += " test_acc=" + fmt("%.6f", *e.test);
  return s;
}

nlohmann::json data_extra(const TrainArgs& a, const LoadedData& d) {
  return {{"data", a.data},
          {"test_data", a.test_data},
          {"train_n", d.train.size()},
          {"val_n", d.val.size()}};
}

// Keeps metrics rows for epochs <= upto so a resumed run rewrites its tail.
std::vector<std::string> existing_metrics(const fs::path& path, int upto) {
  std::vector<std::string> rows;
  std::ifstream in(path);
  std::string line;
  if (!std::getline(in, line)) return rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoi(line.substr(0, line.find(','))) <= upto) rows.push_back(line);
  }
  return rows;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  DataSpec ds;
  std::optional<DataSpec> ts;
  try {
    ds = parse_data_spec(a.data);
    if (!a.test_data.empty()) ts = parse_data_spec(a.test_data);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  std::optional<LoadedCheckpoint> resumed;
  if (!a.resume.empty()) resumed.emplace(checkpoint_load(a.resume));

  TrainConfig config;
  ArchSpec spec;
  if (resumed) {
    config = resumed->meta.config;
    if (a.epochs_given) config.epochs = a.epochs;
    spec = resumed->model.spec();
  } else {
    config.epochs = a.epochs;
    config.lr0 = a.lr;
    config.momentum = a.momentum;
    config.weight_decay = a.weight_decay;
    config.decay_factor = a.lr_decay;
    config.milestones = a.milestones;
    config.seed = a.seed;
    config.deterministic = a.deterministic;
    config.mask_grads = a.mask_grads;
  }

  LoadedData data = load_data(ds, a.train_n, a.val_n, config.seed,
                              resumed ? resumed->meta.normalization : std::nullopt);
  if (data.val.size() == 0) throw UsageError("validation split must be non-empty");
  if (ts) data.test = load_eval_set(*ts, data.stats, derive_seed(config.seed, kTestSeedSalt));

  if (!resumed) {
    try {
      spec.family = parse_family(a.arch);
      spec.kss = a.kss;
      spec.width_mult = a.width_mult;
      spec.num_classes = data.train.class_count;
      spec.input_size = static_cast<int>(data.train.images.shape()[2]);
      spec.input_channels = static_cast<int>(data.train.images.shape()[1]);
      spec.base_seed = config.seed;
      spec.validate();
      config.batch_size = a.batch_size > 0 ? a.batch_size : default_batch_size(spec.input_size);
      config.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  } else if (spec.num_classes != data.train.class_count ||
             spec.input_size != static_cast<int>(data.train.images.shape()[2])) {
    throw DataError("data does not match the checkpoint's architecture");
  }

  Model<float> model = resumed ? std::move(resumed->model) : Model<float>(spec);
  OptimizerState state = resumed ? std::move(resumed->state) : OptimizerState::for_params(model.params());
  for (const auto& w : model.warnings()) out << "warning: " << w << "\n";

  const int start = resumed ? resumed->meta.epoch : 0;
  double best_val = -1.0;
  int best_epoch = 0;
  if (resumed) {
    best_val = resumed->meta.extra.value("best_val_acc", -1.0);
    best_epoch = resumed->meta.extra.value("best_epoch", 0);
  }

  const fs::path dir(a.out);
  fs::create_directories(dir);
  const fs::path metrics_path = dir / "metrics.csv";
  std::vector<std::string> kept = resumed ? existing_metrics(metrics_path, start) : std::vector<std::string>{};
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw DataError("cannot write " + metrics_path.string());
  metrics << kMetricsHeader << "\n";
  for (const auto& row : kept) metrics << row << "\n";
  metrics.flush();

  out << "model " << spec.display_name() << " params=" << model.parameter_count() << " train=" << data.train.size()
      << " val=" << data.val.size() << (data.test ? " test=" + std::to_string(data.test->size()) : "")
      << " batch=" << config.batch_size << "\n";

  CheckpointMeta meta;
  meta.config = config;
  meta.normalization = data.stats;
  for (int epoch = start; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(config, epoch);
    const EpochStats stats = train_epoch(model, data.train, config, state, epoch);
    const double val = evaluate(model, data.val);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    MetricsRow row{epoch + 1, lr, stats.loss, stats.accuracy, val, secs};
    metrics << to_csv(row) << "\n";
    metrics.flush();
    out << "epoch " << epoch + 1 << "/" << config.epochs << " lr=" << fmt("%.6g", lr)
        << " loss=" << fmt("%.6f", stats.loss) << " train_acc=" << fmt("%.6f", stats.accuracy)
        << " val_acc=" << fmt("%.6f", val) << " time=" << fmt("%.2f", secs) << "s\n";

    meta.epoch = epoch + 1;
    if (val > best_val) {
      best_val = val;
      best_epoch = epoch + 1;
    }
    meta.extra = data_extra(a, data);
    meta.extra["best_val_acc"] = best_val;
    meta.extra["best_epoch"] = best_epoch;
    if (best_epoch == epoch + 1) checkpoint_save(dir / "best.ckpt", model, state, meta);
    checkpoint_save(dir / "last.ckpt", model, state, meta);
  }

  const EvalLine last = evaluate_all(model, data);
  out << "last epoch " << config.epochs << ": " << describe(last) << "\n";
  if (fs::exists(dir / "best.ckpt")) {
    auto best = checkpoint_load(dir / "best.ckpt");
    out << "best epoch " << best.meta.epoch << ": " << describe(evaluate_all(best.model, data)) << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string test_data;
  std::string split = "auto";
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  auto ck = checkpoint_load(a.ckpt);
  const auto& extra = ck.meta.extra;
  const std::string data_text = a.data.empty() ? extra.value("data", std::string{}) : a.data;
  if (data_text.empty()) throw UsageError("--data is required for this checkpoint");
  DataSpec ds;
  try {
    ds = parse_data_spec(data_text);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto& stats = ck.meta.normalization;
  const std::uint64_t seed = ck.meta.config.seed;
  const auto check = [&](const Dataset& d) {
    if (d.class_count > ck.model.spec().num_classes ||
        static_cast<int>(d.images.shape()[2]) != ck.model.spec().input_size) {
      throw DataError("data does not match the checkpoint's architecture");
    }
  };

  if (a.split == "all") {
    Dataset d = load_eval_set(ds, stats, derive_seed(seed, kTestSeedSalt));
    check(d);
    out << "acc=" << fmt("%.6f", evaluate(ck.model, d)) << " n=" << d.size() << "\n";
    return 0;
  }
  LoadedData data = load_data(ds, extra.value("train_n", std::size_t{0}), extra.value("val_n", std::size_t{0}),
                              seed, stats);
  const std::string test_text = a.test_data.empty() ? extra.value("test_data", std::string{}) : a.test_data;
  if (!test_text.empty()) {
    try {
      data.test = load_eval_set(parse_data_spec(test_text), stats, derive_seed(seed, kTestSeedSalt));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  check(data.val);
  if (a.split == "val" || a.split == "auto") out << "val_acc=" << fmt("%.6f", evaluate(ck.model, data.val)) << "\n";
  if (a.split == "train") out << "train_acc=" << fmt("%.6f", evaluate(ck.model, data.train)) << "\n";
  if ((a.split == "test" || a.split == "auto") && data.test) {
    out << "test_acc=" << fmt("%.6f", evaluate(ck.model, *data.test)) << "\n";
  } else if (a.split == "test") {
    throw UsageError("no test set: pass --test-data");
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct MaskArgs {
  std::size_t k = 3, kss = 0, in_ch = 0, out_ch = 0;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_mask_gen(const MaskArgs& a, std::ostream& out) {
  if (a.kss < 1 || a.kss > a.k * a.k) throw UsageError("--kss must be in [1, k*k]");
  const auto mask = generate_mask(a.k, a.kss, a.in_ch, a.out_ch, a.seed);
  save_mask(a.out, mask);
  const auto cov = check_coverage(mask);
  out << "mask " << a.out_ch << "x" << a.in_ch << "x" << a.k << "x" << a.k << " kss=" << a.kss << " seed=" << a.seed
      << " -> " << a.out << "\n";
  out << "coverage: min " << cov.min_covered() << "/" << cov.positions << " positions per filter, "
      << (cov.all_covered() ? "all filters fully covered" : "not all filters fully covered") << "\n";
  if (!cov.feasible) {
    out << "warning: in_ch*kss = " << a.in_ch * a.kss << " < " << cov.positions
        << " so full coverage is impossible\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct GradArgs {
  std::string layer = "all";
  bool f64 = false;
  std::uint64_t seed = 1;
};

int cmd_gradcheck(const GradArgs& a, std::ostream& out) {
  const auto results = run_gradcheck(a.layer, a.f64, a.seed);
  const double threshold = gradcheck_threshold(a.f64);
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.max_rel_error < threshold;
    ok = ok && pass;
    out << (pass ? "ok   " : "FAIL ") << r.name << " max_rel_error=" << fmt("%.3e", r.max_rel_error)
        << " n=" << r.checked << "\n";
  }
  out << (a.f64 ? "f64" : "f32") << " threshold " << fmt("%.0e", threshold) << ": " << (ok ? "passed" : "failed")
      << "\n";
  return ok ? 0 : 2;
}

}  // namespace

// ---------------------------------------------------------------------------

DataSpec parse_data_spec(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("data spec '" + text + "' needs a kind: prefix");
  const std::string kind = text.substr(0, colon), rest = text.substr(colon + 1);
  DataSpec d;
  d.text = text;
  if (kind == "cifar10") {
    if (rest.empty()) throw std::invalid_argument("cifar10: needs a directory");
    d.kind = DataSpec::Kind::cifar10;
    d.dir = rest;
  } else if (kind == "raw") {
    const auto parts = split(rest, ',');
    if (parts.size() != 2 || parts[0].empty() || parts[1].empty()) {
      throw std::invalid_argument("raw: expects IMAGES,LABELS");
    }
    d.kind = DataSpec::Kind::raw;
    d.images = parts[0];
    d.labels = parts[1];
  } else if (kind == "synth") {
    const auto parts = split(rest, ',');
    if (parts.size() != 3) throw std::invalid_argument("synth: expects N,CLASSES,SIZE");
    d.kind = DataSpec::Kind::synth;
    d.n = parse_count(parts[0], "synth count");
    d.classes = static_cast<int>(parse_count(parts[1], "synth class count"));
    d.size = parse_count(parts[2], "synth image size");
    if (d.n < 2) throw std::invalid_argument("synth: need at least 2 examples");
  } else {
    throw std::invalid_argument("unknown data kind '" + kind + "'");
  }
  return d;
}

LoadedData load_data(const DataSpec& spec, std::size_t train_n, std::size_t val_n, std::uint64_t seed,
                     const std::optional<ChannelStats>& stats) {
  LoadedData out;
  Dataset pool;
  std::size_t default_train = 0, default_val = 0;
  switch (spec.kind) {
    case DataSpec::Kind::cifar10: {
      Cifar10 c = load_cifar10(spec.dir);
      pool = std::move(c.train_pool);
      out.test = std::move(c.test);
      out.stats = c.stats;
      SplitSpec defaults;
      default_train = defaults.train_n;
      default_val = defaults.val_n;
      break;
    }
    case DataSpec::Kind::raw: {
      pool = load_raw_dataset(spec.images, spec.labels, Normalize::none);
      out.stats = stats ? *stats : compute_channel_stats(pool.images);
      standardize(pool.images, *out.stats);
      break;
    }
    case DataSpec::Kind::synth:
      pool = synth_dataset(spec.n, spec.classes, spec.size, seed);
      break;
  }
  if (default_train == 0) {
    default_val = std::max<std::size_t>(1, pool.size() / 5);
    default_train = pool.size() - default_val;
  }
  if (train_n == 0) train_n = default_train;
  if (val_n == 0) val_n = default_val;
  Splits s = make_splits(pool, SplitSpec{train_n, val_n, seed});
  out.train = std::move(s.train);
  out.val = std::move(s.val);
  return out;
}

Dataset load_eval_set(const DataSpec& spec, const std::optional<ChannelStats>& stats, std::uint64_t seed) {
  switch (spec.kind) {
    case DataSpec::Kind::cifar10: {
      Dataset d = cifar_to_dataset(read_cifar_batch(fs::path(spec.dir) / "test_batch.bin"));
      if (stats) standardize(d.images, *stats);
      return d;
    }
    case DataSpec::Kind::raw: {
      Dataset d = load_raw_dataset(spec.images, spec.labels, Normalize::none);
      standardize(d.images, stats ? *stats : compute_channel_stats(d.images));
      return d;
    }
    case DataSpec::Kind::synth:
      return synth_dataset(spec.n, spec.classes, spec.size, seed);
  }
  throw std::logic_error("unreachable");
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  apply_thread_env();
  CLI::App app{"Pre-defined sparse convolution: cost analysis, training and evaluation", "psconv"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  const std::vector<std::string> families{"resnet18", "vgg16", "small_cnn", "mini_resnet"};

  AnalyzeArgs aa;
  auto* analyze = app.add_subcommand("analyze", "Count FLOPs and parameters of an architecture");
  analyze->add_option("--arch", aa.arch, "Architecture family")->check(CLI::IsMember(families))->capture_default_str();
  analyze->add_option("--kss", aa.kss, "Kernel support size per 3x3 kernel")->capture_default_str();
  analyze->add_option("--width-mult", aa.width_mult, "Channel width multiplier")->capture_default_str();
  analyze->add_option("--num-classes", aa.num_classes, "Classifier outputs")->capture_default_str();
  analyze->add_option("--input-size", aa.input_size, "Square input side")->capture_default_str();
  analyze->add_option("--format", aa.format, "Output format")->check(CLI::IsMember({"table", "json"}))->capture_default_str();
  analyze->add_option("--baseline-kss", aa.baseline_kss, "KSS of the reduction baseline")->capture_default_str();
  analyze->add_flag("--compare-paper", aa.compare, "Append published reference values and deltas");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--arch", ta.arch, "Architecture family")->check(CLI::IsMember(families))->capture_default_str();
  train->add_option("--kss", ta.kss, "Kernel support size")->capture_default_str();
  train->add_option("--width-mult", ta.width_mult, "Channel width multiplier")->capture_default_str();
  train->add_option("--data", ta.data, "cifar10:DIR | raw:IMAGES,LABELS | synth:N,CLASSES,SIZE")->required();
  train->add_option("--test-data", ta.test_data, "Separate test set, same syntax as --data");
  auto* epochs_opt = train->add_option("--epochs", ta.epochs, "Training epochs")->capture_default_str();
  train->add_option("--batch-size", ta.batch_size, "Mini-batch size (0: 128 for 32px inputs, 100 for 64px)")
      ->capture_default_str();
  train->add_option("--lr", ta.lr, "Initial learning rate")->capture_default_str();
  train->add_option("--momentum", ta.momentum, "SGD momentum")->capture_default_str();
  train->add_option("--weight-decay", ta.weight_decay, "L2 weight decay")->capture_default_str();
  train->add_option("--lr-decay", ta.lr_decay, "Learning-rate factor at each milestone")->capture_default_str();
  train->add_option("--milestones", ta.milestones, "Epochs (0-indexed) where the decay applies")
      ->delimiter(',')
      ->capture_default_str();
  train->add_option("--seed", ta.seed, "Seed for init, masks, splits and shuffling")->capture_default_str();
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_flag("--deterministic", ta.deterministic, "Request bit-reproducible runs");
  train->add_flag("--mask-grads", ta.mask_grads, "Also zero masked gradient entries before momentum");
  train->add_option("--resume", ta.resume, "Continue from a checkpoint");
  train->add_option("--train-n", ta.train_n, "Training split size (0: source default)");
  train->add_option("--val-n", ta.val_n, "Validation split size (0: source default)");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--ckpt", ea.ckpt, "Checkpoint file")->required();
  eval->add_option("--data", ea.data, "Data source (default: the one used for training)");
  eval->add_option("--test-data", ea.test_data, "Separate test set");
  eval->add_option("--split", ea.split, "val, test, train, all (whole --data set) or auto")
      ->check(CLI::IsMember({"auto", "val", "test", "train", "all"}))
      ->capture_default_str();

  MaskArgs ma;
  auto* maskgen = app.add_subcommand("mask-gen", "Generate a kernel support mask");
  maskgen->add_option("--k", ma.k, "Kernel side")->check(CLI::PositiveNumber)->capture_default_str();
  maskgen->add_option("--kss", ma.kss, "Kernel support size")->required();
  maskgen->add_option("--in-ch", ma.in_ch, "Input channels")->required()->check(CLI::PositiveNumber);
  maskgen->add_option("--out-ch", ma.out_ch, "Output channels")->required()->check(CLI::PositiveNumber);
  maskgen->add_option("--seed", ma.seed, "Generator seed")->capture_default_str();
  maskgen->add_option("--out", ma.out, "Output .psmask.json path")->required();

  GradArgs ga;
  auto* grad = app.add_subcommand("gradcheck", "Compare backward passes against finite differences");
  grad->add_option("--layer", ga.layer, "conv, bn, linear, softmax, pool, resnet or all")
      ->check(CLI::IsMember({"conv", "bn", "linear", "softmax", "pool", "resnet", "all"}))
      ->capture_default_str();
  grad->add_flag("--f64", ga.f64, "Run in double precision");
  grad->add_option("--seed", ga.seed, "Seed for the random test tensors")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*analyze) return cmd_analyze(aa, out);
    if (*train) {
      ta.epochs_given = epochs_opt->count() > 0;
      return cmd_train(ta, out);
    }
    if (*eval) return cmd_eval(ea, out);
    if (*maskgen) return cmd_mask_gen(ma, out);
    if (*grad) return cmd_gradcheck(ga, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace psconv::cli
