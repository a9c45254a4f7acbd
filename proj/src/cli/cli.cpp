#include "ectnet/cli/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "ectnet/architectures/checkpoint.hpp"
#include "ectnet/error.hpp"
#include "ectnet/evaluation/evaluation.hpp"
#include "ectnet/training/training.hpp"

#ifndef ECTNET_VERSION
#define ECTNET_VERSION "0.0.0"
#endif

namespace ectnet::cli {

std::string version() { return ECTNET_VERSION; }

// ---------------------------------------------------------------------------
// Manifest and run directories

nlohmann::json RunManifest::to_json() const {
  return {{"command", command},
          {"version", version},
          {"created", created},
          {"architecture", architecture},
          {"options", options},
          {"train_config", train_config},
          {"seeds", {{"seed", seed}, {"init_seed", init_seed}, {"split_seed", split_seed}}},
          {"dataset", {{"path", dataset_path}, {"fingerprint", dataset_fingerprint}}},
          {"splits",
           {{"train", train_volunteers}, {"validation", validation_volunteers}, {"test", test_volunteers}}},
          {"norm_stats", {{"mu", norm_stats.mu}, {"sigma", norm_stats.sigma}}}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  try {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.version = j.at("version").get<std::string>();
    m.created = j.value("created", std::string());
    m.architecture = j.value("architecture", std::string());
    m.options = j.value("options", nlohmann::json::object());
    m.train_config = j.value("train_config", nlohmann::json::object());
    const auto& s = j.at("seeds");
    m.seed = s.at("seed").get<std::uint64_t>();
    m.init_seed = s.at("init_seed").get<std::uint64_t>();
    m.split_seed = s.at("split_seed").get<std::uint64_t>();
    m.dataset_path = j.at("dataset").at("path").get<std::string>();
    m.dataset_fingerprint = j.at("dataset").at("fingerprint").get<std::string>();
    m.train_volunteers = j.at("splits").at("train").get<std::vector<int>>();
    m.validation_volunteers = j.at("splits").at("validation").get<std::vector<int>>();
    m.test_volunteers = j.at("splits").at("test").get<std::vector<int>>();
    m.norm_stats.mu = j.at("norm_stats").at("mu").get<std::array<double, 2>>();
    m.norm_stats.sigma = j.at("norm_stats").at("sigma").get<std::array<double, 2>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed run manifest: ") + e.what());
  }
}

namespace {

std::string local_time(const char* fmt) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, fmt);
  return os.str();
}

}  // namespace

std::filesystem::path make_run_dir(const std::filesystem::path& root, std::uint64_t seed) {
  const std::string base = local_time("%Y%m%d-%H%M%S") + "-seed" + std::to_string(seed);
  std::filesystem::create_directories(root);
  for (int i = 0;; ++i) {
    const auto dir = root / (i == 0 ? base : base + "-" + std::to_string(i));
    if (std::filesystem::create_directory(dir)) return dir;
  }
}

// ---------------------------------------------------------------------------
// Shared helpers

namespace {

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

int parse_class(const std::string& s) {
  for (int c = 0; c < kNumClasses; ++c) {
    if (class_name(c) == s) return c;
  }
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size() && v >= 0 && v < kNumClasses) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("unknown class '" + s + "' (use an index 0..19 or a name such as normal, liftoff, 1.4mm)");
}

std::vector<LrStep> parse_schedule(const std::vector<std::string>& items) {
  std::vector<LrStep> out;
  for (const auto& it : items) {
    const auto colon = it.find(':');
    if (colon == std::string::npos) throw ConfigError("lr_schedule entries look like EPOCH:LR, got '" + it + "'");
    try {
      out.push_back({std::stoull(it.substr(0, colon)), std::stod(it.substr(colon + 1))});
    } catch (const std::exception&) {
      throw ConfigError("cannot parse lr_schedule entry '" + it + "'");
    }
  }
  return out;
}

struct DataArgs {
  std::string data;
  std::size_t decimate = 5;
  bool lowpass = false;
  std::vector<int> test_volunteers;
  std::vector<int> val_volunteers;
  std::size_t n_test = 3;
  std::size_t n_val = 3;
  std::uint64_t split_seed = 0;

  void add_to(CLI::App* app, bool with_split = true) {
    app->add_option("--data", data,
                    std::string("dataset file (container or .npy); default $") + kDataDirEnv + "/mddect.bin");
    app->add_option("--decimate", decimate, "keep every n-th sample (1 = no decimation)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_flag("--lowpass", lowpass, "average each decimation window instead of plain subsampling");
    if (!with_split) return;
    app->add_option("--test_volunteers", test_volunteers, "test volunteer ids (default: seeded choice)")
        ->delimiter(',');
    app->add_option("--val_volunteers", val_volunteers, "validation volunteer ids (default: seeded choice)")
        ->delimiter(',');
    app->add_option("--n_test", n_test, "number of test volunteers when ids are not given")->capture_default_str();
    app->add_option("--n_val", n_val, "number of validation volunteers when ids are not given")
        ->capture_default_str();
    app->add_option("--split_seed", split_seed, "seed for the volunteer choice")->capture_default_str();
  }

  std::filesystem::path resolve() const {
    if (!data.empty()) return data;
    if (const char* dir = std::getenv(kDataDirEnv); dir && *dir) {
      return std::filesystem::path(dir) / "mddect.bin";
    }
    throw ConfigError(std::string("no --data given and ") + kDataDirEnv + " is not set");
  }
};

struct Prepared {
  std::filesystem::path path;
  std::string fingerprint;
  Splits splits;
  NormStats stats;
  std::vector<int> train_ids, val_ids, test_ids;
};

Dataset load_decimated(const DataArgs& a, std::filesystem::path* path_out, std::string* fingerprint) {
  const auto path = a.resolve();
  if (!std::filesystem::exists(path)) throw DataError("dataset not found: " + path.string());
  Dataset raw = load_dataset(path);
  if (fingerprint) *fingerprint = raw.fingerprint();
  if (path_out) *path_out = path;
  return a.decimate > 1 ? decimate(raw, a.decimate, a.lowpass) : raw;
}

/// Loads, splits and z-normalises. Statistics come from the training split
/// unless `fixed` supplies stored ones.
Prepared prepare(const DataArgs& a, const NormStats* fixed = nullptr) {
  Prepared p;
  const Dataset ds = load_decimated(a, &p.path, &p.fingerprint);
  std::vector<int> test = a.test_volunteers, val = a.val_volunteers;
  if (test.empty() && val.empty()) {
    const auto vols = ds.volunteers();
    Rng rng = Rng::derive(a.split_seed, "split");
    const VolunteerChoice c = choose_volunteers(vols, a.n_test, a.n_val, rng);
    test = c.test;
    val = c.validation;
  }
  p.splits = split_by_volunteer(ds, test, val);
  p.stats = fixed ? *fixed : compute_norm_stats(p.splits.train);
  p.splits.train = apply_znorm(p.splits.train, p.stats);
  p.splits.validation = apply_znorm(p.splits.validation, p.stats);
  p.splits.test = apply_znorm(p.splits.test, p.stats);
  p.train_ids = p.splits.train.volunteers();
  p.val_ids = p.splits.validation.volunteers();
  p.test_ids = p.splits.test.volunteers();
  return p;
}

nlohmann::json stats_json(const NormStats& s) { return {{"mu", s.mu}, {"sigma", s.sigma}}; }

NormStats stats_from_json(const nlohmann::json& j) {
  NormStats s;
  s.mu = j.at("mu").get<std::array<double, 2>>();
  s.sigma = j.at("sigma").get<std::array<double, 2>>();
  return s;
}

RunManifest base_manifest(const std::string& command, const CLI::App& app) {
  RunManifest m;
  m.command = command;
  m.version = version();
  m.created = local_time("%Y-%m-%dT%H:%M:%S");
  for (const CLI::Option* opt : app.get_options()) {
    if (opt->get_lnames().empty() || opt->count() == 0) continue;
    const auto& name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    const auto res = opt->results();
    m.options[name] = opt->get_expected_max() > 1 ? nlohmann::json(res)
                                                  : nlohmann::json(res.empty() ? std::string() : res.back());
  }
  return m;
}

void fill_data(RunManifest& m, const Prepared& p) {
  m.dataset_path = p.path.string();
  m.dataset_fingerprint = p.fingerprint;
  m.train_volunteers = p.train_ids;
  m.validation_volunteers = p.val_ids;
  m.test_volunteers = p.test_ids;
  m.norm_stats = p.stats;
}

void write_run_config(const CLI::App& root, const std::filesystem::path& dir) {
  std::ofstream out(dir / "config.toml", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (dir / "config.toml").string());
  out << root.config_to_str(false, false);
}

const char* kDataSubsetHelp = "evaluate this split: test, validation, train or all";

Dataset pick_split(const Prepared& p, const std::string& which) {
  if (which == "test") return p.splits.test;
  if (which == "validation") return p.splits.validation;
  if (which == "train") return p.splits.train;
  Dataset all = p.splits.train;
  for (const Dataset* d : {&p.splits.validation, &p.splits.test}) {
    all.segments.insert(all.segments.end(), d->segments.begin(), d->segments.end());
  }
  return all;
}

// Data preparation for a trained checkpoint: decimation, split and
// normalisation stored at training time win over flags.
Prepared prepare_for_checkpoint(DataArgs a, const Checkpoint& ck) {
  const auto& meta = ck.meta;
  if (meta.contains("decimate")) a.decimate = meta.at("decimate").get<std::size_t>();
  if (meta.contains("lowpass")) a.lowpass = meta.at("lowpass").get<bool>();
  if (a.test_volunteers.empty() && a.val_volunteers.empty() && meta.contains("test_volunteers")) {
    a.test_volunteers = meta.at("test_volunteers").get<std::vector<int>>();
    a.val_volunteers = meta.at("val_volunteers").get<std::vector<int>>();
  }
  if (!meta.contains("norm_stats")) return prepare(a);
  const NormStats st = stats_from_json(meta.at("norm_stats"));
  return prepare(a, &st);
}

Checkpoint open_checkpoint(const std::string& path) {
  if (path.empty()) throw ConfigError("--checkpoint is required");
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path);
  return read_checkpoint(path);
}

// ---------------------------------------------------------------------------
// Subcommands

struct CountArgs {
  bool all = false;
  std::vector<std::string> arch;
  std::size_t length = 224;
  double flops_per_mac = 2.0;
  bool breakdown = false;
  bool sweep = false;
};

int cmd_count(const CountArgs& a, std::ostream& out) {
  std::vector<std::string> names = a.arch;
  if (a.all || names.empty()) names = architecture_names();
  FlopConvention conv;
  conv.flops_per_mac = a.flops_per_mac;
  out << std::left << std::setw(22) << "architecture" << std::right << std::setw(10) << "params"
      << std::setw(12) << "params~3sf" << std::setw(12) << "published" << std::setw(12) << "FLOPs"
      << std::setw(12) << "published" << std::setw(9) << "diff%" << '\n';
  for (const auto& name : names) {
    const auto net = build_network<float>(name);
    const LayerTable table = net.layer_table(a.length);
    const auto params = count_parameters(table);
    const auto flops = count_flops(table, conv);
    const auto pub = published_figures(name);
    std::ostringstream pp, pf, diff;
    if (pub) {
      pp << std::setprecision(3) << pub->parameters;
      pf << std::setprecision(3) << pub->flops;
      diff << std::fixed << std::setprecision(1)
           << 100.0 * (static_cast<double>(flops) - pub->flops) / pub->flops;
    }
    std::ostringstream r3;
    r3 << std::setprecision(3) << round_significant(static_cast<double>(params), 3);
    out << std::left << std::setw(22) << name << std::right << std::setw(10) << params << std::setw(12)
        << r3.str() << std::setw(12) << (pub ? pp.str() : "-") << std::setw(12) << flops
        << std::setw(12) << (pub ? pf.str() : "-") << std::setw(9) << (pub ? diff.str() : "-") << '\n';
    if (a.breakdown) out << breakdown_report(table, conv) << '\n';
    if (a.sweep && pub) out << convention_sweep_report(table, pub->flops) << '\n';
  }
  out << "FLOPs: " << conv.describe() << ", input length " << a.length << '\n';
  return kOk;
}

struct GenArgs {
  std::string out;
  SynthConfig synth;
};

int cmd_dataset_gen(const GenArgs& a, std::ostream& out) {
  if (a.out.empty()) throw ConfigError("--out is required");
  const Dataset ds = synth_generate(a.synth);
  save_mddect(ds, a.out);
  out << "wrote " << ds.size() << " segments of length " << ds.length() << " to " << a.out
      << " (fingerprint " << ds.fingerprint() << ")\n";
  return kOk;
}

int cmd_dataset_inspect(const DataArgs& a, std::ostream& out) {
  const auto path = a.resolve();
  if (!std::filesystem::exists(path)) throw DataError("dataset not found: " + path.string());
  const Dataset ds = load_dataset(path);
  nlohmann::json hist = nlohmann::json::object();
  const auto h = ds.class_histogram();
  for (int c = 0; c < kNumClasses; ++c) hist[class_name(c)] = h[c];
  const nlohmann::json j{{"path", path.string()},
                         {"segments", ds.size()},
                         {"length", ds.empty() ? 0 : ds.length()},
                         {"volunteers", ds.volunteers()},
                         {"classes", hist},
                         {"fingerprint", ds.fingerprint()}};
  out << j.dump(2) << '\n';
  return kOk;
}

struct ExportArgs {
  DataArgs data;
  std::string out;
  std::vector<std::size_t> samples;
  std::size_t limit = 0;
};

int cmd_dataset_export(const ExportArgs& a, std::ostream& out) {
  if (a.out.empty()) throw ConfigError("--out is required");
  const Dataset ds = load_decimated(a.data, nullptr, nullptr);
  Dataset sel;
  std::vector<std::size_t> ids = a.samples;
  if (ids.empty()) {
    const std::size_t n = a.limit ? std::min(a.limit, ds.size()) : ds.size();
    for (std::size_t i = 0; i < n; ++i) ids.push_back(i);
  }
  for (auto i : ids) {
    if (i >= ds.size()) throw ConfigError("sample " + std::to_string(i) + " out of range");
    sel.segments.push_back(ds.segments[i]);
  }
  PlaneExportOptions o;
  o.sample_ids = ids;
  export_complex_plane(sel, a.out, o);
  out << "wrote " << sel.size() << " traces to " << a.out << '\n';
  return kOk;
}

struct TrainArgs {
  DataArgs data;
  std::string arch = "ResNeXt1D-38";
  std::optional<std::uint64_t> init_seed;
  TrainConfig config;
  std::vector<std::string> schedule{"5000:4e-6", "7500:4e-7"};
  std::string out_root = "runs";
  std::string resume_dir;
  std::size_t stop_after = 0;
  unsigned threads = 1;
  bool quiet = false;
};

void add_train_config(CLI::App* app, TrainConfig& c, std::vector<std::string>& schedule) {
  app->add_option("--batch_size,--batch", c.batch_size, "mini-batch size")->capture_default_str();
  app->add_option("--epochs", c.epochs, "number of epochs")->capture_default_str();
  app->add_option("--lr_initial,--lr", c.lr_initial, "initial learning rate")->capture_default_str();
  app->add_option("--lr_schedule", schedule, "learning-rate steps EPOCH:LR (pass 'none' for a constant rate)")
      ->capture_default_str()
      ->delimiter(',');
  app->add_option("--beta1", c.adam.beta1, "Adam beta1")->capture_default_str();
  app->add_option("--beta2", c.adam.beta2, "Adam beta2")->capture_default_str();
  app->add_option("--epsilon", c.adam.epsilon, "Adam epsilon")->capture_default_str();
  app->add_option("--seed", c.seed, "training seed (shuffling, crops)")->capture_default_str();
  app->add_option("--crop_length", c.crop_length, "random-crop length")->capture_default_str();
  app->add_option("--weight_decay", c.weight_decay, "L2 weight decay (0 = off)")->capture_default_str();
  app->add_option("--label_smoothing", c.label_smoothing, "label smoothing (0 = off)")->capture_default_str();
  app->add_option("--grad_clip_norm", c.grad_clip_norm, "global gradient-norm cap (0 = off)")
      ->capture_default_str();
}

TrainConfig finish_config(TrainConfig c, const std::vector<std::string>& schedule) {
  if (schedule.size() == 1 && schedule[0] == "none") {
    c.lr_schedule.clear();
  } else {
    c.lr_schedule = parse_schedule(schedule);
  }
  c.validate();
  return c;
}

int cmd_train(TrainArgs a, const CLI::App& root, const CLI::App& sub, std::ostream& out, std::ostream& err) {
  const TrainConfig c = finish_config(a.config, a.schedule);
  const std::uint64_t init_seed = a.init_seed.value_or(c.seed);
  const Prepared p = prepare(a.data);
  if (p.splits.train.empty()) throw DataError("training split is empty");

  auto net = build_network<float>(a.arch);
  TrainOptions o;
  o.eval_threads = a.threads;
  if (a.stop_after) o.stop_after = a.stop_after;
  o.checkpoint_meta = {{"architecture", a.arch},
                       {"decimate", a.data.decimate},
                       {"lowpass", a.data.lowpass},
                       {"norm_stats", stats_json(p.stats)},
                       {"test_volunteers", p.test_ids},
                       {"val_volunteers", p.val_ids},
                       {"dataset_fingerprint", p.fingerprint}};
  o.notice = [&](const std::string& m) { err << "notice: " << m << '\n'; };
  o.on_epoch = [&](const EpochRecord& r) {
    if (a.quiet) return;
    out << "epoch " << r.epoch << " lr " << r.lr << " loss " << r.train_loss << " acc " << r.train_accuracy;
    if (r.val_accuracy) out << " val_loss " << *r.val_loss << " val_acc " << *r.val_accuracy;
    out << " (" << std::fixed << std::setprecision(1) << r.wall_seconds << " s)" << std::defaultfloat
        << std::setprecision(6) << '\n';
  };

  std::filesystem::path dir;
  TrainResult result;
  if (!a.resume_dir.empty()) {
    dir = a.resume_dir;
    if (!std::filesystem::exists(dir / "state.ckpt")) {
      throw DataError("no training state in " + dir.string() + " (state.ckpt missing)");
    }
    const RunManifest m = RunManifest::from_json(nlohmann::json::parse(std::ifstream(dir / "manifest.json")));
    if (m.dataset_fingerprint != p.fingerprint) {
      throw ConfigError("dataset differs from the one the run was started with");
    }
    if (m.architecture != a.arch) throw ConfigError("architecture differs from the interrupted run");
    o.out_dir = dir;
    const Checkpoint state = read_checkpoint(dir / "state.ckpt");
    const TrainLog log = TrainLog::read_jsonl(dir / "train_log.jsonl");
    result = resume(net, state, log, p.splits.train, p.splits.validation, c, o);
  } else {
    net.initialize(init_seed);
    dir = make_run_dir(a.out_root, c.seed);
    RunManifest m = base_manifest("train", sub);
    m.architecture = a.arch;
    m.train_config = c.to_json();
    m.seed = c.seed;
    m.init_seed = init_seed;
    m.split_seed = a.data.split_seed;
    fill_data(m, p);
    write_json(m.to_json(), dir / "manifest.json");
    write_run_config(root, dir);
    out << "run directory " << dir.string() << '\n';
    o.out_dir = dir;
    result = train(net, p.splits.train, p.splits.validation, c, o);
  }

  if (result.epochs_completed < c.epochs) {
    out << "stopped after " << result.epochs_completed << " epochs; continue with --resume " << dir.string()
        << '\n';
    return kOk;
  }
  if (result.best) {
    out << "best validation accuracy " << result.best_val_accuracy << " at epoch " << *result.best_epoch << '\n';
  }
  if (!p.splits.test.empty()) {
    Network<float> best(result.best ? result.best->spec : net.spec());
    if (result.best) {
      load_into(best, *result.best);
    } else {
      best = net.clone();
    }
    EvalOptions eo;
    eo.seed = Rng::derive(c.seed, "test").next_u64();
    eo.threads = a.threads;
    eo.predict.crop_length = c.crop_length;
    const EvalReport rep = evaluate(best, p.splits.test, eo);
    write_report_json(rep, dir / "report.json");
    write_confusion_csv(rep.confusion, dir / "confusion.csv");
    out << "test top-1 " << rep.top1_accuracy << ", within 0.1 mm " << rep.tolerance_accuracy << '\n';
  }
  return kOk;
}

struct LrFindArgs {
  DataArgs data;
  std::string arch = "ResNeXt1D-38";
  std::optional<std::uint64_t> init_seed;
  TrainConfig config;
  LrFindConfig finder;
  std::string out_root = "runs";
};

int cmd_lr_find(const LrFindArgs& a, const CLI::App& root, const CLI::App& sub, std::ostream& out) {
  TrainConfig c = a.config;
  c.lr_schedule.clear();
  c.validate();
  const Prepared p = prepare(a.data);
  auto net = build_network<float>(a.arch);
  const std::uint64_t init_seed = a.init_seed.value_or(c.seed);
  net.initialize(init_seed);
  const auto dir = make_run_dir(a.out_root, c.seed);
  RunManifest m = base_manifest("lr-find", sub);
  m.architecture = a.arch;
  m.train_config = c.to_json();
  m.seed = c.seed;
  m.init_seed = init_seed;
  m.split_seed = a.data.split_seed;
  fill_data(m, p);
  write_json(m.to_json(), dir / "manifest.json");
  write_run_config(root, dir);

  const LrFindResult r = lr_range_find(net, p.splits.train, c, a.finder);
  std::ofstream csv(dir / "lr_find.csv");
  csv << "lr,loss,smoothed\n" << std::setprecision(10);
  for (const auto& pt : r.curve) csv << pt.lr << ',' << pt.loss << ',' << pt.smoothed << '\n';
  out << "run directory " << dir.string() << '\n'
      << "swept " << r.curve.size() << " rates" << (r.diverged ? " (stopped on divergence)" : "") << '\n'
      << "suggested learning rate " << r.suggested_lr << '\n';
  return kOk;
}

struct EvalArgs {
  DataArgs data;
  std::string checkpoint;
  std::string split = "test";
  std::size_t n_crops = 10;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::string out_root = "runs";
  std::vector<std::string> misclassified;
};

int cmd_evaluate(const EvalArgs& a, const CLI::App& sub, std::ostream& out) {
  const Checkpoint ck = open_checkpoint(a.checkpoint);
  Network<float> net(ck.spec);
  load_into(net, ck);
  const Prepared p = prepare_for_checkpoint(a.data, ck);
  const Dataset ds = pick_split(p, a.split);
  if (ds.empty()) throw DataError("the " + a.split + " split is empty");
  EvalOptions eo;
  eo.seed = a.seed;
  eo.threads = a.threads;
  eo.predict.n_crops = a.n_crops;
  const EvalReport rep = evaluate(net, ds, eo);

  const auto dir = make_run_dir(a.out_root, a.seed);
  RunManifest m = base_manifest("evaluate", sub);
  m.architecture = ck.spec.name;
  m.seed = a.seed;
  fill_data(m, p);
  write_json(m.to_json(), dir / "manifest.json");
  write_report_json(rep, dir / "report.json");
  write_confusion_csv(rep.confusion, dir / "confusion.csv");
  for (const auto& name : a.misclassified) {
    const int c = parse_class(name);
    export_misclassified(rep, ds, c, dir / ("predicted_" + class_name(c) + ".csv"));
  }
  out << "run directory " << dir.string() << '\n'
      << ds.size() << " samples, top-1 " << rep.top1_accuracy << ", within 0.1 mm " << rep.tolerance_accuracy
      << ", mean loss " << rep.mean_loss << '\n';
  return kOk;
}

struct CamArgs {
  DataArgs data;
  std::string checkpoint;
  std::string split = "test";
  std::string cls = "2.0mm";
  std::size_t limit = 0;
  bool align = false;
  std::string out_root = "runs";
};

int cmd_cam(const CamArgs& a, const CLI::App& sub, std::ostream& out) {
  const Checkpoint ck = open_checkpoint(a.checkpoint);
  Network<float> net(ck.spec);
  load_into(net, ck);
  const Prepared p = prepare_for_checkpoint(a.data, ck);
  const Dataset ds = pick_split(p, a.split);
  const int c = parse_class(a.cls);
  const std::size_t crop = ck.spec.input_length;

  std::vector<CamExportItem> items;
  double worst = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.segments[i].label != c) continue;
    if (a.limit && items.size() >= a.limit) break;
    CamResult r = compute_cam(net, ds.segments[i], c, crop);
    double mean = 0.0;
    for (double v : r.activation) mean += v;
    mean /= static_cast<double>(r.activation.size());
    worst = std::max(worst, std::abs(mean - (r.logit - r.bias)));
    items.push_back({i, &ds.segments[i], std::move(r)});
  }
  if (items.empty()) throw DataError("no samples of class " + class_name(c) + " in the " + a.split + " split");
  const auto dir = make_run_dir(a.out_root, 0);
  RunManifest m = base_manifest("cam", sub);
  m.architecture = ck.spec.name;
  fill_data(m, p);
  write_json(m.to_json(), dir / "manifest.json");
  export_cams(items, dir / "cam.csv", a.align);
  out << "run directory " << dir.string() << '\n'
      << items.size() << " class activation maps for " << class_name(c)
      << ", largest |mean CAM - (logit - bias)| = " << worst << '\n';
  return kOk;
}

}  // namespace

// ---------------------------------------------------------------------------
// Entry point

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Eddy-current defect-depth classification with 1-D residual networks", "ectnet"};
  app.set_version_flag("--version", version());
  app.set_config("--config", "", "TOML file of option values (sections per subcommand); flags override it");
  app.require_subcommand(1);

  // count
  CountArgs count;
  auto* c_count = app.add_subcommand("count", "parameter and FLOP table of the architectures");
  c_count->add_flag("--all", count.all, "all eleven architectures (default when --arch is absent)");
  c_count->add_option("--arch", count.arch, "architecture name (repeatable)")->delimiter(',');
  c_count->add_option("--length", count.length, "input length")->capture_default_str();
  c_count->add_option("--flops_per_mac", count.flops_per_mac, "FLOPs per multiply-accumulate")
      ->capture_default_str();
  c_count->add_flag("--breakdown", count.breakdown, "per-layer table");
  c_count->add_flag("--sweep", count.sweep, "FLOP totals under alternative counting conventions");

  // dataset
  auto* c_dataset = app.add_subcommand("dataset", "generate, inspect and export datasets");
  c_dataset->require_subcommand(1);
  GenArgs gen;
  auto* c_gen = c_dataset->add_subcommand("gen", "write a synthetic dataset container");
  c_gen->add_option("--out", gen.out, "output file")->required();
  c_gen->add_option("--volunteers", gen.synth.volunteers, "volunteers")->capture_default_str();
  c_gen->add_option("--angles", gen.synth.angles, "scan angles")->capture_default_str();
  c_gen->add_option("--directions", gen.synth.directions, "scan directions")->capture_default_str();
  c_gen->add_option("--repeats", gen.synth.repeats, "repeats per condition")->capture_default_str();
  c_gen->add_option("--length", gen.synth.length, "samples per segment")->capture_default_str();
  c_gen->add_option("--noise", gen.synth.noise, "white-noise std")->capture_default_str();
  c_gen->add_option("--drift", gen.synth.drift, "baseline drift amplitude")->capture_default_str();
  c_gen->add_option("--seed", gen.synth.seed, "generator seed")->capture_default_str();
  DataArgs inspect;
  auto* c_inspect = c_dataset->add_subcommand("inspect", "summarise a dataset file");
  inspect.add_to(c_inspect, false);
  ExportArgs exp;
  auto* c_export = c_dataset->add_subcommand("export-plane", "complex-plane CSV of dataset segments");
  exp.data.add_to(c_export, false);
  c_export->add_option("--out", exp.out, "output CSV")->required();
  c_export->add_option("--samples", exp.samples, "segment indices (default: all)")->delimiter(',');
  c_export->add_option("--limit", exp.limit, "export only the first n segments (0 = all)")->capture_default_str();

  // train
  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "train a network and evaluate the best model on the test split");
  c_train->fallthrough();
  tr.data.add_to(c_train);
  c_train->add_option("--arch", tr.arch, "architecture name")->capture_default_str();
  c_train->add_option("--init_seed", tr.init_seed, "weight-initialisation seed (default: --seed)");
  add_train_config(c_train, tr.config, tr.schedule);
  c_train->add_option("--checkpoint_every", tr.config.checkpoint_every,
                      "write state.ckpt every n epochs (0 = only at the end)")
      ->capture_default_str();
  c_train->add_option("--validation_interval", tr.config.validation_interval, "validate every n epochs")
      ->capture_default_str();
  c_train->add_option("--validation_crops", tr.config.validation_crops, "crops per validation segment")
      ->capture_default_str();
  c_train->add_option("--out_root", tr.out_root, "parent directory of run directories")->capture_default_str();
  c_train->add_option("--resume", tr.resume_dir, "continue the run in this directory")->configurable(false);
  c_train->add_option("--stop_after", tr.stop_after, "stop after n epochs, resumable (0 = run to the end)")
      ->configurable(false);
  c_train->add_option("--threads", tr.threads, "evaluation threads (1 = sequential reference mode)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  c_train->add_flag("--quiet", tr.quiet, "no per-epoch progress lines");

  // lr-find
  LrFindArgs lf;
  auto* c_lr = app.add_subcommand("lr-find", "learning-rate range test");
  c_lr->fallthrough();
  lf.data.add_to(c_lr);
  c_lr->add_option("--arch", lf.arch, "architecture name")->capture_default_str();
  c_lr->add_option("--init_seed", lf.init_seed, "weight-initialisation seed (default: --seed)");
  c_lr->add_option("--batch_size,--batch", lf.config.batch_size, "mini-batch size")->capture_default_str();
  c_lr->add_option("--seed", lf.config.seed, "training seed")->capture_default_str();
  c_lr->add_option("--crop_length", lf.config.crop_length, "random-crop length")->capture_default_str();
  c_lr->add_option("--lr_min", lf.finder.lr_min, "first learning rate")->capture_default_str();
  c_lr->add_option("--lr_max", lf.finder.lr_max, "last learning rate")->capture_default_str();
  c_lr->add_option("--growth", lf.finder.growth, "factor between consecutive rates")->capture_default_str();
  c_lr->add_option("--epochs_per_step", lf.finder.epochs_per_step, "epochs at each rate")->capture_default_str();
  c_lr->add_option("--smoothing_window", lf.finder.smoothing_window, "moving-average window (points)")
      ->capture_default_str();
  c_lr->add_option("--divergence_factor", lf.finder.divergence_factor, "stop when loss exceeds this x first loss")
      ->capture_default_str();
  c_lr->add_option("--out_root", lf.out_root, "parent directory of run directories")->capture_default_str();

  // evaluate
  EvalArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "ten-crop evaluation of a checkpoint");
  c_eval->fallthrough();
  ev.data.add_to(c_eval);
  c_eval->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  c_eval->add_option("--split", ev.split, kDataSubsetHelp)
      ->capture_default_str()
      ->check(CLI::IsMember({"test", "validation", "train", "all"}));
  c_eval->add_option("--n_crops", ev.n_crops, "crops per segment")->capture_default_str();
  c_eval->add_option("--seed", ev.seed, "crop seed")->capture_default_str();
  c_eval->add_option("--threads", ev.threads, "evaluation threads (1 = sequential reference mode)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  c_eval->add_option("--misclassified", ev.misclassified,
                     "export samples predicted as this class (repeatable), e.g. 1.4mm")
      ->delimiter(',');
  c_eval->add_option("--out_root", ev.out_root, "parent directory of run directories")->capture_default_str();

  // cam
  CamArgs cam;
  auto* c_cam = app.add_subcommand("cam", "class activation maps of one class");
  c_cam->fallthrough();
  cam.data.add_to(c_cam);
  c_cam->add_option("--checkpoint", cam.checkpoint, "checkpoint file")->required();
  c_cam->add_option("--split", cam.split, kDataSubsetHelp)
      ->capture_default_str()
      ->check(CLI::IsMember({"test", "validation", "train", "all"}));
  c_cam->add_option("--class", cam.cls, "class whose samples and activation are exported")->capture_default_str();
  c_cam->add_option("--limit", cam.limit, "at most n samples (0 = all)")->capture_default_str();
  c_cam->add_flag("--align", cam.align, "add peak-aligned time indices");
  c_cam->add_option("--out_root", cam.out_root, "parent directory of run directories")->capture_default_str();

  for (auto* sub : {c_train, c_lr, c_eval, c_cam})
    sub->footer("Options may also come from a TOML file: ectnet " + sub->get_name() +
                " --config FILE (keys under [" + sub->get_name() + "]).");

  std::vector<std::string> argv_store{"ectnet"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? kOk : kUsage;
    }
    if (c_count->parsed()) return cmd_count(count, out);
    if (c_gen->parsed()) return cmd_dataset_gen(gen, out);
    if (c_inspect->parsed()) return cmd_dataset_inspect(inspect, out);
    if (c_export->parsed()) return cmd_dataset_export(exp, out);
    if (c_train->parsed()) return cmd_train(tr, app, *c_train, out, err);
    if (c_lr->parsed()) return cmd_lr_find(lf, app, *c_lr, out);
    if (c_eval->parsed()) return cmd_evaluate(ev, *c_eval, out);
    if (c_cam->parsed()) return cmd_cam(cam, *c_cam, out);
    err << app.help();
    return kUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const nlohmann::json::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace ectnet::cli
