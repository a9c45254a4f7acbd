#include "ectnet/training/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "ectnet/error.hpp"
#include "ectnet/evaluation/evaluation.hpp"

namespace ectnet {

// ---------------------------------------------------------------------------
// Adam

template <typename T>
AdamState<T> AdamState<T>::zeros_like(std::span<const Variable<T>> params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.shape());
    s.v.emplace_back(p.shape());
  }
  return s;
}

template <typename T>
void adam_step(std::span<Variable<T>> params, AdamState<T>& s, double lr, const AdamHyper& h,
               double weight_decay) {
  if (s.m.size() != params.size() || s.v.size() != params.size()) {
    throw ShapeError("adam: state holds " + std::to_string(s.m.size()) + " accumulators for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (s.m[i].shape() != params[i].shape() || s.v[i].shape() != params[i].shape() ||
        (params[i].has_grad() && params[i].grad().shape() != params[i].shape())) {
      throw ShapeError("adam: shape mismatch for parameter " + std::to_string(i));
    }
  }
  ++s.t;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto w = p.mutable_value().data();
    auto m = s.m[i].data();
    auto v = s.v[i].data();
    const bool has = p.has_grad();
    const T* g = has ? p.grad().raw() : nullptr;
    for (std::size_t j = 0; j < w.size(); ++j) {
      double gj = has ? static_cast<double>(g[j]) : 0.0;
      if (weight_decay != 0.0) gj += weight_decay * static_cast<double>(w[j]);
      const double mj = h.beta1 * static_cast<double>(m[j]) + (1.0 - h.beta1) * gj;
      const double vj = h.beta2 * static_cast<double>(v[j]) + (1.0 - h.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double step = lr * (mj / c1) / (std::sqrt(vj / c2) + h.epsilon);
      w[j] = static_cast<T>(static_cast<double>(w[j]) - step);
    }
  }
}

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (crop_length == 0) throw ConfigError("crop_length must be positive");
  if (validation_interval == 0) throw ConfigError("validation_interval must be positive");
  if (validation_crops == 0) throw ConfigError("validation_crops must be positive");
  // Zero is accepted so a run can be frozen; negative or non-finite rates are not.
  if (!(lr_initial >= 0.0) || !std::isfinite(lr_initial)) throw ConfigError("lr_initial must be non-negative");
  for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
    if (!(lr_schedule[i].lr >= 0.0) || !std::isfinite(lr_schedule[i].lr)) {
      throw ConfigError("scheduled learning rates must be non-negative");
    }
    if (i > 0 && lr_schedule[i].epoch <= lr_schedule[i - 1].epoch) {
      throw ConfigError("lr_schedule epochs must be strictly increasing");
    }
  }
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw ConfigError("label_smoothing must lie in [0, 1)");
  if (grad_clip_norm < 0.0) throw ConfigError("grad_clip_norm must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json sched = nlohmann::json::array();
  for (const auto& s : lr_schedule) sched.push_back({s.epoch, s.lr});
  return {{"batch_size", batch_size},
          {"epochs", epochs},
          {"lr_initial", lr_initial},
          {"lr_schedule", sched},
          {"adam", {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"epsilon", adam.epsilon}}},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"crop_length", crop_length},
          {"validation_interval", validation_interval},
          {"validation_crops", validation_crops},
          {"weight_decay", weight_decay},
          {"label_smoothing", label_smoothing},
          {"grad_clip_norm", grad_clip_norm}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("training config must be an object");
  static const std::set<std::string> known{
      "batch_size", "epochs",         "lr_initial",          "lr_schedule",      "adam",
      "seed",       "checkpoint_every", "crop_length",       "validation_interval",
      "validation_crops", "weight_decay", "label_smoothing", "grad_clip_norm"};
  for (const auto& [k, _] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown training config key '" + k + "'");
  }
  TrainConfig c;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("batch_size", c.batch_size);
    get("epochs", c.epochs);
    get("lr_initial", c.lr_initial);
    get("seed", c.seed);
    get("checkpoint_every", c.checkpoint_every);
    get("crop_length", c.crop_length);
    get("validation_interval", c.validation_interval);
    get("validation_crops", c.validation_crops);
    get("weight_decay", c.weight_decay);
    get("label_smoothing", c.label_smoothing);
    get("grad_clip_norm", c.grad_clip_norm);
    if (j.contains("lr_schedule")) {
      c.lr_schedule.clear();
      for (const auto& s : j.at("lr_schedule")) {
        if (s.is_array()) {
          c.lr_schedule.push_back({s.at(0).get<std::size_t>(), s.at(1).get<double>()});
        } else {
          c.lr_schedule.push_back({s.at("epoch").get<std::size_t>(), s.at("lr").get<double>()});
        }
      }
    }
    if (j.contains("adam")) {
      const auto& a = j.at("adam");
      if (a.contains("beta1")) c.adam.beta1 = a.at("beta1").get<double>();
      if (a.contains("beta2")) c.adam.beta2 = a.at("beta2").get<double>();
      if (a.contains("epsilon")) c.adam.epsilon = a.at("epsilon").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed training config: ") + e.what());
  }
  c.validate();
  return c;
}

double lr_at(std::size_t epoch, const TrainConfig& c) {
  double lr = c.lr_initial;
  for (const auto& s : c.lr_schedule) {
    if (epoch >= s.epoch) lr = s.lr;
  }
  return lr;
}

// ---------------------------------------------------------------------------
// Log

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json j{{"epoch", epoch},
                   {"lr", lr},
                   {"train_loss", train_loss},
                   {"train_accuracy", train_accuracy},
                   {"val_loss", nullptr},
                   {"val_accuracy", nullptr},
                   {"wall_seconds", wall_seconds}};
  if (val_loss) j["val_loss"] = *val_loss;
  if (val_accuracy) j["val_accuracy"] = *val_accuracy;
  return j;
}

EpochRecord EpochRecord::from_json(const nlohmann::json& j) {
  try {
    EpochRecord r;
    r.epoch = j.at("epoch").get<std::size_t>();
    r.lr = j.at("lr").get<double>();
    r.train_loss = j.at("train_loss").get<double>();
    r.train_accuracy = j.at("train_accuracy").get<double>();
    if (j.contains("val_loss") && !j.at("val_loss").is_null()) r.val_loss = j.at("val_loss").get<double>();
    if (j.contains("val_accuracy") && !j.at("val_accuracy").is_null()) {
      r.val_accuracy = j.at("val_accuracy").get<double>();
    }
    r.wall_seconds = j.value("wall_seconds", 0.0);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed log record: ") + e.what());
  }
}

bool EpochRecord::same_outcome(const EpochRecord& o) const {
  return epoch == o.epoch && lr == o.lr && train_loss == o.train_loss &&
         train_accuracy == o.train_accuracy && val_loss == o.val_loss && val_accuracy == o.val_accuracy;
}

void TrainLog::append(const EpochRecord& r) {
  if (!records.empty() && r.epoch <= records.back().epoch) {
    throw ConfigError("log epochs must increase");
  }
  records.push_back(r);
}

void TrainLog::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : records) out << r.to_json().dump() << '\n';
}

void TrainLog::append_jsonl(const EpochRecord& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot write " + path.string());
  out << r.to_json().dump() << '\n';
}

TrainLog TrainLog::read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  TrainLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      log.append(EpochRecord::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError("malformed log line in " + path.string() + ": " + e.what());
    } catch (const ConfigError& e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }
  return log;
}

bool TrainLog::same_outcome(const TrainLog& o) const {
  if (records.size() != o.records.size()) return false;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].same_outcome(o.records[i])) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Epoch

namespace {

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

template <typename T>
std::vector<Variable<T>> parameter_list(const Network<T>& net) {
  std::vector<Variable<T>> out;
  for (auto& [_, v] : net.named_parameters()) out.push_back(v);
  return out;
}

template <typename T>
void clip_gradients(std::vector<Variable<T>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad().data()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double scale = max_norm / norm;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (T& g : p.mutable_grad().data()) g = static_cast<T>(static_cast<double>(g) * scale);
  }
}

template <typename T>
EpochStats run_epoch(Network<T>& net, std::vector<Variable<T>>& params, AdamState<T>& adam,
                     const Dataset& ds, const TrainConfig& c, std::size_t epoch, double lr) {
  const std::size_t n = ds.size();
  const std::size_t len = c.crop_length;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle = Rng::derive(c.seed, "train.shuffle", epoch);
  shuffle.shuffle(order.begin(), order.end());
  Rng crops = Rng::derive(c.seed, "train.crop", epoch);

  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0, batch = 0; start < n; start += c.batch_size, ++batch) {
    const std::size_t b = std::min(c.batch_size, n - start);
    Tensor<T> x({b, len, 2});
    std::vector<int> labels(b);
    for (std::size_t i = 0; i < b; ++i) {
      const ScanSegment& seg = ds.segments[order[start + i]];
      const std::size_t off = random_crop_offset(seg.length(), len, crops);
      const float* src = seg.samples.raw() + 2 * off;
      std::copy(src, src + 2 * len, x.raw() + i * 2 * len);
      labels[i] = seg.label;
    }
    const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                              " (positions " + std::to_string(start) + ".." +
                              std::to_string(start + b - 1) + " of the shuffled order)";
    for (auto& p : params) p.zero_grad();
    LossResult<T> lr_out;
    try {
      const Variable<T> logits = net.forward(Variable<T>::constant(std::move(x)), Mode::Training);
      lr_out = softmax_cross_entropy(logits, labels, c.label_smoothing);
      if (!std::isfinite(static_cast<double>(lr_out.loss.value()[0]))) {
        throw NumericError("loss is " + std::to_string(lr_out.loss.value()[0]));
      }
      backward(lr_out.loss);
    } catch (const NumericError& e) {
      throw NumericError("non-finite value in training at " + where + ": " + e.what());
    }
    const double loss = static_cast<double>(lr_out.loss.value()[0]);
    if (c.grad_clip_norm > 0.0) clip_gradients(params, c.grad_clip_norm);
    adam_step(std::span<Variable<T>>(params), adam, lr, c.adam, c.weight_decay);

    loss_sum += loss * static_cast<double>(b);
    const std::size_t k = lr_out.probs.dim(1);
    for (std::size_t i = 0; i < b; ++i) {
      const T* row = lr_out.probs.raw() + i * k;
      const auto pred = static_cast<int>(std::max_element(row, row + k) - row);
      correct += pred == labels[i];
    }
  }
  return {loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
}

void check_datasets(const Dataset& train_ds, const Dataset& val_ds, const TrainConfig& c) {
  if (train_ds.empty()) throw DataError("training set is empty");
  for (const Dataset* ds : {&train_ds, &val_ds}) {
    for (const auto& s : ds->segments) {
      if (s.length() < c.crop_length) {
        throw DataError("segment of length " + std::to_string(s.length()) +
                        " is shorter than crop_length " + std::to_string(c.crop_length));
      }
    }
  }
}

template <typename T>
Checkpoint state_checkpoint(const Network<T>& net, const AdamState<T>& adam, const TrainConfig& c,
                            const TrainResult& r, const nlohmann::json& extra) {
  nlohmann::json meta = extra;
  meta.update(nlohmann::json{{"kind", "training_state"},
                      {"epochs_completed", r.epochs_completed},
                      {"adam_t", adam.t},
                      {"config", c.to_json()},
                      {"best_val_accuracy", r.best_val_accuracy},
                      {"best_epoch", r.best_epoch ? nlohmann::json(*r.best_epoch) : nlohmann::json()},
                      {"checkpointed_accuracies", r.checkpointed_accuracies}});
  Checkpoint ck = make_checkpoint(net, std::move(meta));
  const auto named = net.named_parameters();
  for (std::size_t i = 0; i < named.size(); ++i) {
    ck.arrays.push_back(NamedArray::from_tensor("optimizer.m." + named[i].first, adam.m[i]));
    ck.arrays.push_back(NamedArray::from_tensor("optimizer.v." + named[i].first, adam.v[i]));
  }
  return ck;
}

template <typename T>
TrainResult run_loop(Network<T>& net, AdamState<T> adam, TrainResult result, const Dataset& train_ds,
                     const Dataset& val_ds, const TrainConfig& c, const TrainOptions& o) {
  auto params = parameter_list(net);
  const std::uint64_t val_seed = Rng::derive(c.seed, "train.validation").next_u64();
  const std::size_t end = o.stop_after ? std::min(c.epochs, *o.stop_after) : c.epochs;

  std::filesystem::path log_path, best_path, state_path;
  if (o.out_dir) {
    std::filesystem::create_directories(*o.out_dir);
    log_path = *o.out_dir / "train_log.jsonl";
    best_path = *o.out_dir / "best.ckpt";
    state_path = *o.out_dir / "state.ckpt";
    result.log.write_jsonl(log_path);
  }

  for (std::size_t epoch = result.epochs_completed; epoch < end; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_at(epoch, c);
    const EpochStats st = run_epoch(net, params, adam, train_ds, c, epoch, rec.lr);
    rec.train_loss = st.loss;
    rec.train_accuracy = st.accuracy;

    const bool validate_now = (epoch + 1) % c.validation_interval == 0 || epoch + 1 == c.epochs;
    if (validate_now && !val_ds.empty()) {
      EvalOptions eo;
      eo.predict.n_crops = c.validation_crops;
      eo.predict.crop_length = c.crop_length;
      eo.seed = val_seed;
      eo.threads = o.eval_threads;
      const EvalReport rep = evaluate(net, val_ds, eo);
      rec.val_loss = rep.mean_loss;
      rec.val_accuracy = rep.top1_accuracy;
      if (rep.top1_accuracy > result.best_val_accuracy) {
        result.best_val_accuracy = rep.top1_accuracy;
        result.best_epoch = epoch;
        nlohmann::json meta = o.checkpoint_meta;
        meta.update(nlohmann::json{{"kind", "best"}, {"epoch", epoch}, {"val_accuracy", rep.top1_accuracy}});
        result.best = make_checkpoint(net, std::move(meta));
        result.checkpointed_accuracies.push_back(rep.top1_accuracy);
        if (o.out_dir) write_checkpoint(*result.best, best_path);
      }
    }
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.append(rec);
    result.epochs_completed = epoch + 1;
    if (o.out_dir) TrainLog::append_jsonl(rec, log_path);
    if (o.on_epoch) o.on_epoch(rec);
    if (o.out_dir && c.checkpoint_every > 0 && (epoch + 1) % c.checkpoint_every == 0) {
      write_checkpoint(state_checkpoint(net, adam, c, result, o.checkpoint_meta), state_path);
    }
  }
  result.state = state_checkpoint(net, adam, c, result, o.checkpoint_meta);
  if (o.out_dir) write_checkpoint(result.state, state_path);
  return result;
}

}  // namespace

template <typename T>
TrainResult train(Network<T>& net, const Dataset& train_ds, const Dataset& val_ds,
                  const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  check_datasets(train_ds, val_ds, config);
  const auto params = parameter_list(net);
  return run_loop(net, AdamState<T>::zeros_like(params), TrainResult{}, train_ds, val_ds, config,
                  options);
}

template <typename T>
TrainResult resume(Network<T>& net, const Checkpoint& state, const TrainLog& log,
                   const Dataset& train_ds, const Dataset& val_ds, const TrainConfig& config,
                   const TrainOptions& options) {
  config.validate();
  if (state.meta.value("kind", std::string()) != "training_state") {
    throw DataError("checkpoint holds no optimizer state (not a training-state checkpoint)");
  }
  const TrainConfig stored = TrainConfig::from_json(state.meta.at("config"));
  auto mismatch = [](const std::string& what) {
    throw ConfigError("resume: " + what + " differs from the interrupted run");
  };
  if (stored.batch_size != config.batch_size) mismatch("batch_size");
  if (stored.seed != config.seed) mismatch("seed");
  if (stored.crop_length != config.crop_length) mismatch("crop_length");
  if (stored.lr_initial != config.lr_initial || stored.lr_schedule != config.lr_schedule) {
    mismatch("learning-rate schedule");
  }
  if (stored.adam.beta1 != config.adam.beta1 || stored.adam.beta2 != config.adam.beta2 ||
      stored.adam.epsilon != config.adam.epsilon || stored.weight_decay != config.weight_decay ||
      stored.label_smoothing != config.label_smoothing ||
      stored.grad_clip_norm != config.grad_clip_norm) {
    mismatch("optimizer setting");
  }
  if (stored.validation_interval != config.validation_interval ||
      stored.validation_crops != config.validation_crops) {
    mismatch("validation setting");
  }

  TrainResult result;
  result.epochs_completed = state.meta.at("epochs_completed").get<std::size_t>();
  if (log.records.size() != result.epochs_completed) {
    throw DataError("resume: log has " + std::to_string(log.records.size()) +
                    " records but the checkpoint completed " +
                    std::to_string(result.epochs_completed) + " epochs");
  }
  load_into(net, state);
  const auto named = net.named_parameters();
  std::vector<Variable<T>> params;
  for (auto& [_, v] : named) params.push_back(v);
  AdamState<T> adam = AdamState<T>::zeros_like(params);
  adam.t = state.meta.at("adam_t").get<std::uint64_t>();
  for (std::size_t i = 0; i < named.size(); ++i) {
    const NamedArray* m = state.find("optimizer.m." + named[i].first);
    const NamedArray* v = state.find("optimizer.v." + named[i].first);
    if (!m || !v) throw DataError("resume: missing optimizer state for " + named[i].first);
    if (m->shape != params[i].shape() || v->shape != params[i].shape()) {
      throw CheckpointError(CheckpointError::Kind::Mismatch,
                            "resume: optimizer state shape mismatch for " + named[i].first);
    }
    adam.m[i] = m->to_tensor<T>();
    adam.v[i] = v->to_tensor<T>();
  }
  result.log = log;
  result.best_val_accuracy = state.meta.value("best_val_accuracy", -1.0);
  if (!state.meta.at("best_epoch").is_null()) result.best_epoch = state.meta.at("best_epoch").get<std::size_t>();
  result.checkpointed_accuracies = state.meta.value("checkpointed_accuracies", std::vector<double>{});
  if (options.out_dir && std::filesystem::exists(*options.out_dir / "best.ckpt")) {
    result.best = read_checkpoint(*options.out_dir / "best.ckpt");
  }

  if (result.epochs_completed >= config.epochs) {
    if (options.notice) {
      options.notice("run already completed " + std::to_string(result.epochs_completed) +
                     " of " + std::to_string(config.epochs) + " epochs; nothing to do");
    }
    result.state = state;
    return result;
  }
  check_datasets(train_ds, val_ds, config);
  return run_loop(net, std::move(adam), std::move(result), train_ds, val_ds, config, options);
}

// ---------------------------------------------------------------------------
// Range finder

void LrFindConfig::validate() const {
  if (!(lr_min > 0.0)) throw ConfigError("lr_min must be positive");
  if (!(lr_min < lr_max)) throw ConfigError("lr_min must be smaller than lr_max");
  if (!(growth > 1.0)) throw ConfigError("growth must exceed 1");
  if (epochs_per_step == 0) throw ConfigError("epochs_per_step must be positive");
  if (smoothing_window == 0) throw ConfigError("smoothing_window must be positive");
  if (!(divergence_factor > 1.0)) throw ConfigError("divergence_factor must exceed 1");
}

LrFindResult lr_range_find(const std::function<double(double)>& run, const LrFindConfig& cfg) {
  cfg.validate();
  LrFindResult r;
  for (std::size_t i = 0;; ++i) {
    const double lr = cfg.lr_min * std::pow(cfg.growth, static_cast<double>(i));
    if (lr > cfg.lr_max * (1.0 + 1e-12)) break;
    const double loss = run(lr);
    if (!std::isfinite(loss) || (!r.curve.empty() && loss > cfg.divergence_factor * r.curve.front().loss)) {
      r.diverged = true;
      break;
    }
    r.curve.push_back({lr, loss, 0.0});
  }
  const std::size_t n = r.curve.size();
  if (n < 2) throw NumericError("learning-rate sweep diverged before a suggestion could be made");

  // Centred moving average, truncated at the ends.
  const std::size_t half = cfg.smoothing_window / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(n - 1, i + (cfg.smoothing_window - 1 - half));
    double s = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) s += r.curve[j].loss;
    r.curve[i].smoothed = s / static_cast<double>(hi - lo + 1);
  }
  std::size_t best = 0;
  double best_slope = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double slope = (r.curve[i + 1].smoothed - r.curve[i].smoothed) /
                         std::log(r.curve[i + 1].lr / r.curve[i].lr);
    if (i == 0 || slope < best_slope) {
      best = i;
      best_slope = slope;
    }
  }
  r.suggested_lr = r.curve[best].lr;
  return r;
}

template <typename T>
LrFindResult lr_range_find(const Network<T>& net, const Dataset& train_ds, const TrainConfig& config,
                           const LrFindConfig& finder) {
  config.validate();
  finder.validate();
  check_datasets(train_ds, Dataset{}, config);
  Network<T> work = net.clone();
  auto params = parameter_list(work);
  AdamState<T> adam = AdamState<T>::zeros_like(params);
  std::size_t epoch = 0;
  auto step = [&](double lr) {
    double sum = 0.0;
    try {
      for (std::size_t e = 0; e < finder.epochs_per_step; ++e) {
        sum += run_epoch(work, params, adam, train_ds, config, epoch++, lr).loss;
      }
    } catch (const NumericError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
    return sum / static_cast<double>(finder.epochs_per_step);
  };
  return lr_range_find(step, finder);
}

#define ECTNET_INSTANTIATE(T)                                                                      \
  template struct AdamState<T>;                                                                    \
  template void adam_step<T>(std::span<Variable<T>>, AdamState<T>&, double, const AdamHyper&,      \
                             double);                                                              \
  template TrainResult train<T>(Network<T>&, const Dataset&, const Dataset&, const TrainConfig&,   \
                                const TrainOptions&);                                              \
  template TrainResult resume<T>(Network<T>&, const Checkpoint&, const TrainLog&, const Dataset&,  \
                                 const Dataset&, const TrainConfig&, const TrainOptions&);         \
  template LrFindResult lr_range_find<T>(const Network<T>&, const Dataset&, const TrainConfig&,    \
                                         const LrFindConfig&);

ECTNET_INSTANTIATE(float)
ECTNET_INSTANTIATE(double)

}  // namespace ectnet
