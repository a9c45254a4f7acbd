#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "ectnet/error.hpp"
#include "ectnet/training/training.hpp"

using namespace ectnet;

namespace {

// Four well separated classes, 16 segments each, already normalised.
Splits separable_set() {
  SynthConfig cfg;
  cfg.classes = {0, 1, Label::defect(0.6).index(), Label::defect(2.0).index()};
  cfg.volunteers = 3;
  cfg.angles = 2;
  cfg.directions = 2;
  cfg.repeats = 2;
  cfg.seed = 41;
  const Dataset all = decimate(synth_generate(cfg), 5);
  const std::vector<int> test{}, val{2};
  Splits s = split_by_volunteer(all, test, val);
  const NormStats st = compute_norm_stats(s.train);
  s.train = apply_znorm(s.train, st);
  s.validation = apply_znorm(s.validation, st);
  return s;
}

TrainConfig small_config() {
  TrainConfig c;
  c.batch_size = 16;
  c.epochs = 4;
  c.lr_initial = 1e-3;
  c.lr_schedule = {{3, 5e-4}};
  c.seed = 5;
  return c;
}

template <typename T>
std::vector<Tensor<T>> snapshot(const Network<T>& net) {
  std::vector<Tensor<T>> out;
  for (const auto& [_, v] : net.named_parameters()) out.push_back(v.value());
  for (const auto& [_, b] : net.named_buffers()) out.push_back(*b);
  return out;
}

template <typename T>
bool bitwise_equal(const std::vector<Tensor<T>>& a, const std::vector<Tensor<T>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].shape() != b[i].shape()) return false;
    const auto x = a[i].data();
    const auto y = b[i].data();
    if (std::memcmp(x.data(), y.data(), x.size_bytes()) != 0) return false;
  }
  return true;
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("ectnet_train_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("adam") {
  auto make = [](std::vector<double> values) {
    TensorD t({values.size()}, 0.0);
    std::copy(values.begin(), values.end(), t.raw());
    return Variable<double>::parameter(std::move(t));
  };

  SUBCASE("zero gradients leave parameters unchanged") {
    std::vector<Variable<double>> p{make({1.0, -2.0, 3.5})};
    p[0].zero_grad();
    auto st = AdamState<double>::zeros_like(p);
    for (int i = 0; i < 5; ++i) adam_step(std::span<Variable<double>>(p), st, 0.1);
    CHECK(p[0].value().data()[0] == 1.0);
    CHECK(p[0].value().data()[1] == -2.0);
    CHECK(p[0].value().data()[2] == 3.5);
    CHECK(st.t == 5);
  }

  SUBCASE("first step with unit gradient moves by the learning rate") {
    for (double alpha : {1e-5, 4e-5, 1e-3, 0.1}) {
      std::vector<Variable<double>> p{make({0.0, 1.0, -1.0, 10.0})};
      p[0].mutable_grad().fill(1.0);
      auto st = AdamState<double>::zeros_like(p);
      const TensorD before = p[0].value();
      adam_step(std::span<Variable<double>>(p), st, alpha);
      for (std::size_t j = 0; j < 4; ++j) {
        const double update = p[0].value().data()[j] - before.data()[j];
        CHECK(std::abs(update + alpha) < alpha * 1e-6);
      }
    }
  }

  SUBCASE("constant gradients keep each update within the learning rate") {
    for (double g : {1e-4, 0.3, -2.0, 50.0}) {
      std::vector<Variable<double>> p{make({0.5})};
      p[0].mutable_grad().fill(g);
      auto st = AdamState<double>::zeros_like(p);
      const double lr = 1e-2;
      for (int i = 0; i < 200; ++i) {
        const double before = p[0].value().data()[0];
        adam_step(std::span<Variable<double>>(p), st, lr);
        CHECK(std::abs(p[0].value().data()[0] - before) <= lr * (1.0 + 1e-6));
        CHECK(st.v[0].data()[0] >= 0.0);
      }
    }
  }

  SUBCASE("oracle: two steps against the textbook recursion") {
    std::vector<Variable<double>> p{make({1.0})};
    auto st = AdamState<double>::zeros_like(p);
    const double g1 = 0.5, g2 = -1.5, lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    p[0].mutable_grad().fill(g1);
    adam_step(std::span<Variable<double>>(p), st, lr);
    p[0].mutable_grad().fill(g2);
    adam_step(std::span<Variable<double>>(p), st, lr);
    double x = 1.0, m = 0.0, v = 0.0;
    int t = 0;
    for (double g : {g1, g2}) {
      ++t;
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    }
    CHECK(p[0].value().data()[0] == doctest::Approx(x).epsilon(1e-14));
  }

  SUBCASE("weight decay adds to the gradient") {
    std::vector<Variable<double>> a{make({2.0})}, b{make({2.0})};
    a[0].mutable_grad().fill(0.0);
    b[0].mutable_grad().fill(0.2);  // 0.1 * 2.0
    auto sa = AdamState<double>::zeros_like(a);
    auto sb = AdamState<double>::zeros_like(b);
    adam_step(std::span<Variable<double>>(a), sa, 0.01, {}, 0.1);
    adam_step(std::span<Variable<double>>(b), sb, 0.01);
    CHECK(a[0].value().data()[0] == b[0].value().data()[0]);
  }

  SUBCASE("shape mismatch") {
    std::vector<Variable<double>> p{make({1.0, 2.0})};
    std::vector<Variable<double>> q{make({1.0})};
    auto st = AdamState<double>::zeros_like(q);
    CHECK_THROWS_AS(adam_step(std::span<Variable<double>>(p), st, 0.1), ShapeError);
    auto st2 = AdamState<double>::zeros_like(p);
    st2.m.pop_back();
    CHECK_THROWS_AS(adam_step(std::span<Variable<double>>(p), st2, 0.1), ShapeError);
  }
}

TEST_CASE("learning-rate schedule") {
  const TrainConfig c;  // defaults: 4e-5, then 4e-6 at 5000 and 4e-7 at 7500
  CHECK(lr_at(0, c) == 4.0e-5);
  CHECK(lr_at(4999, c) == 4.0e-5);
  CHECK(lr_at(5000, c) == 4.0e-6);
  CHECK(lr_at(7499, c) == 4.0e-6);
  CHECK(lr_at(7500, c) == 4.0e-7);
  CHECK(lr_at(9999, c) == 4.0e-7);
  CHECK(c.batch_size == 128);
  CHECK(c.epochs == 10000);
  CHECK(c.adam.beta1 == 0.9);
  CHECK(c.adam.beta2 == 0.999);
  CHECK(c.adam.epsilon == 1e-8);
  for (std::size_t e = 1; e < c.epochs; ++e) CHECK(lr_at(e, c) <= lr_at(e - 1, c));

  TrainConfig flat = c;
  flat.lr_schedule.clear();
  CHECK(lr_at(0, flat) == 4.0e-5);
  CHECK(lr_at(1000000, flat) == 4.0e-5);
}

TEST_CASE("training config") {
  const TrainConfig c = small_config();
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(TrainConfig::from_json(nlohmann::json::object()).to_json() == TrainConfig().to_json());
  CHECK(TrainConfig::from_json({{"lr_schedule", {{{"epoch", 10}, {"lr", 1e-4}}}}}).lr_schedule ==
        std::vector<LrStep>{{10, 1e-4}});

  CHECK_THROWS_AS(TrainConfig::from_json({{"batchsize", 3}}), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json({{"batch_size", "x"}}), ConfigError);
  auto bad = [&](auto mutate) {
    TrainConfig b = c;
    mutate(b);
    CHECK_THROWS_AS(b.validate(), ConfigError);
  };
  bad([](TrainConfig& b) { b.batch_size = 0; });
  bad([](TrainConfig& b) { b.epochs = 0; });
  bad([](TrainConfig& b) { b.lr_initial = -1e-3; });
  bad([](TrainConfig& b) { b.lr_schedule = {{5, 1e-4}, {5, 1e-5}}; });
  bad([](TrainConfig& b) { b.lr_schedule = {{5, -1e-4}}; });
  bad([](TrainConfig& b) { b.adam.beta1 = 1.0; });
  bad([](TrainConfig& b) { b.label_smoothing = 1.0; });
  bad([](TrainConfig& b) { b.validation_interval = 0; });
}

TEST_CASE("learning-rate range finder") {
  SUBCASE("quadratic surrogate stays below the stability bound") {
    // f(x) = curvature / 2 * x^2 with plain gradient descent: stable iff lr < 2 / curvature.
    for (double curvature : {0.5, 3.0, 40.0, 1000.0}) {
      CAPTURE(curvature);
      double x = 1.0;
      auto run = [&](double lr) {
        double sum = 0.0;
        for (int i = 0; i < 10; ++i) {
          sum += 0.5 * curvature * x * x;
          x -= lr * curvature * x;
        }
        return sum / 10.0;
      };
      LrFindConfig cfg;
      cfg.lr_min = 1e-6;
      cfg.lr_max = 10.0;
      cfg.growth = 1.3;
      const LrFindResult r = lr_range_find(run, cfg);
      CHECK(r.suggested_lr < 2.0 / curvature);
      CHECK(r.suggested_lr > cfg.lr_min);
      for (std::size_t i = 1; i < r.curve.size(); ++i) {
        CHECK(r.curve[i].lr == doctest::Approx(r.curve[i - 1].lr * 1.3).epsilon(1e-12));
      }
    }
  }

  SUBCASE("smoothing and suggestion on a known curve") {
    // Losses at lr = 1, 2, 4, 8, 16: steepest fall between the 2nd and 3rd point.
    const std::vector<double> losses{10.0, 9.5, 5.0, 4.5, 4.4};
    std::size_t i = 0;
    LrFindConfig cfg;
    cfg.lr_min = 1.0;
    cfg.lr_max = 16.0;
    cfg.growth = 2.0;
    cfg.smoothing_window = 1;
    const LrFindResult r = lr_range_find([&](double) { return losses.at(i++); }, cfg);
    CHECK_FALSE(r.diverged);
    REQUIRE(r.curve.size() == 5);
    CHECK(r.suggested_lr == 2.0);
    i = 0;
    cfg.smoothing_window = 3;
    const LrFindResult s = lr_range_find([&](double) { return losses.at(i++); }, cfg);
    CHECK(s.curve[0].smoothed == doctest::Approx(9.75));
    CHECK(s.curve[1].smoothed == doctest::Approx((10.0 + 9.5 + 5.0) / 3.0));
    CHECK(s.curve[4].smoothed == doctest::Approx(4.45));
  }

  SUBCASE("divergence stops the sweep") {
    std::size_t calls = 0;
    LrFindConfig cfg;
    cfg.lr_min = 1.0;
    cfg.lr_max = 1e6;
    cfg.growth = 2.0;
    const LrFindResult r = lr_range_find(
        [&](double lr) {
          ++calls;
          return lr < 8 ? 1.0 / lr : 100.0;
        },
        cfg);
    CHECK(r.diverged);
    CHECK(calls == 4);  // lr = 1, 2, 4 kept; lr = 8 exceeds 4x the first loss
    CHECK(r.curve.size() == 3);
  }

  SUBCASE("errors") {
    LrFindConfig cfg;
    cfg.lr_min = cfg.lr_max = 1e-3;
    CHECK_THROWS_AS(lr_range_find([](double) { return 1.0; }, cfg), ConfigError);
    cfg.lr_max = 1e-1;
    cfg.growth = 1.0;
    CHECK_THROWS_AS(lr_range_find([](double) { return 1.0; }, cfg), ConfigError);
    cfg.growth = 2.0;
    int n = 0;
    CHECK_THROWS_AS(lr_range_find([&](double) { return n++ == 0 ? 1.0 : NAN; }, cfg), NumericError);
  }

  SUBCASE("network sweep") {
    const Splits s = separable_set();
    auto net = build_network<float>("ResNet1Dv1-14");
    net.initialize(2);
    const auto before = snapshot(net);
    LrFindConfig cfg;
    cfg.lr_min = 1e-5;
    cfg.lr_max = 1e-1;
    cfg.growth = 4.0;
    const LrFindResult r = lr_range_find(net, s.train, small_config(), cfg);
    CHECK(r.curve.size() >= 2);
    CHECK(r.suggested_lr >= cfg.lr_min);
    CHECK(r.suggested_lr <= cfg.lr_max);
    CHECK(bitwise_equal(before, snapshot(net)));  // works on a copy
  }
}

TEST_CASE("training loop") {
  const Splits s = separable_set();
  REQUIRE(s.train.size() == 64);
  REQUIRE(s.validation.size() == 32);

  SUBCASE("zero learning rate leaves parameters unchanged") {
    auto net = build_network<float>("ResNeXt1D-14");
    net.initialize(3);
    std::vector<TensorF> before;
    for (const auto& [_, v] : net.named_parameters()) before.push_back(v.value());
    TrainConfig c = small_config();
    c.epochs = 1;
    c.batch_size = 64;
    c.lr_schedule.clear();
    c.lr_initial = 0.0;
    const TrainResult r = train(net, s.train, Dataset{}, c);
    std::vector<TensorF> after;
    for (const auto& [_, v] : net.named_parameters()) after.push_back(v.value());
    CHECK(bitwise_equal(before, after));
    CHECK(r.log.records.size() == 1);
    CHECK(r.epochs_completed == 1);
    CHECK_FALSE(r.best.has_value());
  }

  SUBCASE("loss decreases and checkpoints improve strictly") {
    auto net = build_network<float>("ResNet1Dv1-14");
    net.initialize(9);
    TrainConfig c = small_config();
    c.epochs = 21;
    c.lr_schedule.clear();
    const TrainResult r = train(net, s.train, s.validation, c);
    REQUIRE(r.log.records.size() == 21);
    double early = 0.0, late = 0.0;
    for (std::size_t e = 0; e < 10; ++e) early += r.log.records[e].train_loss;
    for (std::size_t e = 10; e < 20; ++e) late += r.log.records[e].train_loss;
    MESSAGE("mean loss epochs 0-9 " << early / 10 << ", 10-19 " << late / 10);
    CHECK(late < early);
    REQUIRE_FALSE(r.checkpointed_accuracies.empty());
    for (std::size_t i = 1; i < r.checkpointed_accuracies.size(); ++i) {
      CHECK(r.checkpointed_accuracies[i] > r.checkpointed_accuracies[i - 1]);
    }
    CHECK(r.best_val_accuracy == r.checkpointed_accuracies.back());
    REQUIRE(r.best_epoch.has_value());
    CHECK(r.log.records[*r.best_epoch].val_accuracy == r.best_val_accuracy);
    for (std::size_t e = 0; e < r.log.records.size(); ++e) CHECK(r.log.records[e].epoch == e);
  }

  SUBCASE("validation interval") {
    auto net = build_network<float>("ResNet1Dv1-14");
    net.initialize(9);
    TrainConfig c = small_config();
    c.epochs = 5;
    c.validation_interval = 2;
    const TrainResult r = train(net, s.train, s.validation, c);
    CHECK_FALSE(r.log.records[0].val_accuracy.has_value());
    CHECK(r.log.records[1].val_accuracy.has_value());
    CHECK_FALSE(r.log.records[2].val_accuracy.has_value());
    CHECK(r.log.records[3].val_accuracy.has_value());
    CHECK(r.log.records[4].val_accuracy.has_value());  // last epoch
  }

  SUBCASE("errors") {
    auto net = build_network<float>("ResNet1Dv1-14");
    net.initialize(9);
    CHECK_THROWS_AS(train(net, Dataset{}, s.validation, small_config()), DataError);
    Dataset poisoned = s.train;
    poisoned.segments[37].samples.at(100, 0) = std::nanf("");
    TrainConfig c = small_config();
    c.epochs = 1;
    try {
      train(net, poisoned, Dataset{}, c);
      FAIL("expected a numeric error");
    } catch (const NumericError& e) {
      const std::string what = e.what();
      CHECK(what.find("batch") != std::string::npos);
      CHECK(what.find("epoch 0") != std::string::npos);
    }
    TrainConfig longer = small_config();
    longer.crop_length = 251;
    CHECK_THROWS_AS(train(net, s.train, s.validation, longer), DataError);
  }
}

TEST_CASE("determinism and resume") {
  const Splits s = separable_set();
  const TrainConfig c = small_config();

  auto fresh = [] {
    auto net = build_network<float>("ResNeXt1D-14");
    net.initialize(12);
    return net;
  };

  auto straight = fresh();
  const auto dir_a = fresh_dir("straight");
  TrainOptions oa;
  oa.out_dir = dir_a;
  const TrainResult ra = train(straight, s.train, s.validation, c, oa);

  SUBCASE("identical runs") {
    auto again = fresh();
    const TrainResult rb = train(again, s.train, s.validation, c);
    CHECK(ra.log.same_outcome(rb.log));
    CHECK(bitwise_equal(snapshot(straight), snapshot(again)));
  }

  SUBCASE("run directory contents") {
    CHECK(TrainLog::read_jsonl(dir_a / "train_log.jsonl").same_outcome(ra.log));
    CHECK(std::filesystem::exists(dir_a / "best.ckpt"));
    CHECK(std::filesystem::exists(dir_a / "state.ckpt"));
    const Checkpoint best = read_checkpoint(dir_a / "best.ckpt");
    CHECK(best.meta.at("epoch").get<std::size_t>() == *ra.best_epoch);
  }

  SUBCASE("interrupt and resume equals the straight run") {
    auto net = fresh();
    const auto dir = fresh_dir("resume");
    TrainOptions o;
    o.out_dir = dir;
    o.stop_after = 2;
    const TrainResult part = train(net, s.train, s.validation, c, o);
    CHECK(part.epochs_completed == 2);

    auto restored = build_network<float>("ResNeXt1D-14");
    const Checkpoint state = read_checkpoint(dir / "state.ckpt");
    const TrainLog log = TrainLog::read_jsonl(dir / "train_log.jsonl");
    TrainOptions o2;
    o2.out_dir = dir;
    const TrainResult rest = resume(restored, state, log, s.train, s.validation, c, o2);
    CHECK(rest.log.same_outcome(ra.log));
    CHECK(bitwise_equal(snapshot(restored), snapshot(straight)));
    CHECK(rest.best_epoch == ra.best_epoch);
    CHECK(rest.checkpointed_accuracies == ra.checkpointed_accuracies);
    CHECK(TrainLog::read_jsonl(dir / "train_log.jsonl").same_outcome(ra.log));

    SUBCASE("finished run is a no-op with a notice") {
      std::string notice;
      TrainOptions o3;
      o3.notice = [&](const std::string& m) { notice = m; };
      auto again = build_network<float>("ResNeXt1D-14");
      const TrainResult none =
          resume(again, rest.state, rest.log, s.train, s.validation, c, o3);
      CHECK(none.epochs_completed == c.epochs);
      CHECK(none.log.records.size() == c.epochs);
      CHECK_FALSE(notice.empty());
    }

    SUBCASE("mismatches") {
      auto other = build_network<float>("ResNeXt1D-14");
      TrainConfig bigger = c;
      bigger.batch_size = 32;
      CHECK_THROWS_AS(resume(other, state, log, s.train, s.validation, bigger), ConfigError);
      TrainConfig reseeded = c;
      reseeded.seed = 6;
      CHECK_THROWS_AS(resume(other, state, log, s.train, s.validation, reseeded), ConfigError);
      const Checkpoint weights_only = make_checkpoint(other);
      CHECK_THROWS_AS(resume(other, weights_only, log, s.train, s.validation, c), DataError);
      auto wrong_arch = build_network<float>("ResNet1Dv1-14");
      CHECK_THROWS_AS(resume(wrong_arch, state, log, s.train, s.validation, c), CheckpointError);
      TrainLog short_log = log;
      short_log.records.pop_back();
      CHECK_THROWS_AS(resume(other, state, short_log, s.train, s.validation, c), DataError);
    }
    std::filesystem::remove_all(dir);
  }
  std::filesystem::remove_all(dir_a);
}
