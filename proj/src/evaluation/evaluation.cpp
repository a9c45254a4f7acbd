#include "ectnet/evaluation/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <thread>

#include "ectnet/error.hpp"

namespace ectnet {

namespace {

std::vector<double> softmax_row(const double* z, std::size_t k) {
  const double m = *std::max_element(z, z + k);
  std::vector<double> p(k);
  double s = 0.0;
  for (std::size_t j = 0; j < k; ++j) s += (p[j] = std::exp(z[j] - m));
  for (auto& v : p) v /= s;
  return p;
}

void check_lengths(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) {
    throw ConfigError("label lists differ in length (" + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()) + ")");
  }
}

}  // namespace

template <typename T>
std::vector<double> predict_crops(Network<T>& net, const ScanSegment& seg, Rng& rng,
                                  const PredictOptions& o) {
  if (o.n_crops == 0) throw ConfigError("n_crops must be positive");
  const std::size_t len = seg.length();
  if (o.crop_length > len) {
    throw DataError("segment of length " + std::to_string(len) + " is shorter than the crop length " +
                    std::to_string(o.crop_length));
  }
  if (o.fixed_offset && *o.fixed_offset + o.crop_length > len) {
    throw ConfigError("fixed crop offset exceeds the segment");
  }
  Tensor<T> batch({o.n_crops, o.crop_length, 2});
  for (std::size_t i = 0; i < o.n_crops; ++i) {
    const std::size_t off = o.fixed_offset ? *o.fixed_offset : random_crop_offset(len, o.crop_length, rng);
    const float* src = seg.samples.raw() + 2 * off;
    std::copy(src, src + 2 * o.crop_length, batch.raw() + i * 2 * o.crop_length);
  }
  const Tensor<T> logits = net.infer(batch);
  const std::size_t k = logits.dim(1);
  std::vector<double> z(k);
  std::vector<double> avg(k, 0.0);
  // Running mean: identical crops average to exactly the single-crop value.
  for (std::size_t i = 0; i < o.n_crops; ++i) {
    for (std::size_t j = 0; j < k; ++j) z[j] = static_cast<double>(logits.at(i, j));
    const auto row = o.averaging == CropAveraging::Probabilities ? softmax_row(z.data(), k) : z;
    const double w = 1.0 / static_cast<double>(i + 1);
    for (std::size_t j = 0; j < k; ++j) avg[j] += (row[j] - avg[j]) * w;
  }
  if (o.averaging == CropAveraging::Logits) return softmax_row(avg.data(), k);
  return avg;
}

int argmax(std::span<const double> v) {
  if (v.empty()) throw ConfigError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<int>(best);
}

double top1_accuracy(std::span<const int> truths, std::span<const int> preds) {
  check_lengths(truths, preds);
  if (truths.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) hit += truths[i] == preds[i];
  return static_cast<double>(hit) / static_cast<double>(truths.size());
}

double tolerance_accuracy(std::span<const int> truths, std::span<const int> preds) {
  check_lengths(truths, preds);
  if (truths.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (truths[i] == preds[i]) {
      ++hit;
      continue;
    }
    const Label t = Label::from_index(truths[i]);
    const Label p = Label::from_index(preds[i]);
    if (t.is_defect() && p.is_defect() && std::abs(t.depth_mm() - p.depth_mm()) <= 0.1 + 1e-9) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(truths.size());
}

ConfusionMatrix confusion_matrix(std::span<const int> truths, std::span<const int> preds) {
  check_lengths(truths, preds);
  ConfusionMatrix m(kNumClasses, std::vector<std::size_t>(kNumClasses, 0));
  for (std::size_t i = 0; i < truths.size(); ++i) {
    for (int v : {truths[i], preds[i]}) {
      if (v < 0 || v >= kNumClasses) throw DataError("unknown label " + std::to_string(v));
    }
    ++m[static_cast<std::size_t>(truths[i])][static_cast<std::size_t>(preds[i])];
  }
  return m;
}

std::vector<int> EvalReport::predictions() const {
  std::vector<int> out;
  for (const auto& s : per_sample) out.push_back(s.predicted);
  return out;
}

std::vector<int> EvalReport::truths() const {
  std::vector<int> out;
  for (const auto& s : per_sample) out.push_back(s.truth);
  return out;
}

template <typename T>
EvalReport evaluate(Network<T>& net, const Dataset& ds, const EvalOptions& o) {
  if (ds.empty()) throw DataError("cannot evaluate an empty dataset");
  EvalReport r;
  r.n_crops = o.predict.n_crops;
  r.averaging = o.predict.averaging;
  r.per_sample.resize(ds.size());

  auto run = [&](std::size_t i) {
    Rng rng = Rng::derive(o.seed, "eval.crop", i);
    auto& s = r.per_sample[i];
    s.truth = ds.segments[i].label;
    s.probabilities = predict_crops(net, ds.segments[i], rng, o.predict);
    s.predicted = argmax(s.probabilities);
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(o.threads, static_cast<unsigned>(ds.size())));
  if (threads == 1) {
    for (std::size_t i = 0; i < ds.size(); ++i) run(i);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < ds.size(); i += threads) run(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  const auto truths = r.truths();
  const auto preds = r.predictions();
  r.top1_accuracy = top1_accuracy(truths, preds);
  r.tolerance_accuracy = tolerance_accuracy(truths, preds);
  r.confusion = confusion_matrix(truths, preds);
  double loss = 0.0;
  for (const auto& s : r.per_sample) {
    loss -= std::log(std::max(s.probabilities[static_cast<std::size_t>(s.truth)], 1e-300));
  }
  r.mean_loss = loss / static_cast<double>(ds.size());
  return r;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : per_sample) {
    samples.push_back({{"truth", s.truth}, {"predicted", s.predicted}, {"probabilities", s.probabilities}});
  }
  std::vector<std::string> names;
  for (int c = 0; c < kNumClasses; ++c) names.push_back(class_name(c));
  return {{"top1_accuracy", top1_accuracy},
          {"tolerance_accuracy", tolerance_accuracy},
          {"mean_loss", mean_loss},
          {"n_crops", n_crops},
          {"averaging", averaging == CropAveraging::Probabilities ? "probabilities" : "logits"},
          {"classes", names},
          {"confusion", confusion},
          {"per_sample", samples}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.top1_accuracy = j.at("top1_accuracy").get<double>();
    r.tolerance_accuracy = j.at("tolerance_accuracy").get<double>();
    r.mean_loss = j.at("mean_loss").get<double>();
    r.n_crops = j.at("n_crops").get<std::size_t>();
    r.averaging = j.at("averaging") == "logits" ? CropAveraging::Logits : CropAveraging::Probabilities;
    r.confusion = j.at("confusion").get<ConfusionMatrix>();
    for (const auto& s : j.at("per_sample")) {
      r.per_sample.push_back({s.at("truth").get<int>(), s.at("predicted").get<int>(),
                              s.at("probabilities").get<std::vector<double>>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed evaluation report: ") + e.what());
  }
}

void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << report.to_json().dump(1) << '\n';
}

EvalReport read_report_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return EvalReport::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("malformed evaluation report: ") + e.what());
  }
}

void write_confusion_csv(const ConfusionMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "truth\\predicted";
  for (std::size_t c = 0; c < m.size(); ++c) out << ',' << class_name(static_cast<int>(c));
  out << '\n';
  for (std::size_t r = 0; r < m.size(); ++r) {
    out << class_name(static_cast<int>(r));
    for (auto v : m[r]) out << ',' << v;
    out << '\n';
  }
}

void export_misclassified(const EvalReport& report, const Dataset& ds, int predicted_class,
                          const std::filesystem::path& path) {
  if (report.per_sample.size() != ds.size()) {
    throw ConfigError("report and dataset sizes differ");
  }
  if (predicted_class < 0 || predicted_class >= kNumClasses) {
    throw ConfigError("class index out of range");
  }
  Dataset selected;
  std::vector<int> preds;
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (report.per_sample[i].predicted != predicted_class) continue;
    selected.segments.push_back(ds.segments[i]);
    preds.push_back(predicted_class);
    ids.push_back(i);
  }
  PlaneExportOptions opt;
  opt.predictions = preds;
  opt.flag_correct = true;
  opt.sample_ids = ids;
  export_complex_plane(selected, path, opt);
}

// ---------------------------------------------------------------------------
// CAM

template <typename T>
std::vector<double> class_activation(const Tensor<T>& f, const Tensor<T>& w, int class_index) {
  if (f.rank() != 3 || f.dim(0) != 1 || w.rank() != 2 || w.dim(0) != f.dim(2)) {
    throw ShapeError("class activation needs features (1, L, D) and weights (D, K)");
  }
  if (class_index < 0 || static_cast<std::size_t>(class_index) >= w.dim(1)) {
    throw ConfigError("class index " + std::to_string(class_index) + " out of range");
  }
  const auto c = static_cast<std::size_t>(class_index);
  const std::size_t len = f.dim(1), d = f.dim(2);
  std::vector<double> out(len, 0.0);
  for (std::size_t t = 0; t < len; ++t) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      acc += static_cast<double>(w.at(k, c)) * static_cast<double>(f.at(0, t, k));
    }
    out[t] = acc;
  }
  return out;
}

template <typename T>
CamResult compute_cam(Network<T>& net, const ScanSegment& seg, int class_index,
                      std::size_t crop_length, std::optional<std::size_t> offset) {
  const auto classes = net.spec().num_classes;
  if (class_index < 0 || static_cast<std::size_t>(class_index) >= classes) {
    throw ConfigError("class index " + std::to_string(class_index) + " out of range");
  }
  if (crop_length > seg.length()) throw DataError("segment shorter than the crop length");
  CamResult r;
  r.class_index = class_index;
  r.offset = offset ? *offset : (seg.length() - crop_length) / 2;
  const ScanSegment crop = crop_at(seg, r.offset, crop_length);
  Tensor<T> x({1, crop_length, 2});
  std::copy(crop.samples.raw(), crop.samples.raw() + 2 * crop_length, x.raw());

  ForwardTrace<T> trace;
  const Tensor<T> logits = net.infer(x, &trace);
  r.activation = class_activation(trace.features, net.fc_weight().value(), class_index);
  const auto c = static_cast<std::size_t>(class_index);
  r.logit = static_cast<double>(logits.at(0, c));
  r.bias = static_cast<double>(net.fc_bias().value()[c]);
  r.upsampled = upsample_linear(r.activation, crop_length);
  return r;
}

std::vector<double> upsample_linear(std::span<const double> v, std::size_t out_length) {
  if (v.empty() || out_length == 0) throw ConfigError("upsampling needs non-empty input and output");
  std::vector<double> out(out_length);
  const double scale = static_cast<double>(v.size()) / static_cast<double>(out_length);
  for (std::size_t i = 0; i < out_length; ++i) {
    const double pos = std::clamp((static_cast<double>(i) + 0.5) * scale - 0.5, 0.0,
                                  static_cast<double>(v.size() - 1));
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double a = pos - static_cast<double>(lo);
    out[i] = (1.0 - a) * v[lo] + a * v[hi];
  }
  return out;
}

std::size_t first_peak(const ScanSegment& seg, double fraction) {
  const std::size_t n = seg.length();
  std::vector<double> mag(n);
  for (std::size_t t = 0; t < n; ++t) mag[t] = std::hypot(seg.samples.at(t, 0), seg.samples.at(t, 1));
  const double threshold = fraction * *std::max_element(mag.begin(), mag.end());
  for (std::size_t t = 0; t < n; ++t) {
    if (mag[t] < threshold) continue;
    const bool left = t == 0 || mag[t] >= mag[t - 1];
    const bool right = t + 1 == n || mag[t] >= mag[t + 1];
    if (left && right) return t;
  }
  return 0;
}

void export_cams(std::span<const CamExportItem> items, const std::filesystem::path& path,
                 bool align_peaks) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "sample,class,t,aligned_t,in_phase,quadrature,activation\n" << std::setprecision(9);
  for (const auto& item : items) {
    if (!item.segment) throw ConfigError("CAM export item without a segment");
    const auto& cam = item.cam;
    const ScanSegment crop = crop_at(*item.segment, cam.offset, cam.upsampled.size());
    const long shift = align_peaks ? static_cast<long>(first_peak(crop)) : 0;
    for (std::size_t t = 0; t < crop.length(); ++t) {
      out << item.sample << ',' << class_name(cam.class_index) << ',' << t << ','
          << static_cast<long>(t) - shift << ',' << crop.samples.at(t, 0) << ','
          << crop.samples.at(t, 1) << ',' << cam.upsampled[t] << '\n';
    }
  }
  if (!out) throw DataError("write failed for " + path.string());
}

template std::vector<double> predict_crops<float>(Network<float>&, const ScanSegment&, Rng&,
                                                  const PredictOptions&);
template std::vector<double> predict_crops<double>(Network<double>&, const ScanSegment&, Rng&,
                                                   const PredictOptions&);
template EvalReport evaluate<float>(Network<float>&, const Dataset&, const EvalOptions&);
template EvalReport evaluate<double>(Network<double>&, const Dataset&, const EvalOptions&);
template std::vector<double> class_activation<float>(const TensorF&, const TensorF&, int);
template std::vector<double> class_activation<double>(const TensorD&, const TensorD&, int);
template CamResult compute_cam<float>(Network<float>&, const ScanSegment&, int, std::size_t,
                                      std::optional<std::size_t>);
template CamResult compute_cam<double>(Network<double>&, const ScanSegment&, int, std::size_t,
                                       std::optional<std::size_t>);

}  // namespace ectnet
