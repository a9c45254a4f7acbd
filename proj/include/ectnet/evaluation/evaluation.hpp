#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ectnet/architectures/network.hpp"
#include "ectnet/data/dataset.hpp"
#include "json.hpp"

namespace ectnet {

enum class CropAveraging { Probabilities, Logits };

struct PredictOptions {
  std::size_t n_crops = 10;
  std::size_t crop_length = 224;
  CropAveraging averaging = CropAveraging::Probabilities;
  std::optional<std::size_t> fixed_offset;  // every crop starts here instead of a random offset
};

/// Averaged class probabilities over `n_crops` crops of one segment. All crops
/// go through the network as one inference batch.
template <typename T>
std::vector<double> predict_crops(Network<T>& net, const ScanSegment& seg, Rng& rng,
                                  const PredictOptions& options = {});

/// Index of the largest entry; ties go to the lowest index.
int argmax(std::span<const double> values);

struct SamplePrediction {
  int truth = 0;
  int predicted = 0;
  std::vector<double> probabilities;
};

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;  // [truth][prediction]

struct EvalReport {
  double top1_accuracy = 0.0;
  double tolerance_accuracy = 0.0;
  double mean_loss = 0.0;  // cross-entropy of the averaged probabilities
  ConfusionMatrix confusion;
  std::vector<SamplePrediction> per_sample;
  std::size_t n_crops = 10;
  CropAveraging averaging = CropAveraging::Probabilities;

  std::vector<int> predictions() const;
  std::vector<int> truths() const;
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

struct EvalOptions {
  PredictOptions predict;
  std::uint64_t seed = 0;   // crop offsets of sample i come from stream ("eval.crop", i)
  unsigned threads = 1;     // 1 = sequential reference mode; results do not depend on it
};

/// Ten-crop evaluation of every segment. The network must not be modified concurrently.
template <typename T>
EvalReport evaluate(Network<T>& net, const Dataset& ds, const EvalOptions& options = {});

double top1_accuracy(std::span<const int> truths, std::span<const int> preds);
/// Exact matches, plus defect/defect pairs at most 0.1 mm apart.
double tolerance_accuracy(std::span<const int> truths, std::span<const int> preds);
ConfusionMatrix confusion_matrix(std::span<const int> truths, std::span<const int> preds);

void write_report_json(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_report_json(const std::filesystem::path& path);
void write_confusion_csv(const ConfusionMatrix& m, const std::filesystem::path& path);

/// Complex-plane export of every sample predicted as `predicted_class`, with a
/// column flagging correct predictions. An empty selection writes only the header.
void export_misclassified(const EvalReport& report, const Dataset& ds, int predicted_class,
                          const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Class activation mapping

struct CamResult {
  std::vector<double> activation;  // raw map over final-stage positions
  std::vector<double> upsampled;   // linear interpolation to the crop length
  int class_index = 0;
  double logit = 0.0;
  double bias = 0.0;
  std::size_t offset = 0;  // crop offset into the segment
};

/// Raw map sum_k w[k, c] f(0, t, k) for features (1, L, D) and head weights (D, K).
template <typename T>
std::vector<double> class_activation(const Tensor<T>& features, const Tensor<T>& fc_weight,
                                     int class_index);

/// CAM_c(t) = sum_k w[k, c] f_k(t) over the features entering the global
/// average pool, computed on the centre crop (offset (T - L) / 2) unless an
/// offset is given. mean_t CAM_c(t) equals logit_c - bias_c.
template <typename T>
CamResult compute_cam(Network<T>& net, const ScanSegment& seg, int class_index,
                      std::size_t crop_length = 224,
                      std::optional<std::size_t> offset = std::nullopt);

/// Linear interpolation with sample centres aligned ((i + 0.5) * n / m - 0.5).
std::vector<double> upsample_linear(std::span<const double> values, std::size_t out_length);

/// Index of the first local maximum of |x| reaching `fraction` of the global maximum.
std::size_t first_peak(const ScanSegment& seg, double fraction = 0.5);

struct CamExportItem {
  std::size_t sample = 0;
  const ScanSegment* segment = nullptr;  // the full segment the CAM was computed on
  CamResult cam;
};

/// Rows (sample, t, aligned_t, in_phase, quadrature, activation) over each
/// crop. aligned_t = t - first_peak(crop) when `align_peaks`, else t.
void export_cams(std::span<const CamExportItem> items, const std::filesystem::path& path,
                 bool align_peaks = false);

}  // namespace ectnet
