#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ectnet/numerics/rng.hpp"
#include "ectnet/numerics/tensor.hpp"

namespace ectnet {

inline constexpr int kNumClasses = 20;

enum class LabelKind { Normal, LiftOff, Defect };

/// Class index order: 0 Normal, 1 LiftOff, 2..19 defects 0.3 mm .. 2.0 mm.
struct Label {
  LabelKind kind = LabelKind::Normal;
  int depth_tenths = 0;  // 3..20 for defects, 0 otherwise

  static Label from_index(int index);
  static Label defect(double depth_mm);
  int index() const;
  double depth_mm() const { return depth_tenths / 10.0; }
  bool is_defect() const { return kind == LabelKind::Defect; }
  /// "normal", "liftoff" or e.g. "1.4mm".
  std::string name() const;

  friend bool operator==(const Label&, const Label&) = default;
};

std::string class_name(int index);

struct SegmentMeta {
  int volunteer = 0;  // 0..29 in the full container
  int angle = 0;      // 0..7
  int direction = 0;  // 0..1
  int repeat = 0;     // 0..4

  friend bool operator==(const SegmentMeta&, const SegmentMeta&) = default;
};

struct ScanSegment {
  TensorF samples;  // (T, 2): in-phase, quadrature
  int label = 0;    // class index
  SegmentMeta meta;

  std::size_t length() const { return samples.dim(0); }
};

enum class SplitTag { Unsplit, Train, Validation, Test };
std::string_view to_string(SplitTag tag);

struct Dataset {
  std::vector<ScanSegment> segments;
  SplitTag tag = SplitTag::Unsplit;

  std::size_t size() const { return segments.size(); }
  bool empty() const { return segments.empty(); }
  /// Common segment length; throws DataError if segments disagree or the set is empty.
  std::size_t length() const;
  std::array<std::size_t, kNumClasses> class_histogram() const;
  std::vector<int> volunteers() const;  // sorted, unique
  std::vector<int> labels() const;
  /// Content hash over samples, labels and metadata (hex).
  std::string fingerprint() const;
};

// ---------------------------------------------------------------------------
// Container: "MDDECT01", 7 little-endian u64 extents
// (volunteer, angle, direction, repeat, class, T, 2), then row-major f32 LE.

Dataset load_mddect(const std::filesystem::path& path);
/// Writes a dataset that covers a full (volunteer, angle, direction, repeat,
/// class) grid exactly once; volunteers are stored in ascending id order and
/// their ids must be 0..V-1.
void save_mddect(const Dataset& ds, const std::filesystem::path& path);

/// Reads a NumPy .npy array shaped (V, A, D, R, 20, T, 2), float32 or float64,
/// C order; the import seam for externally distributed files.
Dataset import_npy(const std::filesystem::path& path);

/// Dispatches on the file signature (container or .npy).
Dataset load_dataset(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Transforms

/// Keeps every factor-th sample from index 0. With `lowpass`, each kept sample
/// is first replaced by the mean of the `factor` samples starting at it.
Dataset decimate(const Dataset& ds, std::size_t factor = 5, bool lowpass = false);

struct Splits {
  Dataset train, validation, test;
};

/// Partitions by volunteer id. Id sets must be disjoint; the train split
/// receives every other volunteer.
Splits split_by_volunteer(const Dataset& ds, std::span<const int> test_ids,
                          std::span<const int> validation_ids);

struct VolunteerChoice {
  std::vector<int> test;
  std::vector<int> validation;
};

/// Seeded choice of `n_test` test volunteers, then `n_validation` validation
/// volunteers from the remainder (both sorted).
VolunteerChoice choose_volunteers(std::span<const int> volunteers, std::size_t n_test,
                                  std::size_t n_validation, Rng& rng);

struct NormStats {
  std::array<double, 2> mu{0.0, 0.0};
  std::array<double, 2> sigma{1.0, 1.0};
};

/// Per-channel mean and population standard deviation over all samples and time steps.
NormStats compute_norm_stats(const Dataset& train);
Dataset apply_znorm(const Dataset& ds, const NormStats& stats);

/// Window [offset, offset + out_len) of a segment.
ScanSegment crop_at(const ScanSegment& seg, std::size_t offset, std::size_t out_len);
/// Offset uniform over {0, ..., T - out_len}.
std::size_t random_crop_offset(std::size_t length, std::size_t out_len, Rng& rng);
ScanSegment random_crop(const ScanSegment& seg, std::size_t out_len, Rng& rng);

// ---------------------------------------------------------------------------
// Synthetic generator

/// Desk-scale stand-in for the measured scans.
///
/// Defect classes emit a pair of opposite-sign Gaussian pulses whose amplitude
/// and I/Q phase grow monotonically with depth; scanning direction 1 swaps the
/// pulse order. Lift-off emits a larger, broader pulse pair at a distinct
/// phase. Normal scans carry only noise and drift. Every segment also gets
/// white noise and a slow drift; volunteers differ in gain and scan speed.
struct SynthConfig {
  std::vector<int> classes;  // empty = all 20
  int volunteers = 15;
  int angles = 4;
  int directions = 2;
  int repeats = 2;
  std::size_t length = 1250;

  double noise = 0.05;              // white-noise std per channel
  double drift = 0.05;              // amplitude of the slow baseline drift
  double defect_amplitude_min = 0.6;  // amplitude at 0.3 mm
  double defect_amplitude_max = 2.0;  // amplitude at 2.0 mm
  double defect_phase_min = 0.3;      // radians at 0.3 mm
  double defect_phase_max = 2.6;      // radians at 2.0 mm
  double liftoff_amplitude = 3.5;
  double liftoff_phase = -0.9;
  double pulse_width = 0.03;        // Gaussian width as a fraction of the length
  double pulse_separation = 0.05;   // half distance between the two pulses (fraction)

  // jitter knobs (all zero => every segment of a class is identical up to noise)
  double gain_jitter = 0.08;        // per-volunteer relative gain std
  double speed_jitter = 0.08;       // per-volunteer relative width std
  double position_jitter = 0.06;    // per-segment pulse-centre std (fraction of length)
  double amplitude_jitter = 0.03;   // per-segment relative amplitude std
  double phase_jitter = 0.02;       // per-segment phase std (radians)

  std::uint64_t seed = 0;

  /// Throws ConfigError on non-positive extents, bad classes or negative knobs.
  void validate() const;
  std::size_t samples_per_class() const {
    return static_cast<std::size_t>(volunteers) * angles * directions * repeats;
  }
};

Dataset synth_generate(const SynthConfig& config);

// ---------------------------------------------------------------------------
// Plot export

struct PlaneExportOptions {
  std::optional<std::vector<int>> predictions;  // adds a "predicted" column
  bool flag_correct = false;                    // adds a "correct" column (needs predictions)
  std::optional<std::vector<std::size_t>> sample_ids;  // defaults to dataset positions
  char delimiter = ',';
};

/// Rows (sample, label, [predicted], [correct], t, in_phase, quadrature) with a header.
void export_complex_plane(const Dataset& ds, const std::filesystem::path& path,
                          const PlaneExportOptions& options = {});

}  // namespace ectnet
