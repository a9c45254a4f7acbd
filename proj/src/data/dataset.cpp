#include "ectnet/data/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "ectnet/error.hpp"

namespace ectnet {

// ---------------------------------------------------------------------------
// Labels

Label Label::from_index(int index) {
  if (index < 0 || index >= kNumClasses) {
    throw DataError("class index " + std::to_string(index) + " outside [0, 20)");
  }
  if (index == 0) return {LabelKind::Normal, 0};
  if (index == 1) return {LabelKind::LiftOff, 0};
  return {LabelKind::Defect, index + 1};
}

Label Label::defect(double depth_mm) {
  const int tenths = static_cast<int>(std::lround(depth_mm * 10.0));
  if (tenths < 3 || tenths > 20 || std::abs(tenths / 10.0 - depth_mm) > 1e-9) {
    throw DataError("defect depth must be on the 0.1 mm grid in [0.3, 2.0]");
  }
  return {LabelKind::Defect, tenths};
}

int Label::index() const {
  switch (kind) {
    case LabelKind::Normal: return 0;
    case LabelKind::LiftOff: return 1;
    case LabelKind::Defect: return depth_tenths - 1;
  }
  return -1;
}

std::string Label::name() const {
  switch (kind) {
    case LabelKind::Normal: return "normal";
    case LabelKind::LiftOff: return "liftoff";
    case LabelKind::Defect: {
      std::ostringstream os;
      os << std::fixed << std::setprecision(1) << depth_mm() << "mm";
      return os.str();
    }
  }
  return "?";
}

std::string class_name(int index) { return Label::from_index(index).name(); }

std::string_view to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::Unsplit: return "unsplit";
    case SplitTag::Train: return "train";
    case SplitTag::Validation: return "validation";
    case SplitTag::Test: return "test";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Dataset

std::size_t Dataset::length() const {
  if (segments.empty()) throw DataError("dataset is empty");
  const std::size_t t = segments.front().length();
  for (const auto& s : segments) {
    if (s.length() != t) throw DataError("segments have differing lengths");
  }
  return t;
}

std::array<std::size_t, kNumClasses> Dataset::class_histogram() const {
  std::array<std::size_t, kNumClasses> h{};
  for (const auto& s : segments) h.at(static_cast<std::size_t>(s.label))++;
  return h;
}

std::vector<int> Dataset::volunteers() const {
  std::set<int> ids;
  for (const auto& s : segments) ids.insert(s.meta.volunteer);
  return {ids.begin(), ids.end()};
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(segments.size());
  for (const auto& s : segments) out.push_back(s.label);
  return out;
}

std::string Dataset::fingerprint() const {
  std::uint64_t h = fnv1a64(std::string_view("ectnet-dataset"));
  for (const auto& s : segments) {
    const std::int64_t header[] = {s.label, s.meta.volunteer, s.meta.angle, s.meta.direction,
                                   s.meta.repeat, static_cast<std::int64_t>(s.samples.size())};
    h = fnv1a64(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(header),
                                               sizeof header),
                h);
    h = fnv1a64(std::span<const unsigned char>(
                    reinterpret_cast<const unsigned char*>(s.samples.raw()),
                    s.samples.size() * sizeof(float)),
                h);
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// ---------------------------------------------------------------------------
// Container

namespace {

constexpr char kContainerMagic[8] = {'M', 'D', 'D', 'E', 'C', 'T', '0', '1'};

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint64_t read_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

// Builds segments from a dense 7-axis array; `value(i)` returns flat element i.
template <typename Fn>
Dataset from_grid(const std::array<std::uint64_t, 7>& e, Fn value) {
  if (e[4] != static_cast<std::uint64_t>(kNumClasses)) {
    throw DataError("class axis has extent " + std::to_string(e[4]) + ", expected 20");
  }
  if (e[6] != 2) throw DataError("channel axis has extent " + std::to_string(e[6]) + ", expected 2");
  for (auto x : e) {
    if (x == 0) throw DataError("container extents must be positive");
  }
  const std::size_t t_len = e[5];
  Dataset ds;
  std::size_t flat = 0;
  for (std::uint64_t v = 0; v < e[0]; ++v)
    for (std::uint64_t a = 0; a < e[1]; ++a)
      for (std::uint64_t d = 0; d < e[2]; ++d)
        for (std::uint64_t r = 0; r < e[3]; ++r)
          for (std::uint64_t c = 0; c < e[4]; ++c) {
            ScanSegment seg;
            seg.label = static_cast<int>(c);
            seg.meta = {static_cast<int>(v), static_cast<int>(a), static_cast<int>(d),
                        static_cast<int>(r)};
            seg.samples = TensorF({t_len, 2});
            for (std::size_t i = 0; i < 2 * t_len; ++i) {
              const float x = value(flat++);
              if (!std::isfinite(x)) {
                throw DataError("non-finite sample in segment (volunteer " + std::to_string(v) +
                                ", class " + std::to_string(c) + ")");
              }
              seg.samples[i] = x;
            }
            ds.segments.push_back(std::move(seg));
          }
  return ds;
}

std::uint64_t grid_elements(const std::array<std::uint64_t, 7>& e) {
  std::uint64_t n = 1;
  for (auto x : e) {
    if (x != 0 && n > UINT64_MAX / x) throw DataError("container extents overflow");
    n *= x;
  }
  return n;
}

}  // namespace

Dataset load_mddect(const std::filesystem::path& path) {
  const auto buf = read_file(path);
  if (buf.size() < 8 + 56 || std::memcmp(buf.data(), kContainerMagic, 8) != 0) {
    throw DataError(path.string() + " is not an MDDECT01 container");
  }
  std::array<std::uint64_t, 7> e{};
  for (int i = 0; i < 7; ++i) e[i] = read_u64(buf.data() + 8 + 8 * i);
  const std::uint64_t n = grid_elements(e);
  const std::uint64_t payload = buf.size() - 64;
  if (n > payload / 4 || payload != n * 4) {
    throw DataError("container payload is " + std::to_string(payload) + " bytes but the header (" +
                    std::to_string(e[0]) + "," + std::to_string(e[1]) + "," + std::to_string(e[2]) +
                    "," + std::to_string(e[3]) + "," + std::to_string(e[4]) + "," +
                    std::to_string(e[5]) + "," + std::to_string(e[6]) + ") requires " +
                    std::to_string(n * 4) + " (truncated or inconsistent file)");
  }
  const unsigned char* p = buf.data() + 64;
  return from_grid(e, [p](std::size_t i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[4 * i + b]) << (8 * b);
    return std::bit_cast<float>(bits);
  });
}

void save_mddect(const Dataset& ds, const std::filesystem::path& path) {
  if (ds.empty()) throw DataError("cannot save an empty dataset");
  const std::size_t t_len = ds.length();
  int nv = 0, na = 0, nd = 0, nr = 0;
  for (const auto& s : ds.segments) {
    nv = std::max(nv, s.meta.volunteer + 1);
    na = std::max(na, s.meta.angle + 1);
    nd = std::max(nd, s.meta.direction + 1);
    nr = std::max(nr, s.meta.repeat + 1);
  }
  const std::size_t cells = static_cast<std::size_t>(nv) * na * nd * nr * kNumClasses;
  if (cells != ds.size()) {
    throw DataError("dataset does not cover a full (volunteer, angle, direction, repeat, class) grid");
  }
  std::vector<const ScanSegment*> grid(cells, nullptr);
  for (const auto& s : ds.segments) {
    const auto& m = s.meta;
    if (m.volunteer < 0 || m.angle < 0 || m.direction < 0 || m.repeat < 0) {
      throw DataError("negative metadata index");
    }
    const std::size_t idx =
        (((static_cast<std::size_t>(m.volunteer) * na + m.angle) * nd + m.direction) * nr +
         m.repeat) * kNumClasses + static_cast<std::size_t>(s.label);
    if (grid[idx]) throw DataError("duplicate grid cell in dataset");
    grid[idx] = &s;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kContainerMagic, 8);
  for (std::uint64_t x : {std::uint64_t(nv), std::uint64_t(na), std::uint64_t(nd), std::uint64_t(nr),
                          std::uint64_t(kNumClasses), std::uint64_t(t_len), std::uint64_t(2)}) {
    put_u64(out, x);
  }
  std::vector<unsigned char> bytes(t_len * 2 * 4);
  for (const ScanSegment* s : grid) {
    for (std::size_t i = 0; i < 2 * t_len; ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(s->samples[i]);
      for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  if (!out) throw DataError("write failed for " + path.string());
}

Dataset import_npy(const std::filesystem::path& path) {
  const auto buf = read_file(path);
  static const unsigned char magic[] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
  if (buf.size() < 10 || std::memcmp(buf.data(), magic, 6) != 0) {
    throw DataError(path.string() + " is not a .npy file");
  }
  const int major = buf[6];
  std::size_t header_len = 0, offset = 0;
  if (major == 1) {
    header_len = buf[8] | (static_cast<std::size_t>(buf[9]) << 8);
    offset = 10;
  } else {
    if (buf.size() < 12) throw DataError(".npy header truncated");
    header_len = buf[8] | (static_cast<std::size_t>(buf[9]) << 8) |
                 (static_cast<std::size_t>(buf[10]) << 16) | (static_cast<std::size_t>(buf[11]) << 24);
    offset = 12;
  }
  if (offset + header_len > buf.size()) throw DataError(".npy header truncated");
  const std::string header(buf.begin() + static_cast<long>(offset),
                           buf.begin() + static_cast<long>(offset + header_len));
  auto field = [&header](const std::string& key) {
    const auto k = header.find("'" + key + "'");
    if (k == std::string::npos) throw DataError(".npy header lacks '" + key + "'");
    return header.substr(header.find(':', k) + 1);
  };
  const std::string descr = field("descr");
  const bool f4 = descr.find("<f4") != std::string::npos;
  const bool f8 = descr.find("<f8") != std::string::npos;
  if (!f4 && !f8) throw DataError(".npy dtype must be little-endian float32 or float64");
  if (field("fortran_order").find("False") == std::string::npos) {
    throw DataError(".npy array must be in C order");
  }
  std::string shape_text = field("shape");
  shape_text = shape_text.substr(shape_text.find('(') + 1);
  shape_text = shape_text.substr(0, shape_text.find(')'));
  std::vector<std::uint64_t> dims;
  std::stringstream ss(shape_text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.find_first_not_of(" ") == std::string::npos) continue;
    dims.push_back(std::stoull(item));
  }
  if (dims.size() != 7) {
    throw DataError(".npy array has rank " + std::to_string(dims.size()) + ", expected 7");
  }
  std::array<std::uint64_t, 7> e{};
  std::copy(dims.begin(), dims.end(), e.begin());
  const std::size_t width = f4 ? 4 : 8;
  const std::uint64_t n = grid_elements(e);
  const std::size_t data_start = offset + header_len;
  if ((buf.size() - data_start) / width < n) throw DataError(".npy payload truncated");
  const unsigned char* p = buf.data() + data_start;
  return from_grid(e, [p, f4](std::size_t i) {
    if (f4) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[4 * i + b]) << (8 * b);
      return std::bit_cast<float>(bits);
    }
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[8 * i + b]) << (8 * b);
    return static_cast<float>(std::bit_cast<double>(bits));
  });
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char head[8] = {};
  in.read(head, 8);
  if (std::memcmp(head, kContainerMagic, 8) == 0) return load_mddect(path);
  if (static_cast<unsigned char>(head[0]) == 0x93 && std::memcmp(head + 1, "NUMPY", 5) == 0) {
    return import_npy(path);
  }
  throw DataError(path.string() + ": unrecognised dataset format (expected MDDECT01 or .npy)");
}

// ---------------------------------------------------------------------------
// Transforms

Dataset decimate(const Dataset& ds, std::size_t factor, bool lowpass) {
  if (factor == 0) throw ConfigError("decimation factor must be positive");
  Dataset out;
  out.tag = ds.tag;
  out.segments.reserve(ds.size());
  for (const auto& s : ds.segments) {
    const std::size_t t = s.length();
    if (t % factor != 0) {
      throw DataError("segment length " + std::to_string(t) + " is not divisible by " +
                      std::to_string(factor));
    }
    ScanSegment d;
    d.label = s.label;
    d.meta = s.meta;
    d.samples = TensorF({t / factor, 2});
    for (std::size_t i = 0; i < t / factor; ++i) {
      for (std::size_t c = 0; c < 2; ++c) {
        if (!lowpass) {
          d.samples.at(i, c) = s.samples.at(i * factor, c);
        } else {
          double acc = 0.0;
          for (std::size_t k = 0; k < factor; ++k) acc += s.samples.at(i * factor + k, c);
          d.samples.at(i, c) = static_cast<float>(acc / static_cast<double>(factor));
        }
      }
    }
    out.segments.push_back(std::move(d));
  }
  return out;
}

Splits split_by_volunteer(const Dataset& ds, std::span<const int> test_ids,
                          std::span<const int> validation_ids) {
  const std::set<int> test(test_ids.begin(), test_ids.end());
  const std::set<int> val(validation_ids.begin(), validation_ids.end());
  if (test.size() != test_ids.size() || val.size() != validation_ids.size()) {
    throw ConfigError("volunteer id lists contain duplicates");
  }
  for (int v : val) {
    if (test.count(v)) {
      throw ConfigError("volunteer " + std::to_string(v) + " is in both test and validation sets");
    }
  }
  Splits s;
  s.train.tag = SplitTag::Train;
  s.validation.tag = SplitTag::Validation;
  s.test.tag = SplitTag::Test;
  for (const auto& seg : ds.segments) {
    const int v = seg.meta.volunteer;
    if (test.count(v)) {
      s.test.segments.push_back(seg);
    } else if (val.count(v)) {
      s.validation.segments.push_back(seg);
    } else {
      s.train.segments.push_back(seg);
    }
  }
  return s;
}

VolunteerChoice choose_volunteers(std::span<const int> volunteers, std::size_t n_test,
                                  std::size_t n_validation, Rng& rng) {
  if (n_test + n_validation > volunteers.size()) {
    throw ConfigError("cannot choose " + std::to_string(n_test) + " test and " +
                      std::to_string(n_validation) + " validation volunteers from " +
                      std::to_string(volunteers.size()));
  }
  std::vector<int> pool(volunteers.begin(), volunteers.end());
  std::sort(pool.begin(), pool.end());
  rng.shuffle(pool.begin(), pool.end());
  VolunteerChoice c;
  c.test.assign(pool.begin(), pool.begin() + static_cast<long>(n_test));
  // Validation volunteers are drawn from the remaining (training) volunteers.
  std::vector<int> rest(pool.begin() + static_cast<long>(n_test), pool.end());
  rng.shuffle(rest.begin(), rest.end());
  c.validation.assign(rest.begin(), rest.begin() + static_cast<long>(n_validation));
  std::sort(c.test.begin(), c.test.end());
  std::sort(c.validation.begin(), c.validation.end());
  return c;
}

NormStats compute_norm_stats(const Dataset& train) {
  if (train.empty()) throw DataError("cannot compute normalisation statistics of an empty dataset");
  std::array<double, 2> sum{0, 0};
  std::size_t count = 0;
  for (const auto& s : train.segments) {
    for (std::size_t t = 0; t < s.length(); ++t) {
      sum[0] += s.samples.at(t, 0);
      sum[1] += s.samples.at(t, 1);
    }
    count += s.length();
  }
  NormStats st;
  std::array<double, 2> ss{0, 0};
  for (int c = 0; c < 2; ++c) st.mu[c] = sum[c] / static_cast<double>(count);
  for (const auto& s : train.segments) {
    for (std::size_t t = 0; t < s.length(); ++t) {
      for (int c = 0; c < 2; ++c) {
        const double d = s.samples.at(t, c) - st.mu[c];
        ss[c] += d * d;
      }
    }
  }
  for (int c = 0; c < 2; ++c) {
    st.sigma[c] = std::sqrt(ss[c] / static_cast<double>(count));
    if (!(st.sigma[c] > 0.0) || !std::isfinite(st.sigma[c])) {
      throw DataError("channel " + std::to_string(c) + " has zero standard deviation");
    }
  }
  return st;
}

Dataset apply_znorm(const Dataset& ds, const NormStats& stats) {
  for (double s : stats.sigma) {
    if (!(s > 0.0)) throw ConfigError("normalisation sigma must be positive");
  }
  Dataset out = ds;
  for (auto& s : out.segments) {
    for (std::size_t t = 0; t < s.length(); ++t) {
      for (int c = 0; c < 2; ++c) {
        auto& v = s.samples.at(t, c);
        v = static_cast<float>((static_cast<double>(v) - stats.mu[c]) / stats.sigma[c]);
      }
    }
  }
  return out;
}

ScanSegment crop_at(const ScanSegment& seg, std::size_t offset, std::size_t out_len) {
  if (out_len == 0 || offset + out_len > seg.length()) {
    throw ConfigError("crop [" + std::to_string(offset) + ", " + std::to_string(offset + out_len) +
                      ") exceeds segment length " + std::to_string(seg.length()));
  }
  ScanSegment c;
  c.label = seg.label;
  c.meta = seg.meta;
  c.samples = TensorF({out_len, 2});
  std::copy_n(seg.samples.raw() + 2 * offset, 2 * out_len, c.samples.raw());
  return c;
}

std::size_t random_crop_offset(std::size_t length, std::size_t out_len, Rng& rng) {
  if (out_len > length) {
    throw ConfigError("crop length " + std::to_string(out_len) + " exceeds segment length " +
                      std::to_string(length));
  }
  return static_cast<std::size_t>(rng.below(length - out_len + 1));
}

ScanSegment random_crop(const ScanSegment& seg, std::size_t out_len, Rng& rng) {
  return crop_at(seg, random_crop_offset(seg.length(), out_len, rng), out_len);
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SynthConfig::validate() const {
  if (volunteers <= 0 || angles <= 0 || directions <= 0 || repeats <= 0 || length < 16) {
    throw ConfigError("synthetic dataset extents must be positive (length >= 16)");
  }
  if (directions > 2) throw ConfigError("synthetic dataset supports at most 2 directions");
  for (int c : classes) {
    if (c < 0 || c >= kNumClasses) throw ConfigError("synthetic class index out of range");
  }
  if (std::set<int>(classes.begin(), classes.end()).size() != classes.size()) {
    throw ConfigError("synthetic class list has duplicates");
  }
  for (double k : {noise, drift, gain_jitter, speed_jitter, position_jitter, amplitude_jitter,
                   phase_jitter}) {
    if (k < 0.0 || !std::isfinite(k)) throw ConfigError("synthetic noise/jitter knobs must be >= 0");
  }
  if (pulse_width <= 0.0 || pulse_separation < 0.0) {
    throw ConfigError("synthetic pulse width must be positive");
  }
}

Dataset synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<int> classes = cfg.classes;
  if (classes.empty()) {
    for (int c = 0; c < kNumClasses; ++c) classes.push_back(c);
  }
  const double len = static_cast<double>(cfg.length);

  struct Volunteer {
    double gain, speed;
  };
  std::vector<Volunteer> vols;
  for (int v = 0; v < cfg.volunteers; ++v) {
    Rng r = Rng::derive(cfg.seed, "synth.volunteer", static_cast<std::uint64_t>(v));
    const double g = std::max(0.2, 1.0 + cfg.gain_jitter * r.normal());
    const double s = std::max(0.2, 1.0 + cfg.speed_jitter * r.normal());
    vols.push_back({g, s});
  }

  Dataset ds;
  std::uint64_t index = 0;
  for (int v = 0; v < cfg.volunteers; ++v)
    for (int a = 0; a < cfg.angles; ++a)
      for (int d = 0; d < cfg.directions; ++d)
        for (int rep = 0; rep < cfg.repeats; ++rep)
          for (int c : classes) {
            Rng r = Rng::derive(cfg.seed, "synth.segment", index++);
            const Label label = Label::from_index(c);
            double amp = 0.0, phase = 0.0, width = cfg.pulse_width, sep = cfg.pulse_separation;
            if (label.kind == LabelKind::Defect) {
              const double u = (label.depth_mm() - 0.3) / 1.7;
              amp = cfg.defect_amplitude_min + u * (cfg.defect_amplitude_max - cfg.defect_amplitude_min);
              phase = cfg.defect_phase_min + u * (cfg.defect_phase_max - cfg.defect_phase_min);
            } else if (label.kind == LabelKind::LiftOff) {
              amp = cfg.liftoff_amplitude;
              phase = cfg.liftoff_phase;
              width *= 2.0;
              sep *= 1.5;
            }
            // Draw every random quantity unconditionally so streams stay aligned.
            const double amp_j = 1.0 + cfg.amplitude_jitter * r.normal();
            const double phase_j = cfg.phase_jitter * r.normal();
            const double centre_j = cfg.position_jitter * r.normal();
            const double drift_phase = r.uniform(0.0, 2.0 * std::numbers::pi);
            const double drift_i = cfg.drift * r.normal();
            const double drift_q = cfg.drift * r.normal();

            const double a_total = amp * vols[v].gain * amp_j;
            const double th = phase + phase_j;
            const double w = width * vols[v].speed * len;
            const double s = sep * vols[v].speed * len;
            const double centre = (0.5 + std::clamp(centre_j, -0.2, 0.2)) * len;
            const double sign = d == 1 ? -1.0 : 1.0;

            ScanSegment seg;
            seg.label = c;
            seg.meta = {v, a, d, rep};
            seg.samples = TensorF({cfg.length, 2});
            for (std::size_t t = 0; t < cfg.length; ++t) {
              const double x = static_cast<double>(t);
              const double lead = std::exp(-0.5 * std::pow((x - (centre - s)) / w, 2));
              const double trail = std::exp(-0.5 * std::pow((x - (centre + s)) / w, 2));
              const double pulse = sign * (lead - trail) * a_total;
              const double slow = std::sin(2.0 * std::numbers::pi * x / len + drift_phase);
              double i_val = pulse * std::cos(th) + drift_i * slow;
              double q_val = pulse * std::sin(th) + drift_q * slow;
              i_val += cfg.noise * r.normal();
              q_val += cfg.noise * r.normal();
              seg.samples.at(t, 0) = static_cast<float>(i_val);
              seg.samples.at(t, 1) = static_cast<float>(q_val);
            }
            ds.segments.push_back(std::move(seg));
          }
  return ds;
}

// ---------------------------------------------------------------------------
// Export

void export_complex_plane(const Dataset& ds, const std::filesystem::path& path,
                          const PlaneExportOptions& o) {
  if (o.predictions && o.predictions->size() != ds.size()) {
    throw ConfigError("prediction count does not match dataset size");
  }
  if (o.sample_ids && o.sample_ids->size() != ds.size()) {
    throw ConfigError("sample id count does not match dataset size");
  }
  if (o.flag_correct && !o.predictions) throw ConfigError("correct flags need predictions");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  const char sep = o.delimiter;
  out << "sample" << sep << "label";
  if (o.predictions) out << sep << "predicted";
  if (o.flag_correct) out << sep << "correct";
  out << sep << "t" << sep << "in_phase" << sep << "quadrature\n";
  out << std::setprecision(9);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& s = ds.segments[i];
    const std::size_t id = o.sample_ids ? (*o.sample_ids)[i] : i;
    std::string prefix = std::to_string(id) + sep + class_name(s.label);
    if (o.predictions) prefix += sep + class_name((*o.predictions)[i]);
    if (o.flag_correct) prefix += sep + std::string((*o.predictions)[i] == s.label ? "1" : "0");
    for (std::size_t t = 0; t < s.length(); ++t) {
      out << prefix << sep << t << sep << s.samples.at(t, 0) << sep << s.samples.at(t, 1) << '\n';
    }
  }
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace ectnet
