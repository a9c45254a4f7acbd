#pragma once

// Versioned binary checkpoint:
//
//   "ECTNCKPT"  u32 version  u64 n  <n bytes JSON descriptor>
//   u64 array_count, then per array:
//     u32 name_len <name>  u8 dtype (1 = f32, 2 = f64)  u32 rank  u64 dims[rank]  payload
//   u64 FNV-1a checksum of everything before it
//
// All integers and payloads are little-endian. The descriptor holds the
// network spec, the scalar type and free-form metadata.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ectnet/architectures/network.hpp"
#include "ectnet/error.hpp"
#include "json.hpp"

namespace ectnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public DataError {
 public:
  enum class Kind { Corrupt, Version, Mismatch, Io };
  CheckpointError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

enum class Dtype : std::uint8_t { F32 = 1, F64 = 2 };

struct NamedArray {
  std::string name;
  Dtype dtype = Dtype::F32;
  Shape shape;
  std::vector<double> values;  // exact for both dtypes

  template <typename T>
  Tensor<T> to_tensor() const {
    std::vector<T> v(values.begin(), values.end());
    return Tensor<T>(shape, std::move(v));
  }
  template <typename T>
  static NamedArray from_tensor(std::string name, const Tensor<T>& t) {
    NamedArray a;
    a.name = std::move(name);
    a.dtype = sizeof(T) == 4 ? Dtype::F32 : Dtype::F64;
    a.shape = t.shape();
    a.values.assign(t.data().begin(), t.data().end());
    return a;
  }
};

struct Checkpoint {
  NetworkSpec spec;
  std::string scalar_type;  // "float32" | "float64"
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray* find(std::string_view name) const;
};

/// Snapshot of parameters and BN running statistics.
template <typename T>
Checkpoint make_checkpoint(const Network<T>& net, nlohmann::json meta = nlohmann::json::object());

/// Atomic write (temporary file, then rename).
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies parameters and buffers into `net`; arrays whose name starts with
/// "optimizer." are ignored. Missing, extra or mis-shaped arrays are a
/// Mismatch error and leave `net` untouched.
template <typename T>
void load_into(Network<T>& net, const Checkpoint& ckpt);

template <typename T>
void save_checkpoint(const Network<T>& net, const std::filesystem::path& path,
                     nlohmann::json meta = nlohmann::json::object()) {
  write_checkpoint(make_checkpoint(net, std::move(meta)), path);
}

/// Rebuilds the network described by the checkpoint and loads its state.
template <typename T>
Network<T> load_checkpoint(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  Network<T> net(ckpt.spec);
  load_into(net, ckpt);
  return net;
}

}  // namespace ectnet
