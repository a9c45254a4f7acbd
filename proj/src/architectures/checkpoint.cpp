#include "ectnet/architectures/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "ectnet/numerics/rng.hpp"

namespace ectnet {

namespace {

constexpr char kMagic[8] = {'E', 'C', 'T', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint64_t kMaxRank = 8;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf.insert(buf.end(), c, c + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  std::vector<unsigned char> buf;
};

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> data) : data_(data) {}

  std::span<const unsigned char> take(std::size_t n) {
    if (n > data_.size() - pos_) {
      throw CheckpointError(CheckpointError::Kind::Corrupt,
                            "corrupt checkpoint: truncated at byte " + std::to_string(pos_));
    }
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename U>
  U uint() {
    auto s = take(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(s[i]) << (8 * i));
    return v;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const unsigned char> data_;
  std::size_t pos_ = 0;
};

[[noreturn]] void corrupt(const std::string& what) {
  throw CheckpointError(CheckpointError::Kind::Corrupt, "corrupt checkpoint: " + what);
}

}  // namespace

const NamedArray* Checkpoint::find(std::string_view name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

template <typename T>
Checkpoint make_checkpoint(const Network<T>& net, nlohmann::json meta) {
  Checkpoint c;
  c.spec = net.spec();
  c.scalar_type = sizeof(T) == 4 ? "float32" : "float64";
  c.meta = std::move(meta);
  for (const auto& [name, p] : net.named_parameters()) {
    c.arrays.push_back(NamedArray::from_tensor(name, p.value()));
  }
  for (const auto& [name, b] : net.named_buffers()) {
    c.arrays.push_back(NamedArray::from_tensor(name, *b));
  }
  return c;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.uint<std::uint32_t>(kCheckpointVersion);
  const nlohmann::json desc{
      {"spec", ckpt.spec.to_json()}, {"scalar_type", ckpt.scalar_type}, {"meta", ckpt.meta}};
  const std::string text = desc.dump();
  w.uint<std::uint64_t>(text.size());
  w.bytes(text.data(), text.size());
  w.uint<std::uint64_t>(ckpt.arrays.size());
  for (const auto& a : ckpt.arrays) {
    if (shape_size(a.shape) != a.values.size()) {
      throw ShapeError("checkpoint array '" + a.name + "' has inconsistent extent");
    }
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(a.name.size()));
    w.bytes(a.name.data(), a.name.size());
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(a.dtype));
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) w.uint<std::uint64_t>(d);
    for (double v : a.values) {
      if (a.dtype == Dtype::F32) {
        w.uint<std::uint32_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      } else {
        w.uint<std::uint64_t>(std::bit_cast<std::uint64_t>(v));
      }
    }
  }
  w.uint<std::uint64_t>(fnv1a64(std::span<const unsigned char>(w.buf)));

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
    if (!out) {
      throw CheckpointError(CheckpointError::Kind::Io, "cannot write checkpoint " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw CheckpointError(CheckpointError::Kind::Io,
                          "cannot move checkpoint into place at " + path.string() + ": " + ec.message());
  }
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::Io, "cannot open checkpoint " + path.string());
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                       std::istreambuf_iterator<char>());
  if (buf.size() < sizeof kMagic + 4 + 8) corrupt("file too short (" + std::to_string(buf.size()) + " bytes)");
  if (std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) corrupt("bad magic");

  Reader r(buf);
  r.take(sizeof kMagic);
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::Version,
                          "checkpoint format version " + std::to_string(version) +
                              " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  if (buf.size() < 8 + sizeof kMagic + 4) corrupt("missing checksum");
  const std::span<const unsigned char> body(buf.data(), buf.size() - 8);
  {
    Reader tail(std::span<const unsigned char>(buf).subspan(buf.size() - 8));
    if (tail.uint<std::uint64_t>() != fnv1a64(body)) corrupt("checksum mismatch (truncated or modified)");
  }
  Reader br(body);
  br.take(sizeof kMagic + 4);

  Checkpoint c;
  const auto desc_len = br.uint<std::uint64_t>();
  if (desc_len > br.remaining()) corrupt("descriptor length exceeds file size");
  const auto desc_bytes = br.take(desc_len);
  try {
    const auto desc = nlohmann::json::parse(desc_bytes.begin(), desc_bytes.end());
    c.spec = NetworkSpec::from_json(desc.at("spec"));
    c.scalar_type = desc.at("scalar_type").get<std::string>();
    c.meta = desc.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("bad descriptor: ") + e.what());
  } catch (const ConfigError& e) {
    corrupt(std::string("bad descriptor: ") + e.what());
  }

  const auto count = br.uint<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto name_len = br.uint<std::uint32_t>();
    const auto name = br.take(name_len);
    a.name.assign(name.begin(), name.end());
    const auto dtype = br.uint<std::uint8_t>();
    if (dtype != 1 && dtype != 2) corrupt("array '" + a.name + "' has unknown dtype");
    a.dtype = static_cast<Dtype>(dtype);
    const auto rank = br.uint<std::uint32_t>();
    if (rank == 0 || rank > kMaxRank) corrupt("array '" + a.name + "' has invalid rank");
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto e = br.uint<std::uint64_t>();
      if (e == 0 || e > br.remaining()) corrupt("array '" + a.name + "' has invalid extent");
      a.shape.push_back(e);
      n *= e;
    }
    const std::size_t width = a.dtype == Dtype::F32 ? 4 : 8;
    if (n > br.remaining() / width) corrupt("array '" + a.name + "' payload truncated");
    a.values.resize(n);
    for (auto& v : a.values) {
      v = a.dtype == Dtype::F32 ? static_cast<double>(std::bit_cast<float>(br.uint<std::uint32_t>()))
                                : std::bit_cast<double>(br.uint<std::uint64_t>());
    }
    c.arrays.push_back(std::move(a));
  }
  if (br.remaining() != 0) corrupt("trailing bytes after arrays");
  return c;
}

template <typename T>
void load_into(Network<T>& net, const Checkpoint& ckpt) {
  auto mismatch = [](const std::string& what) {
    throw CheckpointError(CheckpointError::Kind::Mismatch, "checkpoint mismatch: " + what);
  };
  std::map<std::string, const NamedArray*, std::less<>> by_name;
  for (const auto& a : ckpt.arrays) {
    if (a.name.starts_with("optimizer.")) continue;
    by_name.emplace(a.name, &a);
  }
  auto params = net.named_parameters();
  auto buffers = net.named_buffers();
  auto check = [&](const std::string& name, const Shape& shape) {
    auto it = by_name.find(name);
    if (it == by_name.end()) mismatch("'" + name + "' is missing from the checkpoint");
    if (it->second->shape != shape) {
      mismatch("'" + name + "' has shape " + shape_string(it->second->shape) +
               " in the checkpoint but " + shape_string(shape) + " in the network");
    }
  };
  for (const auto& [name, p] : params) check(name, p.shape());
  for (const auto& [name, b] : buffers) check(name, b->shape());
  if (by_name.size() != params.size() + buffers.size()) {
    for (const auto& [name, a] : by_name) {
      bool known = false;
      for (const auto& p : params) known = known || p.first == name;
      for (const auto& b : buffers) known = known || b.first == name;
      if (!known) mismatch("checkpoint array '" + name + "' does not exist in network '" +
                           net.spec().name + "'");
    }
  }
  for (auto& [name, p] : params) p.mutable_value() = by_name.at(name)->template to_tensor<T>();
  for (auto& [name, b] : buffers) *b = by_name.at(name)->template to_tensor<T>();
}

template Checkpoint make_checkpoint<float>(const Network<float>&, nlohmann::json);
template Checkpoint make_checkpoint<double>(const Network<double>&, nlohmann::json);
template void load_into<float>(Network<float>&, const Checkpoint&);
template void load_into<double>(Network<double>&, const Checkpoint&);

}  // namespace ectnet
