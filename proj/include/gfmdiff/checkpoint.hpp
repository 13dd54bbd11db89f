#pragma once

// Versioned binary container: header (magic, format version, model config
// hash), a string->string metadata section, then named tensors stored as
// dtype + shape + raw little-endian values.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "gfmdiff/nn.hpp"

namespace gfm {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::kFloat32 : DType::kFloat64;
}

inline std::size_t dtype_size(DType d) { return d == DType::kFloat32 ? 4 : 8; }

namespace detail {

template <class U>
U to_little(U v) {
  static_assert(std::is_unsigned_v<U>);
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) out = static_cast<U>((out << 8) | ((v >> (8 * i)) & 0xFF));
    return out;
  }
}

template <class U>
void put(std::string& buf, U v) {
  v = to_little(v);
  char bytes[sizeof(U)];
  std::memcpy(bytes, &v, sizeof(U));
  buf.append(bytes, sizeof(U));
}

inline void put_string(std::string& buf, const std::string& s) {
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(s.size()));
  buf.append(s);
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  template <class U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, data_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return to_little(v);
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw CheckpointError("checkpoint truncated");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

struct StoredTensor {
  DType dtype = DType::kFloat64;
  Shape shape;
  std::string raw;  // little-endian values
};

class Checkpoint {
 public:
  static constexpr char kMagic[8] = {'G', 'F', 'M', 'D', 'C', 'K', 'P', 'T'};
  static constexpr std::uint32_t kVersion = 1;

  std::uint64_t config_hash = 0;
  std::map<std::string, std::string> meta;

  template <class T>
  void put_tensor(const std::string& name, const Shape& shape, std::span<const T> values) {
    StoredTensor st;
    st.dtype = dtype_of<T>();
    st.shape = shape;
    st.raw.reserve(values.size() * sizeof(T));
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    for (T v : values) detail::put<U>(st.raw, std::bit_cast<U>(v));
    tensors_[name] = std::move(st);
  }

  bool has_tensor(const std::string& name) const { return tensors_.count(name) > 0; }
  const StoredTensor& tensor(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw CheckpointError("checkpoint has no tensor named " + name);
    return it->second;
  }
  const std::map<std::string, StoredTensor>& tensors() const { return tensors_; }

  // Decodes a stored tensor into T (converting precision if needed).
  template <class T>
  std::vector<T> values(const std::string& name) const {
    const auto& st = tensor(name);
    const std::size_t n = shape_numel(st.shape);
    std::vector<T> out(n);
    detail::Reader r(st.raw);
    for (std::size_t i = 0; i < n; ++i) {
      if (st.dtype == DType::kFloat32) {
        out[i] = static_cast<T>(std::bit_cast<float>(r.get<std::uint32_t>()));
      } else {
        out[i] = static_cast<T>(std::bit_cast<double>(r.get<std::uint64_t>()));
      }
    }
    return out;
  }

  const std::string& meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw CheckpointError("checkpoint is missing metadata key " + key);
    return it->second;
  }

  std::string serialize() const {
    std::string buf(kMagic, sizeof(kMagic));
    detail::put<std::uint32_t>(buf, kVersion);
    detail::put<std::uint64_t>(buf, config_hash);
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
      detail::put_string(buf, k);
      detail::put_string(buf, v);
    }
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(tensors_.size()));
    for (const auto& [name, st] : tensors_) {
      detail::put_string(buf, name);
      detail::put<std::uint8_t>(buf, static_cast<std::uint8_t>(st.dtype));
      detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(st.shape.size()));
      for (auto d : st.shape) detail::put<std::uint64_t>(buf, d);
      buf.append(st.raw);
    }
    return buf;
  }

  static Checkpoint deserialize(std::string data) {
    if (data.size() < sizeof(kMagic) || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0) {
      throw CheckpointError("not a checkpoint file (bad magic)");
    }
    detail::Reader r(data.substr(sizeof(kMagic)));
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    c.config_hash = r.get<std::uint64_t>();
    const auto n_meta = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_meta; ++i) {
      auto k = r.get_string();
      c.meta[k] = r.get_string();
    }
    const auto n_tensors = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
      auto name = r.get_string();
      StoredTensor st;
      const auto dt = r.get<std::uint8_t>();
      if (dt > 1) throw CheckpointError("unknown dtype tag in tensor " + name);
      st.dtype = static_cast<DType>(dt);
      const auto nd = r.get<std::uint32_t>();
      for (std::uint32_t d = 0; d < nd; ++d) st.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
      st.raw = r.get_bytes(shape_numel(st.shape) * dtype_size(st.dtype));
      c.tensors_[name] = std::move(st);
    }
    if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload");
    return c;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open " + path + " for writing");
    const auto buf = serialize();
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw CheckpointError("write failed: " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint " + path);
    std::string data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return deserialize(std::move(data));
  }

 private:
  std::map<std::string, StoredTensor> tensors_;
};

template <class T>
void store_parameters(Checkpoint& ckpt, const ParameterStore<T>& store, const std::string& prefix = "param/") {
  for (const auto& p : store.all()) ckpt.put_tensor<T>(prefix + p.name, p.tensor.shape(), p.tensor.values());
}

template <class T>
void load_parameters(const Checkpoint& ckpt, ParameterStore<T>& store, const std::string& prefix = "param/") {
  for (auto p : store.all()) {
    const auto& st = ckpt.tensor(prefix + p.name);
    if (st.shape != p.tensor.shape()) {
      throw CheckpointError("shape mismatch for " + p.name + ": stored " + shape_str(st.shape) + ", model " +
                            shape_str(p.tensor.shape()));
    }
    const auto v = ckpt.values<T>(prefix + p.name);
    std::copy(v.begin(), v.end(), p.tensor.mutable_values().begin());
  }
}

// FNV-1a, used for config fingerprints.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace gfm
