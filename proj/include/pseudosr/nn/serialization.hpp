#pragma once

// Named-array container used for parameters and checkpoints.
//
// Binary layout, all integers little-endian:
//
//   magic      8 bytes   "PSRCONT\0"
//   version    u32       kContainerVersion
//   count      u32       number of entries
//   entries    count ×
//     name_len u32, name (UTF-8, no terminator)
//     dtype    u8        0 = f32, 1 = f64, 2 = u8 (opaque bytes), 3 = i64
//     ndim     u8
//     dims     u64 × ndim
//     nbytes   u64
//     payload  nbytes    row-major, little-endian
//   checksum   u64       FNV-1a over every preceding byte
//
// Entries are written in lexicographic name order, so equal contents always
// produce identical files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "pseudosr/errors.hpp"
#include "pseudosr/tensor.hpp"

namespace pseudosr::nn {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr char kContainerMagic[8] = {'P', 'S', 'R', 'C', 'O', 'N', 'T', '\0'};

enum class DType : std::uint8_t { f32 = 0, f64 = 1, u8 = 2, i64 = 3 };

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::u8: return 1;
    case DType::i64: return 8;
  }
  throw CorruptCheckpointError("unknown dtype");
}

template <class T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>)
    return DType::f32;
  else if constexpr (std::is_same_v<T, double>)
    return DType::f64;
  else
    static_assert(sizeof(T) == 0, "unsupported tensor scalar");
}

struct ContainerEntry {
  DType dtype = DType::u8;
  std::vector<std::uint64_t> dims;
  std::vector<std::uint8_t> bytes;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
  friend bool operator==(const ContainerEntry&, const ContainerEntry&) = default;
};

inline std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  return h;
}

class Container {
 public:
  template <class T>
  void put_tensor(const std::string& name, const Tensor<T>& t) {
    ContainerEntry e;
    e.dtype = dtype_of<T>();
    const Shape& s = t.shape();
    e.dims = {static_cast<std::uint64_t>(s.n), static_cast<std::uint64_t>(s.c), static_cast<std::uint64_t>(s.h),
              static_cast<std::uint64_t>(s.w)};
    e.bytes.resize(t.size() * sizeof(T));
    std::memcpy(e.bytes.data(), t.data(), e.bytes.size());
    entries_[name] = std::move(e);
  }

  /// Reads a tensor, converting between f32 and f64 when needed.
  template <class T>
  Tensor<T> get_tensor(const std::string& name) const {
    const ContainerEntry& e = at(name);
    if (e.dims.size() != 4) throw CorruptCheckpointError("entry '" + name + "' is not a 4-d tensor");
    Shape s{static_cast<int>(e.dims[0]), static_cast<int>(e.dims[1]), static_cast<int>(e.dims[2]),
            static_cast<int>(e.dims[3])};
    Tensor<T> t(s);
    if (e.dtype == DType::f32) {
      std::vector<float> v(s.size());
      copy_payload(e, v.data(), v.size(), name);
      for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<T>(v[i]);
    } else if (e.dtype == DType::f64) {
      std::vector<double> v(s.size());
      copy_payload(e, v.data(), v.size(), name);
      for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<T>(v[i]);
    } else {
      throw CorruptCheckpointError("entry '" + name + "' is not floating point");
    }
    return t;
  }

  void put_bytes(const std::string& name, const std::string& bytes) {
    ContainerEntry e;
    e.dtype = DType::u8;
    e.dims = {bytes.size()};
    e.bytes.assign(bytes.begin(), bytes.end());
    entries_[name] = std::move(e);
  }
  std::string get_bytes(const std::string& name) const {
    const ContainerEntry& e = at(name);
    if (e.dtype != DType::u8) throw CorruptCheckpointError("entry '" + name + "' is not a byte string");
    return std::string(e.bytes.begin(), e.bytes.end());
  }

  void put_i64(const std::string& name, std::int64_t v) {
    ContainerEntry e;
    e.dtype = DType::i64;
    e.dims = {1};
    e.bytes.resize(8);
    std::memcpy(e.bytes.data(), &v, 8);
    entries_[name] = std::move(e);
  }
  std::int64_t get_i64(const std::string& name) const {
    const ContainerEntry& e = at(name);
    if (e.dtype != DType::i64 || e.bytes.size() != 8) throw CorruptCheckpointError("entry '" + name + "' is not an i64");
    std::int64_t v;
    std::memcpy(&v, e.bytes.data(), 8);
    return v;
  }

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  const ContainerEntry& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw CorruptCheckpointError("missing entry '" + name + "'");
    return it->second;
  }
  const std::map<std::string, ContainerEntry>& entries() const noexcept { return entries_; }

  std::vector<std::uint8_t> serialize() const {
    std::vector<std::uint8_t> out;
    auto put = [&out](const void* p, std::size_t n) {
      const auto* b = static_cast<const std::uint8_t*>(p);
      out.insert(out.end(), b, b + n);
    };
    put(kContainerMagic, 8);
    const std::uint32_t version = kContainerVersion;
    const auto count = static_cast<std::uint32_t>(entries_.size());
    put(&version, 4);
    put(&count, 4);
    for (const auto& [name, e] : entries_) {
      const auto len = static_cast<std::uint32_t>(name.size());
      put(&len, 4);
      put(name.data(), name.size());
      const auto dt = static_cast<std::uint8_t>(e.dtype);
      const auto nd = static_cast<std::uint8_t>(e.dims.size());
      put(&dt, 1);
      put(&nd, 1);
      for (auto d : e.dims) put(&d, 8);
      const std::uint64_t nbytes = e.bytes.size();
      put(&nbytes, 8);
      put(e.bytes.data(), e.bytes.size());
    }
    const std::uint64_t sum = fnv1a(out.data(), out.size());
    put(&sum, 8);
    return out;
  }

  static Container deserialize(const std::vector<std::uint8_t>& buf) {
    std::size_t pos = 0;
    auto take = [&](void* dst, std::size_t n) {
      if (pos + n > buf.size()) throw CorruptCheckpointError("container truncated");
      std::memcpy(dst, buf.data() + pos, n);
      pos += n;
    };
    char magic[8];
    take(magic, 8);
    if (std::memcmp(magic, kContainerMagic, 8) != 0) throw CorruptCheckpointError("not a parameter container");
    std::uint32_t version = 0, count = 0;
    take(&version, 4);
    if (version != kContainerVersion)
      throw CheckpointVersionError("container version " + std::to_string(version) + ", expected " +
                                   std::to_string(kContainerVersion));
    take(&count, 4);
    Container c;
    for (std::uint32_t i = 0; i < count; ++i) {
      std::uint32_t len = 0;
      take(&len, 4);
      if (len > buf.size()) throw CorruptCheckpointError("container truncated");
      std::string name(len, '\0');
      take(name.data(), len);
      ContainerEntry e;
      std::uint8_t dt = 0, nd = 0;
      take(&dt, 1);
      take(&nd, 1);
      if (dt > 3) throw CorruptCheckpointError("unknown dtype in entry '" + name + "'");
      e.dtype = static_cast<DType>(dt);
      e.dims.resize(nd);
      for (auto& d : e.dims) take(&d, 8);
      std::uint64_t nbytes = 0;
      take(&nbytes, 8);
      if (nbytes != e.element_count() * dtype_size(e.dtype) || nbytes > buf.size() - pos)
        throw CorruptCheckpointError("entry '" + name + "' has inconsistent size");
      e.bytes.resize(nbytes);
      take(e.bytes.data(), nbytes);
      c.entries_[name] = std::move(e);
    }
    const std::size_t body = pos;
    std::uint64_t sum = 0;
    take(&sum, 8);
    if (sum != fnv1a(buf.data(), body)) throw CorruptCheckpointError("container checksum mismatch");
    if (pos != buf.size()) throw CorruptCheckpointError("trailing bytes after container");
    return c;
  }

  void save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
      std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
      if (!os) throw IoError("cannot open for writing", tmp.string());
      os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      if (!os) throw IoError("write failed", tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }

  static Container load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open", path.string());
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return deserialize(buf);
  }

  friend bool operator==(const Container&, const Container&) = default;

 private:
  template <class U>
  static void copy_payload(const ContainerEntry& e, U* dst, std::size_t n, const std::string& name) {
    if (e.bytes.size() != n * sizeof(U)) throw CorruptCheckpointError("entry '" + name + "' has inconsistent size");
    std::memcpy(dst, e.bytes.data(), e.bytes.size());
  }

  std::map<std::string, ContainerEntry> entries_;
};

/// Writes every parameter and buffer of `store` under `prefix/`.
template <class T, class Store>
void put_store(Container& c, const std::string& prefix, const Store& store) {
  for (const auto& p : store.parameters()) c.put_tensor(prefix + "/" + p.name, p.node->value);
  for (const auto& b : store.buffers()) c.put_tensor(prefix + "/" + b.name, *b.tensor);
}

/// Restores every parameter and buffer of `store` from `prefix/`; shapes must match.
template <class T, class Store>
void get_store(const Container& c, const std::string& prefix, Store& store) {
  auto restore = [&](const std::string& name, Tensor<T>& dst) {
    Tensor<T> t = c.get_tensor<T>(prefix + "/" + name);
    if (!(t.shape() == dst.shape()))
      throw CheckpointError("shape mismatch for '" + prefix + "/" + name + "': stored " + to_string(t.shape()) +
                            ", expected " + to_string(dst.shape()));
    dst = std::move(t);
  };
  for (const auto& p : store.parameters()) restore(p.name, p.node->value);
  for (const auto& b : store.buffers()) restore(b.name, *b.tensor);
}

}  // namespace pseudosr::nn
