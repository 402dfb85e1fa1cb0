#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "litepath/io/hash.hpp"
#include "litepath/model/config.hpp"
#include "litepath/numerics/tensor.hpp"

namespace litepath {

struct ArchiveError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { f64 = 1, f32 = 2 };

inline std::size_t dtype_size(DType d) { return d == DType::f64 ? 8 : 4; }

// In-memory form of an "LPW1" file: a config record plus named tensors.
//
// Layout (all integers little-endian):
//   "LPW1" | u32 version=1 | u32 record_len | record ("key=value\n" lines, key order)
//   u32 count | count x { u32 name_len | name | u8 dtype | u8 ndim | u64 dims[ndim] | u64 offset | u64 nbytes }
//   zero padding to 8 bytes | payload (each tensor 8-byte aligned, offsets relative to payload start)
struct TensorArchive {
  struct Entry {
    std::string name;
    DType dtype = DType::f64;
    TensorD tensor;
  };

  ConfigRecord record;
  std::vector<Entry> entries;

  void put(std::string name, TensorD t, DType dtype = DType::f64) {
    for (auto& e : entries)
      if (e.name == name) {
        e.tensor = std::move(t);
        e.dtype = dtype;
        return;
      }
    entries.push_back({std::move(name), dtype, std::move(t)});
  }

  bool contains(std::string_view name) const {
    for (const auto& e : entries)
      if (e.name == name) return true;
    return false;
  }

  const TensorD& get(std::string_view name) const {
    for (const auto& e : entries)
      if (e.name == name) return e.tensor;
    throw ArchiveError("archive has no tensor '" + std::string(name) + "'");
  }

  bool has_prefix(std::string_view prefix) const {
    for (const auto& e : entries)
      if (e.name.starts_with(prefix)) return true;
    return false;
  }

  void erase_prefix(std::string_view prefix) {
    std::erase_if(entries, [&](const Entry& e) { return e.name.starts_with(prefix); });
  }
};

namespace detail {

inline void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void pad8(std::string& out) {
  while (out.size() % 8 != 0) out.push_back('\0');
}

class Reader {
 public:
  explicit Reader(std::string_view buf) : buf_(buf) {}
  std::string_view take(std::size_t n) {
    if (pos_ + n > buf_.size()) throw ArchiveError("LPW1 file is truncated");
    auto s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint64_t uint(int bytes) {
    auto s = take(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }
  std::size_t size() const { return buf_.size(); }

 private:
  std::string_view buf_;
  std::size_t pos_ = 0;
};

inline std::string encode_record(const ConfigRecord& r) {
  std::string s;
  for (const auto& [k, v] : r) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw ArchiveError("config record key/value contains a reserved character: " + k);
    s += k + "=" + v + "\n";
  }
  return s;
}

inline ConfigRecord decode_record(std::string_view s) {
  ConfigRecord r;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t nl = s.find('\n', pos);
    if (nl == std::string_view::npos) nl = s.size();
    auto line = s.substr(pos, nl - pos);
    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ArchiveError("malformed config record line");
    r[std::string(line.substr(0, eq))] = std::string(line.substr(eq + 1));
    pos = nl + 1;
  }
  return r;
}

}  // namespace detail

inline std::string serialize(const TensorArchive& a) {
  std::string out = "LPW1";
  detail::put_u32(out, 1);
  const std::string rec = detail::encode_record(a.record);
  detail::put_u32(out, static_cast<std::uint32_t>(rec.size()));
  out += rec;
  detail::put_u32(out, static_cast<std::uint32_t>(a.entries.size()));
  std::uint64_t offset = 0;
  for (const auto& e : a.entries) {
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    detail::put_u8(out, static_cast<std::uint8_t>(e.dtype));
    detail::put_u8(out, static_cast<std::uint8_t>(e.tensor.rank()));
    for (auto d : e.tensor.shape()) detail::put_u64(out, d);
    const std::uint64_t nbytes = e.tensor.size() * dtype_size(e.dtype);
    detail::put_u64(out, offset);
    detail::put_u64(out, nbytes);
    offset += (nbytes + 7) / 8 * 8;
  }
  detail::pad8(out);
  for (const auto& e : a.entries) {
    for (double v : e.tensor.values()) {
      if (e.dtype == DType::f64)
        detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
      else
        detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    detail::pad8(out);
  }
  return out;
}

inline TensorArchive deserialize(std::string_view buf) {
  detail::Reader rd(buf);
  if (rd.take(4) != "LPW1") throw ArchiveError("not an LPW1 file (bad magic)");
  if (rd.uint(4) != 1) throw ArchiveError("unsupported LPW1 version");
  TensorArchive a;
  const auto rec_len = rd.uint(4);
  a.record = detail::decode_record(rd.take(rec_len));
  const auto count = rd.uint(4);
  struct Pending {
    Shape shape;
    std::uint64_t offset, nbytes;
  };
  std::vector<Pending> pending;
  for (std::uint64_t i = 0; i < count; ++i) {
    TensorArchive::Entry e;
    e.name = std::string(rd.take(rd.uint(4)));
    const auto dt = rd.uint(1);
    if (dt != 1 && dt != 2) throw ArchiveError("unknown dtype in LPW1 entry " + e.name);
    e.dtype = static_cast<DType>(dt);
    const auto ndim = rd.uint(1);
    Shape shape;
    for (std::uint64_t d = 0; d < ndim; ++d) shape.push_back(rd.uint(8));
    const auto offset = rd.uint(8), nbytes = rd.uint(8);
    if (nbytes != shape_numel(shape) * dtype_size(e.dtype)) throw ArchiveError("LPW1 entry size mismatch: " + e.name);
    pending.push_back({shape, offset, nbytes});
    a.entries.push_back(std::move(e));
  }
  const std::size_t payload = (rd.pos() + 7) / 8 * 8;
  for (std::size_t i = 0; i < pending.size(); ++i) {
    auto& p = pending[i];
    auto& e = a.entries[i];
    rd.seek(payload + p.offset);
    std::vector<double> vals(shape_numel(p.shape));
    for (auto& v : vals) {
      if (e.dtype == DType::f64)
        v = std::bit_cast<double>(rd.uint(8));
      else
        v = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(rd.uint(4))));
    }
    e.tensor = TensorD(p.shape, std::move(vals));
  }
  return a;
}

inline void save_archive(const TensorArchive& a, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = serialize(a);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw ArchiveError("cannot write " + tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ArchiveError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline TensorArchive load_archive(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ArchiveError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

// Hash of tensor names, shapes and values (the record is excluded).
inline std::string tensors_hash(const TensorArchive& a) {
  TensorArchive stripped;
  stripped.entries = a.entries;
  return fnv1a_hex(serialize(stripped));
}

// Weight structs <-> archive entries under a name prefix.
template <typename W>
void store_weights(TensorArchive& a, const std::string& prefix, const W& w) {
  w.for_each([&](const std::string& name, const auto& t) { a.put(prefix + name, t.template cast<double>()); });
}

template <typename W>
void load_weights(const TensorArchive& a, const std::string& prefix, W& w) {
  w.for_each([&](const std::string& name, auto& t) {
    const TensorD& src = a.get(prefix + name);
    if (src.shape() != t.shape())
      throw ArchiveError("shape mismatch for " + prefix + name + ": file " + shape_str(src.shape()) + ", model " +
                         shape_str(t.shape()));
    using V = typename std::remove_reference_t<decltype(t)>::value_type;
    t = src.template cast<V>();
  });
}

}  // namespace litepath
