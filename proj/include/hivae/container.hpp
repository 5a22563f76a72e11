#pragma once

// HVAE container: one file holding named tensors plus free-form metadata.
//
//   offset 0   4 bytes   magic "HVAE"
//   offset 4   u32 LE    format version (1)
//   offset 8   u64 LE    header length N in bytes
//   offset 16  N bytes   UTF-8 JSON header
//   offset 16+N          payload: tensors back to back, C order, little endian
//
// Header JSON:
//   { "tensors": [ {"name": str, "dtype": "float32"|"uint8", "shape": [int...],
//                   "offset": int, "nbytes": int}, ... ],
//     "meta": { ... } }
// "offset" is relative to the start of the payload. nbytes == prod(shape) *
// sizeof(dtype). The payload length must equal the sum of nbytes.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hivae/tensor.hpp"

namespace hivae::container {

using json = nlohmann::json;

inline constexpr char kMagic[4] = {'H', 'V', 'A', 'E'};
inline constexpr std::uint32_t kVersion = 1;

enum class DType { Float32, UInt8 };

inline std::size_t dtype_size(DType d) { return d == DType::Float32 ? 4 : 1; }
inline std::string dtype_name(DType d) { return d == DType::Float32 ? "float32" : "uint8"; }
inline DType dtype_from(const std::string& s) {
  if (s == "float32") return DType::Float32;
  if (s == "uint8") return DType::UInt8;
  throw FormatError("unknown dtype '" + s + "'");
}

struct Entry {
  std::string name;
  DType dtype = DType::Float32;
  Shape shape;
  std::vector<std::uint8_t> bytes;  // little-endian payload

  static Entry from_array(std::string name, const Array& a, DType dtype = DType::Float32) {
    Entry e{std::move(name), dtype, a.shape, {}};
    e.bytes.resize(a.size() * dtype_size(dtype));
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (dtype == DType::Float32) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(a[i]));
        for (int k = 0; k < 4; ++k) e.bytes[4 * i + static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(bits >> (8 * k));
      } else {
        e.bytes[i] = static_cast<std::uint8_t>(std::clamp(std::lround(a[i]), 0L, 255L));
      }
    }
    return e;
  }

  Array to_array() const {
    Array a(shape);
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (dtype == DType::Float32) {
        std::uint32_t bits = 0;
        for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(bytes[4 * i + static_cast<std::size_t>(k)]) << (8 * k);
        a[i] = static_cast<double>(std::bit_cast<float>(bits));
      } else {
        a[i] = static_cast<double>(bytes[i]);
      }
    }
    return a;
  }
};

struct File {
  std::vector<Entry> tensors;
  json meta = json::object();

  const Entry& at(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw FormatError("container has no tensor '" + name + "'");
  }
  bool has(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return true;
    return false;
  }
  void add(Entry e) { tensors.push_back(std::move(e)); }
};

struct TensorInfo {
  std::string name;
  DType dtype;
  Shape shape;
  std::size_t offset;
  std::size_t nbytes;
};

struct Header {
  std::vector<TensorInfo> tensors;
  json meta;
  std::size_t payload_offset = 0;
};

namespace detail {

template <typename T>
void put_le(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get_le(const unsigned char* b) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace detail

inline void write(const std::filesystem::path& path, const File& f) {
  json hdr;
  hdr["tensors"] = json::array();
  std::size_t off = 0;
  for (const auto& t : f.tensors) {
    if (t.bytes.size() != numel(t.shape) * dtype_size(t.dtype))
      throw FormatError("tensor '" + t.name + "' payload does not match its shape");
    hdr["tensors"].push_back({{"name", t.name}, {"dtype", dtype_name(t.dtype)}, {"shape", t.shape},
                              {"offset", off}, {"nbytes", t.bytes.size()}});
    off += t.bytes.size();
  }
  hdr["meta"] = f.meta;
  const std::string text = hdr.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
  os.write(kMagic, 4);
  detail::put_le<std::uint32_t>(os, kVersion);
  detail::put_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : f.tensors) os.write(reinterpret_cast<const char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
  if (!os) throw FormatError("write to '" + path.string() + "' failed");
}

// Parses magic, version and the JSON header without touching the payload.
inline Header read_header(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path.string() + "'");
  unsigned char pre[16];
  is.read(reinterpret_cast<char*>(pre), 16);
  if (is.gcount() != 16) throw FormatError("'" + path.string() + "': file shorter than the 16-byte preamble");
  if (std::memcmp(pre, kMagic, 4) != 0) throw FormatError("'" + path.string() + "': bad magic (not an HVAE container)");
  const auto version = detail::get_le<std::uint32_t>(pre + 4);
  if (version != kVersion) throw FormatError("'" + path.string() + "': unsupported version " + std::to_string(version));
  const auto hlen = detail::get_le<std::uint64_t>(pre + 8);
  std::string text(hlen, '\0');
  is.read(text.data(), static_cast<std::streamsize>(hlen));
  if (static_cast<std::uint64_t>(is.gcount()) != hlen)
    throw FormatError("'" + path.string() + "': truncated header, expected " + std::to_string(hlen) +
                      " bytes, got " + std::to_string(is.gcount()));
  Header h;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError("'" + path.string() + "': header is not valid JSON: " + e.what());
  }
  h.payload_offset = 16 + hlen;
  h.meta = j.value("meta", json::object());
  for (const auto& t : j.at("tensors")) {
    TensorInfo ti{t.at("name").get<std::string>(), dtype_from(t.at("dtype").get<std::string>()),
                  t.at("shape").get<Shape>(), t.at("offset").get<std::size_t>(), t.at("nbytes").get<std::size_t>()};
    if (ti.nbytes != numel(ti.shape) * dtype_size(ti.dtype))
      throw FormatError("'" + path.string() + "': tensor '" + ti.name + "' nbytes disagrees with shape");
    h.tensors.push_back(std::move(ti));
  }
  return h;
}

inline File read(const std::filesystem::path& path) {
  Header h = read_header(path);
  std::size_t expected = 0;
  for (const auto& t : h.tensors) expected = std::max(expected, t.offset + t.nbytes);
  const auto file_size = std::filesystem::file_size(path);
  const std::size_t actual = file_size >= h.payload_offset ? file_size - h.payload_offset : 0;
  if (actual != expected)
    throw FormatError("'" + path.string() + "': payload size mismatch, expected " + std::to_string(expected) +
                      " bytes, got " + std::to_string(actual));
  std::ifstream is(path, std::ios::binary);
  File f;
  f.meta = h.meta;
  for (const auto& t : h.tensors) {
    Entry e{t.name, t.dtype, t.shape, std::vector<std::uint8_t>(t.nbytes)};
    is.seekg(static_cast<std::streamoff>(h.payload_offset + t.offset));
    is.read(reinterpret_cast<char*>(e.bytes.data()), static_cast<std::streamsize>(t.nbytes));
    if (static_cast<std::size_t>(is.gcount()) != t.nbytes) throw FormatError("'" + path.string() + "': short read");
    f.tensors.push_back(std::move(e));
  }
  return f;
}

}  // namespace hivae::container
