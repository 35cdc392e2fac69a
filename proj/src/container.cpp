#include "c2f/container.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <unordered_map>

#include <zlib.h>

namespace c2f::io {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', '2', 'F', 'A', 'R', 'M', '\0', '\0'};

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
bool read_value(std::ifstream& in, T& value) {
  return static_cast<bool>(in.read(reinterpret_cast<char*>(&value), sizeof(T)));
}

std::uint32_t checksum(const Entry& e) {
  uLong crc = crc32(0L, Z_NULL, 0);
  if (!e.dims.empty()) {
    crc = crc32(crc, reinterpret_cast<const Bytef*>(e.dims.data()),
                static_cast<uInt>(e.dims.size() * sizeof(std::int64_t)));
  }
  // zlib takes uInt lengths; feed large payloads in chunks.
  std::size_t offset = 0;
  while (offset < e.bytes.size()) {
    const std::size_t n = std::min<std::size_t>(e.bytes.size() - offset, 1u << 30);
    crc = crc32(crc, e.bytes.data() + offset, static_cast<uInt>(n));
    offset += n;
  }
  return static_cast<std::uint32_t>(crc);
}

template <typename T>
Entry pack(std::string name, DType dtype, std::span<const T> values, std::vector<std::int64_t> dims) {
  Entry e;
  e.name = std::move(name);
  e.dtype = dtype;
  e.dims = std::move(dims);
  if (e.element_count() != static_cast<std::int64_t>(values.size())) {
    throw StructuralError("tensor '" + e.name + "': " + std::to_string(values.size()) +
                          " values do not match its dims");
  }
  e.bytes.resize(values.size() * sizeof(T));
  if (!values.empty()) std::memcpy(e.bytes.data(), values.data(), e.bytes.size());
  return e;
}

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::kF32; }
template <>
constexpr DType dtype_of<double>() { return DType::kF64; }
template <>
constexpr DType dtype_of<std::int32_t>() { return DType::kI32; }
template <>
constexpr DType dtype_of<std::int64_t>() { return DType::kI64; }
template <>
constexpr DType dtype_of<std::uint8_t>() { return DType::kU8; }

}  // namespace

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kI32: return 4;
    case DType::kU8: return 1;
    case DType::kJson: return 1;
    case DType::kI64: return 8;
  }
  throw DataError("unknown dtype");
}

const char* dtype_name(DType dtype) {
  switch (dtype) {
    case DType::kF32: return "f32";
    case DType::kF64: return "f64";
    case DType::kI32: return "i32";
    case DType::kU8: return "u8";
    case DType::kJson: return "json";
    case DType::kI64: return "i64";
  }
  return "?";
}

std::int64_t Entry::element_count() const {
  std::int64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

template <typename T>
std::vector<T> Entry::as() const {
  if (dtype != dtype_of<T>()) {
    throw DataError("tensor '" + name + "' has dtype " + dtype_name(dtype) + ", expected " +
                    dtype_name(dtype_of<T>()));
  }
  std::vector<T> out(bytes.size() / sizeof(T));
  if (!out.empty()) std::memcpy(out.data(), bytes.data(), out.size() * sizeof(T));
  return out;
}

template std::vector<float> Entry::as<float>() const;
template std::vector<double> Entry::as<double>() const;
template std::vector<std::int32_t> Entry::as<std::int32_t>() const;
template std::vector<std::int64_t> Entry::as<std::int64_t>() const;
template std::vector<std::uint8_t> Entry::as<std::uint8_t>() const;

nlohmann::json Entry::as_json() const {
  if (dtype != DType::kJson) throw DataError("tensor '" + name + "' is not a json entry");
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("tensor '" + name + "' holds malformed json: " + e.what());
  }
}

Entry make_entry(std::string name, std::span<const float> values, std::vector<std::int64_t> dims) {
  return pack(std::move(name), DType::kF32, values, std::move(dims));
}
Entry make_entry(std::string name, std::span<const double> values, std::vector<std::int64_t> dims) {
  return pack(std::move(name), DType::kF64, values, std::move(dims));
}
Entry make_entry(std::string name, std::span<const std::int32_t> values, std::vector<std::int64_t> dims) {
  return pack(std::move(name), DType::kI32, values, std::move(dims));
}
Entry make_entry(std::string name, std::span<const std::int64_t> values, std::vector<std::int64_t> dims) {
  return pack(std::move(name), DType::kI64, values, std::move(dims));
}
Entry make_entry(std::string name, std::span<const std::uint8_t> values, std::vector<std::int64_t> dims) {
  return pack(std::move(name), DType::kU8, values, std::move(dims));
}

Entry make_json_entry(std::string name, const nlohmann::json& value) {
  const std::string text = value.dump();
  Entry e;
  e.name = std::move(name);
  e.dtype = DType::kJson;
  e.dims = {static_cast<std::int64_t>(text.size())};
  e.bytes.assign(text.begin(), text.end());
  return e;
}

Writer::Writer(const std::string& path, bool append) : path_(path) {
  const bool extend = append && std::filesystem::exists(path) && std::filesystem::file_size(path) > 0;
  if (extend) {
    // Validate the header before appending to someone else's file.
    std::ifstream in(path, std::ios::binary);
    char magic[8];
    std::uint32_t version = 0;
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0 || !read_value(in, version)) {
      throw DataError("'" + path + "' is not a c2f container");
    }
    out_.open(path, std::ios::binary | std::ios::app);
  } else {
    out_.open(path, std::ios::binary | std::ios::trunc);
  }
  if (!out_) throw DataError("cannot open '" + path + "' for writing");
  if (!extend) {
    out_.write(kMagic, 8);
    put(out_, kContainerVersion);
  }
}

void Writer::write(const Entry& e) {
  if (e.dtype != DType::kJson &&
      static_cast<std::size_t>(e.element_count()) * dtype_size(e.dtype) != e.bytes.size()) {
    throw StructuralError("tensor '" + e.name + "' payload size does not match its dims");
  }
  put(out_, static_cast<std::uint32_t>(e.name.size()));
  out_.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
  put(out_, static_cast<std::uint8_t>(e.dtype));
  put(out_, static_cast<std::uint32_t>(e.dims.size()));
  for (auto d : e.dims) put(out_, d);
  put(out_, static_cast<std::uint64_t>(e.bytes.size()));
  out_.write(reinterpret_cast<const char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size()));
  put(out_, checksum(e));
  if (!out_) throw DataError("write to '" + path_ + "' failed");
}

void Writer::flush() { out_.flush(); }

Container Container::read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  char magic[8];
  std::uint32_t version = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw DataError("'" + path + "' is not a c2f container (bad magic)");
  }
  if (!read_value(in, version) || version != kContainerVersion) {
    throw DataError("'" + path + "' has unsupported container version " + std::to_string(version));
  }
  const auto file_size = static_cast<std::uint64_t>(std::filesystem::file_size(path));
  Container c;
  while (true) {
    std::uint32_t name_len = 0;
    if (!read_value(in, name_len)) break;  // clean end of file
    auto truncated = [&](const std::string& what) {
      return IntegrityError("'" + path + "' is truncated inside " + what);
    };
    if (name_len > 4096) throw truncated("an entry header");
    Entry e;
    e.name.resize(name_len);
    if (!in.read(e.name.data(), name_len)) throw truncated("an entry name");
    std::uint8_t dtype = 0;
    std::uint32_t ndim = 0;
    if (!read_value(in, dtype) || !read_value(in, ndim) || ndim > 16) throw truncated("tensor '" + e.name + "'");
    if (dtype < 1 || dtype > 6) throw IntegrityError("tensor '" + e.name + "' has an unknown dtype");
    e.dtype = static_cast<DType>(dtype);
    e.dims.resize(ndim);
    for (auto& d : e.dims) {
      if (!read_value(in, d)) throw truncated("tensor '" + e.name + "'");
    }
    std::uint64_t len = 0;
    if (!read_value(in, len)) throw truncated("tensor '" + e.name + "'");
    if (len > file_size) throw truncated("tensor '" + e.name + "'");
    e.bytes.resize(len);
    if (len > 0 && !in.read(reinterpret_cast<char*>(e.bytes.data()), static_cast<std::streamsize>(len))) {
      throw truncated("tensor '" + e.name + "'");
    }
    std::uint32_t crc = 0;
    if (!read_value(in, crc)) throw truncated("tensor '" + e.name + "'");
    if (crc != checksum(e)) throw IntegrityError("checksum mismatch in tensor '" + e.name + "'");
    if (e.dtype != DType::kJson &&
        static_cast<std::uint64_t>(e.element_count()) * dtype_size(e.dtype) != len) {
      throw IntegrityError("tensor '" + e.name + "' payload size does not match its dims");
    }
    c.entries_.push_back(std::move(e));
  }
  return c;
}

bool Container::has(const std::string& name) const { return find(name) != nullptr; }

const Entry* Container::find(const std::string& name) const {
  // Later entries shadow earlier ones with the same name.
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->name == name) return &*it;
  }
  return nullptr;
}

const Entry& Container::get(const std::string& name) const {
  const Entry* e = find(name);
  if (e == nullptr) throw DataError("container has no tensor named '" + name + "'");
  return *e;
}

void write_container(const std::string& path, std::span<const Entry> entries) {
  Writer w(path);
  for (const auto& e : entries) w.write(e);
  w.flush();
}

}  // namespace c2f::io
