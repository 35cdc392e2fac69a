#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "c2f/errors.hpp"

// Self-describing tensor container used for checkpoints, demo files and
// replay logs.
//
//   header : "C2FARM\0\0" | u32 version
//   entry* : u32 name_len | name | u8 dtype | u32 ndim | i64 dims[ndim]
//            | u64 byte_len | bytes | u32 crc32(dims, bytes)
//
// All integers and payloads are little-endian. Entries run until end of file,
// so a file can be extended by appending entries.
namespace c2f::io {

inline constexpr std::uint32_t kContainerVersion = 1;

enum class DType : std::uint8_t { kF32 = 1, kF64 = 2, kI32 = 3, kU8 = 4, kJson = 5, kI64 = 6 };

std::size_t dtype_size(DType dtype);
const char* dtype_name(DType dtype);

struct Entry {
  std::string name;
  DType dtype = DType::kU8;
  std::vector<std::int64_t> dims;
  std::vector<std::uint8_t> bytes;

  std::int64_t element_count() const;

  template <typename T>
  std::vector<T> as() const;
  nlohmann::json as_json() const;
};

Entry make_entry(std::string name, std::span<const float> values, std::vector<std::int64_t> dims);
Entry make_entry(std::string name, std::span<const double> values, std::vector<std::int64_t> dims);
Entry make_entry(std::string name, std::span<const std::int32_t> values, std::vector<std::int64_t> dims);
Entry make_entry(std::string name, std::span<const std::int64_t> values, std::vector<std::int64_t> dims);
Entry make_entry(std::string name, std::span<const std::uint8_t> values, std::vector<std::int64_t> dims);
Entry make_json_entry(std::string name, const nlohmann::json& value);

class Writer {
 public:
  // Truncates, or appends to an existing container when `append` is set
  // (a missing file is created either way).
  explicit Writer(const std::string& path, bool append = false);
  void write(const Entry& entry);
  void flush();

 private:
  std::ofstream out_;
  std::string path_;
};

// Parsed container. Lookup throws DataError for a missing name.
class Container {
 public:
  static Container read(const std::string& path);

  const std::vector<Entry>& entries() const { return entries_; }
  bool has(const std::string& name) const;
  const Entry& get(const std::string& name) const;
  const Entry* find(const std::string& name) const;

 private:
  std::vector<Entry> entries_;
};

void write_container(const std::string& path, std::span<const Entry> entries);

}  // namespace c2f::io
