#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace satsynth {

/// Flat named-blob container used for checkpoints.
///
/// Layout (all integers little-endian):
///   "SATSYNAR" | u32 entry_count | { u32 name_len | name | u64 size | bytes }*
class Archive {
 public:
  void put(std::string name, std::string bytes);
  bool contains(const std::string& name) const;
  const std::string& get(const std::string& name) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Raw little-endian encoding of a numeric array.
template <typename T>
std::string encode_le(const T* data, std::size_t count);

template <typename T>
std::vector<T> decode_le(const std::string& bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace satsynth
