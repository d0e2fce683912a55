#include "satsynth/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace satsynth {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'T', 'S', 'Y', 'N', 'A', 'R'};

template <typename T>
void append_le(std::string& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw std::runtime_error("archive truncated");
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  pos += sizeof(T);
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void Archive::put(std::string name, std::string bytes) {
  for (auto& [n, b] : entries_) {
    if (n == name) {
      b = std::move(bytes);
      return;
    }
  }
  entries_.emplace_back(std::move(name), std::move(bytes));
}

bool Archive::contains(const std::string& name) const {
  for (const auto& [n, _] : entries_) {
    if (n == name) return true;
  }
  return false;
}

const std::string& Archive::get(const std::string& name) const {
  for (const auto& [n, b] : entries_) {
    if (n == name) return b;
  }
  throw std::out_of_range("archive has no entry " + name);
}

void Archive::save(const std::filesystem::path& path) const {
  std::string out(kMagic, sizeof(kMagic));
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, bytes] : entries_) {
    append_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    append_le<std::uint64_t>(out, bytes.size());
    out += bytes;
  }
  write_file(path, out);
}

Archive Archive::load(const std::filesystem::path& path) {
  const std::string in = read_file(path);
  if (in.size() < sizeof(kMagic) || std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not an archive: " + path.string());
  }
  std::size_t pos = sizeof(kMagic);
  const auto count = read_le<std::uint32_t>(in, pos);
  Archive ar;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_le<std::uint32_t>(in, pos);
    if (pos + name_len > in.size()) throw std::runtime_error("archive truncated");
    std::string name = in.substr(pos, name_len);
    pos += name_len;
    const auto size = read_le<std::uint64_t>(in, pos);
    if (pos + size > in.size()) throw std::runtime_error("archive truncated");
    ar.entries_.emplace_back(std::move(name), in.substr(pos, size));
    pos += size;
  }
  return ar;
}

template <typename T>
std::string encode_le(const T* data, std::size_t count) {
  std::string out;
  out.reserve(count * sizeof(T));
  for (std::size_t i = 0; i < count; ++i) append_le<T>(out, data[i]);
  return out;
}

template <typename T>
std::vector<T> decode_le(const std::string& bytes) {
  if (bytes.size() % sizeof(T) != 0) throw std::runtime_error("array byte length mismatch");
  std::vector<T> out(bytes.size() / sizeof(T));
  std::size_t pos = 0;
  for (auto& v : out) v = read_le<T>(bytes, pos);
  return out;
}

template std::string encode_le<float>(const float*, std::size_t);
template std::string encode_le<double>(const double*, std::size_t);
template std::string encode_le<std::uint8_t>(const std::uint8_t*, std::size_t);
template std::string encode_le<std::uint16_t>(const std::uint16_t*, std::size_t);
template std::vector<float> decode_le<float>(const std::string&);
template std::vector<double> decode_le<double>(const std::string&);
template std::vector<std::uint8_t> decode_le<std::uint8_t>(const std::string&);
template std::vector<std::uint16_t> decode_le<std::uint16_t>(const std::string&);

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace satsynth
