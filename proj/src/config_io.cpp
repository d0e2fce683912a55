#include "satsynth/config_io.hpp"

#include "satsynth/rng.hpp"

#include <cstdio>

namespace satsynth {

std::uint64_t config_hash(const nlohmann::json& j) { return fnv1a64(j.dump()); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace satsynth
