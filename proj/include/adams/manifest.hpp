#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace adams::manifest {

inline constexpr const char* kToolVersion = "0.1.0";

/// Provenance record written next to every artifact-producing run. Inputs
/// are named with content digests so a manifest plus its inputs pins the
/// outputs exactly.
struct RunManifest {
  std::string subcommand;
  nlohmann::json resolved_config;
  std::vector<std::pair<std::string, std::string>> input_digests;  // (path, fnv1a64 hex)
  std::uint64_t seed = 0;
  std::string started_at;  // ISO-8601 UTC
  double wall_s = 0;

  void add_input(const std::string& path);  // digests the file now
  void write(const std::string& path) const;
};

std::string file_digest_hex(const std::string& path);
std::string now_utc_iso8601();

}  // namespace adams::manifest
