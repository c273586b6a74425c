#include "adams/manifest.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

#include "adams/errors.hpp"
#include "adams/rule_lang.hpp"

namespace adams::manifest {

std::string file_digest_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for digesting");
  std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(rules::fnv1a64(body)));
  return buf;
}

std::string now_utc_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void RunManifest::add_input(const std::string& path) {
  input_digests.emplace_back(path, file_digest_hex(path));
}

void RunManifest::write(const std::string& path) const {
  nlohmann::json inputs = nlohmann::json::array();
  for (const auto& [p, d] : input_digests) inputs.push_back({{"path", p}, {"fnv1a64", d}});
  nlohmann::json j{{"subcommand", subcommand}, {"config", resolved_config},
                   {"inputs", inputs},         {"tool_version", kToolVersion},
                   {"seed", seed},             {"started_at", started_at},
                   {"wall_s", wall_s}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace adams::manifest
