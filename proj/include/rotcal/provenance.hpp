#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace rotcal {

inline constexpr const char* kToolName = "rotcal";
inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kOutputSchemaVersion = 1;

// Provenance block embedded in every JSON output: tool identity, the seed in
// effect, and an echo of the configuration that produced the file. No wall
// clock, so identical runs produce identical bytes.
inline nlohmann::ordered_json provenance_json(
    const std::string& subcommand, std::uint64_t seed,
    const nlohmann::ordered_json& config_echo) {
  return {{"tool", kToolName},
          {"version", kToolVersion},
          {"subcommand", subcommand},
          {"seed", seed},
          {"config", config_echo}};
}

inline nlohmann::ordered_json versioned_report(
    const std::string& subcommand, std::uint64_t seed,
    const nlohmann::ordered_json& config_echo) {
  nlohmann::ordered_json j;
  j["schema_version"] = kOutputSchemaVersion;
  j["provenance"] = provenance_json(subcommand, seed, config_echo);
  return j;
}

}  // namespace rotcal
