#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "calibra/harness.hpp"
#include "calibra/io.hpp"

namespace calibra {

inline constexpr std::string_view kToolVersion = "0.1.0";

/// Provenance written next to every CLI artifact as <artifact>.manifest.json.
struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;

  nlohmann::json to_json() const {
    return nlohmann::json{{"command", command},          {"config", config},
                          {"inputs", inputs},            {"outputs", outputs},
                          {"seed", seed},                {"tool_version", std::string(kToolVersion)},
                          {"started_at", started_at},    {"finished_at", finished_at}};
  }

  void write_next_to(const std::string& artifact) {
    finished_at = harness::utc_timestamp();
    io::write_json(artifact + ".manifest.json", to_json());
  }
};

}  // namespace calibra
