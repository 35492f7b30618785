#pragma once

#include "wavjepa/errors.hpp"
#include "wavjepa/eval.hpp"
#include "wavjepa/trainer.hpp"

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace wavjepa {

struct EvalConfig {
  ProbeOptions probe;
  TaskOptions task;
};

struct RunConfig {
  std::string profile = "paper";
  TrainSetup setup;
  EvalConfig eval;
};

/// Known profile names: tiny, desk, paper.
std::vector<std::string> profile_names();

/// Fully populated configuration for a named profile.
RunConfig profile_defaults(const std::string& profile);

/// Raised with every violation found, one per line, each prefixed by the
/// dotted field path.
class ConfigValidationError : public ConfigError {
 public:
  explicit ConfigValidationError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

/// Parses TOML (or JSON when `is_json`) text, overlays it on the profile
/// defaults and checks every field. A top-level `profile` key in the text
/// overrides `profile`.
RunConfig validate_config(const std::string& text, bool is_json, const std::string& profile = "paper");

/// Picks the parser from the file extension (.json or .toml).
RunConfig load_config(const std::filesystem::path& path, const std::string& profile = "paper");

nlohmann::json to_json(const RunConfig& config);

/// Rebuilds a config from its JSON form (as stored in checkpoints).
RunConfig config_from_json(const nlohmann::json& j);

/// Canonical JSON text; equal configs give equal text.
std::string canonical_json(const RunConfig& config);

}  // namespace wavjepa
