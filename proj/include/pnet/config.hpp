#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include "pnet/data.hpp"
#include "pnet/model.hpp"
#include "pnet/training.hpp"

namespace pnet {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything a CLI run needs. Paths are resolved at use time.
struct RunConfig {
  ModelConfig model{};
  TrainConfig train{};
  SynthSpec synth{};
  std::uint64_t data_seed = 0;
  std::optional<std::filesystem::path> data_root;
  std::optional<std::filesystem::path> history;  // CSV path

  RunConfig();
};

/// Lines of `key = value`; '#' starts a comment. Duplicate keys are an error.
std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin = "<text>");

/// Applies one dotted key; unknown keys and malformed values throw ConfigError.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

RunConfig parse_run_config(const std::string& text, const std::string& origin = "<text>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Every recognised key.
const std::vector<std::string>& run_config_keys();

}  // namespace pnet
