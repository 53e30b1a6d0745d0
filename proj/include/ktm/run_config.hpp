#pragma once

#include <set>
#include <string>
#include <vector>

#include "ktm/data.hpp"
#include "ktm/model.hpp"
#include "ktm/train.hpp"

namespace ktm {

enum class AblationGrid { Attention, Embedding, Both };

std::string to_string(AblationGrid g);
AblationGrid parse_ablation_grid(const std::string& name);

// Everything one invocation needs. Each setting has a config-file key
// `[section] name` and a flag `--name`.
struct RunConfig {
  std::string command;

  // [data]
  std::string data_path;
  bool synthetic = false;
  SyntheticOptions synthetic_options;

  // [model], [train]
  ModelConfig model;
  TrainConfig train;

  // [analysis]
  std::string checkpoint;
  double graph_threshold = 0.1;
  int analysis_layer = -1;  // -1 = last
  std::size_t analysis_fold = 0;
  std::string analysis_split = "test";

  // [ablate]
  AblationGrid grid = AblationGrid::Both;

  // [output]
  std::string out_dir = "runs";

  // Keys given explicitly by file or flag.
  std::set<std::string> explicit_keys;

  bool is_explicit(const std::string& key) const { return explicit_keys.count(key) > 0; }

  // Throws ConfigError; checks that data is reachable for commands that read it.
  void validate() const;
};

struct ConfigKey {
  std::string section;
  std::string name;
  std::string help;
  bool is_switch = false;  // flag without a value
};

// The full key table in documentation order.
const std::vector<ConfigKey>& config_keys();

// Applies one value; throws ConfigError for unknown keys or malformed values.
void apply_setting(RunConfig& config, const std::string& name, const std::string& value);
// Current value of a key in config-file syntax.
std::string get_setting(const RunConfig& config, const std::string& name);

// Applies an INI file. Unknown sections or keys, and keys placed in the wrong
// section, are rejected.
void apply_config_text(RunConfig& config, const std::string& text, const std::string& source = "<config>");
void apply_config_file(RunConfig& config, const std::string& path);

// Round-trippable INI rendering of every key.
std::string format_config(const RunConfig& config);

}  // namespace ktm
