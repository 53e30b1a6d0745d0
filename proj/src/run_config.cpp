#include "ktm/run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "ktm/errors.hpp"

namespace ktm {

std::string to_string(AblationGrid g) {
  switch (g) {
    case AblationGrid::Attention: return "attention";
    case AblationGrid::Embedding: return "embedding";
    case AblationGrid::Both: return "both";
  }
  return "both";
}

AblationGrid parse_ablation_grid(const std::string& name) {
  if (name == "attention") return AblationGrid::Attention;
  if (name == "embedding") return AblationGrid::Embedding;
  if (name == "both") return AblationGrid::Both;
  throw ConfigError("unknown ablation grid '" + name + "' (expected attention, embedding or both)");
}

namespace {

std::size_t to_count(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

int to_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string real_str(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

struct Entry {
  ConfigKey key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define KTM_COUNT(section, name, field, help)                                               \
  Entry {                                                                                   \
    {section, name, help, false}, [](RunConfig& c, const std::string& v) { c.field = to_count(name, v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }                          \
  }
#define KTM_REAL(section, name, field, help)                                                \
  Entry {                                                                                   \
    {section, name, help, false}, [](RunConfig& c, const std::string& v) { c.field = to_real(name, v); }, \
        [](const RunConfig& c) { return real_str(c.field); }                                \
  }
#define KTM_SWITCH(section, name, field, help)                                              \
  Entry {                                                                                   \
    {section, name, help, true}, [](RunConfig& c, const std::string& v) { c.field = to_bool(name, v); }, \
        [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }          \
  }
#define KTM_TEXT(section, name, field, help)                                                \
  Entry {                                                                                   \
    {section, name, help, false}, [](RunConfig& c, const std::string& v) { c.field = v; },  \
        [](const RunConfig& c) { return c.field; }                                          \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      KTM_TEXT("data", "data", data_path, "interaction CSV (student_id,question_id,concept_id,correct)"),
      KTM_SWITCH("data", "synthetic", synthetic, "generate the planted-structure dataset instead of reading --data"),
      KTM_COUNT("data", "students", synthetic_options.students, "synthetic student count"),
      KTM_COUNT("data", "questions", synthetic_options.questions, "synthetic question count"),
      KTM_COUNT("data", "concepts", synthetic_options.concepts, "synthetic concept count"),
      KTM_COUNT("data", "min-length", synthetic_options.min_length, "shortest synthetic sequence"),
      KTM_COUNT("data", "max-length", synthetic_options.max_length, "longest synthetic sequence"),
      KTM_COUNT("data", "data-seed", synthetic_options.seed, "synthetic generator seed"),

      Entry{{"model", "attention", "vanilla, mono, conv or monoconv", false},
            [](RunConfig& c, const std::string& v) { c.model.attention = parse_attention_variant(v); },
            [](const RunConfig& c) { return to_string(c.model.attention); }},
      Entry{{"model", "embedding", "cq, rasch-c, rasch-cr or ctt", false},
            [](RunConfig& c, const std::string& v) { c.model.embedding = parse_embedding_strategy(v); },
            [](const RunConfig& c) { return to_string(c.model.embedding); }},
      KTM_COUNT("model", "hidden", model.hidden, "hidden size"),
      KTM_COUNT("model", "layers", model.layers, "encoder layers"),
      KTM_COUNT("model", "heads", model.heads, "attention heads (split evenly between branches for monoconv)"),
      KTM_COUNT("model", "kernel", model.kernel, "dynamic convolution kernel width (odd)"),
      KTM_COUNT("model", "ffn-expansion", model.ffn_expansion, "feed-forward width multiplier"),
      KTM_COUNT("model", "max-len", model.max_len, "window length"),
      KTM_REAL("model", "dropout", model.dropout, "dropout probability"),
      KTM_SWITCH("model", "literal-eq7", model.literal_eq7, "use the literal -delta*d*qk decay instead of exp(-delta*d)*qk"),
      KTM_SWITCH("model", "causal", model.causal, "restrict the monotonic branch to past keys"),
      KTM_SWITCH("model", "distance-grad", model.distance_grad, "let gradients flow through the distance estimate"),

      KTM_COUNT("train", "folds", train.folds, "cross-validation folds"),
      KTM_COUNT("train", "run-folds", train.run_folds, "train only the first N folds (0 = all)"),
      KTM_COUNT("train", "seed", train.seed, "base seed; fold k uses seed + k"),
      KTM_COUNT("train", "epochs", train.max_epochs, "maximum epochs per fold"),
      KTM_COUNT("train", "batch-size", train.batch_size, "micro-batch size"),
      KTM_COUNT("train", "accumulation", train.accumulation_steps, "micro-batches per optimizer step"),
      KTM_COUNT("train", "patience", train.patience, "early-stop patience in epochs"),
      KTM_REAL("train", "lr", train.lr, "Adam learning rate"),
      KTM_COUNT("train", "workers", train.workers, "folds trained concurrently"),
      KTM_SWITCH("train", "verbose", train.verbose, "per-epoch progress on stderr"),

      KTM_TEXT("analysis", "checkpoint", checkpoint, "checkpoint to analyze"),
      KTM_REAL("analysis", "graph-threshold", graph_threshold, "concept graph edge threshold"),
      Entry{{"analysis", "analysis-layer", "encoder layer for profile and graph (-1 = last)", false},
            [](RunConfig& c, const std::string& v) { c.analysis_layer = to_int("analysis-layer", v); },
            [](const RunConfig& c) { return std::to_string(c.analysis_layer); }},
      KTM_COUNT("analysis", "analysis-fold", analysis_fold, "fold whose split is analyzed"),
      KTM_TEXT("analysis", "analysis-split", analysis_split, "train, valid or test"),

      Entry{{"ablate", "grid", "attention, embedding or both", false},
            [](RunConfig& c, const std::string& v) { c.grid = parse_ablation_grid(v); },
            [](const RunConfig& c) { return to_string(c.grid); }},

      KTM_TEXT("output", "out-dir", out_dir, "parent directory for run directories"),
  };
  return table;
}

#undef KTM_COUNT
#undef KTM_REAL
#undef KTM_SWITCH
#undef KTM_TEXT

const Entry* find_entry(const std::string& name) {
  for (const auto& e : entries()) {
    if (e.key.name == name) return &e;
  }
  return nullptr;
}

bool needs_data(const std::string& command) {
  return command == "train" || command == "ablate" || command == "analyze";
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& e : entries()) out.push_back(e.key);
    return out;
  }();
  return keys;
}

void apply_setting(RunConfig& config, const std::string& name, const std::string& value) {
  const auto* e = find_entry(name);
  if (!e) throw ConfigError("unknown configuration key '" + name + "'");
  e->set(config, value);
  config.explicit_keys.insert(name);
}

std::string get_setting(const RunConfig& config, const std::string& name) {
  const auto* e = find_entry(name);
  if (!e) throw ConfigError("unknown configuration key '" + name + "'");
  return e->get(config);
}

void apply_config_text(RunConfig& config, const std::string& text, const std::string& source) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError(source + ": key '" + section + "' must be inside a section");
    }
    bool known = false;
    for (const auto& e : entries()) known = known || e.key.section == section;
    if (!known) throw ConfigError(source + ": unknown section [" + section + "]");
    for (const auto& [name, value] : body) {
      const auto* e = find_entry(name);
      if (!e) throw ConfigError(source + ": unknown key '" + name + "' in [" + section + "]");
      if (e->key.section != section) {
        throw ConfigError(source + ": key '" + name + "' belongs in [" + e->key.section + "], not [" + section + "]");
      }
      try {
        apply_setting(config, name, value.data());
      } catch (const ConfigError& err) {
        throw ConfigError(source + ": " + err.what());
      }
    }
  }
}

void apply_config_file(RunConfig& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::ostringstream buf;
  buf << in.rdbuf();
  apply_config_text(config, buf.str(), path);
}

std::string format_config(const RunConfig& config) {
  std::ostringstream os;
  std::string section;
  for (const auto& e : entries()) {
    if (e.key.section != section) {
      if (!section.empty()) os << '\n';
      section = e.key.section;
      os << '[' << section << "]\n";
    }
    os << e.key.name << " = " << e.get(config) << '\n';
  }
  return os.str();
}

void RunConfig::validate() const {
  train.validate();
  ModelConfig probe = model;
  probe.validate();
  if (!(graph_threshold >= 0.0 && graph_threshold <= 1.0)) {
    throw ConfigError("graph-threshold must lie in [0, 1]");
  }
  if (analysis_split != "train" && analysis_split != "valid" && analysis_split != "test") {
    throw ConfigError("analysis-split must be train, valid or test");
  }
  if (analysis_fold >= train.folds) throw ConfigError("analysis-fold must be below the fold count");
  if (synthetic_options.min_length == 0 || synthetic_options.min_length > synthetic_options.max_length) {
    throw ConfigError("synthetic lengths need 1 <= min-length <= max-length");
  }
  if (synthetic_options.questions == 0 || synthetic_options.concepts == 0 || synthetic_options.students == 0) {
    throw ConfigError("synthetic students, questions and concepts must be positive");
  }
  if (needs_data(command) && !synthetic) {
    if (data_path.empty()) throw ConfigError("no data: pass --data PATH or --synthetic");
    if (!std::filesystem::is_regular_file(data_path)) throw ConfigError(data_path + ": data file not found");
  }
  if (command == "analyze" && checkpoint.empty()) throw ConfigError("analyze needs --checkpoint PATH");
}

}  // namespace ktm
