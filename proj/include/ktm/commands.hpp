#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ktm/data.hpp"
#include "ktm/run_config.hpp"
#include "ktm/train.hpp"

namespace ktm {

// Process exit codes.
namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kInternal = 1;            // unexpected failure
inline constexpr int kUsage = 2;               // bad flags, config or missing data path
inline constexpr int kCorruptCheckpoint = 3;
inline constexpr int kCheckpointMismatch = 4;  // checkpoint does not fit the data or requested model
inline constexpr int kData = 5;                // malformed interaction file
inline constexpr int kDivergence = 6;          // non-finite training loss
inline constexpr int kOutput = 7;              // cannot create or write run outputs
}  // namespace exit_code

class OutputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Loads the CSV or generates the synthetic log, then preprocesses it.
PreparedData load_run_data(const RunConfig& config);

// Creates <out_dir>/<YYYYmmdd-HHMMSS>-seed<seed>, appending -2, -3, ... rather
// than reusing an existing directory.
std::filesystem::path make_run_dir(const std::string& out_dir, std::uint64_t seed);

// Each command writes into `run_dir` and returns the files it produced.
std::vector<std::filesystem::path> cmd_train(const RunConfig& config, const std::filesystem::path& run_dir,
                                             std::ostream& log);
std::vector<std::filesystem::path> cmd_ablate(const RunConfig& config, const std::filesystem::path& run_dir,
                                              std::ostream& log);
std::vector<std::filesystem::path> cmd_analyze(const RunConfig& config, const std::filesystem::path& run_dir,
                                               std::ostream& log);
std::vector<std::filesystem::path> cmd_gen_data(const RunConfig& config, const std::filesystem::path& run_dir,
                                                std::ostream& log);

struct SummaryRow {
  std::string grid;
  MetricsReport report;
};

// Rows sorted by mean AUC, highest first.
std::string format_summary_csv(std::vector<SummaryRow> rows);

// argv-level entry point used by the ktm binary; returns an exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ktm
