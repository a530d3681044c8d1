#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mmta/encoder.hpp"
#include "mmta/keyvalue.hpp"
#include "mmta/metrics.hpp"
#include "mmta/synthdata.hpp"
#include "mmta/training.hpp"

namespace mmta::cli {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string group;
  std::string help;
};

// Every recognised key with its default. Flags mirror keys one-to-one.
const std::vector<ConfigKey>& config_schema();

// Fully resolved settings: schema defaults, then the config file, then flags.
struct RunConfig {
  KeyValues values;
  // Keys given in the config file or on the command line.
  std::set<std::string, std::less<>> explicit_keys;

  const std::string& get(std::string_view key) const;
  std::size_t size(std::string_view key) const;
  double real(std::string_view key) const;
  bool flag(std::string_view key) const;
  std::filesystem::path path(std::string_view key) const;

  EncoderConfig encoder() const;
  TrainConfig training() const;
  GeneratorConfig generator() const;

  // Dataset split file: `<split>_data` if set, else `<data_dir>/<split>.bin`.
  std::filesystem::path split_path(std::string_view split) const;

  // Header comment plus one `key = value` line per schema key.
  std::string to_text() const;
};

// Unknown keys raise ConfigError.
RunConfig resolve_config(const std::optional<std::filesystem::path>& config_file, const KeyValues& overrides);

// Writes <dir>/config.resolved.
void echo_config(const RunConfig& config, const std::filesystem::path& dir);

void cmd_gen_data(const RunConfig& config, std::ostream& log);
void cmd_train(const RunConfig& config, std::ostream& log);
void cmd_eval(const RunConfig& config, std::ostream& log);
void cmd_bench(const RunConfig& config, std::ostream& log);
void cmd_sweep(const RunConfig& config, std::ostream& log);

struct TrainSummary {
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  double final_val_loss = 0.0;
};

// Trains with `config` and writes checkpoints and logs under `out_dir`.
TrainSummary train_run(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& log);

// Scores one checkpoint on a split; writes the JSON report (and timelines if
// enabled) next to `report_path`.
EvaluationReport evaluate_checkpoint(const RunConfig& config, const std::filesystem::path& checkpoint,
                                     const Dataset& data, const std::filesystem::path& report_path);

struct BenchRow {
  std::size_t length = 0;
  std::string method;
  double seconds = 0.0;
  std::size_t peak_bytes = 0;
};

// Forward-pass wall time (minimum over repeats) and peak matrix allocation
// for windowed and global attention at each length.
std::vector<BenchRow> run_bench(const std::vector<std::size_t>& lengths, std::size_t window, std::size_t overlap,
                                std::size_t dim, std::size_t heads, std::size_t repeats, std::uint64_t seed);

struct SweepCell {
  std::string label;
  std::size_t window = 0;
  std::size_t stride = 0;
  bool global = false;
  double mean_membership = 0.0;
  std::optional<double> edit_score;
  std::optional<double> action_error_rate;
  std::string error;
};

std::vector<std::pair<std::size_t, std::size_t>> parse_grid(std::string_view text);

// Runs `argv` as the mmta tool; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

enum ExitCode : int { kOk = 0, kOther = 1, kConfig = 2, kIo = 3, kNumeric = 4 };

}  // namespace mmta::cli
