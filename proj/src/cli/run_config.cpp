#include <algorithm>

#include "mmta/binary_io.hpp"
#include "mmta/cli.hpp"
#include "mmta/error.hpp"

namespace mmta::cli {

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      {"data_dir", "data", "paths", "Directory holding train.bin, val.bin and test.bin"},
      {"train_data", "", "paths", "Training split (binary file or CSV directory); default <data_dir>/train.bin"},
      {"val_data", "", "paths", "Validation split; default <data_dir>/val.bin"},
      {"test_data", "", "paths", "Test split; default <data_dir>/test.bin"},
      {"out_dir", "runs/default", "paths", "Run directory for checkpoints, logs and reports"},

      {"classes", "5", "data", "Number of action classes C"},
      {"input_dim", "16", "data", "Per-frame feature width d_in"},
      {"train_count", "200", "generator", "Training sequences to generate"},
      {"val_count", "50", "generator", "Validation sequences to generate"},
      {"test_count", "50", "generator", "Test sequences to generate"},
      {"min_length", "300", "generator", "Shortest sequence, frames"},
      {"max_length", "600", "generator", "Longest sequence, frames"},
      {"min_duration", "10", "generator", "Shortest segment, frames"},
      {"max_duration", "40", "generator", "Longest segment, frames"},
      {"separation", "1", "generator", "Norm of every class mean"},
      {"noise", "1", "generator", "Per-frame Gaussian noise standard deviation"},
      {"blur", "4", "generator", "Boundary blur half-width, frames"},
      {"data_seed", "0", "generator", "Generator seed"},

      {"layers", "3", "model", "Encoder layers M"},
      {"heads", "4", "model", "Attention heads (must divide model_dim)"},
      {"model_dim", "32", "model", "Model width d_model"},
      {"ffn_hidden", "0", "model", "Feed-forward hidden width; 0 means 2*model_dim"},
      {"attention", "mmta", "model", "mmta or global"},
      {"window", "32", "model", "Window size w"},
      {"overlap", "24", "model", "Window overlap o (stride s = w - o)"},
      {"dropout", "0.2", "model", "Dropout rate on attention weights and feed-forward output"},
      {"positional_encoding", "false", "model", "Add sinusoidal positions after the input projection"},
      {"activation", "relu", "model", "Feed-forward activation: relu or tanh"},
      {"conventional_residual", "false", "model", "Also add a residual connection around attention"},
      {"precision", "f64", "model", "f64 or f32 arithmetic"},

      {"epochs", "25", "train", "Training epochs"},
      {"batch_size", "2", "train", "Sequences per gradient step"},
      {"learning_rate", "0.001", "train", "Initial learning rate"},
      {"patience", "5", "train", "Epochs without validation improvement before decay"},
      {"plateau_factor", "0.01", "train", "Learning-rate multiplier applied on a plateau"},
      {"min_delta", "0", "train", "Validation improvement threshold"},
      {"momentum", "0.9", "train", "SGD momentum"},
      {"weight_decay", "0.0001", "train", "L2 weight decay (not applied to LayerNorm parameters)"},
      {"clip_norm", "5", "train", "Global gradient-norm clip"},
      {"focal_alpha", "0.25", "train", "Focal loss alpha"},
      {"focal_gamma", "2", "train", "Focal loss gamma"},
      {"seed", "0", "train", "Seed for initialisation, shuffling and dropout"},

      {"checkpoint", "", "eval", "Checkpoint to evaluate; empty evaluates best.ckpt and final.ckpt in out_dir"},
      {"eval_split", "test", "eval", "Split to evaluate: train, val or test"},
      {"predictor", "model", "eval", "model, or ground-truth to score the labels against themselves"},
      {"smooth", "1", "eval", "Odd boxcar width applied to logits before argmax"},
      {"timelines", "false", "eval", "Also write text timelines per sequence"},
      {"timeline_width", "100", "eval", "Columns per timeline row"},

      {"bench_lengths", "1000,2000,4000,8000", "bench", "Comma-separated sequence lengths"},
      {"bench_window", "200", "bench", "Window size for the windowed method"},
      {"bench_overlap", "190", "bench", "Window overlap for the windowed method"},
      {"bench_dim", "64", "bench", "Model width"},
      {"bench_heads", "4", "bench", "Attention heads"},
      {"bench_repeats", "3", "bench", "Timed repeats per cell (minimum is reported)"},
      {"bench_seed", "0", "bench", "Seed for synthetic inputs and weights"},

      {"sweep_grid", "16:8,16:4,32:16,32:8,64:32,64:16", "sweep", "Comma-separated w:s cells"},
      {"sweep_global", "true", "sweep", "Also train the global-attention reference"},
  };
  return schema;
}

namespace {

const ConfigKey* find_key(std::string_view name) {
  for (const auto& k : config_schema())
    if (k.name == name) return &k;
  return nullptr;
}

}  // namespace

const std::string& RunConfig::get(std::string_view key) const {
  auto it = values.find(key);
  if (it == values.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  return it->second;
}

std::size_t RunConfig::size(std::string_view key) const { return parse_size(key, get(key)); }
double RunConfig::real(std::string_view key) const { return parse_real(key, get(key)); }
bool RunConfig::flag(std::string_view key) const { return parse_bool(key, get(key)); }
std::filesystem::path RunConfig::path(std::string_view key) const { return get(key); }

EncoderConfig RunConfig::encoder() const {
  EncoderConfig c = EncoderConfig::from_key_values(values);
  c.validate();
  return c;
}

TrainConfig RunConfig::training() const {
  TrainConfig c = TrainConfig::from_key_values(values);
  c.validate();
  return c;
}

GeneratorConfig RunConfig::generator() const {
  GeneratorConfig c = GeneratorConfig::from_key_values(values);
  c.validate();
  return c;
}

std::filesystem::path RunConfig::split_path(std::string_view split) const {
  const std::string& explicit_path = get(std::string(split) + "_data");
  if (!explicit_path.empty()) return explicit_path;
  return path("data_dir") / (std::string(split) + ".bin");
}

std::string RunConfig::to_text() const {
  std::string out = "# Resolved mmta configuration. Re-run with --config <this file>.\n";
  std::string group;
  for (const auto& k : config_schema()) {
    if (k.group != group) {
      group = k.group;
      out += "\n# " + group + "\n";
    }
    out += k.name + " = " + get(k.name) + "\n";
  }
  return out;
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& config_file, const KeyValues& overrides) {
  RunConfig config;
  for (const auto& k : config_schema()) config.values[k.name] = k.default_value;
  auto apply = [&](const KeyValues& kv, const std::string& source) {
    for (const auto& [key, value] : kv) {
      if (find_key(key) == nullptr) throw ConfigError(source + ": unknown config key '" + key + "'");
      config.values[key] = value;
      config.explicit_keys.insert(key);
    }
  };
  if (config_file) {
    if (!std::filesystem::exists(*config_file)) throw IoError("config file not found: " + config_file->string());
    apply(parse_key_values(binio::read_file(*config_file), config_file->string()), config_file->string());
  }
  apply(overrides, "command line");
  return config;
}

void echo_config(const RunConfig& config, const std::filesystem::path& dir) {
  binio::write_file(dir / "config.resolved", config.to_text());
}

std::vector<std::pair<std::size_t, std::size_t>> parse_grid(std::string_view text) {
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  while (!text.empty()) {
    const auto comma = text.find(',');
    std::string_view cell = text.substr(0, comma);
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
    const auto colon = cell.find(':');
    if (colon == std::string_view::npos) {
      throw ConfigError("sweep_grid: cell '" + std::string(cell) + "' is not of the form w:s");
    }
    const std::size_t w = parse_size("sweep_grid", cell.substr(0, colon));
    const std::size_t s = parse_size("sweep_grid", cell.substr(colon + 1));
    if (s == 0 || s > w) {
      throw ConfigError("sweep_grid: cell '" + std::string(cell) + "' needs 1 <= s <= w");
    }
    cells.emplace_back(w, s);
  }
  return cells;
}

}  // namespace mmta::cli
