#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmta/attention.hpp"
#include "mmta/binary_io.hpp"
#include "mmta/checkpoint.hpp"
#include "mmta/cli.hpp"
#include "mmta/error.hpp"

namespace mmta::cli {
namespace {

using nlohmann::ordered_json;

std::string jsonl(const ordered_json& j) { return j.dump() + "\n"; }

void append_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot append to " + path.string());
  out << text;
}

Dataset load_split(const RunConfig& config, std::string_view split) {
  const auto path = config.split_path(split);
  if (!std::filesystem::exists(path)) {
    throw IoError(std::string(split) + " split not found: " + path.string() + " (run gen-data or set " +
                  std::string(split) + "_data)");
  }
  return load_dataset_any(path, config.size("classes"));
}

template <typename Fn>
decltype(auto) with_precision(Precision precision, Fn&& fn) {
  if (precision == Precision::f32) return fn.template operator()<float>();
  return fn.template operator()<double>();
}

void check_dataset_fits(const EncoderConfig& model, const Dataset& data, std::string_view what) {
  if (data.feature_dim != model.input_dim || data.classes > model.classes) {
    throw ConfigError(std::string(what) + " has input_dim=" + std::to_string(data.feature_dim) + " classes=" +
                      std::to_string(data.classes) + " but the model expects input_dim=" +
                      std::to_string(model.input_dim) + " classes=" + std::to_string(model.classes));
  }
}

}  // namespace

void cmd_gen_data(const RunConfig& config, std::ostream& log) {
  const GeneratorConfig gen = config.generator();
  const auto dir = config.path("data_dir");
  SplitDataset data = generate(gen);
  save_dataset(data.train, dir / "train.bin");
  save_dataset(data.val, dir / "val.bin");
  save_dataset(data.test, dir / "test.bin");
  std::string provenance = "# Synthetic dataset; regenerate with mmta gen-data --config config.resolved\n";
  provenance += "source = synthdata\nformat_version = " + std::to_string(kDatasetVersion) + "\n";
  provenance += format_key_values(gen.to_key_values());
  binio::write_file(dir / "provenance.txt", provenance);
  echo_config(config, dir);
  log << "wrote " << data.train.sequences.size() << "/" << data.val.sequences.size() << "/"
      << data.test.sequences.size() << " train/val/test sequences to " << dir.string() << "\n";
}

TrainSummary train_run(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& log) {
  const EncoderConfig enc = config.encoder();
  const TrainConfig tc = config.training();
  const Dataset train_set = load_split(config, "train");
  const Dataset val_set = load_split(config, "val");
  check_dataset_fits(enc, train_set, "training split");
  check_dataset_fits(enc, val_set, "validation split");
  // The loader reports the dataset's own class count; the model may have more.
  Dataset train_fit = train_set, val_fit = val_set;
  train_fit.classes = val_fit.classes = enc.classes;

  std::filesystem::create_directories(out_dir);
  echo_config(config, out_dir);
  const auto log_path = out_dir / "train_log.jsonl";
  const auto timing_path = out_dir / "train_timing.jsonl";
  binio::write_file(log_path, "");
  binio::write_file(timing_path, "");

  return with_precision(enc.precision, [&]<typename Real>() {
    auto model = EncoderModel<Real>::initialize(enc, tc.seed);
    save_checkpoint(to_checkpoint(model), out_dir / "init.ckpt");
    auto result = train(std::move(model), train_fit, val_fit, tc, [&](const EpochRecord& r) {
      append_text(log_path, jsonl({{"epoch", r.epoch},
                                   {"train_loss", r.train_loss},
                                   {"val_loss", r.val_loss},
                                   {"lr", r.learning_rate}}));
      append_text(timing_path, jsonl({{"epoch", r.epoch}, {"seconds", r.seconds}}));
      char line[160];
      std::snprintf(line, sizeof line, "epoch %3zu  train %.6f  val %.6f  lr %.3g  (%.1fs)\n", r.epoch, r.train_loss,
                    r.val_loss, r.learning_rate, r.seconds);
      log << line << std::flush;
    });
    save_checkpoint(to_checkpoint(result.best_model), out_dir / "best.ckpt");
    save_checkpoint(to_checkpoint(result.final_model), out_dir / "final.ckpt");
    TrainSummary summary;
    summary.best_epoch = result.best_epoch;
    summary.best_val_loss = result.log[result.best_epoch - 1].val_loss;
    summary.final_val_loss = result.log.back().val_loss;
    binio::write_file(out_dir / "train_summary.json",
                      ordered_json{{"epochs", result.log.size()},
                                   {"best_epoch", summary.best_epoch},
                                   {"best_val_loss", summary.best_val_loss},
                                   {"final_val_loss", summary.final_val_loss}}
                              .dump(2) +
                          "\n");
    return summary;
  });
}

void cmd_train(const RunConfig& config, std::ostream& log) {
  const auto out_dir = config.path("out_dir");
  TrainSummary s = train_run(config, out_dir, log);
  log << "best epoch " << s.best_epoch << " (val " << s.best_val_loss << "); checkpoints in " << out_dir.string()
      << "\n";
}

namespace {

// Encoder keys the user set explicitly must agree with the checkpoint.
void check_checkpoint_matches(const RunConfig& config, const Checkpoint& ck, const std::filesystem::path& path) {
  const KeyValues from_ck = EncoderConfig::from_key_values(ck.config).to_key_values();
  const KeyValues from_cfg = EncoderConfig::from_key_values(config.values).to_key_values();
  std::string mismatches;
  for (const auto& [key, value] : from_cfg) {
    if (key == "precision" || !config.explicit_keys.contains(key)) continue;
    auto it = from_ck.find(key);
    if (it != from_ck.end() && it->second != value) {
      mismatches += (mismatches.empty() ? "" : ", ") + key + " (checkpoint " + it->second + ", config " + value + ")";
    }
  }
  if (!mismatches.empty()) {
    throw ConfigError("checkpoint " + path.string() + " does not match the configuration: " + mismatches);
  }
}

std::vector<std::vector<std::uint16_t>> predict_split(const RunConfig& config, const Checkpoint& ck,
                                                      const Dataset& data) {
  const std::size_t smooth = config.size("smooth");
  EncoderConfig enc = EncoderConfig::from_key_values(ck.config);
  check_dataset_fits(enc, data, "evaluation split");
  return with_precision(enc.precision, [&]<typename Real>() {
    auto model = model_from_checkpoint<Real>(ck);
    std::vector<std::vector<std::uint16_t>> out;
    for (const auto& s : data.sequences) out.push_back(predict(model.logits(convert<Real>(s.features)), smooth));
    return out;
  });
}

}  // namespace

EvaluationReport evaluate_checkpoint(const RunConfig& config, const std::filesystem::path& checkpoint,
                                     const Dataset& data, const std::filesystem::path& report_path) {
  const std::string predictor = config.get("predictor");
  std::vector<std::vector<std::uint16_t>> predictions;
  std::size_t classes = data.classes;
  if (predictor == "ground-truth") {
    for (const auto& s : data.sequences) predictions.push_back(s.labels);
  } else if (predictor == "model") {
    if (!std::filesystem::exists(checkpoint)) throw IoError("checkpoint not found: " + checkpoint.string());
    const Checkpoint ck = load_checkpoint(checkpoint);
    check_checkpoint_matches(config, ck, checkpoint);
    predictions = predict_split(config, ck, data);
    classes = std::max(classes, EncoderConfig::from_key_values(ck.config).classes);
  } else {
    throw ConfigError("predictor: expected model or ground-truth, got '" + predictor + "'");
  }
  std::vector<LabelledPair> pairs;
  for (std::size_t i = 0; i < data.sequences.size(); ++i) {
    pairs.push_back({data.sequences[i].name, data.sequences[i].labels, predictions[i]});
  }
  EvaluationReport report = evaluate_split(pairs, classes);
  binio::write_file(report_path, report_to_json(report));
  if (config.flag("timelines")) {
    const std::size_t width = config.size("timeline_width");
    std::string text;
    for (const auto& p : pairs) {
      Timeline tl = render_timeline(extract_transcript(p.gt), extract_transcript(p.pred), width);
      text += p.name + "\n  GT   " + tl.gt + "\n  Pred " + tl.pred + "\n";
    }
    auto timeline_path = report_path;
    timeline_path.replace_extension(".timelines.txt");
    binio::write_file(timeline_path, text);
  }
  return report;
}

void cmd_eval(const RunConfig& config, std::ostream& log) {
  const std::string split = config.get("eval_split");
  if (split != "train" && split != "val" && split != "test") {
    throw ConfigError("eval_split: expected train, val or test, got '" + split + "'");
  }
  const Dataset data = load_split(config, split);
  const auto out_dir = config.path("out_dir");
  std::filesystem::create_directories(out_dir);
  echo_config(config, out_dir);

  std::vector<std::pair<std::string, std::filesystem::path>> targets;
  if (config.get("predictor") == "ground-truth") {
    targets.emplace_back("ground_truth", "");
  } else if (!config.get("checkpoint").empty()) {
    targets.emplace_back("checkpoint", config.path("checkpoint"));
  } else {
    targets.emplace_back("best", out_dir / "best.ckpt");
    targets.emplace_back("final", out_dir / "final.ckpt");
  }
  for (const auto& [tag, ckpt] : targets) {
    const auto report_path = out_dir / ("report_" + split + "_" + tag + ".json");
    EvaluationReport r = evaluate_checkpoint(config, ckpt, data, report_path);
    char line[200];
    std::snprintf(line, sizeof line, "%-12s ES %.2f (frame-weighted %.2f)  AER %.4f  macro-F1 %s  -> %s\n",
                  tag.c_str(), r.mean_edit_score, r.frame_weighted_edit_score, r.mean_action_error_rate,
                  r.frames.macro_f1 ? std::to_string(*r.frames.macro_f1).c_str() : "n/a",
                  report_path.filename().string().c_str());
    log << line;
  }
}

std::vector<BenchRow> run_bench(const std::vector<std::size_t>& lengths, std::size_t window, std::size_t overlap,
                                std::size_t dim, std::size_t heads, std::size_t repeats, std::uint64_t seed) {
  if (repeats == 0) throw ConfigError("bench_repeats must be at least 1");
  const WindowConfig wc{window, overlap};
  wc.validate();
  Rng rng(seed);
  const auto params = AttentionParams<double>::initialize(dim, heads, rng);
  std::vector<BenchRow> rows;
  for (std::size_t length : lengths) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix frames(length, dim);
    for (double& v : frames.values()) v = normal(rng);
    const WindowLayout layout = build_layout(length, wc);
    for (const std::string method : {"mmta", "global"}) {
      BenchRow row{length, method, INFINITY, 0};
      for (std::size_t r = 0; r < repeats; ++r) {
        const std::size_t baseline = AllocationCounter::current();
        AllocationCounter::reset_peak();
        const auto start = std::chrono::steady_clock::now();
        Matrix out = method == "mmta" ? mmta(frames, layout, params) : global_attention(frames, params);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        row.seconds = std::min(row.seconds, secs);
        row.peak_bytes = std::max(row.peak_bytes, AllocationCounter::peak() - baseline);
        if (!all_finite(out)) throw NumericError("bench: non-finite attention output at T=" + std::to_string(length));
      }
      rows.push_back(row);
    }
  }
  return rows;
}

void cmd_bench(const RunConfig& config, std::ostream& log) {
  std::vector<std::size_t> lengths;
  std::string_view text = config.get("bench_lengths");
  while (!text.empty()) {
    const auto comma = text.find(',');
    lengths.push_back(parse_size("bench_lengths", text.substr(0, comma)));
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
  }
  const auto rows = run_bench(lengths, config.size("bench_window"), config.size("bench_overlap"),
                              config.size("bench_dim"), config.size("bench_heads"), config.size("bench_repeats"),
                              config.size("bench_seed"));
  const auto out_dir = config.path("out_dir");
  std::filesystem::create_directories(out_dir);
  echo_config(config, out_dir);

  ordered_json doc;
  doc["window"] = config.size("bench_window");
  doc["overlap"] = config.size("bench_overlap");
  doc["dim"] = config.size("bench_dim");
  doc["heads"] = config.size("bench_heads");
  doc["repeats"] = config.size("bench_repeats");
  doc["rows"] = ordered_json::array();
  std::string tsv = "length\tmethod\tseconds\tpeak_bytes\n";
  for (const auto& r : rows) {
    doc["rows"].push_back({{"length", r.length}, {"method", r.method}, {"seconds", r.seconds}, {"peak_bytes", r.peak_bytes}});
    char line[128];
    std::snprintf(line, sizeof line, "%zu\t%s\t%.6f\t%zu\n", r.length, r.method.c_str(), r.seconds, r.peak_bytes);
    tsv += line;
  }
  // Ratios between consecutive lengths for each method.
  doc["ratios"] = ordered_json::array();
  for (std::size_t i = 2; i < rows.size(); ++i) {
    const BenchRow& cur = rows[i];
    const BenchRow& prev = rows[i - 2];
    doc["ratios"].push_back({{"method", cur.method},
                             {"from", prev.length},
                             {"to", cur.length},
                             {"time_ratio", cur.seconds / prev.seconds},
                             {"peak_ratio", static_cast<double>(cur.peak_bytes) / static_cast<double>(prev.peak_bytes)}});
  }
  binio::write_file(out_dir / "bench.json", doc.dump(2) + "\n");
  binio::write_file(out_dir / "bench.tsv", tsv);
  log << tsv;
}

void cmd_sweep(const RunConfig& config, std::ostream& log) {
  const auto out_dir = config.path("out_dir");
  std::filesystem::create_directories(out_dir);
  echo_config(config, out_dir);
  const Dataset test = load_split(config, "test");

  std::vector<SweepCell> cells;
  for (auto [w, s] : parse_grid(config.get("sweep_grid"))) {
    cells.push_back({"w" + std::to_string(w) + "_s" + std::to_string(s), w, s, false, 0.0, {}, {}, {}});
  }
  if (config.flag("sweep_global")) cells.push_back({"global", 0, 0, true, 0.0, {}, {}, {}});

  for (auto& cell : cells) {
    RunConfig cell_config = config;
    if (cell.global) {
      cell_config.values["attention"] = "global";
    } else {
      cell_config.values["attention"] = "mmta";
      cell_config.values["window"] = std::to_string(cell.window);
      cell_config.values["overlap"] = std::to_string(cell.window - cell.stride);
    }
    const auto cell_dir = out_dir / cell.label;
    try {
      const EncoderConfig enc = cell_config.encoder();
      double members = 0.0;
      std::size_t frames = 0;
      for (const auto& seq : test.sequences) {
        const WindowLayout layout = enc.layout(seq.length());
        for (std::size_t t = 0; t < seq.length(); ++t) members += static_cast<double>(layout.membership_count(t));
        frames += seq.length();
      }
      cell.mean_membership = frames == 0 ? 0.0 : members / static_cast<double>(frames);
      log << "[" << cell.label << "] training\n";
      train_run(cell_config, cell_dir, log);
      EvaluationReport r = evaluate_checkpoint(cell_config, cell_dir / "best.ckpt", test, cell_dir / "report_test_best.json");
      cell.edit_score = r.mean_edit_score;
      cell.action_error_rate = r.mean_action_error_rate;
    } catch (const Error& e) {
      cell.error = e.what();
      log << "[" << cell.label << "] failed: " << e.what() << "\n";
    }
  }

  ordered_json doc = ordered_json::array();
  std::string table = "| w | s | overlap | mean m(t) | ES | AER |\n|---|---|---|---|---|---|\n";
  for (const auto& c : cells) {
    ordered_json row = {{"cell", c.label},
                        {"attention", c.global ? "global" : "mmta"},
                        {"window", c.global ? ordered_json(nullptr) : ordered_json(c.window)},
                        {"stride", c.global ? ordered_json(nullptr) : ordered_json(c.stride)},
                        {"mean_membership", c.mean_membership},
                        {"edit_score", c.edit_score ? ordered_json(*c.edit_score) : ordered_json(nullptr)},
                        {"action_error_rate",
                         c.action_error_rate ? ordered_json(*c.action_error_rate) : ordered_json(nullptr)}};
    if (!c.error.empty()) row["error"] = c.error;
    doc.push_back(row);
    char line[200];
    if (c.edit_score) {
      std::snprintf(line, sizeof line, "| %s | %s | %s | %.2f | %.2f | %.4f |\n",
                    c.global ? "global" : std::to_string(c.window).c_str(),
                    c.global ? "-" : std::to_string(c.stride).c_str(),
                    c.global ? "-" : std::to_string(c.window - c.stride).c_str(), c.mean_membership, *c.edit_score,
                    *c.action_error_rate);
    } else {
      std::snprintf(line, sizeof line, "| %s | %s | %s | %.2f | failed | failed |\n",
                    c.global ? "global" : std::to_string(c.window).c_str(),
                    c.global ? "-" : std::to_string(c.stride).c_str(),
                    c.global ? "-" : std::to_string(c.window - c.stride).c_str(), c.mean_membership);
    }
    table += line;
  }
  binio::write_file(out_dir / "sweep.json", ordered_json{{"cells", doc}}.dump(2) + "\n");
  binio::write_file(out_dir / "sweep.md", table);
  log << table;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"mmta: windowed-attention temporal action segmentation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  struct Command {
    const char* name;
    const char* help;
    void (*fn)(const RunConfig&, std::ostream&);
    std::vector<std::string> groups;
  };
  const std::vector<Command> commands = {
      {"gen-data", "Generate a synthetic dataset", cmd_gen_data, {"paths", "data", "generator"}},
      {"train", "Train an encoder", cmd_train, {"paths", "data", "model", "train"}},
      {"eval", "Score checkpoints on a split", cmd_eval, {"paths", "data", "model", "eval"}},
      {"bench", "Time windowed vs global attention", cmd_bench, {"paths", "bench"}},
      {"sweep", "Train and score a (w, s) grid", cmd_sweep, {"paths", "data", "model", "train", "sweep", "eval"}},
  };

  std::string config_file;
  std::map<std::string, std::string> flag_values;
  std::map<std::string, CLI::App*> subcommands;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config_file, "Flat key = value configuration file")->type_name("FILE");
    // Every key is accepted by every command so a resolved config can be
    // passed back unchanged; only the relevant groups are listed in --help.
    for (const auto& key : config_schema()) {
      const bool listed = std::find(c.groups.begin(), c.groups.end(), key.group) != c.groups.end();
      auto* opt = sub->add_option("--" + key.name, flag_values[key.name],
                                  key.help + " [default: " + (key.default_value.empty() ? "\"\"" : key.default_value) +
                                      "]");
      opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->type_name("VALUE");
      if (listed) opt->group(key.group);
      else opt->group("");
    }
    subcommands[c.name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kConfig;
  }

  try {
    for (const auto& c : commands) {
      CLI::App* sub = subcommands[c.name];
      if (!sub->parsed()) continue;
      KeyValues overrides;
      for (const auto& key : config_schema()) {
        if (sub->count("--" + key.name) > 0) overrides[key.name] = flag_values[key.name];
      }
      std::optional<std::filesystem::path> file;
      if (!config_file.empty()) file = config_file;
      c.fn(resolve_config(file, overrides), out);
    }
    return kOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const LabelError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kOther;
  }
}

}  // namespace mmta::cli
