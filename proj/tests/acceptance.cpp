// Acceptance checks for the mmta library and tool. Prints one
// [PASS]/[FAIL] line per criterion and exits non-zero if any fail.
//
//   mmta_acceptance [--only 1,2,...] [--work-dir DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "attention_oracles.hpp"
#include "metric_oracles.hpp"
#include "mmta/attention.hpp"
#include "mmta/binary_io.hpp"
#include "mmta/cli.hpp"
#include "mmta/encoder.hpp"
#include "mmta/metrics.hpp"
#include "mmta/training.hpp"
#include "test_support.hpp"

namespace mmta {
namespace {

namespace fs = std::filesystem;
using testing::max_abs_diff;
using testing::random_matrix;

// Tolerances and budgets.
constexpr double kEquivalenceTol = 1e-9;
constexpr double kRowSumTol = 1e-9;
constexpr double kOverlapOracleTol = 1e-10;
constexpr double kGradRelTol = 1e-4;
constexpr double kUniformMassTol = 1e-12;
constexpr double kDilutionLow = 0.4, kDilutionHigh = 0.6;
constexpr double kMmtaRatioLow = 1.7, kMmtaRatioHigh = 2.6;
constexpr double kGlobalRatioLow = 3.2, kGlobalRatioHigh = 5.0;
constexpr double kBenchBudgetSeconds = 300.0;
constexpr double kEquivalenceBudgetSeconds = 60.0;
constexpr double kDirectionalMinEs = 60.0;
constexpr double kDirectionalGapFloor = -0.5;
constexpr double kDirectionalBudgetSeconds = 3600.0;
constexpr double kSweepEsTol = 1.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Random heads/width pair with heads dividing the width.
std::pair<std::size_t, std::size_t> random_heads_and_width(Rng& rng) {
  const std::size_t heads = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
  const std::size_t head_dim = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
  return {heads, heads * head_dim};
}

Outcome equivalence() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t T = std::uniform_int_distribution<std::size_t>(1, 32)(rng);
    const std::size_t w = std::uniform_int_distribution<std::size_t>(T, 48)(rng);
    const std::size_t o = std::uniform_int_distribution<std::size_t>(0, w - 1)(rng);
    auto [heads, d] = random_heads_and_width(rng);
    auto p = AttentionParams<double>::initialize(d, heads, rng);
    Matrix x = random_matrix(T, d, rng, 2.0);
    worst = std::max(worst, max_abs_diff(mmta(x, build_layout(T, {w, o}), p), global_attention(x, p)));
  }
  const double secs = seconds_since(start);
  return {worst <= kEquivalenceTol && secs < kEquivalenceBudgetSeconds,
          fmt("50 configs, max |mmta - global| = %.3g (tol %.0e), %.2fs", worst, kEquivalenceTol, secs)};
}

Outcome normalization() {
  Rng rng(202);
  double worst = 0.0;
  std::size_t rows = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t T = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
    const std::size_t w = std::uniform_int_distribution<std::size_t>(1, 24)(rng);
    const std::size_t o = std::uniform_int_distribution<std::size_t>(0, w - 1)(rng);
    auto [heads, d] = random_heads_and_width(rng);
    auto p = AttentionParams<double>::initialize(d, heads, rng);
    Matrix x = random_matrix(T, d, rng, 3.0);
    AttentionTrace<double> trace;
    mmta(x, build_layout(T, {w, o}), p, {0.0, nullptr, &trace});
    for (const auto& e : trace.entries)
      for (std::size_t r = 0; r < e.weights.rows(); ++r) {
        double s = 0.0;
        for (double v : e.weights.row(r)) s += v;
        worst = std::max(worst, std::abs(s - 1.0));
        ++rows;
      }
  }
  return {rows > 0 && worst <= kRowSumTol,
          fmt("100 passes, %zu softmax rows, max |sum - 1| = %.3g (tol %.0e)", rows, worst, kRowSumTol)};
}

Outcome overlap_oracle() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(300 + seed);
    auto p = AttentionParams<double>::initialize(8, 2, rng);
    Matrix x = random_matrix(16, 8, rng);
    worst = std::max(worst, max_abs_diff(mmta(x, build_layout(16, {6, 3}), p), testing::materialized_mmta(x, 6, 3, p)));
  }
  return {worst <= kOverlapOracleTol,
          fmt("T=16 w=6 o=3, 20 seeds, max deviation %.3g (tol %.0e)", worst, kOverlapOracleTol)};
}

Outcome gradients() {
  EncoderConfig c;
  c.layers = 2;
  c.heads = 2;
  c.model_dim = 8;
  c.input_dim = 4;
  c.classes = 3;
  c.window = {4, 2};
  c.dropout = 0.0;
  const auto model = EncoderModel<double>::initialize(c, 404);
  Rng rng(405);
  Matrix x = random_matrix(10, c.input_dim, rng);
  std::vector<std::uint16_t> labels(10);
  for (auto& l : labels) l = static_cast<std::uint16_t>(std::uniform_int_distribution<int>(0, 2)(rng));
  const GradCheckReport r = grad_check(model, x, labels, 0.25, 2.0, kGradRelTol);
  double worst = 0.0;
  std::size_t skipped = 0;
  for (const auto& e : r.entries) {
    worst = std::max(worst, e.max_relative_error);
    skipped += e.skipped ? 1 : 0;
  }
  return {r.passed() && skipped == 0 && !r.entries.empty(),
          fmt("2 layers, T=10, d_model=8, %zu tensors, max rel err %.3g (tol %.0e)", r.entries.size(), worst,
              kGradRelTol)};
}

Outcome receptive_field() {
  struct Case {
    std::size_t w, s, layers;
  };
  std::string detail;
  bool pass = true;
  for (Case cs : {Case{4, 2, 1}, Case{4, 2, 3}, Case{6, 3, 2}}) {
    EncoderConfig c;
    c.layers = cs.layers;
    c.heads = 2;
    c.model_dim = 8;
    c.input_dim = 5;
    c.classes = 3;
    c.window = {cs.w, cs.w - cs.s};
    const std::size_t bound = effective_receptive_field(c);
    const std::size_t T = 64;
    std::size_t widest = 0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto model = EncoderModel<double>::initialize(c, 500 + seed);
      Rng rng(510 + seed);
      Matrix x = random_matrix(T, c.input_dim, rng);
      const Matrix base = model.logits(x);
      for (std::size_t source = 0; source < T; source += 5) {
        Matrix moved_x = x;
        for (double& v : moved_x.row(source)) v += 1.0;
        const Matrix moved = model.logits(moved_x);
        // Frames on each side of the source (itself included) whose output moved.
        std::size_t left = 0, right = 0;
        for (std::size_t t = 0; t < T; ++t) {
          bool changed = false;
          for (std::size_t k = 0; k < c.classes; ++k) changed |= moved(t, k) != base(t, k);
          if (!changed) continue;
          if (t <= source) left = std::max(left, source - t + 1);
          if (t >= source) right = std::max(right, t - source + 1);
        }
        widest = std::max({widest, left, right});
      }
    }
    pass &= widest <= bound;
    detail += fmt("%s(w=%zu,s=%zu,M=%zu) support %zu <= %zu", detail.empty() ? "" : "; ", cs.w, cs.s, cs.layers,
                  widest, bound);
  }
  return {pass, detail};
}

Outcome dilution() {
  Rng rng(606);
  double worst_uniform = 0.0;
  for (std::size_t T : {256u, 512u})
    for (std::size_t delta : {0u, 3u, 10u}) {
      const double mass = dilution_probe(T, delta, 4, rng, ScoreModel::uniform);
      worst_uniform =
          std::max(worst_uniform, std::abs(mass - static_cast<double>(2 * delta + 1) / static_cast<double>(T)));
    }
  const double m256 = dilution_probe(256, 3, 1000, rng, ScoreModel::gaussian, 64);
  const double m512 = dilution_probe(512, 3, 1000, rng, ScoreModel::gaussian, 64);
  const double ratio = m512 / m256;
  return {worst_uniform <= kUniformMassTol && ratio >= kDilutionLow && ratio <= kDilutionHigh,
          fmt("uniform max error %.2g; gaussian mass %.5f -> %.5f, ratio %.3f in [%.1f, %.1f] (1000 trials)",
              worst_uniform, m256, m512, ratio, kDilutionLow, kDilutionHigh)};
}

std::vector<std::uint16_t> random_labels(Rng& rng, std::size_t max_len, std::size_t alphabet) {
  std::vector<std::uint16_t> s(std::uniform_int_distribution<std::size_t>(0, max_len)(rng));
  for (auto& v : s) v = static_cast<std::uint16_t>(std::uniform_int_distribution<std::size_t>(0, alphabet - 1)(rng));
  return s;
}

Outcome metric_oracles() {
  Rng rng(707);
  std::size_t mismatches = 0, axiom_failures = 0;
  for (int i = 0; i < 500; ++i) {
    const auto a = random_labels(rng, 8, 3), b = random_labels(rng, 8, 3);
    mismatches += levenshtein(a, b) != testing::edit_distance_by_search(a, b, 3) ? 1 : 0;
  }
  for (int i = 0; i < 500; ++i) {
    const auto a = random_labels(rng, 12, 4), b = random_labels(rng, 12, 4), c = random_labels(rng, 12, 4);
    const std::size_t ab = levenshtein(a, b), ba = levenshtein(b, a), bc = levenshtein(b, c), ac = levenshtein(a, c);
    axiom_failures += (ab != ba || ac > ab + bc || levenshtein(a, a) != 0) ? 1 : 0;
  }
  bool trivial = true;
  for (int i = 0; i < 50; ++i) {
    auto g = random_labels(rng, 30, 4);
    if (g.empty()) g.push_back(1);
    const std::vector<std::uint16_t> empty;
    trivial &= edit_score(g, g) == 100.0 && action_error_rate(g, g) == 0.0;
    trivial &= edit_score(g, empty) == 0.0 && action_error_rate(g, empty) == 1.0;
  }
  return {mismatches == 0 && axiom_failures == 0 && trivial,
          fmt("oracle mismatches %zu/500, axiom failures %zu/500, trivial cases %s", mismatches, axiom_failures,
              trivial ? "exact" : "WRONG")};
}

Outcome complexity() {
  const auto start = std::chrono::steady_clock::now();
  const auto rows = cli::run_bench({4000, 8000}, 200, 190, 64, 4, 5, 808);
  const double secs = seconds_since(start);
  auto find = [&](std::size_t T, const char* m) {
    return std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.length == T && r.method == m; })
        ->seconds;
  };
  const double mr = find(8000, "mmta") / find(4000, "mmta");
  const double gr = find(8000, "global") / find(4000, "global");
  return {mr >= kMmtaRatioLow && mr <= kMmtaRatioHigh && gr >= kGlobalRatioLow && gr <= kGlobalRatioHigh &&
              secs < kBenchBudgetSeconds,
          fmt("T 4000->8000: mmta %.3fs->%.3fs ratio %.2f in [%.1f, %.1f]; global %.3fs->%.3fs ratio %.2f in [%.1f, "
              "%.1f]; %.0fs total",
              find(4000, "mmta"), find(8000, "mmta"), mr, kMmtaRatioLow, kMmtaRatioHigh, find(4000, "global"),
              find(8000, "global"), gr, kGlobalRatioLow, kGlobalRatioHigh, secs)};
}

// Runs the tool in-process and returns its exit code.
int tool(std::vector<std::string> args, std::ostream& log) {
  args.insert(args.begin(), "mmta");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data(), log, log);
}

double report_es(const fs::path& report) {
  return nlohmann::json::parse(binio::read_file(report))["edit_score"]["mean"].get<double>();
}

// Desk-scale comparison on the boundary-dense synthetic set. The dataset
// shape is fixed. Class separation, the attention residual, precision and
// the smoothing width were chosen on seed 0 and then held for all seeds.
// Without a residual around attention the global model stays at chance on
// this data, so both models use it.
const std::vector<std::string> kDirectionalData = {
    "--classes=5",      "--input_dim=16",   "--train_count=200", "--val_count=50",    "--test_count=50",
    "--min_length=300", "--max_length=600", "--min_duration=10", "--max_duration=40", "--blur=4",
    "--separation=2",   "--noise=1",        "--data_seed=0"};
const std::vector<std::string> kDirectionalModel = {
    "--layers=3",  "--heads=4",    "--model_dim=32",         "--window=32",     "--overlap=24",
    "--epochs=25", "--dropout=0.2", "--learning_rate=0.001", "--precision=f32", "--conventional_residual=true",
    "--smooth=9"};

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

Outcome directional(const fs::path& work) {
  const auto start = std::chrono::steady_clock::now();
  std::ostringstream log;
  const std::string data = "--data_dir=" + (work / "data").string();
  if (tool(concat({"gen-data", data}, kDirectionalData), log) != 0) return {false, "gen-data failed: " + log.str()};
  std::vector<double> es[2];
  const char* kinds[2] = {"mmta", "global"};
  for (std::size_t seed = 0; seed < 3; ++seed) {
    for (int k = 0; k < 2; ++k) {
      const std::string out = "--out_dir=" + (work / fmt("%s_seed%zu", kinds[k], seed)).string();
      auto args = concat(concat({"train", data, out, std::string("--attention=") + kinds[k],
                                 "--seed=" + std::to_string(seed)},
                                kDirectionalData),
                         kDirectionalModel);
      if (tool(args, log) != 0) return {false, std::string(kinds[k]) + " training failed: " + log.str()};
      args[0] = "eval";
      args.push_back("--checkpoint=" + (work / fmt("%s_seed%zu", kinds[k], seed) / "best.ckpt").string());
      if (tool(args, log) != 0) return {false, std::string(kinds[k]) + " evaluation failed: " + log.str()};
      es[k].push_back(report_es(work / fmt("%s_seed%zu", kinds[k], seed) / "report_test_checkpoint.json"));
      std::cout << fmt("    %s seed %zu: test ES %.2f (%.0fs elapsed)\n", kinds[k], seed, es[k].back(),
                       seconds_since(start))
                << std::flush;
    }
  }
  const double secs = seconds_since(start);
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  const double m = mean(es[0]), g = mean(es[1]);
  return {m - g >= kDirectionalGapFloor && m >= kDirectionalMinEs && g >= kDirectionalMinEs &&
              secs < kDirectionalBudgetSeconds,
          fmt("mean test ES mmta %.2f, global %.2f, gap %+.2f (floor %.1f, both >= %.0f); %.0fs", m, g, m - g,
              kDirectionalGapFloor, kDirectionalMinEs, secs)};
}

Outcome determinism(const fs::path& work) {
  std::ostringstream log;
  const std::vector<std::string> small = {"--train_count=6", "--val_count=3",  "--test_count=3", "--min_length=60",
                                          "--max_length=90", "--max_duration=20", "--model_dim=16", "--heads=2",      "--layers=2",
                                          "--window=16",     "--overlap=8",    "--epochs=3",     "--seed=11",
                                          "--data_seed=12"};
  const std::vector<std::string> files = {"data/train.bin",       "data/val.bin",          "data/test.bin",
                                          "run/init.ckpt",        "run/best.ckpt",         "run/final.ckpt",
                                          "run/train_log.jsonl",  "run/train_summary.json", "run/report_test_best.json",
                                          "run/report_test_final.json"};
  for (const char* rep : {"a", "b"}) {
    const std::string data = "--data_dir=" + (work / rep / "data").string();
    const std::string out = "--out_dir=" + (work / rep / "run").string();
    for (const char* cmd : {"gen-data", "train", "eval"}) {
      if (tool(concat({cmd, data, out}, small), log) != 0) return {false, std::string(cmd) + " failed: " + log.str()};
    }
  }
  std::size_t identical = 0;
  std::string differing;
  for (const auto& f : files) {
    if (binio::read_file(work / "a" / f) == binio::read_file(work / "b" / f)) ++identical;
    else differing += " " + f;
  }
  return {identical == files.size(),
          fmt("%zu/%zu artifacts bit-identical across two runs", identical, files.size()) +
              (differing.empty() ? "" : "; differ:" + differing)};
}

Outcome sweep(const fs::path& work) {
  std::ostringstream log;
  // A smaller synthetic set with the same generator shape keeps this quick.
  const std::vector<std::string> common = {
      "--train_count=40", "--val_count=10", "--test_count=10", "--min_length=80", "--max_length=120",
      "--separation=2",   "--model_dim=16", "--heads=2",       "--layers=2",      "--epochs=8",
      "--conventional_residual=true", "--smooth=9",
      "--learning_rate=0.003", "--data_dir=" + (work / "data").string()};
  if (tool(concat({"gen-data"}, common), log) != 0) return {false, "gen-data failed: " + log.str()};
  const std::vector<std::string> sweep_args = {"sweep", "--sweep_grid=16:8,32:16,32:8,128:128", "--sweep_global=false",
                                               "--out_dir=" + (work / "sweep").string()};
  if (tool(concat(sweep_args, common), log) != 0) return {false, "sweep failed: " + log.str()};
  const std::vector<std::string> global_args = {"train", "--attention=global", "--out_dir=" + (work / "global").string()};
  if (tool(concat(global_args, common), log) != 0) return {false, "global training failed: " + log.str()};
  auto eval_args = concat({"eval", "--attention=global", "--out_dir=" + (work / "global").string(),
                           "--checkpoint=" + (work / "global" / "best.ckpt").string()},
                          common);
  if (tool(eval_args, log) != 0) return {false, "global evaluation failed: " + log.str()};

  const auto doc = nlohmann::json::parse(binio::read_file(work / "sweep" / "sweep.json"));
  const auto& cells = doc["cells"];
  bool complete = cells.size() == 4;
  for (const auto& c : cells) complete &= c["edit_score"].is_number() && c["action_error_rate"].is_number();
  const bool table = fs::exists(work / "sweep" / "sweep.md");
  if (!complete || !table) return {false, "sweep report incomplete"};
  const double degenerate = cells[3]["edit_score"].get<double>();
  const double global = report_es(work / "global" / "report_test_checkpoint.json");
  const double delta = std::abs(degenerate - global);
  return {delta <= kSweepEsTol,
          fmt("4-cell report written; degenerate cell (w=128 >= T_max=120) ES %.2f vs global run %.2f, |dES| %.2f "
              "<= %.1f",
              degenerate, global, delta, kSweepEsTol)};
}

int run_acceptance(int argc, char** argv) {
  CLI::App app{"mmta acceptance checks"};
  std::vector<int> only;
  std::string work_dir = (fs::temp_directory_path() / "mmta_acceptance").string();
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  app.add_option("--work-dir", work_dir, "Scratch directory for generated data and runs");
  CLI11_PARSE(app, argc, argv);

  const fs::path work = work_dir;
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria = {
      {1, "equivalence with global attention when w >= T", equivalence},
      {2, "attention rows normalised", normalization},
      {3, "overlap resolution matches materialised-window oracle", overlap_oracle},
      {4, "gradients match finite differences", gradients},
      {5, "receptive field bounded by w+(M-1)s", receptive_field},
      {6, "attention dilution law", dilution},
      {7, "metric oracles and axioms", metric_oracles},
      {8, "complexity scaling", complexity},
      {9, "windowed model not worse than global on boundary-dense data", [&] { return directional(work / "c9"); }},
      {10, "bit-identical reruns", [&] { return determinism(work / "c10"); }},
      {11, "ablation sweep harness", [&] { return sweep(work / "c11"); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.contains(c.id)) continue;
    fs::remove_all(work / ("c" + std::to_string(c.id)));
    Outcome r;
    try {
      r = c.check();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    failures += r.pass ? 0 : 1;
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << c.id << ". " << c.name << ": " << r.detail << "\n" << std::flush;
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace
}  // namespace mmta

int main(int argc, char** argv) { return mmta::run_acceptance(argc, argv); }
