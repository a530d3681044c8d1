#include "mmta/metrics.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>

#include "mmta/error.hpp"

namespace mmta {

Transcript extract_transcript(std::span<const std::uint16_t> labels) {
  Transcript out;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (out.empty() || out.back().label != labels[t]) {
      out.push_back({labels[t], t, t + 1});
    } else {
      out.back().end = t + 1;
    }
  }
  return out;
}

std::vector<std::uint16_t> expand_transcript(const Transcript& transcript) {
  std::vector<std::uint16_t> out;
  for (const auto& s : transcript) out.insert(out.end(), s.end - s.begin, s.label);
  return out;
}

std::vector<std::uint16_t> segment_classes(const Transcript& transcript) {
  std::vector<std::uint16_t> out;
  out.reserve(transcript.size());
  for (const auto& s : transcript) out.push_back(s.label);
  return out;
}

std::size_t levenshtein(std::span<const std::uint16_t> a, std::span<const std::uint16_t> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double edit_score(std::span<const std::uint16_t> gt, std::span<const std::uint16_t> pred) {
  const std::size_t longest = std::max(gt.size(), pred.size());
  if (longest == 0) return 100.0;
  const double score = 100.0 * (1.0 - static_cast<double>(levenshtein(gt, pred)) / static_cast<double>(longest));
  return std::clamp(score, 0.0, 100.0);
}

double action_error_rate(std::span<const std::uint16_t> gt, std::span<const std::uint16_t> pred) {
  if (gt.empty()) throw MetricError("action error rate is undefined for an empty ground-truth transcript");
  return static_cast<double>(levenshtein(gt, pred)) / static_cast<double>(gt.size());
}

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::optional<double> mean_of(const std::vector<ClassStats>& classes, std::optional<double> ClassStats::*field) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : classes) {
    if (c.*field) {
      sum += *(c.*field);
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

void finish_stats(FrameStats& stats) {
  for (auto& c : stats.classes) {
    c.present = c.true_positive + c.false_positive + c.false_negative > 0;
    if (!c.present) {
      c.sensitivity = c.specificity = c.f1 = std::nullopt;
      continue;
    }
    c.sensitivity = ratio(c.true_positive, c.true_positive + c.false_negative);
    c.specificity = ratio(c.true_negative, c.true_negative + c.false_positive);
    c.f1 = ratio(2 * c.true_positive, 2 * c.true_positive + c.false_positive + c.false_negative);
  }
  stats.macro_sensitivity = mean_of(stats.classes, &ClassStats::sensitivity);
  stats.macro_specificity = mean_of(stats.classes, &ClassStats::specificity);
  stats.macro_f1 = mean_of(stats.classes, &ClassStats::f1);
}

void accumulate_stats(FrameStats& stats, std::span<const std::uint16_t> gt, std::span<const std::uint16_t> pred) {
  if (gt.size() != pred.size()) {
    throw ShapeError("frame_stats: " + std::to_string(gt.size()) + " ground-truth frames vs " +
                     std::to_string(pred.size()) + " predicted");
  }
  const std::size_t classes = stats.classes.size();
  for (std::size_t t = 0; t < gt.size(); ++t) {
    if (gt[t] >= classes || pred[t] >= classes) {
      throw LabelError("frame " + std::to_string(t) + ": label outside [0, " + std::to_string(classes) + ")");
    }
  }
  for (std::size_t c = 0; c < classes; ++c) {
    auto& s = stats.classes[c];
    for (std::size_t t = 0; t < gt.size(); ++t) {
      const bool g = gt[t] == c, p = pred[t] == c;
      if (g && p) ++s.true_positive;
      else if (p) ++s.false_positive;
      else if (g) ++s.false_negative;
      else ++s.true_negative;
    }
  }
  for (std::size_t t = 0; t < gt.size(); ++t) stats.correct += gt[t] == pred[t] ? 1 : 0;
  stats.frames += gt.size();
}

}  // namespace

FrameStats frame_stats(std::span<const std::uint16_t> gt, std::span<const std::uint16_t> pred, std::size_t classes) {
  FrameStats stats;
  stats.classes.resize(classes);
  accumulate_stats(stats, gt, pred);
  finish_stats(stats);
  return stats;
}

char class_glyph(std::size_t c) {
  static constexpr std::string_view kGlyphs = "0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
  return c < kGlyphs.size() ? kGlyphs[c] : '?';
}

namespace {

std::string render_row(const std::vector<std::uint16_t>& labels, std::size_t width) {
  const std::size_t length = labels.size();
  std::string row;
  std::vector<std::size_t> counts;
  for (std::size_t col = 0; col < width; ++col) {
    const std::size_t begin = col * length / width;
    const std::size_t end = std::max(begin + 1, (col + 1) * length / width);
    counts.assign(counts.size(), 0);
    for (std::size_t t = begin; t < end; ++t) {
      if (labels[t] >= counts.size()) counts.resize(labels[t] + 1, 0);
      ++counts[labels[t]];
    }
    const auto best = std::max_element(counts.begin(), counts.end()) - counts.begin();
    row += class_glyph(static_cast<std::size_t>(best));
  }
  return row;
}

}  // namespace

Timeline render_timeline(const Transcript& gt, const Transcript& pred, std::size_t width) {
  const auto g = expand_transcript(gt);
  const auto p = expand_transcript(pred);
  if (g.size() != p.size()) {
    throw ShapeError("render_timeline: ground truth covers " + std::to_string(g.size()) + " frames, prediction " +
                     std::to_string(p.size()));
  }
  if (g.empty() || width == 0) return {};
  return {render_row(g, width), render_row(p, width)};
}

EvaluationReport evaluate_split(std::span<const LabelledPair> pairs, std::size_t classes) {
  EvaluationReport report;
  report.classes = classes;
  report.frames.classes.resize(classes);
  double weighted_es = 0.0, weighted_aer = 0.0;
  for (const auto& pair : pairs) {
    accumulate_stats(report.frames, pair.gt, pair.pred);
    const auto g = segment_classes(extract_transcript(pair.gt));
    const auto p = segment_classes(extract_transcript(pair.pred));
    SequenceScore s;
    s.name = pair.name;
    s.frames = pair.gt.size();
    s.distance = levenshtein(g, p);
    s.gt_segments = g.size();
    s.pred_segments = p.size();
    s.edit_score = edit_score(g, p);
    s.action_error_rate = action_error_rate(g, p);
    report.mean_edit_score += s.edit_score;
    report.mean_action_error_rate += s.action_error_rate;
    weighted_es += s.edit_score * static_cast<double>(s.frames);
    weighted_aer += s.action_error_rate * static_cast<double>(s.frames);
    report.total_distance += s.distance;
    report.total_gt_segments += s.gt_segments;
    report.total_pred_segments += s.pred_segments;
    report.sequences.push_back(std::move(s));
  }
  finish_stats(report.frames);
  if (!pairs.empty()) {
    const double n = static_cast<double>(pairs.size());
    const double frames = static_cast<double>(report.frames.frames);
    report.mean_edit_score /= n;
    report.mean_action_error_rate /= n;
    report.frame_weighted_edit_score = frames > 0 ? weighted_es / frames : 0.0;
    report.frame_weighted_action_error_rate = frames > 0 ? weighted_aer / frames : 0.0;
  }
  return report;
}

namespace {

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

std::string report_to_json(const EvaluationReport& report, int indent) {
  using nlohmann::ordered_json;
  ordered_json doc;
  doc["classes"] = report.classes;
  doc["sequence_count"] = report.sequences.size();
  doc["frame_count"] = report.frames.frames;
  doc["edit_score"] = {{"mean", report.mean_edit_score}, {"frame_weighted", report.frame_weighted_edit_score}};
  doc["action_error_rate"] = {{"mean", report.mean_action_error_rate},
                              {"frame_weighted", report.frame_weighted_action_error_rate}};
  doc["levenshtein_total"] = report.total_distance;
  doc["gt_segments_total"] = report.total_gt_segments;
  doc["pred_segments_total"] = report.total_pred_segments;
  doc["frame_accuracy"] =
      report.frames.frames == 0 ? 0.0 : static_cast<double>(report.frames.correct) / static_cast<double>(report.frames.frames);
  doc["macro"] = {{"sensitivity", optional_json(report.frames.macro_sensitivity)},
                  {"specificity", optional_json(report.frames.macro_specificity)},
                  {"f1", optional_json(report.frames.macro_f1)}};
  ordered_json per_class = ordered_json::array();
  for (std::size_t c = 0; c < report.frames.classes.size(); ++c) {
    const auto& s = report.frames.classes[c];
    per_class.push_back({{"class", c},
                         {"present", s.present},
                         {"tp", s.true_positive},
                         {"fp", s.false_positive},
                         {"fn", s.false_negative},
                         {"tn", s.true_negative},
                         {"sensitivity", optional_json(s.sensitivity)},
                         {"specificity", optional_json(s.specificity)},
                         {"f1", optional_json(s.f1)}});
  }
  doc["per_class"] = per_class;
  ordered_json seqs = ordered_json::array();
  for (const auto& s : report.sequences) {
    seqs.push_back({{"name", s.name},
                    {"frames", s.frames},
                    {"levenshtein", s.distance},
                    {"gt_segments", s.gt_segments},
                    {"pred_segments", s.pred_segments},
                    {"edit_score", s.edit_score},
                    {"action_error_rate", s.action_error_rate}});
  }
  doc["sequences"] = seqs;
  return doc.dump(indent) + "\n";
}

}  // namespace mmta
