#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mmta {

// Half-open run [begin, end) of a single class.
struct Segment {
  std::uint16_t label = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const Segment&) const = default;
};

using Transcript = std::vector<Segment>;

// Run-length encoding of per-frame labels.
Transcript extract_transcript(std::span<const std::uint16_t> labels);
std::vector<std::uint16_t> expand_transcript(const Transcript& transcript);
// Segment classes in order, durations dropped.
std::vector<std::uint16_t> segment_classes(const Transcript& transcript);

// Unit-cost edit distance between two class sequences.
std::size_t levenshtein(std::span<const std::uint16_t> a, std::span<const std::uint16_t> b);

// 100 * (1 - L / max(|G|, |P|)); 100 when both are empty.
double edit_score(std::span<const std::uint16_t> gt, std::span<const std::uint16_t> pred);
// L / |G|. Throws MetricError when G is empty.
double action_error_rate(std::span<const std::uint16_t> gt, std::span<const std::uint16_t> pred);

struct ClassStats {
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;
  std::size_t true_negative = 0;
  // False when the class occurs in neither sequence; all rates are then empty.
  bool present = false;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> f1;
};

struct FrameStats {
  std::size_t frames = 0;
  std::size_t correct = 0;
  std::vector<ClassStats> classes;
  // Means over the defined per-class values.
  std::optional<double> macro_sensitivity;
  std::optional<double> macro_specificity;
  std::optional<double> macro_f1;
};

// One-vs-rest frame counts per class.
FrameStats frame_stats(std::span<const std::uint16_t> gt, std::span<const std::uint16_t> pred, std::size_t classes);

// Glyph used for class c in timelines: 0-9, a-z, A-Z, then '?'.
char class_glyph(std::size_t c);

struct Timeline {
  std::string gt;
  std::string pred;
};

// Each column shows the majority class of its frame bucket (ties go to the
// lower class). Both transcripts must cover the same frames.
Timeline render_timeline(const Transcript& gt, const Transcript& pred, std::size_t width);

struct SequenceScore {
  std::string name;
  std::size_t frames = 0;
  std::size_t distance = 0;
  std::size_t gt_segments = 0;
  std::size_t pred_segments = 0;
  double edit_score = 0.0;
  double action_error_rate = 0.0;
};

struct EvaluationReport {
  std::size_t classes = 0;
  std::vector<SequenceScore> sequences;
  double mean_edit_score = 0.0;
  double mean_action_error_rate = 0.0;
  double frame_weighted_edit_score = 0.0;
  double frame_weighted_action_error_rate = 0.0;
  std::size_t total_distance = 0;
  std::size_t total_gt_segments = 0;
  std::size_t total_pred_segments = 0;
  // Pooled over all frames of the split.
  FrameStats frames;
};

struct LabelledPair {
  std::string name;
  std::span<const std::uint16_t> gt;
  std::span<const std::uint16_t> pred;
};

EvaluationReport evaluate_split(std::span<const LabelledPair> pairs, std::size_t classes);

// Stable-keyed JSON document; undefined rates are written as null.
std::string report_to_json(const EvaluationReport& report, int indent = 2);

}  // namespace mmta
