#include "mmta/synthdata.hpp"

#include <cmath>
#include <random>

#include "mmta/error.hpp"
#include "mmta/rng.hpp"

namespace mmta {

void GeneratorConfig::validate() const {
  if (classes < 2) throw ConfigError("classes must be at least 2");
  if (classes > 65535) throw ConfigError("classes must fit in 16 bits");
  if (feature_dim == 0) throw ConfigError("feature_dim must be positive");
  if (min_duration == 0) throw ConfigError("min_duration must be at least 1");
  if (max_duration < min_duration) {
    throw ConfigError("max_duration (" + std::to_string(max_duration) + ") is below min_duration (" +
                      std::to_string(min_duration) + ")");
  }
  if (min_length < min_duration) {
    throw ConfigError("min_length (" + std::to_string(min_length) + ") is below min_duration (" +
                      std::to_string(min_duration) + ")");
  }
  if (max_length < min_length) {
    throw ConfigError("max_length (" + std::to_string(max_length) + ") is below min_length (" +
                      std::to_string(min_length) + ")");
  }
  if (max_length - min_length + 1 < max_duration) {
    throw ConfigError("max_duration (" + std::to_string(max_duration) + ") exceeds the length range width " +
                      std::to_string(max_length - min_length + 1) + "; sequences could not stay within max_length");
  }
  if (!(separation >= 0.0)) throw ConfigError("separation must be non-negative");
  if (!(noise >= 0.0)) throw ConfigError("noise must be non-negative");
  if (!(blur >= 0.0)) throw ConfigError("blur must be non-negative");
}

KeyValues GeneratorConfig::to_key_values() const {
  return {
      {"classes", std::to_string(classes)},
      {"input_dim", std::to_string(feature_dim)},
      {"train_count", std::to_string(train_count)},
      {"val_count", std::to_string(val_count)},
      {"test_count", std::to_string(test_count)},
      {"min_length", std::to_string(min_length)},
      {"max_length", std::to_string(max_length)},
      {"min_duration", std::to_string(min_duration)},
      {"max_duration", std::to_string(max_duration)},
      {"separation", format_real(separation)},
      {"noise", format_real(noise)},
      {"blur", format_real(blur)},
      {"data_seed", std::to_string(seed)},
  };
}

GeneratorConfig GeneratorConfig::from_key_values(const KeyValues& kv) {
  GeneratorConfig c;
  c.classes = kv_size(kv, "classes", c.classes);
  c.feature_dim = kv_size(kv, "input_dim", c.feature_dim);
  c.train_count = kv_size(kv, "train_count", c.train_count);
  c.val_count = kv_size(kv, "val_count", c.val_count);
  c.test_count = kv_size(kv, "test_count", c.test_count);
  c.min_length = kv_size(kv, "min_length", c.min_length);
  c.max_length = kv_size(kv, "max_length", c.max_length);
  c.min_duration = kv_size(kv, "min_duration", c.min_duration);
  c.max_duration = kv_size(kv, "max_duration", c.max_duration);
  c.separation = kv_real(kv, "separation", c.separation);
  c.noise = kv_real(kv, "noise", c.noise);
  c.blur = kv_real(kv, "blur", c.blur);
  c.seed = kv_size(kv, "data_seed", c.seed);
  return c;
}

namespace {

Matrix draw_means(const GeneratorConfig& cfg, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix means(cfg.classes, cfg.feature_dim);
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    double norm = 0.0;
    while (norm == 0.0) {
      for (double& v : means.row(c)) v = normal(rng);
      norm = frobenius_norm(slice_rows(means, c, c + 1));
    }
    for (double& v : means.row(c)) v *= cfg.separation / norm;
  }
  return means;
}

Sequence draw_sequence(const GeneratorConfig& cfg, const Matrix& means, Rng& rng, std::string name) {
  std::uniform_int_distribution<std::size_t> target_dist(cfg.min_length, cfg.max_length - cfg.max_duration + 1);
  std::uniform_int_distribution<std::size_t> duration_dist(cfg.min_duration, cfg.max_duration);
  std::uniform_int_distribution<std::size_t> first_class(0, cfg.classes - 1);
  std::uniform_int_distribution<std::size_t> next_class(0, cfg.classes - 2);

  Sequence s;
  s.name = std::move(name);
  const std::size_t target = target_dist(rng);
  std::size_t label = first_class(rng);
  while (s.labels.size() < target) {
    if (!s.labels.empty()) {
      // Uniform over the other classes.
      const std::size_t pick = next_class(rng);
      label = pick >= label ? pick + 1 : pick;
    }
    s.labels.insert(s.labels.end(), duration_dist(rng), static_cast<std::uint16_t>(label));
  }

  const std::size_t length = s.labels.size();
  std::normal_distribution<double> noise(0.0, cfg.noise);
  s.features = Matrix(length, cfg.feature_dim);
  for (std::size_t t = 0; t < length; ++t) {
    auto row = s.features.row(t);
    blurred_mean(means, s.labels, t, cfg.blur, row);
    if (cfg.noise > 0.0)
      for (double& v : row) v += noise(rng);
  }
  return s;
}

}  // namespace

void blurred_mean(const Matrix& means, std::span<const std::uint16_t> labels, std::size_t t, double blur,
                  std::span<double> out) {
  const auto own = means.row(labels[t]);
  std::copy(own.begin(), own.end(), out.begin());
  if (blur <= 0.0) return;
  // Nearest boundary to the frame center t + 0.5.
  const double center = static_cast<double>(t) + 0.5;
  std::size_t boundary = 0;
  double best = blur;
  const auto reach = static_cast<std::size_t>(std::ceil(blur));
  const std::size_t lo = t >= reach ? t - reach + 1 : 1;
  const std::size_t hi = std::min(labels.size() - 1, t + reach);
  for (std::size_t b = lo; b <= hi; ++b) {
    if (labels[b] == labels[b - 1]) continue;
    const double dist = std::abs(center - static_cast<double>(b));
    if (dist < best) {
      best = dist;
      boundary = b;
    }
  }
  if (boundary == 0) return;
  const double lambda = (center - static_cast<double>(boundary) + blur) / (2.0 * blur);
  const auto left = means.row(labels[boundary - 1]);
  const auto right = means.row(labels[boundary]);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - lambda) * left[i] + lambda * right[i];
}

Matrix class_means(const GeneratorConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  return draw_means(cfg, rng);
}

SplitDataset generate(const GeneratorConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const Matrix means = draw_means(cfg, rng);
  SplitDataset out;
  for (auto [ds, count] : {std::pair{&out.train, cfg.train_count}, std::pair{&out.val, cfg.val_count},
                            std::pair{&out.test, cfg.test_count}}) {
    ds->classes = cfg.classes;
    ds->feature_dim = cfg.feature_dim;
    for (std::size_t i = 0; i < count; ++i) ds->sequences.push_back(draw_sequence(cfg, means, rng, sequence_name(i)));
  }
  return out;
}

}  // namespace mmta
