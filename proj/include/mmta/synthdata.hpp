#pragma once

#include <cstdint>

#include "mmta/dataset.hpp"
#include "mmta/keyvalue.hpp"

namespace mmta {

struct GeneratorConfig {
  std::size_t classes = 5;
  std::size_t feature_dim = 16;
  std::size_t train_count = 200;
  std::size_t val_count = 50;
  std::size_t test_count = 50;
  std::size_t min_length = 300;
  std::size_t max_length = 600;
  std::size_t min_duration = 10;
  std::size_t max_duration = 40;
  // Distance of every class mean from the origin.
  double separation = 1.0;
  double noise = 1.0;
  // Frames on each side of a boundary over which the mean is interpolated.
  double blur = 4.0;
  std::uint64_t seed = 0;

  // Throws ConfigError naming the offending field.
  void validate() const;
  KeyValues to_key_values() const;
  static GeneratorConfig from_key_values(const KeyValues& kv);
};

struct SplitDataset {
  Dataset train;
  Dataset val;
  Dataset test;
};

// Class means (classes × feature_dim): `separation` times a random unit
// vector per class. These are the first draws of the generator stream.
Matrix class_means(const GeneratorConfig& cfg);

// Per sequence: a length target uniform in [min_length, max_length -
// max_duration + 1]; segment durations uniform in [min_duration,
// max_duration] drawn until the target is reached; classes uniform with no
// immediate repeats. Feature = (blurred) class mean + N(0, noise^2).
SplitDataset generate(const GeneratorConfig& cfg);

// Mean feature of frame t given its labels, before noise. Near a boundary at
// frame B (labels change between B-1 and B) with |t + 0.5 - B| < blur, the
// mean moves linearly from the left class mean to the right one.
void blurred_mean(const Matrix& means, std::span<const std::uint16_t> labels, std::size_t t, double blur,
                  std::span<double> out);

}  // namespace mmta
