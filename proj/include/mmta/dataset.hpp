#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmta/matrix.hpp"

namespace mmta {

// One labelled sequence: T feature rows and T class indices.
struct Sequence {
  std::string name;
  Matrix features;
  std::vector<std::uint16_t> labels;

  std::size_t length() const { return labels.size(); }
  bool operator==(const Sequence&) const = default;
};

// One split of a dataset. Splits live in separate files.
struct Dataset {
  std::size_t classes = 0;
  std::size_t feature_dim = 0;
  std::vector<Sequence> sequences;

  std::size_t frame_count() const;
  // Throws ShapeError / LabelError on inconsistent sequences.
  void validate() const;
  bool operator==(const Dataset&) const = default;
};

inline constexpr std::uint32_t kDatasetVersion = 1;

// Name given to the index-th sequence of a split: seq00000, seq00001, ...
std::string sequence_name(std::size_t index);

std::string encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::string_view bytes, std::string_view source = "<memory>");
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// Text interchange: a directory holding one `<name>.csv` per sequence with
// rows `frame,label,f0,f1,...` after a header line. Sequences load in
// file-name order.
void save_dataset_csv(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset_csv(const std::filesystem::path& dir, std::size_t classes);

// Binary file, or CSV directory when `path` is a directory.
Dataset load_dataset_any(const std::filesystem::path& path, std::size_t classes_hint = 0);

}  // namespace mmta
