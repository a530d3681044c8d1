#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mmta/encoder.hpp"
#include "mmta/keyvalue.hpp"
#include "mmta/matrix.hpp"

namespace mmta {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// On-disk model: a config record plus named tensors stored as 64-bit reals.
// Byte layout is documented in docs/formats.md.
struct Checkpoint {
  KeyValues config;
  std::vector<std::pair<std::string, Matrix>> tensors;

  bool operator==(const Checkpoint&) const = default;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes, std::string_view source = "<memory>");

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <std::floating_point Real>
Checkpoint to_checkpoint(const EncoderModel<Real>& model);

// Rebuilds a model; tensor names and shapes must match the recorded config.
template <std::floating_point Real>
EncoderModel<Real> model_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace mmta
