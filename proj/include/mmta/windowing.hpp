#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mmta/matrix.hpp"

namespace mmta {

// Window of `size` frames; consecutive windows share `overlap` frames.
struct WindowConfig {
  std::size_t size = 1;
  std::size_t overlap = 0;

  std::size_t stride() const { return size - overlap; }
  // Throws ConfigError unless size >= 1 and overlap < size.
  void validate() const;
};

// Half-open frame range [begin, end).
struct Window {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool contains(std::size_t t) const { return begin <= t && t < end; }
  bool operator==(const Window&) const = default;
};

// Window index sets and per-frame membership for one sequence length.
//
// For window size w < T there are N = ceil(T / s) windows starting at k*s,
// each clamped to the sequence end. Trailing windows that lie inside their
// predecessor are kept. For w >= T the layout is a single window [0, T).
class WindowLayout {
 public:
  static WindowLayout build(std::size_t sequence_length, const WindowConfig& config);
  // One window covering the whole sequence.
  static WindowLayout single(std::size_t sequence_length);

  std::size_t sequence_length() const { return length_; }
  std::size_t window_count() const { return windows_.size(); }
  std::span<const Window> windows() const { return windows_; }
  const Window& window(std::size_t k) const { return windows_[k]; }

  // Indices of the windows containing frame t, ascending.
  std::span<const std::uint32_t> membership(std::size_t t) const {
    return {member_ids_.data() + member_offsets_[t], member_offsets_[t + 1] - member_offsets_[t]};
  }
  std::size_t membership_count(std::size_t t) const { return member_offsets_[t + 1] - member_offsets_[t]; }

 private:
  WindowLayout(std::size_t length, std::vector<Window> windows);

  std::size_t length_ = 0;
  std::vector<Window> windows_;
  std::vector<std::size_t> member_offsets_;
  std::vector<std::uint32_t> member_ids_;
};

inline WindowLayout build_layout(std::size_t sequence_length, const WindowConfig& config) {
  return WindowLayout::build(sequence_length, config);
}

// Overlap-resolution fusion: row t of the result is the mean of the rows of
// every window output that covers frame t. `window_outputs[k]` holds one row
// per frame of window k. Windows are accumulated in `summation_order`
// (ascending when empty).
template <std::floating_point Real>
BasicMatrix<Real> aggregate_overlaps(const WindowLayout& layout, std::span<const BasicMatrix<Real>> window_outputs,
                                     std::size_t width, std::span<const std::size_t> summation_order = {});

}  // namespace mmta
