#include "mmta/windowing.hpp"

#include <algorithm>
#include <string>

#include "mmta/error.hpp"

namespace mmta {

void WindowConfig::validate() const {
  if (size < 1) throw ConfigError("window size must be >= 1");
  if (overlap >= size) {
    throw ConfigError("window overlap (" + std::to_string(overlap) + ") must be smaller than window size (" +
                      std::to_string(size) + ")");
  }
}

WindowLayout::WindowLayout(std::size_t length, std::vector<Window> windows)
    : length_(length), windows_(std::move(windows)) {
  std::vector<std::size_t> counts(length_, 0);
  for (const Window& w : windows_)
    for (std::size_t t = w.begin; t < w.end; ++t) ++counts[t];
  member_offsets_.assign(length_ + 1, 0);
  for (std::size_t t = 0; t < length_; ++t) member_offsets_[t + 1] = member_offsets_[t] + counts[t];
  member_ids_.resize(member_offsets_[length_]);
  std::vector<std::size_t> cursor(member_offsets_.begin(), member_offsets_.end() - 1);
  for (std::size_t k = 0; k < windows_.size(); ++k)
    for (std::size_t t = windows_[k].begin; t < windows_[k].end; ++t)
      member_ids_[cursor[t]++] = static_cast<std::uint32_t>(k);
}

WindowLayout WindowLayout::build(std::size_t sequence_length, const WindowConfig& config) {
  config.validate();
  if (sequence_length == 0) throw ShapeError("cannot build a window layout for an empty sequence");
  if (config.size >= sequence_length) return single(sequence_length);
  const std::size_t stride = config.stride();
  const std::size_t count = (sequence_length + stride - 1) / stride;
  std::vector<Window> windows;
  windows.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t begin = k * stride;
    windows.push_back(Window{begin, std::min(begin + config.size, sequence_length)});
  }
  return WindowLayout(sequence_length, std::move(windows));
}

WindowLayout WindowLayout::single(std::size_t sequence_length) {
  if (sequence_length == 0) throw ShapeError("cannot build a window layout for an empty sequence");
  return WindowLayout(sequence_length, {Window{0, sequence_length}});
}

template <std::floating_point Real>
BasicMatrix<Real> aggregate_overlaps(const WindowLayout& layout, std::span<const BasicMatrix<Real>> window_outputs,
                                     std::size_t width, std::span<const std::size_t> summation_order) {
  const std::size_t n = layout.window_count();
  if (window_outputs.size() != n) {
    throw ShapeError("aggregate_overlaps: expected " + std::to_string(n) + " window outputs, got " +
                     std::to_string(window_outputs.size()));
  }
  if (!summation_order.empty() && summation_order.size() != n) {
    throw ShapeError("aggregate_overlaps: summation order must list every window");
  }
  for (std::size_t k = 0; k < n; ++k) {
    const auto& out = window_outputs[k];
    if (out.rows() != layout.window(k).size() || out.cols() != width) {
      throw ShapeError("aggregate_overlaps: window " + std::to_string(k) + " output is " + shape_string(out) +
                       ", expected " + std::to_string(layout.window(k).size()) + "x" + std::to_string(width));
    }
  }
  BasicMatrix<Real> result(layout.sequence_length(), width);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = summation_order.empty() ? i : summation_order[i];
    if (k >= n) throw ShapeError("aggregate_overlaps: summation order names window " + std::to_string(k));
    const Window& w = layout.window(k);
    const auto& out = window_outputs[k];
    for (std::size_t r = 0; r < w.size(); ++r) {
      auto dst = result.row(w.begin + r);
      auto src = out.row(r);
      for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
    }
  }
  for (std::size_t t = 0; t < layout.sequence_length(); ++t) {
    const Real inv = Real{1} / static_cast<Real>(layout.membership_count(t));
    for (Real& v : result.row(t)) v *= inv;
  }
  return result;
}

template BasicMatrix<float> aggregate_overlaps(const WindowLayout&, std::span<const BasicMatrix<float>>, std::size_t,
                                               std::span<const std::size_t>);
template BasicMatrix<double> aggregate_overlaps(const WindowLayout&, std::span<const BasicMatrix<double>>,
                                                std::size_t, std::span<const std::size_t>);

}  // namespace mmta
