#pragma once

#include <concepts>
#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mmta/rng.hpp"

namespace mmta {

// Process-wide accounting of bytes held by matrix buffers. Used to measure
// peak working memory of a forward pass without OS-level probes.
class AllocationCounter {
 public:
  static void on_allocate(std::size_t bytes) noexcept;
  static void on_deallocate(std::size_t bytes) noexcept;
  static std::size_t current() noexcept;
  static std::size_t peak() noexcept;
  // Restarts peak tracking from the current level.
  static void reset_peak() noexcept;
};

template <typename T>
struct CountingAllocator {
  using value_type = T;

  CountingAllocator() noexcept = default;
  template <typename U>
  CountingAllocator(const CountingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    AllocationCounter::on_allocate(n * sizeof(T));
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    AllocationCounter::on_deallocate(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }

  template <typename U>
  bool operator==(const CountingAllocator<U>&) const noexcept {
    return true;
  }
};

// Dense row-major 2-D array.
template <std::floating_point Real>
class BasicMatrix {
 public:
  using value_type = Real;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, Real fill = Real{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static BasicMatrix from_rows(std::initializer_list<std::initializer_list<Real>> rows);
  static BasicMatrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Real& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  Real operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<Real> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const Real> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<Real> values() noexcept { return {data_.data(), data_.size()}; }
  std::span<const Real> values() const noexcept { return {data_.data(), data_.size()}; }
  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }

  void fill(Real value);
  bool same_shape(const BasicMatrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  // Exact elementwise equality.
  bool operator==(const BasicMatrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real, CountingAllocator<Real>> data_;
};

using Matrix = BasicMatrix<double>;
using MatrixF = BasicMatrix<float>;

// "RxC" for diagnostics.
template <std::floating_point Real>
std::string shape_string(const BasicMatrix<Real>& m);

template <std::floating_point To, std::floating_point From>
BasicMatrix<To> convert(const BasicMatrix<From>& m) {
  BasicMatrix<To> out(m.rows(), m.cols());
  auto src = m.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
  return out;
}

// a · b
template <std::floating_point Real>
BasicMatrix<Real> matmul(const BasicMatrix<Real>& a, const BasicMatrix<Real>& b);
// a · bᵀ
template <std::floating_point Real>
BasicMatrix<Real> matmul_bt(const BasicMatrix<Real>& a, const BasicMatrix<Real>& b);
// aᵀ · b
template <std::floating_point Real>
BasicMatrix<Real> matmul_at(const BasicMatrix<Real>& a, const BasicMatrix<Real>& b);

template <std::floating_point Real>
BasicMatrix<Real> transpose(const BasicMatrix<Real>& m);

template <std::floating_point Real>
BasicMatrix<Real> add(const BasicMatrix<Real>& a, const BasicMatrix<Real>& b);

// Adds a 1×cols row to every row of m.
template <std::floating_point Real>
BasicMatrix<Real> add_row(const BasicMatrix<Real>& m, const BasicMatrix<Real>& row);

template <std::floating_point Real>
BasicMatrix<Real> scale(const BasicMatrix<Real>& m, Real factor);

template <std::floating_point Real>
BasicMatrix<Real> relu(const BasicMatrix<Real>& m);

// Row-wise softmax with per-row max subtraction.
template <std::floating_point Real>
BasicMatrix<Real> softmax_rows(const BasicMatrix<Real>& m);

// Per-row normalization to zero mean / unit variance, then gain and bias
// (both 1×cols). Variance is the biased (population) estimate.
template <std::floating_point Real>
BasicMatrix<Real> layer_norm(const BasicMatrix<Real>& m, const BasicMatrix<Real>& gain,
                             const BasicMatrix<Real>& bias, Real eps);

// Inverted dropout: kept entries are divided by (1 - rate). rate == 0 is the
// identity and draws nothing from rng.
template <std::floating_point Real>
BasicMatrix<Real> dropout(const BasicMatrix<Real>& m, double rate, Rng& rng);

// Keep-mask for inverted dropout; entries are 0 or 1/(1-rate).
template <std::floating_point Real>
BasicMatrix<Real> dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng);

template <std::floating_point Real>
BasicMatrix<Real> slice_rows(const BasicMatrix<Real>& m, std::size_t begin, std::size_t end);

template <std::floating_point Real>
BasicMatrix<Real> slice_cols(const BasicMatrix<Real>& m, std::size_t begin, std::size_t end);

template <std::floating_point Real>
bool all_finite(const BasicMatrix<Real>& m);

template <std::floating_point Real>
double frobenius_norm(const BasicMatrix<Real>& m);

}  // namespace mmta
