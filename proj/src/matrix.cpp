#include "mmta/matrix.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "mmta/error.hpp"

namespace mmta {

namespace {

std::atomic<std::size_t> g_current_bytes{0};
std::atomic<std::size_t> g_peak_bytes{0};

void require_same_shape(const char* op, const auto& a, const auto& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

}  // namespace

void AllocationCounter::on_allocate(std::size_t bytes) noexcept {
  std::size_t now = g_current_bytes.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  std::size_t peak = g_peak_bytes.load(std::memory_order_relaxed);
  while (now > peak && !g_peak_bytes.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
}

void AllocationCounter::on_deallocate(std::size_t bytes) noexcept {
  g_current_bytes.fetch_sub(bytes, std::memory_order_relaxed);
}

std::size_t AllocationCounter::current() noexcept { return g_current_bytes.load(std::memory_order_relaxed); }
std::size_t AllocationCounter::peak() noexcept { return g_peak_bytes.load(std::memory_order_relaxed); }
void AllocationCounter::reset_peak() noexcept {
  g_peak_bytes.store(g_current_bytes.load(std::memory_order_relaxed), std::memory_order_relaxed);
}

template <std::floating_point Real>
BasicMatrix<Real> BasicMatrix<Real>::from_rows(std::initializer_list<std::initializer_list<Real>> rows) {
  std::size_t r = rows.size();
  std::size_t c = r == 0 ? 0 : rows.begin()->size();
  BasicMatrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("from_rows: ragged rows");
    std::size_t j = 0;
    for (Real v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

template <std::floating_point Real>
BasicMatrix<Real> BasicMatrix<Real>::identity(std::size_t n) {
  BasicMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = Real{1};
  return m;
}

template <std::floating_point Real>
void BasicMatrix<Real>::fill(Real value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <std::floating_point Real>
std::string shape_string(const BasicMatrix<Real>& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

template <std::floating_point Real>
BasicMatrix<Real> matmul(const BasicMatrix<Real>& a, const BasicMatrix<Real>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: dimension mismatch " + shape_string(a) + " x " + shape_string(b));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  BasicMatrix<Real> out(n, m);
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    Real* orow = po + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = pa[i * k + p];
      if (av == Real{0}) continue;
      const Real* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

template <std::floating_point Real>
BasicMatrix<Real> matmul_bt(const BasicMatrix<Real>& a, const BasicMatrix<Real>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_bt: dimension mismatch " + shape_string(a) + " x " + shape_string(b) + "^T");
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  BasicMatrix<Real> out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* arow = a.data() + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const Real* brow = b.data() + j * k;
      Real acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out(i, j) = acc;
    }
  }
  return out;
}

template <std::floating_point Real>
BasicMatrix<Real> matmul_at(const BasicMatrix<Real>& a, const BasicMatrix<Real>& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_at: dimension mismatch " + shape_string(a) + "^T x " + shape_string(b));
  }
  const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
  BasicMatrix<Real> out(n, m);
  Real* po = out.data();
  for (std::size_t p = 0; p < k; ++p) {
    const Real* arow = a.data() + p * n;
    const Real* brow = b.data() + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const Real av = arow[i];
      if (av == Real{0}) continue;
      Real* orow = po + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

template <std::floating_point Real>
BasicMatrix<Real> transpose(const BasicMatrix<Real>& m) {
  BasicMatrix<Real> out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

template <std::floating_point Real>
BasicMatrix<Real> add(const BasicMatrix<Real>& a, const BasicMatrix<Real>& b) {
  require_same_shape("add", a, b);
  BasicMatrix<Real> out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return out;
}

template <std::floating_point Real>
BasicMatrix<Real> add_row(const BasicMatrix<Real>& m, const BasicMatrix<Real>& row) {
  if (row.rows() != 1 || row.cols() != m.cols()) {
    throw ShapeError("add_row: expected 1x" + std::to_string(m.cols()) + " row, got " + shape_string(row));
  }
  BasicMatrix<Real> out = m;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += row(0, j);
  }
  return out;
}

template <std::floating_point Real>
BasicMatrix<Real> scale(const BasicMatrix<Real>& m, Real factor) {
  BasicMatrix<Real> out = m;
  for (Real& v : out.values()) v *= factor;
  return out;
}

template <std::floating_point Real>
BasicMatrix<Real> relu(const BasicMatrix<Real>& m) {
  BasicMatrix<Real> out = m;
  for (Real& v : out.values()) v = v > Real{0} ? v : Real{0};
  return out;
}

template <std::floating_point Real>
BasicMatrix<Real> softmax_rows(const BasicMatrix<Real>& m) {
  BasicMatrix<Real> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto in = m.row(i);
    auto o = out.row(i);
    if (in.empty()) continue;
    Real mx = *std::max_element(in.begin(), in.end());
    Real sum{0};
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    const Real inv = Real{1} / sum;
    for (Real& v : o) v *= inv;
  }
  return out;
}

template <std::floating_point Real>
BasicMatrix<Real> layer_norm(const BasicMatrix<Real>& m, const BasicMatrix<Real>& gain,
                             const BasicMatrix<Real>& bias, Real eps) {
  if (gain.rows() != 1 || gain.cols() != m.cols() || !gain.same_shape(bias)) {
    throw ShapeError("layer_norm: gain " + shape_string(gain) + " / bias " + shape_string(bias) +
                     " do not match width " + std::to_string(m.cols()));
  }
  BasicMatrix<Real> out(m.rows(), m.cols());
  const Real n = static_cast<Real>(m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto in = m.row(i);
    Real mean{0};
    for (Real v : in) mean += v;
    mean /= n;
    Real var{0};
    for (Real v : in) var += (v - mean) * (v - mean);
    var /= n;
    const Real inv_std = Real{1} / std::sqrt(var + eps);
    auto o = out.row(i);
    for (std::size_t j = 0; j < in.size(); ++j) o[j] = (in[j] - mean) * inv_std * gain(0, j) + bias(0, j);
  }
  return out;
}

template <std::floating_point Real>
BasicMatrix<Real> dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  BasicMatrix<Real> mask(rows, cols, Real{1});
  if (rate == 0.0) return mask;
  const Real kept = static_cast<Real>(1.0 / (1.0 - rate));
  // Each 64-bit draw decides four entries, 16 bits apiece, so the keep
  // probability is quantised to 1/65536.
  const auto threshold = static_cast<std::uint64_t>(std::llround((1.0 - rate) * 65536.0));
  auto values = mask.values();
  for (std::size_t i = 0; i < values.size(); i += 4) {
    std::uint64_t bits = rng();
    for (std::size_t j = i; j < std::min(i + 4, values.size()); ++j, bits >>= 16) {
      values[j] = (bits & 0xffff) < threshold ? kept : Real{0};
    }
  }
  return mask;
}

template <std::floating_point Real>
BasicMatrix<Real> dropout(const BasicMatrix<Real>& m, double rate, Rng& rng) {
  if (rate == 0.0) return m;
  BasicMatrix<Real> out = dropout_mask<Real>(m.rows(), m.cols(), rate, rng);
  auto o = out.values();
  auto in = m.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= in[i];
  return out;
}

template <std::floating_point Real>
BasicMatrix<Real> slice_rows(const BasicMatrix<Real>& m, std::size_t begin, std::size_t end) {
  if (begin > end || end > m.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                     shape_string(m));
  }
  BasicMatrix<Real> out(end - begin, m.cols());
  std::copy(m.data() + begin * m.cols(), m.data() + end * m.cols(), out.data());
  return out;
}

template <std::floating_point Real>
BasicMatrix<Real> slice_cols(const BasicMatrix<Real>& m, std::size_t begin, std::size_t end) {
  if (begin > end || end > m.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                     shape_string(m));
  }
  BasicMatrix<Real> out(m.rows(), end - begin);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    std::copy(r.begin() + static_cast<std::ptrdiff_t>(begin), r.begin() + static_cast<std::ptrdiff_t>(end),
              out.row(i).begin());
  }
  return out;
}

template <std::floating_point Real>
bool all_finite(const BasicMatrix<Real>& m) {
  for (Real v : m.values())
    if (!std::isfinite(v)) return false;
  return true;
}

template <std::floating_point Real>
double frobenius_norm(const BasicMatrix<Real>& m) {
  double acc = 0.0;
  for (Real v : m.values()) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

#define MMTA_INSTANTIATE_MATRIX(R)                                                                   \
  template class BasicMatrix<R>;                                                                     \
  template std::string shape_string(const BasicMatrix<R>&);                                          \
  template BasicMatrix<R> matmul(const BasicMatrix<R>&, const BasicMatrix<R>&);                      \
  template BasicMatrix<R> matmul_bt(const BasicMatrix<R>&, const BasicMatrix<R>&);                   \
  template BasicMatrix<R> matmul_at(const BasicMatrix<R>&, const BasicMatrix<R>&);                   \
  template BasicMatrix<R> transpose(const BasicMatrix<R>&);                                          \
  template BasicMatrix<R> add(const BasicMatrix<R>&, const BasicMatrix<R>&);                         \
  template BasicMatrix<R> add_row(const BasicMatrix<R>&, const BasicMatrix<R>&);                     \
  template BasicMatrix<R> scale(const BasicMatrix<R>&, R);                                           \
  template BasicMatrix<R> relu(const BasicMatrix<R>&);                                               \
  template BasicMatrix<R> softmax_rows(const BasicMatrix<R>&);                                       \
  template BasicMatrix<R> layer_norm(const BasicMatrix<R>&, const BasicMatrix<R>&, const BasicMatrix<R>&, R); \
  template BasicMatrix<R> dropout(const BasicMatrix<R>&, double, Rng&);                              \
  template BasicMatrix<R> dropout_mask(std::size_t, std::size_t, double, Rng&);                      \
  template BasicMatrix<R> slice_rows(const BasicMatrix<R>&, std::size_t, std::size_t);               \
  template BasicMatrix<R> slice_cols(const BasicMatrix<R>&, std::size_t, std::size_t);               \
  template bool all_finite(const BasicMatrix<R>&);                                                   \
  template double frobenius_norm(const BasicMatrix<R>&);

MMTA_INSTANTIATE_MATRIX(float)
MMTA_INSTANTIATE_MATRIX(double)

#undef MMTA_INSTANTIATE_MATRIX

}  // namespace mmta
