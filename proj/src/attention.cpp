#include "mmta/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mmta/error.hpp"

namespace mmta {

namespace {

template <std::floating_point Real>
inline Real dot(const Real* a, const Real* b, std::size_t n) {
  Real acc{0};
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <std::floating_point Real>
inline void axpy(Real alpha, const Real* x, Real* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <std::floating_point Real>
void softmax_in_place(Real* row, std::size_t n) {
  Real mx = *std::max_element(row, row + n);
  Real sum{0};
  for (std::size_t j = 0; j < n; ++j) {
    row[j] = std::exp(row[j] - mx);
    sum += row[j];
  }
  const Real inv = Real{1} / sum;
  for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
}

void require_dropout_rng(double dropout, const Rng* rng) {
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("attention dropout must lie in [0, 1)");
  if (dropout > 0.0 && rng == nullptr) throw ConfigError("attention dropout > 0 requires an rng");
}

// Saved per (window, head), index window * heads + head.
template <std::floating_point Real>
struct CoreCache {
  std::vector<BasicMatrix<Real>> probs;
  std::vector<BasicMatrix<Real>> masks;
};

template <std::floating_point Real>
BasicMatrix<Real> core_forward(const BasicMatrix<Real>& q, const BasicMatrix<Real>& k, const BasicMatrix<Real>& v,
                               const WindowLayout& layout, std::size_t heads, double dropout, Rng* rng,
                               CoreCache<Real>* cache, AttentionTrace<Real>* trace) {
  const std::size_t length = q.rows();
  const std::size_t width = q.cols();
  if (layout.sequence_length() != length) {
    throw ShapeError("attention: layout built for T=" + std::to_string(layout.sequence_length()) +
                     " applied to T=" + std::to_string(length));
  }
  if (!k.same_shape(q) || !v.same_shape(q)) {
    throw ShapeError("attention: q/k/v shapes differ: " + shape_string(q) + ", " + shape_string(k) + ", " +
                     shape_string(v));
  }
  if (heads == 0 || width % heads != 0) {
    throw ShapeError("attention: " + std::to_string(heads) + " heads do not divide width " + std::to_string(width));
  }
  require_dropout_rng(dropout, rng);
  const std::size_t dk = width / heads;
  const Real scale = Real{1} / std::sqrt(static_cast<Real>(dk));

  std::size_t widest = 0;
  for (const Window& w : layout.windows()) widest = std::max(widest, w.size());
  BasicMatrix<Real> scratch(widest, widest);
  BasicMatrix<Real> dropped(dropout > 0.0 ? widest : 0, dropout > 0.0 ? widest : 0);
  if (cache != nullptr) {
    cache->probs.clear();
    cache->masks.clear();
    cache->probs.reserve(layout.window_count() * heads);
  }

  BasicMatrix<Real> out(length, width);
  for (std::size_t wi = 0; wi < layout.window_count(); ++wi) {
    const Window& win = layout.window(wi);
    const std::size_t n = win.size();
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t col = h * dk;
      BasicMatrix<Real> owned;
      if (cache != nullptr) owned = BasicMatrix<Real>(n, n);
      // Weights go to the cache when recording, otherwise to shared scratch.
      Real* probs = cache != nullptr ? owned.data() : scratch.data();
      for (std::size_t i = 0; i < n; ++i) {
        const Real* qi = q.data() + (win.begin + i) * width + col;
        Real* prow = probs + i * n;
        for (std::size_t j = 0; j < n; ++j) prow[j] = dot(qi, k.data() + (win.begin + j) * width + col, dk) * scale;
        softmax_in_place(prow, n);
      }
      if (trace != nullptr) {
        BasicMatrix<Real> copy(n, n);
        std::copy(probs, probs + n * n, copy.data());
        trace->entries.push_back({wi, h, std::move(copy)});
      }
      const Real* weights = probs;
      if (dropout > 0.0) {
        BasicMatrix<Real> mask = dropout_mask<Real>(n, n, dropout, *rng);
        for (std::size_t i = 0; i < n * n; ++i) dropped.data()[i] = probs[i] * mask.data()[i];
        weights = dropped.data();
        if (cache != nullptr) cache->masks.push_back(std::move(mask));
      }
      for (std::size_t i = 0; i < n; ++i) {
        Real* orow = out.data() + (win.begin + i) * width + col;
        const Real* wrow = weights + i * n;
        for (std::size_t j = 0; j < n; ++j) axpy(wrow[j], v.data() + (win.begin + j) * width + col, orow, dk);
      }
      if (cache != nullptr) cache->probs.push_back(std::move(owned));
    }
  }
  for (std::size_t t = 0; t < length; ++t) {
    const Real inv = Real{1} / static_cast<Real>(layout.membership_count(t));
    for (Real& x : out.row(t)) x *= inv;
  }
  return out;
}

template <std::floating_point Real>
void core_backward(const BasicMatrix<Real>& q, const BasicMatrix<Real>& k, const BasicMatrix<Real>& v,
                   const WindowLayout& layout, std::size_t heads, const CoreCache<Real>& cache,
                   const BasicMatrix<Real>& grad_out, BasicMatrix<Real>* grad_q, BasicMatrix<Real>* grad_k,
                   BasicMatrix<Real>* grad_v) {
  const std::size_t length = q.rows();
  const std::size_t width = q.cols();
  const std::size_t dk = width / heads;
  const Real scale = Real{1} / std::sqrt(static_cast<Real>(dk));
  const bool dropped = !cache.masks.empty();

  BasicMatrix<Real> g(length, width);
  for (std::size_t t = 0; t < length; ++t) {
    const Real inv = Real{1} / static_cast<Real>(layout.membership_count(t));
    auto src = grad_out.row(t);
    auto dst = g.row(t);
    for (std::size_t j = 0; j < width; ++j) dst[j] = src[j] * inv;
  }

  std::vector<Real> dweights, dscores;
  for (std::size_t wi = 0; wi < layout.window_count(); ++wi) {
    const Window& win = layout.window(wi);
    const std::size_t n = win.size();
    dweights.resize(n);
    dscores.resize(n);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t col = h * dk;
      const std::size_t slot = wi * heads + h;
      const BasicMatrix<Real>& p = cache.probs[slot];
      const Real* mask = dropped ? cache.masks[slot].data() : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        const Real* gi = g.data() + (win.begin + i) * width + col;
        const Real* prow = p.data() + i * n;
        const Real* mrow = mask != nullptr ? mask + i * n : nullptr;
        for (std::size_t j = 0; j < n; ++j) {
          const Real* vj = v.data() + (win.begin + j) * width + col;
          const Real wij = mrow != nullptr ? prow[j] * mrow[j] : prow[j];
          if (grad_v != nullptr) axpy(wij, gi, grad_v->data() + (win.begin + j) * width + col, dk);
          Real dw = dot(gi, vj, dk);
          dweights[j] = mrow != nullptr ? dw * mrow[j] : dw;
        }
        Real inner{0};
        for (std::size_t j = 0; j < n; ++j) inner += prow[j] * dweights[j];
        for (std::size_t j = 0; j < n; ++j) dscores[j] = prow[j] * (dweights[j] - inner) * scale;
        if (grad_q != nullptr) {
          Real* dqi = grad_q->data() + (win.begin + i) * width + col;
          for (std::size_t j = 0; j < n; ++j) axpy(dscores[j], k.data() + (win.begin + j) * width + col, dqi, dk);
        }
        if (grad_k != nullptr) {
          const Real* qi = q.data() + (win.begin + i) * width + col;
          for (std::size_t j = 0; j < n; ++j) axpy(dscores[j], qi, grad_k->data() + (win.begin + j) * width + col, dk);
        }
      }
    }
  }
}

}  // namespace

template <std::floating_point Real>
void AttentionParams<Real>::validate() const {
  const std::size_t d = query.rows();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: " + std::to_string(heads) + " heads do not divide model width " + std::to_string(d));
  }
  for (const auto* m : {&query, &key, &value, &output}) {
    if (m->rows() != d || m->cols() != d) {
      throw ShapeError("attention: projection is " + shape_string(*m) + ", expected " + std::to_string(d) + "x" +
                       std::to_string(d));
    }
  }
}

template <std::floating_point Real>
AttentionParams<Real> AttentionParams<Real>::initialize(std::size_t model_dim, std::size_t heads, Rng& rng) {
  AttentionParams p;
  p.heads = heads;
  const double bound = std::sqrt(6.0 / static_cast<double>(2 * model_dim));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto* m : {&p.query, &p.key, &p.value, &p.output}) {
    *m = BasicMatrix<Real>(model_dim, model_dim);
    for (Real& x : m->values()) x = static_cast<Real>(dist(rng));
  }
  p.validate();
  return p;
}

template <std::floating_point Real>
BasicMatrix<Real> mmta(const BasicMatrix<Real>& frames, const WindowLayout& layout,
                       const AttentionParams<Real>& params, const AttentionOptions<Real>& options) {
  params.validate();
  if (frames.cols() != params.model_dim()) {
    throw ShapeError("mmta: frames are " + shape_string(frames) + ", model width is " +
                     std::to_string(params.model_dim()));
  }
  BasicMatrix<Real> q = matmul(frames, params.query);
  BasicMatrix<Real> k = matmul(frames, params.key);
  BasicMatrix<Real> v = matmul(frames, params.value);
  BasicMatrix<Real> fused =
      core_forward<Real>(q, k, v, layout, params.heads, options.dropout, options.rng, nullptr, options.trace);
  return matmul(fused, params.output);
}

template <std::floating_point Real>
BasicMatrix<Real> window_attention(const BasicMatrix<Real>& window_frames, const AttentionParams<Real>& params,
                                   const AttentionOptions<Real>& options) {
  if (window_frames.rows() == 0) throw ShapeError("window_attention: empty window");
  return mmta(window_frames, WindowLayout::single(window_frames.rows()), params, options);
}

template <std::floating_point Real>
BasicMatrix<Real> global_attention(const BasicMatrix<Real>& frames, const AttentionParams<Real>& params,
                                   const AttentionOptions<Real>& options) {
  params.validate();
  if (frames.cols() != params.model_dim()) {
    throw ShapeError("global_attention: frames are " + shape_string(frames) + ", model width is " +
                     std::to_string(params.model_dim()));
  }
  require_dropout_rng(options.dropout, options.rng);
  constexpr std::size_t kBlock = 256;
  const std::size_t length = frames.rows();
  const std::size_t dk = params.head_dim();
  const Real inv_sqrt_dk = Real{1} / std::sqrt(static_cast<Real>(dk));
  BasicMatrix<Real> q = matmul(frames, params.query);
  BasicMatrix<Real> k = matmul(frames, params.key);
  BasicMatrix<Real> v = matmul(frames, params.value);
  BasicMatrix<Real> heads_out(length, params.model_dim());
  for (std::size_t h = 0; h < params.heads; ++h) {
    const BasicMatrix<Real> qh = slice_cols(q, h * dk, (h + 1) * dk);
    const BasicMatrix<Real> kh = slice_cols(k, h * dk, (h + 1) * dk);
    const BasicMatrix<Real> vh = slice_cols(v, h * dk, (h + 1) * dk);
    BasicMatrix<Real> trace_weights;
    if (options.trace != nullptr) trace_weights = BasicMatrix<Real>(length, length);
    for (std::size_t r0 = 0; r0 < length; r0 += kBlock) {
      const std::size_t r1 = std::min(length, r0 + kBlock);
      BasicMatrix<Real> probs = softmax_rows(scale(matmul_bt(slice_rows(qh, r0, r1), kh), inv_sqrt_dk));
      if (options.trace != nullptr) std::copy(probs.data(), probs.data() + probs.size(), trace_weights.data() + r0 * length);
      if (options.dropout > 0.0) probs = dropout(probs, options.dropout, *options.rng);
      BasicMatrix<Real> block = matmul(probs, vh);
      for (std::size_t i = r0; i < r1; ++i) {
        auto src = block.row(i - r0);
        std::copy(src.begin(), src.end(), heads_out.row(i).begin() + static_cast<std::ptrdiff_t>(h * dk));
      }
    }
    if (options.trace != nullptr) options.trace->entries.push_back({0, h, std::move(trace_weights)});
  }
  return matmul(heads_out, params.output);
}

double dilution_probe(std::size_t length, std::size_t delta, std::size_t trials, Rng& rng, ScoreModel model,
                      std::size_t dim) {
  if (length <= 2 * delta) {
    throw ConfigError("dilution_probe: sequence length " + std::to_string(length) + " must exceed 2*delta = " +
                      std::to_string(2 * delta));
  }
  if (trials == 0 || dim == 0) throw ConfigError("dilution_probe: trials and dim must be positive");
  const std::size_t center = length / 2;
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  double total = 0.0;
  Matrix scores(1, length);
  std::vector<double> query(dim);
  std::vector<double> key(dim);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    if (model == ScoreModel::gaussian) {
      for (double& x : query) x = normal(rng);
      for (std::size_t j = 0; j < length; ++j) {
        for (double& x : key) x = normal(rng);
        scores(0, j) = dot(query.data(), key.data(), dim) * scale;
      }
    } else {
      scores.fill(0.0);
    }
    const Matrix weights = softmax_rows(scores);
    double mass = 0.0;
    for (std::size_t j = center - delta; j <= center + delta; ++j) mass += weights(0, j);
    total += mass;
  }
  return total / static_cast<double>(trials);
}

namespace ad {

template <std::floating_point Real>
Var<Real> windowed_attention(const Var<Real>& q, const Var<Real>& k, const Var<Real>& v,
                             std::shared_ptr<const WindowLayout> layout, std::size_t heads, double dropout, Rng* rng,
                             AttentionTrace<Real>* trace) {
  Tape<Real>& tape = q.tape();
  CoreCache<Real> cache;
  CoreCache<Real>* cache_ptr = tape.recording() ? &cache : nullptr;
  BasicMatrix<Real> out =
      core_forward<Real>(q.value(), k.value(), v.value(), *layout, heads, dropout, rng, cache_ptr, trace);
  return tape.push(std::move(out), {q, k, v},
                   [q, k, v, layout, heads, cache = std::move(cache)](Tape<Real>& t, const BasicMatrix<Real>& g,
                                                                      const BasicMatrix<Real>&) {
                     BasicMatrix<Real>* gq = t.needs_grad(q) ? &t.grad_slot(q) : nullptr;
                     BasicMatrix<Real>* gk = t.needs_grad(k) ? &t.grad_slot(k) : nullptr;
                     BasicMatrix<Real>* gv = t.needs_grad(v) ? &t.grad_slot(v) : nullptr;
                     core_backward(q.value(), k.value(), v.value(), *layout, heads, cache, g, gq, gk, gv);
                   });
}

template <std::floating_point Real>
Var<Real> mmta(const Var<Real>& frames, std::shared_ptr<const WindowLayout> layout, const AttentionVars<Real>& params,
               double dropout, Rng* rng, AttentionTrace<Real>* trace) {
  Var<Real> q = matmul(frames, params.query);
  Var<Real> k = matmul(frames, params.key);
  Var<Real> v = matmul(frames, params.value);
  Var<Real> fused = windowed_attention(q, k, v, std::move(layout), params.heads, dropout, rng, trace);
  return matmul(fused, params.output);
}

}  // namespace ad

#define MMTA_INSTANTIATE_ATTENTION(R)                                                                             \
  template struct AttentionParams<R>;                                                                             \
  template BasicMatrix<R> window_attention(const BasicMatrix<R>&, const AttentionParams<R>&,                       \
                                           const AttentionOptions<R>&);                                           \
  template BasicMatrix<R> mmta(const BasicMatrix<R>&, const WindowLayout&, const AttentionParams<R>&,              \
                               const AttentionOptions<R>&);                                                       \
  template BasicMatrix<R> global_attention(const BasicMatrix<R>&, const AttentionParams<R>&,                       \
                                           const AttentionOptions<R>&);                                           \
  template Var<R> ad::windowed_attention(const Var<R>&, const Var<R>&, const Var<R>&,                               \
                                         std::shared_ptr<const WindowLayout>, std::size_t, double, Rng*,            \
                                         AttentionTrace<R>*);                                                     \
  template Var<R> ad::mmta(const Var<R>&, std::shared_ptr<const WindowLayout>, const AttentionVars<R>&, double,     \
                           Rng*, AttentionTrace<R>*);

MMTA_INSTANTIATE_ATTENTION(float)
MMTA_INSTANTIATE_ATTENTION(double)

#undef MMTA_INSTANTIATE_ATTENTION

}  // namespace mmta
