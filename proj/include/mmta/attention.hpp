#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "mmta/autodiff.hpp"
#include "mmta/matrix.hpp"
#include "mmta/rng.hpp"
#include "mmta/windowing.hpp"

namespace mmta {

// Multi-head projections. Each of query/key/value/output is
// d_model × d_model; head h owns columns [h·d_k, (h+1)·d_k) of the projected
// queries, keys and values, with d_k = d_model / heads.
template <std::floating_point Real>
struct AttentionParams {
  std::size_t heads = 1;
  BasicMatrix<Real> query;
  BasicMatrix<Real> key;
  BasicMatrix<Real> value;
  BasicMatrix<Real> output;

  std::size_t model_dim() const { return query.rows(); }
  std::size_t head_dim() const { return model_dim() / heads; }
  void validate() const;

  // Uniform in ±sqrt(6 / (fan_in + fan_out)).
  static AttentionParams initialize(std::size_t model_dim, std::size_t heads, Rng& rng);
};

// Post-softmax, pre-dropout attention weights, recorded for inspection.
template <std::floating_point Real>
struct AttentionTrace {
  struct Entry {
    std::size_t window = 0;
    std::size_t head = 0;
    BasicMatrix<Real> weights;
  };
  std::vector<Entry> entries;
};

template <std::floating_point Real>
struct AttentionOptions {
  // Applied to attention weights after the softmax; needs `rng` when > 0.
  double dropout = 0.0;
  Rng* rng = nullptr;
  AttentionTrace<Real>* trace = nullptr;
};

// Scaled dot-product attention over one window of frames.
template <std::floating_point Real>
BasicMatrix<Real> window_attention(const BasicMatrix<Real>& window_frames, const AttentionParams<Real>& params,
                                   const AttentionOptions<Real>& options = {});

// Attention restricted to every window of `layout`, fused per frame by the
// mean over the windows that contain it.
template <std::floating_point Real>
BasicMatrix<Real> mmta(const BasicMatrix<Real>& frames, const WindowLayout& layout,
                       const AttentionParams<Real>& params, const AttentionOptions<Real>& options = {});

// Full T×T attention. Computed in query blocks so working memory stays
// linear in T.
template <std::floating_point Real>
BasicMatrix<Real> global_attention(const BasicMatrix<Real>& frames, const AttentionParams<Real>& params,
                                   const AttentionOptions<Real>& options = {});

enum class ScoreModel {
  // All scores equal (zero queries and keys).
  uniform,
  // Standard normal queries and keys.
  gaussian,
};

// Mean softmax mass that the center query of a length-T sequence puts on the
// keys within ±delta frames of itself, averaged over `trials` draws.
double dilution_probe(std::size_t length, std::size_t delta, std::size_t trials, Rng& rng,
                      ScoreModel model = ScoreModel::gaussian, std::size_t dim = 64);

// Tape-side parameters of one attention block.
template <std::floating_point Real>
struct AttentionVars {
  std::size_t heads = 1;
  Var<Real> query;
  Var<Real> key;
  Var<Real> value;
  Var<Real> output;
};

namespace ad {

// Windowed multi-head attention core over already projected q, k, v (each
// T × d_model): per window and head softmax(q kᵀ / sqrt(d_k)) v, averaged
// over window membership. The output is not yet output-projected.
template <std::floating_point Real>
Var<Real> windowed_attention(const Var<Real>& q, const Var<Real>& k, const Var<Real>& v,
                             std::shared_ptr<const WindowLayout> layout, std::size_t heads, double dropout,
                             Rng* rng, AttentionTrace<Real>* trace = nullptr);

// Projections + windowed core + output projection.
template <std::floating_point Real>
Var<Real> mmta(const Var<Real>& frames, std::shared_ptr<const WindowLayout> layout, const AttentionVars<Real>& params,
               double dropout, Rng* rng, AttentionTrace<Real>* trace = nullptr);

}  // namespace ad

}  // namespace mmta
