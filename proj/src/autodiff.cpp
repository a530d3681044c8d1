#include "mmta/autodiff.hpp"

#include <cmath>

#include "mmta/error.hpp"

namespace mmta {

template <std::floating_point Real>
Var<Real> Tape<Real>::constant(MatrixT value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var<Real>(this, nodes_.size() - 1);
}

template <std::floating_point Real>
Var<Real> Tape<Real>::variable(MatrixT value) {
  nodes_.push_back(Node{std::move(value), {}, {}, recording()});
  return Var<Real>(this, nodes_.size() - 1);
}

template <std::floating_point Real>
Var<Real> Tape<Real>::watch(const Parameter<Real>& parameter) {
  Var<Real> v = variable(parameter.value);
  watched_.push_back(&parameter);
  watched_ids_.push_back(v.id());
  return v;
}

template <std::floating_point Real>
Var<Real> Tape<Real>::push(MatrixT value, std::initializer_list<Var<Real>> inputs, BackwardFn fn) {
  bool needs = false;
  if (recording()) {
    for (const auto& in : inputs) {
      if (in.tape_ != this) throw StateError("tape op mixes operands from different tapes");
      needs = needs || nodes_[in.id()].needs_grad;
    }
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, needs});
  return Var<Real>(this, nodes_.size() - 1);
}

template <std::floating_point Real>
BasicMatrix<Real>& Tape<Real>::grad_slot(const Var<Real>& v) {
  Node& n = nodes_[v.id()];
  if (n.grad.empty() && !n.value.empty()) n.grad = MatrixT(n.value.rows(), n.value.cols());
  return n.grad;
}

template <std::floating_point Real>
void Tape<Real>::backward(const Var<Real>& loss) {
  if (!recording()) throw StateError("backward called on an inference-mode tape");
  if (consumed_) throw StateError("backward called twice without a new forward pass");
  const MatrixT& lv = nodes_[loss.id()].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError("backward: loss must be 1x1, got " + shape_string(lv));
  }
  consumed_ = true;
  if (!nodes_[loss.id()].needs_grad) return;
  grad_slot(loss)(0, 0) = Real{1};
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad, n.value);
  }
}

template <std::floating_point Real>
BasicMatrix<Real> Tape<Real>::grad(const Var<Real>& v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return MatrixT(n.value.rows(), n.value.cols());
  return n.grad;
}

template <std::floating_point Real>
std::vector<BasicMatrix<Real>> Tape<Real>::parameter_grads() const {
  std::vector<MatrixT> out;
  out.reserve(watched_ids_.size());
  for (std::size_t id : watched_ids_) out.push_back(grad(Var<Real>(const_cast<Tape*>(this), id)));
  return out;
}

namespace ad {

template <std::floating_point Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b) {
  Tape<Real>& t = a.tape();
  return t.push(mmta::matmul(a.value(), b.value()), {a, b}, [a, b](Tape<Real>& tape, const BasicMatrix<Real>& g, const BasicMatrix<Real>&) {
    if (tape.needs_grad(a)) {
      BasicMatrix<Real> ga = matmul_bt(g, b.value());
      auto& slot = tape.grad_slot(a);
      auto s = slot.values();
      auto d = ga.values();
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += d[i];
    }
    if (tape.needs_grad(b)) {
      BasicMatrix<Real> gb = matmul_at(a.value(), g);
      auto& slot = tape.grad_slot(b);
      auto s = slot.values();
      auto d = gb.values();
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += d[i];
    }
  });
}

namespace {

template <std::floating_point Real>
void accumulate(Tape<Real>& tape, const Var<Real>& v, const BasicMatrix<Real>& delta, Real factor = Real{1}) {
  if (!tape.needs_grad(v)) return;
  auto s = tape.grad_slot(v).values();
  auto d = delta.values();
  for (std::size_t i = 0; i < s.size(); ++i) s[i] += factor * d[i];
}

}  // namespace

template <std::floating_point Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  return a.tape().push(mmta::add(a.value(), b.value()), {a, b},
                       [a, b](Tape<Real>& tape, const BasicMatrix<Real>& g, const BasicMatrix<Real>&) {
                         accumulate(tape, a, g);
                         accumulate(tape, b, g);
                       });
}

template <std::floating_point Real>
Var<Real> add_row(const Var<Real>& m, const Var<Real>& row) {
  return m.tape().push(mmta::add_row(m.value(), row.value()), {m, row},
                       [m, row](Tape<Real>& tape, const BasicMatrix<Real>& g, const BasicMatrix<Real>&) {
                         accumulate(tape, m, g);
                         if (tape.needs_grad(row)) {
                           auto& slot = tape.grad_slot(row);
                           for (std::size_t i = 0; i < g.rows(); ++i) {
                             auto gr = g.row(i);
                             for (std::size_t j = 0; j < gr.size(); ++j) slot(0, j) += gr[j];
                           }
                         }
                       });
}

template <std::floating_point Real>
Var<Real> scale(const Var<Real>& a, Real factor) {
  return a.tape().push(mmta::scale(a.value(), factor), {a},
                       [a, factor](Tape<Real>& tape, const BasicMatrix<Real>& g, const BasicMatrix<Real>&) { accumulate(tape, a, g, factor); });
}

template <std::floating_point Real>
Var<Real> relu(const Var<Real>& a) {
  return a.tape().push(mmta::relu(a.value()), {a}, [a](Tape<Real>& tape, const BasicMatrix<Real>& g, const BasicMatrix<Real>&) {
    auto& slot = tape.grad_slot(a);
    auto x = a.value().values();
    auto gv = g.values();
    auto s = slot.values();
    for (std::size_t i = 0; i < s.size(); ++i)
      if (x[i] > Real{0}) s[i] += gv[i];
  });
}

template <std::floating_point Real>
Var<Real> tanh(const Var<Real>& a) {
  BasicMatrix<Real> out = a.value();
  for (Real& v : out.values()) v = std::tanh(v);
  return a.tape().push(std::move(out), {a},
                       [a](Tape<Real>& tape, const BasicMatrix<Real>& g, const BasicMatrix<Real>& y) {
                         auto yv = y.values();
                         auto gv = g.values();
                         auto s = tape.grad_slot(a).values();
                         for (std::size_t i = 0; i < s.size(); ++i) s[i] += gv[i] * (Real{1} - yv[i] * yv[i]);
                       });
}

template <std::floating_point Real>
Var<Real> dropout(const Var<Real>& a, double rate, Rng& rng) {
  if (rate == 0.0) return a;
  BasicMatrix<Real> mask = dropout_mask<Real>(a.rows(), a.cols(), rate, rng);
  BasicMatrix<Real> out = a.value();
  {
    auto o = out.values();
    auto m = mask.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= m[i];
  }
  return a.tape().push(std::move(out), {a},
                       [a, mask = std::move(mask)](Tape<Real>& tape, const BasicMatrix<Real>& g, const BasicMatrix<Real>&) {
                         auto s = tape.grad_slot(a).values();
                         auto gv = g.values();
                         auto m = mask.values();
                         for (std::size_t i = 0; i < s.size(); ++i) s[i] += gv[i] * m[i];
                       });
}

template <std::floating_point Real>
Var<Real> softmax_rows(const Var<Real>& a) {
  return a.tape().push(mmta::softmax_rows(a.value()), {a},
                       [a](Tape<Real>& tape, const BasicMatrix<Real>& g, const BasicMatrix<Real>& p) {
                         auto& slot = tape.grad_slot(a);
                         for (std::size_t i = 0; i < p.rows(); ++i) {
                           auto pr = p.row(i);
                           auto gr = g.row(i);
                           Real dot{0};
                           for (std::size_t j = 0; j < pr.size(); ++j) dot += pr[j] * gr[j];
                           auto sr = slot.row(i);
                           for (std::size_t j = 0; j < pr.size(); ++j) sr[j] += pr[j] * (gr[j] - dot);
                         }
                       });
}

template <std::floating_point Real>
Var<Real> layer_norm(const Var<Real>& a, const Var<Real>& gain, const Var<Real>& bias, Real eps) {
  const BasicMatrix<Real>& x = a.value();
  BasicMatrix<Real> out = mmta::layer_norm(x, gain.value(), bias.value(), eps);
  Tape<Real>& t = a.tape();
  const std::size_t rows = x.rows(), cols = x.cols();
  // Normalized activations and inverse std are needed by the backward pass.
  BasicMatrix<Real> xhat(rows, cols);
  std::vector<Real> inv_std(rows);
  if (t.recording()) {
    const Real n = static_cast<Real>(cols);
    for (std::size_t i = 0; i < rows; ++i) {
      auto r = x.row(i);
      Real mean{0};
      for (Real v : r) mean += v;
      mean /= n;
      Real var{0};
      for (Real v : r) var += (v - mean) * (v - mean);
      var /= n;
      inv_std[i] = Real{1} / std::sqrt(var + eps);
      for (std::size_t j = 0; j < cols; ++j) xhat(i, j) = (r[j] - mean) * inv_std[i];
    }
  }
  return t.push(std::move(out), {a, gain, bias},
                [a, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    Tape<Real>& tape, const BasicMatrix<Real>& g, const BasicMatrix<Real>&) {
                  const std::size_t rows = g.rows(), cols = g.cols();
                  const Real n = static_cast<Real>(cols);
                  const BasicMatrix<Real>& gv = gain.value();
                  if (tape.needs_grad(gain) || tape.needs_grad(bias)) {
                    BasicMatrix<Real> dg(1, cols), db(1, cols);
                    for (std::size_t i = 0; i < rows; ++i)
                      for (std::size_t j = 0; j < cols; ++j) {
                        dg(0, j) += g(i, j) * xhat(i, j);
                        db(0, j) += g(i, j);
                      }
                    accumulate(tape, gain, dg);
                    accumulate(tape, bias, db);
                  }
                  if (tape.needs_grad(a)) {
                    auto& slot = tape.grad_slot(a);
                    for (std::size_t i = 0; i < rows; ++i) {
                      Real sum_dxhat{0}, sum_dxhat_xhat{0};
                      for (std::size_t j = 0; j < cols; ++j) {
                        const Real dxh = g(i, j) * gv(0, j);
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xhat(i, j);
                      }
                      for (std::size_t j = 0; j < cols; ++j) {
                        const Real dxh = g(i, j) * gv(0, j);
                        slot(i, j) += inv_std[i] / n * (n * dxh - sum_dxhat - xhat(i, j) * sum_dxhat_xhat);
                      }
                    }
                  }
                });
}

template <std::floating_point Real>
Var<Real> hadamard(const Var<Real>& a, const Var<Real>& b) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("hadamard: shape mismatch " + shape_string(a.value()) + " vs " + shape_string(b.value()));
  }
  BasicMatrix<Real> out = a.value();
  {
    auto o = out.values();
    auto bv = b.value().values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  }
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape<Real>& tape, const BasicMatrix<Real>& g, const BasicMatrix<Real>&) {
    auto gv = g.values();
    if (tape.needs_grad(a)) {
      auto s = tape.grad_slot(a).values();
      auto bv = b.value().values();
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += gv[i] * bv[i];
    }
    if (tape.needs_grad(b)) {
      auto s = tape.grad_slot(b).values();
      auto av = a.value().values();
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += gv[i] * av[i];
    }
  });
}

template <std::floating_point Real>
Var<Real> sum(const Var<Real>& a) {
  Real total{0};
  for (Real v : a.value().values()) total += v;
  BasicMatrix<Real> out(1, 1, total);
  return a.tape().push(std::move(out), {a}, [a](Tape<Real>& tape, const BasicMatrix<Real>& g, const BasicMatrix<Real>&) {
    const Real d = g(0, 0);
    for (Real& s : tape.grad_slot(a).values()) s += d;
  });
}

}  // namespace ad

#define MMTA_INSTANTIATE_AD(R)                                                              \
  template class Tape<R>;                                                                   \
  template Var<R> ad::matmul(const Var<R>&, const Var<R>&);                                 \
  template Var<R> ad::add(const Var<R>&, const Var<R>&);                                    \
  template Var<R> ad::add_row(const Var<R>&, const Var<R>&);                                \
  template Var<R> ad::scale(const Var<R>&, R);                                              \
  template Var<R> ad::relu(const Var<R>&);                                                  \
  template Var<R> ad::tanh(const Var<R>&);                                                  \
  template Var<R> ad::dropout(const Var<R>&, double, Rng&);                                 \
  template Var<R> ad::softmax_rows(const Var<R>&);                                          \
  template Var<R> ad::layer_norm(const Var<R>&, const Var<R>&, const Var<R>&, R);           \
  template Var<R> ad::hadamard(const Var<R>&, const Var<R>&);                               \
  template Var<R> ad::sum(const Var<R>&);

MMTA_INSTANTIATE_AD(float)
MMTA_INSTANTIATE_AD(double)

#undef MMTA_INSTANTIATE_AD

}  // namespace mmta
