#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "mmta/matrix.hpp"
#include "mmta/rng.hpp"

namespace mmta {

// A trainable tensor. `decay` marks whether weight decay applies to it.
template <std::floating_point Real>
struct Parameter {
  std::string name;
  BasicMatrix<Real> value;
  bool decay = true;
};

template <std::floating_point Real>
class Tape;

// Handle to a value slot recorded on a Tape. Cheap to copy; valid while the
// tape lives.
template <std::floating_point Real>
class Var {
 public:
  Var() = default;

  const BasicMatrix<Real>& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape<Real>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape<Real>;
  Var(Tape<Real>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Real>* tape_ = nullptr;
  std::size_t id_ = 0;
};

enum class TapeMode { record, inference };

// Linear record of primitive operations for reverse-mode differentiation.
//
// In `record` mode each op stores a backward closure; `backward` replays
// them in exact reverse order of recording. In `inference` mode only values
// are kept and `backward` is a state error.
template <std::floating_point Real>
class Tape {
 public:
  using MatrixT = BasicMatrix<Real>;
  // Receives the gradient and value of the op's output; pushes input
  // gradients via Tape::grad_slot.
  using BackwardFn = std::function<void(Tape&, const MatrixT& grad, const MatrixT& value)>;

  explicit Tape(TapeMode mode = TapeMode::record) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return mode_ == TapeMode::record; }

  Var<Real> constant(MatrixT value);
  // Leaf that receives a gradient but is not a registered parameter.
  Var<Real> variable(MatrixT value);
  // Registers a parameter; its gradient is reported by parameter_grads().
  Var<Real> watch(const Parameter<Real>& parameter);

  // Records an op result. The node needs a gradient iff the tape records and
  // any input needs one; otherwise `fn` is dropped.
  Var<Real> push(MatrixT value, std::initializer_list<Var<Real>> inputs, BackwardFn fn);

  const MatrixT& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(const Var<Real>& v) const { return nodes_[v.id()].needs_grad; }
  // Mutable gradient accumulator for v, zero-initialized on first use.
  MatrixT& grad_slot(const Var<Real>& v);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse.
  void backward(const Var<Real>& loss);
  // Gradient of the last backward pass (zeros if v was not reached).
  MatrixT grad(const Var<Real>& v) const;

  // One gradient per watched parameter, in watch order, each shaped like
  // its parameter.
  std::vector<MatrixT> parameter_grads() const;
  const std::vector<const Parameter<Real>*>& parameters() const { return watched_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    MatrixT value;
    MatrixT grad;
    BackwardFn backward;
    bool needs_grad = false;
  };

  TapeMode mode_;
  bool consumed_ = false;
  std::deque<Node> nodes_;
  std::vector<const Parameter<Real>*> watched_;
  std::vector<std::size_t> watched_ids_;
};

template <std::floating_point Real>
const BasicMatrix<Real>& Var<Real>::value() const {
  return tape_->value(id_);
}

// Differentiable primitives. All operands must live on the same tape.
namespace ad {

template <std::floating_point Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b);

template <std::floating_point Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b);

// m + row broadcast over rows (row is 1×cols).
template <std::floating_point Real>
Var<Real> add_row(const Var<Real>& m, const Var<Real>& row);

template <std::floating_point Real>
Var<Real> scale(const Var<Real>& a, Real factor);

template <std::floating_point Real>
Var<Real> relu(const Var<Real>& a);

template <std::floating_point Real>
Var<Real> tanh(const Var<Real>& a);

// Inverted dropout; rate 0 returns `a` unchanged without touching rng.
template <std::floating_point Real>
Var<Real> dropout(const Var<Real>& a, double rate, Rng& rng);

template <std::floating_point Real>
Var<Real> softmax_rows(const Var<Real>& a);

template <std::floating_point Real>
Var<Real> layer_norm(const Var<Real>& a, const Var<Real>& gain, const Var<Real>& bias, Real eps);

// Elementwise product.
template <std::floating_point Real>
Var<Real> hadamard(const Var<Real>& a, const Var<Real>& b);

// Sum of all entries, as a 1×1 value.
template <std::floating_point Real>
Var<Real> sum(const Var<Real>& a);

}  // namespace ad

}  // namespace mmta
