#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mmta/autodiff.hpp"
#include "mmta/dataset.hpp"
#include "mmta/encoder.hpp"
#include "mmta/keyvalue.hpp"

namespace mmta {

struct TrainConfig {
  std::size_t epochs = 25;
  std::size_t batch_size = 2;
  double learning_rate = 1e-3;
  std::size_t patience = 5;
  // The learning rate is multiplied by this after a plateau.
  double plateau_factor = 0.01;
  // Required improvement in validation loss; 0 means any strict decrease.
  double min_delta = 0.0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double clip_norm = 5.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  std::uint64_t seed = 0;

  void validate() const;
  KeyValues to_key_values() const;
  static TrainConfig from_key_values(const KeyValues& kv);
};

// Mean over frames of -alpha (1 - p)^gamma log p, p the softmax probability
// of the true class.
template <std::floating_point Real>
double focal_loss(const BasicMatrix<Real>& logits, std::span<const std::uint16_t> labels, double alpha, double gamma);

namespace ad {
template <std::floating_point Real>
Var<Real> focal_loss(const Var<Real>& logits, std::span<const std::uint16_t> labels, double alpha, double gamma);
}

template <std::floating_point Real>
struct TrainState {
  std::size_t epoch = 0;
  std::vector<BasicMatrix<Real>> momentum;
  double learning_rate = 0.0;
  double best_val_loss = 0.0;
  bool has_best = false;
  std::size_t epochs_since_improvement = 0;

  static TrainState start(std::span<Parameter<Real>* const> params, const TrainConfig& cfg);
};

struct StepReport {
  double grad_norm = 0.0;
  bool clipped = false;
};

// Clips the raw gradients to global norm cfg.clip_norm, adds weight decay for
// parameters that take it, then buf = momentum * buf + g; param -= lr * buf.
// A non-finite gradient throws NumericError before anything is modified.
template <std::floating_point Real>
StepReport sgd_step(std::span<Parameter<Real>* const> params, std::vector<BasicMatrix<Real>> grads,
                    TrainState<Real>& state, const TrainConfig& cfg);

// Scales grads in place so their global norm is at most max_norm. Returns the
// norm before scaling.
template <std::floating_point Real>
double clip_global_norm(std::vector<BasicMatrix<Real>>& grads, double max_norm);

// Updates the improvement counter; returns true when the rate was reduced.
template <std::floating_point Real>
bool plateau_schedule(TrainState<Real>& state, double val_loss, const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double learning_rate = 0.0;
  double seconds = 0.0;
};

template <std::floating_point Real>
struct TrainResult {
  EncoderModel<Real> final_model;
  EncoderModel<Real> best_model;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> log;
};

// Mean per-sequence focal loss in eval mode.
template <std::floating_point Real>
double evaluate_loss(const EncoderModel<Real>& model, const Dataset& data, const TrainConfig& cfg);

template <std::floating_point Real>
TrainResult<Real> train(EncoderModel<Real> model, const Dataset& train_set, const Dataset& val_set,
                        const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch = {});

struct GradCheckEntry {
  std::string parameter;
  double max_relative_error = 0.0;
  bool skipped = false;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  bool passed() const;
};

// Compares tape gradients of the focal loss with central differences (step
// 1e-5) for every parameter tensor. With dropout enabled the loss is not a
// deterministic function of the parameters, so every entry is marked skipped.
GradCheckReport grad_check(const EncoderModel<double>& model, const Matrix& frames,
                           std::span<const std::uint16_t> labels, double alpha, double gamma, double tolerance);

}  // namespace mmta
