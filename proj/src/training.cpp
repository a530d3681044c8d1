#include "mmta/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "mmta/error.hpp"
#include "mmta/rng.hpp"

namespace mmta {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (patience == 0) throw ConfigError("patience must be at least 1");
  if (!(plateau_factor > 0.0 && plateau_factor <= 1.0)) throw ConfigError("plateau_factor must lie in (0, 1]");
  if (!(min_delta >= 0.0)) throw ConfigError("min_delta must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (!(focal_alpha > 0.0 && focal_alpha <= 1.0)) throw ConfigError("focal_alpha must lie in (0, 1]");
  if (!(focal_gamma >= 0.0)) throw ConfigError("focal_gamma must be non-negative");
}

KeyValues TrainConfig::to_key_values() const {
  return {
      {"epochs", std::to_string(epochs)},
      {"batch_size", std::to_string(batch_size)},
      {"learning_rate", format_real(learning_rate)},
      {"patience", std::to_string(patience)},
      {"plateau_factor", format_real(plateau_factor)},
      {"min_delta", format_real(min_delta)},
      {"momentum", format_real(momentum)},
      {"weight_decay", format_real(weight_decay)},
      {"clip_norm", format_real(clip_norm)},
      {"focal_alpha", format_real(focal_alpha)},
      {"focal_gamma", format_real(focal_gamma)},
      {"seed", std::to_string(seed)},
  };
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
  TrainConfig c;
  c.epochs = kv_size(kv, "epochs", c.epochs);
  c.batch_size = kv_size(kv, "batch_size", c.batch_size);
  c.learning_rate = kv_real(kv, "learning_rate", c.learning_rate);
  c.patience = kv_size(kv, "patience", c.patience);
  c.plateau_factor = kv_real(kv, "plateau_factor", c.plateau_factor);
  c.min_delta = kv_real(kv, "min_delta", c.min_delta);
  c.momentum = kv_real(kv, "momentum", c.momentum);
  c.weight_decay = kv_real(kv, "weight_decay", c.weight_decay);
  c.clip_norm = kv_real(kv, "clip_norm", c.clip_norm);
  c.focal_alpha = kv_real(kv, "focal_alpha", c.focal_alpha);
  c.focal_gamma = kv_real(kv, "focal_gamma", c.focal_gamma);
  c.seed = kv_size(kv, "seed", c.seed);
  return c;
}

namespace {

template <std::floating_point Real>
void check_labels(const BasicMatrix<Real>& logits, std::span<const std::uint16_t> labels) {
  if (labels.size() != logits.rows()) {
    throw ShapeError("focal loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(logits.rows()) +
                     " frames");
  }
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t] >= logits.cols()) {
      throw LabelError("label " + std::to_string(labels[t]) + " at frame " + std::to_string(t) + " is outside [0, " +
                       std::to_string(logits.cols()) + ")");
    }
  }
}

// Log-softmax of one row, returned with the log-probability of `label`.
template <std::floating_point Real>
double log_softmax_row(const Real* row, std::size_t n, std::uint16_t label, std::vector<double>& logq) {
  double mx = row[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(row[j]));
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t j = 0; j < n; ++j) logq[j] = static_cast<double>(row[j]) - lse;
  return logq[label];
}

double focal_term(double logp, double alpha, double gamma) {
  const double p = std::exp(logp);
  return -alpha * std::pow(1.0 - p, gamma) * logp;
}

}  // namespace

template <std::floating_point Real>
double focal_loss(const BasicMatrix<Real>& logits, std::span<const std::uint16_t> labels, double alpha, double gamma) {
  check_labels(logits, labels);
  if (labels.empty()) return 0.0;
  std::vector<double> logq(logits.cols());
  double total = 0.0;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    total += focal_term(log_softmax_row(logits.data() + t * logits.cols(), logits.cols(), labels[t], logq), alpha, gamma);
  }
  return total / static_cast<double>(labels.size());
}

namespace ad {

template <std::floating_point Real>
Var<Real> focal_loss(const Var<Real>& logits, std::span<const std::uint16_t> labels, double alpha, double gamma) {
  const BasicMatrix<Real>& z = logits.value();
  check_labels(z, labels);
  const std::size_t length = z.rows(), classes = z.cols();
  std::vector<double> logq(classes);
  // Per-frame softmax and dL/dz, kept for the backward pass.
  BasicMatrix<Real> dz(length, classes);
  double total = 0.0;
  for (std::size_t t = 0; t < length; ++t) {
    const double logp = log_softmax_row(z.data() + t * classes, classes, labels[t], logq);
    total += focal_term(logp, alpha, gamma);
    const double p = std::exp(logp);
    const double rest = 1.0 - p;
    // d(frame loss)/d(log p).
    double dlogp = -alpha * std::pow(rest, gamma);
    if (gamma != 0.0 && rest > 0.0) dlogp += alpha * gamma * std::pow(rest, gamma - 1.0) * p * logp;
    for (std::size_t j = 0; j < classes; ++j) {
      const double indicator = j == labels[t] ? 1.0 : 0.0;
      dz(t, j) = static_cast<Real>(dlogp * (indicator - std::exp(logq[j])) / static_cast<double>(length));
    }
  }
  BasicMatrix<Real> value(1, 1, static_cast<Real>(length == 0 ? 0.0 : total / static_cast<double>(length)));
  return logits.tape().push(std::move(value), {logits},
                            [logits, dz = std::move(dz)](Tape<Real>& tape, const BasicMatrix<Real>& g,
                                                         const BasicMatrix<Real>&) {
                              auto& slot = tape.grad_slot(logits);
                              const Real scale = g(0, 0);
                              for (std::size_t i = 0; i < dz.size(); ++i) slot.data()[i] += scale * dz.data()[i];
                            });
}

}  // namespace ad

template <std::floating_point Real>
TrainState<Real> TrainState<Real>::start(std::span<Parameter<Real>* const> params, const TrainConfig& cfg) {
  TrainState s;
  s.learning_rate = cfg.learning_rate;
  for (const auto* p : params) s.momentum.emplace_back(p->value.rows(), p->value.cols());
  return s;
}

template <std::floating_point Real>
double clip_global_norm(std::vector<BasicMatrix<Real>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (Real v : g.values()) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const Real factor = static_cast<Real>(max_norm / norm);
    for (auto& g : grads)
      for (Real& v : g.values()) v *= factor;
  }
  return norm;
}

template <std::floating_point Real>
StepReport sgd_step(std::span<Parameter<Real>* const> params, std::vector<BasicMatrix<Real>> grads,
                    TrainState<Real>& state, const TrainConfig& cfg) {
  if (grads.size() != params.size() || state.momentum.size() != params.size()) {
    throw ShapeError("sgd_step: " + std::to_string(params.size()) + " parameters, " + std::to_string(grads.size()) +
                     " gradients, " + std::to_string(state.momentum.size()) + " momentum buffers");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].same_shape(params[i]->value) || !state.momentum[i].same_shape(params[i]->value)) {
      throw ShapeError("sgd_step: gradient for " + params[i]->name + " is " + shape_string(grads[i]) +
                       ", parameter is " + shape_string(params[i]->value));
    }
    if (!all_finite(grads[i])) {
      throw NumericError("non-finite gradient for parameter " + params[i]->name + " (norm " +
                         format_real(frobenius_norm(grads[i])) + ")");
    }
  }
  StepReport report;
  report.grad_norm = clip_global_norm(grads, cfg.clip_norm);
  report.clipped = report.grad_norm > cfg.clip_norm;
  const Real lr = static_cast<Real>(state.learning_rate);
  const Real mu = static_cast<Real>(cfg.momentum);
  const Real decay = static_cast<Real>(cfg.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = params[i]->value.values();
    auto grad = grads[i].values();
    auto buf = state.momentum[i].values();
    const bool decays = params[i]->decay && cfg.weight_decay > 0.0;
    for (std::size_t j = 0; j < value.size(); ++j) {
      Real g = grad[j];
      if (decays) g += decay * value[j];
      buf[j] = mu * buf[j] + g;
      value[j] -= lr * buf[j];
    }
  }
  return report;
}

template <std::floating_point Real>
bool plateau_schedule(TrainState<Real>& state, double val_loss, const TrainConfig& cfg) {
  if (!state.has_best || val_loss < state.best_val_loss - cfg.min_delta) {
    state.has_best = true;
    state.best_val_loss = val_loss;
    state.epochs_since_improvement = 0;
    return false;
  }
  if (++state.epochs_since_improvement < cfg.patience) return false;
  state.learning_rate *= cfg.plateau_factor;
  state.epochs_since_improvement = 0;
  return true;
}

template <std::floating_point Real>
double evaluate_loss(const EncoderModel<Real>& model, const Dataset& data, const TrainConfig& cfg) {
  if (data.sequences.empty()) throw ConfigError("validation split is empty");
  double total = 0.0;
  for (const auto& seq : data.sequences) {
    BasicMatrix<Real> x = convert<Real>(seq.features);
    total += focal_loss(model.logits(x), seq.labels, cfg.focal_alpha, cfg.focal_gamma);
  }
  return total / static_cast<double>(data.sequences.size());
}

template <std::floating_point Real>
TrainResult<Real> train(EncoderModel<Real> model, const Dataset& train_set, const Dataset& val_set,
                        const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (train_set.sequences.empty()) throw ConfigError("training split is empty");
  if (val_set.sequences.empty()) throw ConfigError("validation split is empty");
  for (const Dataset* ds : {&train_set, &val_set}) {
    if (ds->feature_dim != model.config().input_dim || ds->classes != model.config().classes) {
      throw ConfigError("dataset has input_dim=" + std::to_string(ds->feature_dim) + " classes=" +
                        std::to_string(ds->classes) + ", model expects input_dim=" +
                        std::to_string(model.config().input_dim) + " classes=" +
                        std::to_string(model.config().classes));
    }
  }

  std::vector<BasicMatrix<Real>> inputs;
  inputs.reserve(train_set.sequences.size());
  for (const auto& seq : train_set.sequences) inputs.push_back(convert<Real>(seq.features));

  auto params = model.parameters();
  TrainState<Real> state = TrainState<Real>::start(params, cfg);
  TrainResult<Real> result{model, model, 0, {}};
  double best_val = 0.0;

  std::vector<std::size_t> order(inputs.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    state.epoch = epoch;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, {epoch}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t step = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::vector<BasicMatrix<Real>> grads;
      for (const auto* p : params) grads.emplace_back(p->value.rows(), p->value.cols());
      for (std::size_t b = begin; b < end; ++b) {
        const std::size_t idx = order[b];
        Rng dropout_rng(derive_seed(cfg.seed, {epoch, idx}));
        Tape<Real> tape;
        Var<Real> logits = model.forward(tape, inputs[idx], ForwardMode::train, &dropout_rng);
        Var<Real> loss = ad::focal_loss(logits, train_set.sequences[idx].labels, cfg.focal_alpha, cfg.focal_gamma);
        const double value = static_cast<double>(loss.value()(0, 0));
        if (!std::isfinite(value)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                             " (sequence '" + train_set.sequences[idx].name + "')");
        }
        loss_sum += value;
        tape.backward(loss);
        auto seq_grads = tape.parameter_grads();
        for (std::size_t i = 0; i < grads.size(); ++i) {
          auto dst = grads[i].values();
          auto src = seq_grads[i].values();
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
      }
      const Real inv = Real{1} / static_cast<Real>(end - begin);
      for (auto& g : grads)
        for (Real& v : g.values()) v *= inv;
      try {
        sgd_step<Real>(params, std::move(grads), state, cfg);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " step " + std::to_string(step) + ": " + e.what());
      }
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(order.size());
    record.val_loss = evaluate_loss(model, val_set, cfg);
    if (!std::isfinite(record.val_loss)) {
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    record.learning_rate = state.learning_rate;
    if (result.best_epoch == 0 || record.val_loss < best_val) {
      best_val = record.val_loss;
      result.best_epoch = epoch;
      result.best_model = model;
    }
    plateau_schedule(state, record.val_loss, cfg);
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  result.final_model = std::move(model);
  return result;
}

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.passed; });
}

GradCheckReport grad_check(const EncoderModel<double>& model, const Matrix& frames,
                           std::span<const std::uint16_t> labels, double alpha, double gamma, double tolerance) {
  GradCheckReport report;
  report.tolerance = tolerance;
  EncoderModel<double> work = model;
  auto params = work.parameters();
  if (model.config().dropout > 0.0) {
    for (const auto* p : params) report.entries.push_back({p->name, 0.0, true, true});
    return report;
  }

  Tape<double> tape;
  Var<double> loss = ad::focal_loss(work.forward(tape, frames, ForwardMode::eval, nullptr), labels, alpha, gamma);
  tape.backward(loss);
  const auto analytic = tape.parameter_grads();

  auto evaluate = [&] { return focal_loss(work.logits(frames), labels, alpha, gamma); };
  constexpr double kStep = 1e-5;
  for (std::size_t i = 0; i < params.size(); ++i) {
    GradCheckEntry entry{params[i]->name, 0.0, false, true};
    auto values = params[i]->value.values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + kStep;
      const double up = evaluate();
      values[j] = saved - kStep;
      const double down = evaluate();
      values[j] = saved;
      const double numeric = (up - down) / (2.0 * kStep);
      const double a = analytic[i].values()[j];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      entry.max_relative_error = std::max(entry.max_relative_error, err);
    }
    entry.passed = entry.max_relative_error < tolerance;
    report.entries.push_back(entry);
  }
  return report;
}

#define MMTA_INSTANTIATE_TRAINING(R)                                                                              \
  template double focal_loss(const BasicMatrix<R>&, std::span<const std::uint16_t>, double, double);              \
  template Var<R> ad::focal_loss(const Var<R>&, std::span<const std::uint16_t>, double, double);                  \
  template struct TrainState<R>;                                                                                  \
  template StepReport sgd_step(std::span<Parameter<R>* const>, std::vector<BasicMatrix<R>>, TrainState<R>&,        \
                               const TrainConfig&);                                                               \
  template double clip_global_norm(std::vector<BasicMatrix<R>>&, double);                                         \
  template bool plateau_schedule(TrainState<R>&, double, const TrainConfig&);                                     \
  template double evaluate_loss(const EncoderModel<R>&, const Dataset&, const TrainConfig&);                       \
  template TrainResult<R> train(EncoderModel<R>, const Dataset&, const Dataset&, const TrainConfig&,               \
                                const std::function<void(const EpochRecord&)>&);

MMTA_INSTANTIATE_TRAINING(float)
MMTA_INSTANTIATE_TRAINING(double)

#undef MMTA_INSTANTIATE_TRAINING

}  // namespace mmta
