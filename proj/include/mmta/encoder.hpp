#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mmta/attention.hpp"
#include "mmta/autodiff.hpp"
#include "mmta/keyvalue.hpp"
#include "mmta/matrix.hpp"
#include "mmta/windowing.hpp"

namespace mmta {

enum class AttentionKind { mmta, global };
enum class Activation { relu, tanh };
enum class Precision { f64, f32 };
enum class ForwardMode { train, eval };

std::string to_string(AttentionKind kind);
std::string to_string(Activation activation);
std::string to_string(Precision precision);
AttentionKind parse_attention_kind(std::string_view text);
Activation parse_activation(std::string_view text);
Precision parse_precision(std::string_view text);

struct EncoderConfig {
  std::size_t layers = 3;
  std::size_t heads = 4;
  std::size_t model_dim = 32;
  // 0 selects 2 * model_dim.
  std::size_t ffn_hidden = 0;
  std::size_t input_dim = 16;
  std::size_t classes = 5;
  AttentionKind attention = AttentionKind::mmta;
  WindowConfig window{32, 24};
  double dropout = 0.2;
  bool positional_encoding = false;
  Activation activation = Activation::relu;
  // Adds a residual connection around attention as well (H + MMTA(H)).
  bool conventional_residual = false;
  Precision precision = Precision::f64;

  std::size_t hidden_width() const { return ffn_hidden == 0 ? 2 * model_dim : ffn_hidden; }
  void validate() const;
  // Layout the attention layers use for a sequence of length T.
  WindowLayout layout(std::size_t length) const;

  KeyValues to_key_values() const;
  // Missing keys keep their defaults; unknown keys are ignored.
  static EncoderConfig from_key_values(const KeyValues& kv);
};

// Frames reachable in one direction after the full stack: w + (M - 1) s.
std::size_t effective_receptive_field(const EncoderConfig& config);

// Sinusoidal position table, T × width.
template <std::floating_point Real>
BasicMatrix<Real> positional_table(std::size_t length, std::size_t width);

template <std::floating_point Real>
struct EncoderLayer {
  Parameter<Real> query, key, value, output;
  Parameter<Real> norm_gain, norm_bias;
  Parameter<Real> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

template <std::floating_point Real>
class EncoderModel {
 public:
  // Xavier-uniform weights, zero biases, unit LayerNorm gains.
  static EncoderModel initialize(const EncoderConfig& config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }

  // All parameters in a fixed order: input, layers, head.
  std::vector<Parameter<Real>*> parameters();
  std::vector<const Parameter<Real>*> parameters() const;
  Parameter<Real>& parameter(std::string_view name);

  // Records the forward pass on `tape`. Every parameter is watched, so after
  // backward tape.parameter_grads() lines up with parameters(). Dropout is
  // active only in train mode and then needs `rng`.
  Var<Real> forward(Tape<Real>& tape, const BasicMatrix<Real>& frames, ForwardMode mode, Rng* rng) const;

  // Eval-mode logits (T × classes) without recording gradients.
  BasicMatrix<Real> logits(const BasicMatrix<Real>& frames) const;

  EncoderLayer<Real>& layer(std::size_t i) { return layers_[i]; }
  const EncoderLayer<Real>& layer(std::size_t i) const { return layers_[i]; }

  template <std::floating_point Other>
  EncoderModel<Other> cast() const;

 private:
  template <std::floating_point>
  friend class EncoderModel;

  EncoderConfig config_;
  Parameter<Real> input_weight_, input_bias_;
  std::vector<EncoderLayer<Real>> layers_;
  Parameter<Real> head_weight_, head_bias_;
};

// Boxcar smoothing of each logit column over `window` frames (odd; edges
// clamp to the nearest frame), then per-frame argmax with ties going to the
// lower class index.
template <std::floating_point Real>
std::vector<std::uint16_t> predict(const BasicMatrix<Real>& logits, std::size_t window = 1);

}  // namespace mmta
