#include "mmta/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mmta/error.hpp"

namespace mmta {

std::string to_string(AttentionKind kind) { return kind == AttentionKind::mmta ? "mmta" : "global"; }
std::string to_string(Activation activation) { return activation == Activation::relu ? "relu" : "tanh"; }
std::string to_string(Precision precision) { return precision == Precision::f64 ? "f64" : "f32"; }

AttentionKind parse_attention_kind(std::string_view text) {
  if (text == "mmta") return AttentionKind::mmta;
  if (text == "global") return AttentionKind::global;
  throw ConfigError("attention: expected mmta or global, got '" + std::string(text) + "'");
}

Activation parse_activation(std::string_view text) {
  if (text == "relu") return Activation::relu;
  if (text == "tanh") return Activation::tanh;
  throw ConfigError("activation: expected relu or tanh, got '" + std::string(text) + "'");
}

Precision parse_precision(std::string_view text) {
  if (text == "f64" || text == "double") return Precision::f64;
  if (text == "f32" || text == "float") return Precision::f32;
  throw ConfigError("precision: expected f64 or f32, got '" + std::string(text) + "'");
}

void EncoderConfig::validate() const {
  if (layers == 0) throw ConfigError("layers must be at least 1");
  if (model_dim == 0) throw ConfigError("model_dim must be positive");
  if (heads == 0 || model_dim % heads != 0) {
    throw ConfigError("heads (" + std::to_string(heads) + ") must divide model_dim (" + std::to_string(model_dim) +
                      ")");
  }
  if (input_dim == 0) throw ConfigError("input_dim must be positive");
  if (classes < 2) throw ConfigError("classes must be at least 2");
  if (classes > 65535) throw ConfigError("classes must fit in 16 bits");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (attention == AttentionKind::mmta) window.validate();
}

WindowLayout EncoderConfig::layout(std::size_t length) const {
  return attention == AttentionKind::global ? WindowLayout::single(length) : WindowLayout::build(length, window);
}

KeyValues EncoderConfig::to_key_values() const {
  return {
      {"layers", std::to_string(layers)},
      {"heads", std::to_string(heads)},
      {"model_dim", std::to_string(model_dim)},
      {"ffn_hidden", std::to_string(ffn_hidden)},
      {"input_dim", std::to_string(input_dim)},
      {"classes", std::to_string(classes)},
      {"attention", to_string(attention)},
      {"window", std::to_string(window.size)},
      {"overlap", std::to_string(window.overlap)},
      {"dropout", format_real(dropout)},
      {"positional_encoding", positional_encoding ? "true" : "false"},
      {"activation", to_string(activation)},
      {"conventional_residual", conventional_residual ? "true" : "false"},
      {"precision", to_string(precision)},
  };
}

EncoderConfig EncoderConfig::from_key_values(const KeyValues& kv) {
  EncoderConfig c;
  c.layers = kv_size(kv, "layers", c.layers);
  c.heads = kv_size(kv, "heads", c.heads);
  c.model_dim = kv_size(kv, "model_dim", c.model_dim);
  c.ffn_hidden = kv_size(kv, "ffn_hidden", c.ffn_hidden);
  c.input_dim = kv_size(kv, "input_dim", c.input_dim);
  c.classes = kv_size(kv, "classes", c.classes);
  c.attention = parse_attention_kind(kv_string(kv, "attention", to_string(c.attention)));
  c.window.size = kv_size(kv, "window", c.window.size);
  c.window.overlap = kv_size(kv, "overlap", c.window.overlap);
  c.dropout = kv_real(kv, "dropout", c.dropout);
  c.positional_encoding = kv_bool(kv, "positional_encoding", c.positional_encoding);
  c.activation = parse_activation(kv_string(kv, "activation", to_string(c.activation)));
  c.conventional_residual = kv_bool(kv, "conventional_residual", c.conventional_residual);
  c.precision = parse_precision(kv_string(kv, "precision", to_string(c.precision)));
  return c;
}

std::size_t effective_receptive_field(const EncoderConfig& config) {
  config.validate();
  return config.window.size + (config.layers - 1) * config.window.stride();
}

template <std::floating_point Real>
BasicMatrix<Real> positional_table(std::size_t length, std::size_t width) {
  BasicMatrix<Real> pe(length, width);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < width; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(width));
      const double angle = static_cast<double>(t) * rate;
      pe(t, i) = static_cast<Real>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

namespace {

template <std::floating_point Real>
Parameter<Real> xavier(std::string name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Parameter<Real> p{std::move(name), BasicMatrix<Real>(fan_in, fan_out), true};
  for (Real& x : p.value.values()) x = static_cast<Real>(dist(rng));
  return p;
}

template <std::floating_point Real>
Parameter<Real> filled(std::string name, std::size_t cols, Real value, bool decay) {
  return {std::move(name), BasicMatrix<Real>(1, cols, value), decay};
}

}  // namespace

template <std::floating_point Real>
EncoderModel<Real> EncoderModel<Real>::initialize(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.model_dim, hidden = config.hidden_width();
  EncoderModel m;
  m.config_ = config;
  m.input_weight_ = xavier<Real>("input.weight", config.input_dim, d, rng);
  m.input_bias_ = filled<Real>("input.bias", d, 0, true);
  for (std::size_t i = 0; i < config.layers; ++i) {
    const std::string prefix = "layer" + std::to_string(i) + ".";
    EncoderLayer<Real> layer;
    layer.query = xavier<Real>(prefix + "attn.wq", d, d, rng);
    layer.key = xavier<Real>(prefix + "attn.wk", d, d, rng);
    layer.value = xavier<Real>(prefix + "attn.wv", d, d, rng);
    layer.output = xavier<Real>(prefix + "attn.wo", d, d, rng);
    layer.norm_gain = filled<Real>(prefix + "norm.gain", d, 1, false);
    layer.norm_bias = filled<Real>(prefix + "norm.bias", d, 0, false);
    layer.ffn_w1 = xavier<Real>(prefix + "ffn.w1", d, hidden, rng);
    layer.ffn_b1 = filled<Real>(prefix + "ffn.b1", hidden, 0, true);
    layer.ffn_w2 = xavier<Real>(prefix + "ffn.w2", hidden, d, rng);
    layer.ffn_b2 = filled<Real>(prefix + "ffn.b2", d, 0, true);
    m.layers_.push_back(std::move(layer));
  }
  m.head_weight_ = xavier<Real>("head.weight", d, config.classes, rng);
  m.head_bias_ = filled<Real>("head.bias", config.classes, 0, true);
  return m;
}

template <std::floating_point Real>
std::vector<Parameter<Real>*> EncoderModel<Real>::parameters() {
  std::vector<Parameter<Real>*> out = {&input_weight_, &input_bias_};
  for (auto& l : layers_) {
    for (auto* p : {&l.query, &l.key, &l.value, &l.output, &l.norm_gain, &l.norm_bias, &l.ffn_w1, &l.ffn_b1,
                    &l.ffn_w2, &l.ffn_b2}) {
      out.push_back(p);
    }
  }
  out.push_back(&head_weight_);
  out.push_back(&head_bias_);
  return out;
}

template <std::floating_point Real>
std::vector<const Parameter<Real>*> EncoderModel<Real>::parameters() const {
  auto mutable_params = const_cast<EncoderModel*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

template <std::floating_point Real>
Parameter<Real>& EncoderModel<Real>::parameter(std::string_view name) {
  for (auto* p : parameters())
    if (p->name == name) return *p;
  throw ConfigError("model has no parameter named '" + std::string(name) + "'");
}

template <std::floating_point Real>
Var<Real> EncoderModel<Real>::forward(Tape<Real>& tape, const BasicMatrix<Real>& frames, ForwardMode mode,
                                      Rng* rng) const {
  if (frames.cols() != config_.input_dim) {
    throw ShapeError("encoder: input is " + shape_string(frames) + ", expected width " +
                     std::to_string(config_.input_dim));
  }
  if (frames.rows() == 0) throw ShapeError("encoder: empty sequence");
  const double rate = mode == ForwardMode::train ? config_.dropout : 0.0;
  if (rate > 0.0 && rng == nullptr) throw ConfigError("encoder: dropout in train mode needs an rng");
  auto layout = std::make_shared<const WindowLayout>(config_.layout(frames.rows()));

  Var<Real> x = tape.constant(frames);
  Var<Real> in_w = tape.watch(input_weight_);
  Var<Real> in_b = tape.watch(input_bias_);
  Var<Real> h = ad::add_row(ad::matmul(x, in_w), in_b);
  if (config_.positional_encoding) {
    h = ad::add(h, tape.constant(positional_table<Real>(frames.rows(), config_.model_dim)));
  }

  for (const auto& layer : layers_) {
    AttentionVars<Real> attn{config_.heads, tape.watch(layer.query), tape.watch(layer.key), tape.watch(layer.value),
                             tape.watch(layer.output)};
    Var<Real> gain = tape.watch(layer.norm_gain);
    Var<Real> bias = tape.watch(layer.norm_bias);
    Var<Real> w1 = tape.watch(layer.ffn_w1);
    Var<Real> b1 = tape.watch(layer.ffn_b1);
    Var<Real> w2 = tape.watch(layer.ffn_w2);
    Var<Real> b2 = tape.watch(layer.ffn_b2);

    Var<Real> attended = ad::mmta(h, layout, attn, rate, rng);
    if (config_.conventional_residual) attended = ad::add(h, attended);
    Var<Real> normed = ad::layer_norm(attended, gain, bias, Real(1e-5));
    Var<Real> inner = ad::add_row(ad::matmul(normed, w1), b1);
    inner = config_.activation == Activation::relu ? ad::relu(inner) : ad::tanh(inner);
    Var<Real> ffn = ad::add_row(ad::matmul(inner, w2), b2);
    if (rate > 0.0) ffn = ad::dropout(ffn, rate, *rng);
    h = ad::add(attended, ffn);
  }

  Var<Real> head_w = tape.watch(head_weight_);
  Var<Real> head_b = tape.watch(head_bias_);
  return ad::add_row(ad::matmul(h, head_w), head_b);
}

template <std::floating_point Real>
BasicMatrix<Real> EncoderModel<Real>::logits(const BasicMatrix<Real>& frames) const {
  Tape<Real> tape(TapeMode::inference);
  return forward(tape, frames, ForwardMode::eval, nullptr).value();
}

template <std::floating_point Real>
template <std::floating_point Other>
EncoderModel<Other> EncoderModel<Real>::cast() const {
  auto conv = [](const Parameter<Real>& p) { return Parameter<Other>{p.name, convert<Other>(p.value), p.decay}; };
  EncoderModel<Other> m;
  m.config_ = config_;
  m.config_.precision = std::is_same_v<Other, float> ? Precision::f32 : Precision::f64;
  m.input_weight_ = conv(input_weight_);
  m.input_bias_ = conv(input_bias_);
  for (const auto& l : layers_) {
    m.layers_.push_back({conv(l.query), conv(l.key), conv(l.value), conv(l.output), conv(l.norm_gain),
                         conv(l.norm_bias), conv(l.ffn_w1), conv(l.ffn_b1), conv(l.ffn_w2), conv(l.ffn_b2)});
  }
  m.head_weight_ = conv(head_weight_);
  m.head_bias_ = conv(head_bias_);
  return m;
}

template <std::floating_point Real>
std::vector<std::uint16_t> predict(const BasicMatrix<Real>& logits, std::size_t window) {
  if (window == 0 || window % 2 == 0) {
    throw ConfigError("smoothing window must be odd and positive, got " + std::to_string(window));
  }
  const std::size_t length = logits.rows(), classes = logits.cols();
  const std::ptrdiff_t radius = static_cast<std::ptrdiff_t>(window / 2);
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(length) - 1;
  std::vector<std::uint16_t> labels(length);
  std::vector<double> smoothed(classes);
  for (std::size_t t = 0; t < length; ++t) {
    const Real* row = logits.data() + t * classes;
    if (window > 1) {
      std::fill(smoothed.begin(), smoothed.end(), 0.0);
      for (std::ptrdiff_t j = -radius; j <= radius; ++j) {
        const std::ptrdiff_t src = std::clamp(static_cast<std::ptrdiff_t>(t) + j, std::ptrdiff_t{0}, last);
        const Real* r = logits.data() + static_cast<std::size_t>(src) * classes;
        for (std::size_t c = 0; c < classes; ++c) smoothed[c] += r[c];
      }
      for (double& v : smoothed) v /= static_cast<double>(window);
    } else {
      for (std::size_t c = 0; c < classes; ++c) smoothed[c] = row[c];
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (smoothed[c] > smoothed[best]) best = c;
    labels[t] = static_cast<std::uint16_t>(best);
  }
  return labels;
}

template class EncoderModel<float>;
template class EncoderModel<double>;
template EncoderModel<float> EncoderModel<double>::cast<float>() const;
template EncoderModel<double> EncoderModel<float>::cast<double>() const;
template EncoderModel<double> EncoderModel<double>::cast<double>() const;
template EncoderModel<float> EncoderModel<float>::cast<float>() const;
template BasicMatrix<float> positional_table(std::size_t, std::size_t);
template BasicMatrix<double> positional_table(std::size_t, std::size_t);
template std::vector<std::uint16_t> predict(const BasicMatrix<float>&, std::size_t);
template std::vector<std::uint16_t> predict(const BasicMatrix<double>&, std::size_t);

}  // namespace mmta
