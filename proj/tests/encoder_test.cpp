#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "mmta/binary_io.hpp"
#include "mmta/checkpoint.hpp"
#include "mmta/encoder.hpp"
#include "mmta/error.hpp"
#include "test_support.hpp"

namespace mmta {
namespace {

using testing::max_abs_diff;
using testing::random_matrix;

EncoderConfig small_config() {
  EncoderConfig c;
  c.layers = 2;
  c.heads = 2;
  c.model_dim = 8;
  c.input_dim = 5;
  c.classes = 3;
  c.window = {4, 2};
  return c;
}

TEST(EncoderTest, ZeroHeadGivesUniformProbabilities) {
  auto model = EncoderModel<double>::initialize(small_config(), 1);
  model.parameter("head.weight").value.fill(0.0);
  Rng rng(2);
  Matrix logits = model.logits(random_matrix(13, 5, rng));
  Matrix probs = softmax_rows(logits);
  for (double p : probs.values()) EXPECT_DOUBLE_EQ(p, 1.0 / 3.0);
}

// Single-layer encoder assembled by hand from the standalone global attention.
Matrix global_single_layer(const EncoderModel<double>& m, const Matrix& x) {
  auto& model = const_cast<EncoderModel<double>&>(m);
  const auto& l = model.layer(0);
  Matrix h = add_row(matmul(x, model.parameter("input.weight").value), model.parameter("input.bias").value);
  AttentionParams<double> p{m.config().heads, l.query.value, l.key.value, l.value.value, l.output.value};
  Matrix a = global_attention(h, p);
  Matrix n = layer_norm(a, l.norm_gain.value, l.norm_bias.value, 1e-5);
  Matrix f = add_row(matmul(relu(add_row(matmul(n, l.ffn_w1.value), l.ffn_b1.value)), l.ffn_w2.value), l.ffn_b2.value);
  return add_row(matmul(add(a, f), model.parameter("head.weight").value), model.parameter("head.bias").value);
}

TEST(EncoderTest, CoveringWindowMatchesGlobalSingleLayer) {
  for (std::size_t T : {3u, 9u, 20u}) {
    EncoderConfig c = small_config();
    c.layers = 1;
    c.window = {T, 1};
    auto model = EncoderModel<double>::initialize(c, T);
    // Non-trivial biases and gains so every term participates.
    Rng rng(T + 100);
    for (auto* p : model.parameters())
      if (p->value.rows() == 1)
        for (double& v : p->value.values()) v += 0.1 * std::normal_distribution<double>()(rng);
    Matrix x = random_matrix(T, 5, rng);
    EXPECT_LT(max_abs_diff(model.logits(x), global_single_layer(model, x)), 1e-9) << "T=" << T;

    c.attention = AttentionKind::global;
    auto global = model_from_checkpoint<double>([&] {
      Checkpoint ck = to_checkpoint(model);
      ck.config = c.to_key_values();
      return ck;
    }());
    EXPECT_LT(max_abs_diff(global.logits(x), global_single_layer(model, x)), 1e-9);
  }
}

TEST(EncoderTest, EvalForwardIsBitReproducible) {
  EncoderConfig c = small_config();
  c.dropout = 0.3;
  auto a = EncoderModel<double>::initialize(c, 5);
  auto b = EncoderModel<double>::initialize(c, 5);
  Rng rng(6);
  Matrix x = random_matrix(40, 5, rng);
  EXPECT_EQ(a.logits(x), b.logits(x));
  EXPECT_EQ(a.logits(x), a.logits(x));
}

TEST(EncoderTest, TrainModeDropoutChangesOutputDeterministically) {
  EncoderConfig c = small_config();
  c.dropout = 0.3;
  auto model = EncoderModel<double>::initialize(c, 5);
  Rng data(6);
  Matrix x = random_matrix(12, 5, data);
  auto run = [&](std::uint64_t seed) {
    Tape<double> tape(TapeMode::inference);
    Rng rng(seed);
    return model.forward(tape, x, ForwardMode::train, &rng).value();
  };
  EXPECT_EQ(run(1), run(1));
  EXPECT_NE(run(1), model.logits(x));
  Tape<double> tape(TapeMode::inference);
  EXPECT_THROW(model.forward(tape, x, ForwardMode::train, nullptr), ConfigError);
}

TEST(EncoderTest, AcceptsAnyLength) {
  auto model = EncoderModel<double>::initialize(small_config(), 7);
  Rng rng(8);
  for (std::size_t T : {1u, 2u, 7u, 61u}) {
    Matrix logits = model.logits(random_matrix(T, 5, rng));
    EXPECT_EQ(logits.rows(), T);
    EXPECT_EQ(logits.cols(), 3u);
    EXPECT_TRUE(all_finite(logits));
  }
}

TEST(EncoderTest, WrongInputWidthIsShapeError) {
  auto model = EncoderModel<double>::initialize(small_config(), 7);
  EXPECT_THROW(model.logits(Matrix(4, 6)), ShapeError);
}

TEST(EncoderTest, ZeroFeedForwardLeavesAttentionOutput) {
  EncoderConfig c = small_config();
  c.layers = 1;
  c.classes = 8;
  auto model = EncoderModel<double>::initialize(c, 9);
  for (const char* name : {"layer0.ffn.w1", "layer0.ffn.w2"}) model.parameter(name).value.fill(0.0);
  model.parameter("head.weight").value = Matrix::identity(8);
  Rng rng(10);
  Matrix x = random_matrix(15, 5, rng);
  const auto& l = model.layer(0);
  Matrix h = add_row(matmul(x, model.parameter("input.weight").value), model.parameter("input.bias").value);
  Matrix expected = mmta(h, c.layout(15), AttentionParams<double>{2, l.query.value, l.key.value, l.value.value, l.output.value});
  EXPECT_EQ(model.logits(x), expected);
}

TEST(EncoderTest, ConventionalResidualAddsInput) {
  EncoderConfig c = small_config();
  auto plain = EncoderModel<double>::initialize(c, 11);
  c.conventional_residual = true;
  auto conventional = EncoderModel<double>::initialize(c, 11);
  Rng rng(12);
  Matrix x = random_matrix(10, 5, rng);
  EXPECT_GT(max_abs_diff(plain.logits(x), conventional.logits(x)), 1e-6);
}

TEST(EncoderTest, PositionalTableValues) {
  Matrix pe = positional_table<double>(3, 4);
  EXPECT_EQ(pe(0, 0), 0.0);
  EXPECT_EQ(pe(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(pe(2, 0), std::sin(2.0));
  EXPECT_DOUBLE_EQ(pe(2, 3), std::cos(2.0 / 100.0));
}

TEST(EncoderConfigTest, KeyValueRoundTrip) {
  EncoderConfig c = small_config();
  c.dropout = 0.125;
  c.activation = Activation::tanh;
  c.attention = AttentionKind::global;
  c.positional_encoding = true;
  EXPECT_EQ(EncoderConfig::from_key_values(c.to_key_values()).to_key_values(), c.to_key_values());
}

TEST(EncoderConfigTest, Validation) {
  EncoderConfig c = small_config();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.classes = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.layers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ReceptiveFieldTest, Formula) {
  EncoderConfig c = small_config();
  c.layers = 1;
  EXPECT_EQ(effective_receptive_field(c), 4u);
  c.layers = 3;
  c.window = {200, 190};
  EXPECT_EQ(effective_receptive_field(c), 220u);
}

// Largest |t - j| such that perturbing input frame j changes output frame t.
std::size_t empirical_reach(const EncoderConfig& c, std::size_t T, std::size_t source) {
  auto model = EncoderModel<double>::initialize(c, 21);
  Rng rng(22);
  Matrix x = random_matrix(T, c.input_dim, rng);
  Matrix base = model.logits(x);
  for (double& v : x.row(source)) v += 1.0;
  Matrix moved = model.logits(x);
  std::size_t reach = 0;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < c.classes; ++k)
      if (moved(t, k) != base(t, k)) reach = std::max(reach, t > source ? t - source : source - t);
  return reach;
}

TEST(ReceptiveFieldTest, PerturbationSupportWithinBoundAndWithinOneStride) {
  struct Case { std::size_t w, s, layers; };
  for (Case cs : {Case{4, 2, 1}, Case{4, 2, 3}, Case{6, 3, 2}, Case{8, 4, 2}}) {
    EncoderConfig c = small_config();
    c.window = {cs.w, cs.w - cs.s};
    c.layers = cs.layers;
    const std::size_t bound = effective_receptive_field(c);
    for (std::size_t source : {12u, 17u, 24u}) {
      const std::size_t reach = empirical_reach(c, 48, source);
      EXPECT_LT(reach, bound) << cs.w << "," << cs.s << "," << cs.layers;
      EXPECT_GE(reach + cs.s, bound - 1) << cs.w << "," << cs.s << "," << cs.layers;
    }
  }
}

TEST(PredictTest, PlainArgmax) {
  Matrix logits = Matrix::from_rows({{2, 1}, {0, 3}});
  EXPECT_EQ(predict(logits, 1), (std::vector<std::uint16_t>{0, 1}));
}

TEST(PredictTest, TiesGoToLowerClass) {
  Matrix logits(6, 4, 0.5);
  EXPECT_EQ(predict(logits, 3), std::vector<std::uint16_t>(6, 0));
}

TEST(PredictTest, EvenWindowIsConfigError) {
  EXPECT_THROW(predict(Matrix(3, 2), 4), ConfigError);
  EXPECT_THROW(predict(Matrix(3, 2), 0), ConfigError);
}

TEST(PredictTest, MatchesSlidingMeanOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Matrix logits = random_matrix(20, 4, rng);
    std::vector<std::uint16_t> expected;
    for (int t = 0; t < 20; ++t) {
      std::vector<double> mean(4, 0.0);
      for (int j = t - 2; j <= t + 2; ++j) {
        const int src = std::min(19, std::max(0, j));
        for (int c = 0; c < 4; ++c) mean[c] += logits(src, c) / 5.0;
      }
      expected.push_back(static_cast<std::uint16_t>(std::max_element(mean.begin(), mean.end()) - mean.begin()));
    }
    EXPECT_EQ(predict(logits, 5), expected);
  }
}

TEST(PredictTest, WindowOneIsArgmaxBitExact) {
  Rng rng(3);
  Matrix logits = random_matrix(50, 6, rng);
  std::vector<std::uint16_t> expected;
  for (std::size_t t = 0; t < 50; ++t) {
    auto row = logits.row(t);
    expected.push_back(static_cast<std::uint16_t>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  EXPECT_EQ(predict(logits, 1), expected);
}

class CheckpointTest : public ::testing::Test {
 protected:
  std::filesystem::path dir_ = std::filesystem::temp_directory_path() /
                               ("mmta_ckpt_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                                ::testing::UnitTest::GetInstance()->current_test_info()->name());
  void TearDown() override { std::filesystem::remove_all(dir_); }
};

TEST_F(CheckpointTest, SaveLoadForwardIsBitIdentical) {
  EncoderConfig c = small_config();
  c.positional_encoding = true;
  auto model = EncoderModel<double>::initialize(c, 31);
  save_checkpoint(to_checkpoint(model), dir_ / "m.ckpt");
  auto loaded = model_from_checkpoint<double>(load_checkpoint(dir_ / "m.ckpt"));
  Rng rng(32);
  Matrix x = random_matrix(25, 5, rng);
  EXPECT_EQ(loaded.logits(x), model.logits(x));
  EXPECT_EQ(to_checkpoint(loaded), to_checkpoint(model));
}

TEST_F(CheckpointTest, FloatModelRoundTripsExactly) {
  auto model = EncoderModel<float>::initialize(small_config(), 33);
  auto loaded = model_from_checkpoint<float>(decode_checkpoint(encode_checkpoint(to_checkpoint(model))));
  for (std::size_t i = 0; i < model.parameters().size(); ++i)
    EXPECT_EQ(loaded.parameters()[i]->value, model.parameters()[i]->value);
}

TEST_F(CheckpointTest, TruncationNamesByteCounts) {
  std::string bytes = encode_checkpoint(to_checkpoint(EncoderModel<double>::initialize(small_config(), 34)));
  bytes.resize(bytes.size() - 3);
  try {
    decode_checkpoint(bytes, "m.ckpt");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos) << e.what();
  }
}

TEST_F(CheckpointTest, RejectsWrongMagicAndVersion) {
  std::string bytes = encode_checkpoint(to_checkpoint(EncoderModel<double>::initialize(small_config(), 35)));
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), IoError);
  std::string bad_version = bytes;
  bad_version[8] = 9;
  EXPECT_THROW(decode_checkpoint(bad_version), IoError);
  EXPECT_THROW(load_checkpoint(dir_ / "missing.ckpt"), IoError);
}

TEST_F(CheckpointTest, ShapeMismatchAgainstConfigIsRejected) {
  Checkpoint ck = to_checkpoint(EncoderModel<double>::initialize(small_config(), 36));
  ck.config["model_dim"] = "4";
  EXPECT_THROW(model_from_checkpoint<double>(ck), IoError);
}

}  // namespace
}  // namespace mmta
