#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <filesystem>

#include "mmta/binary_io.hpp"
#include "mmta/error.hpp"
#include "mmta/metrics.hpp"
#include "mmta/synthdata.hpp"

namespace mmta {
namespace {

GeneratorConfig small_generator() {
  GeneratorConfig c;
  c.classes = 4;
  c.feature_dim = 6;
  c.train_count = 6;
  c.val_count = 2;
  c.test_count = 3;
  c.min_length = 40;
  c.max_length = 90;
  c.min_duration = 3;
  c.max_duration = 12;
  c.blur = 2.0;
  c.seed = 11;
  return c;
}

std::uint16_t nearest_mean(const Matrix& means, std::span<const double> x) {
  std::uint16_t best = 0;
  double best_d = INFINITY;
  for (std::size_t c = 0; c < means.rows(); ++c) {
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) d += (x[i] - means(c, i)) * (x[i] - means(c, i));
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint16_t>(c);
    }
  }
  return best;
}

TEST(GeneratorTest, StructuralInvariants) {
  GeneratorConfig cfg = small_generator();
  SplitDataset d = generate(cfg);
  EXPECT_EQ(d.train.sequences.size(), 6u);
  EXPECT_EQ(d.val.sequences.size(), 2u);
  EXPECT_EQ(d.test.sequences.size(), 3u);
  for (const Dataset* ds : {&d.train, &d.val, &d.test}) {
    EXPECT_NO_THROW(ds->validate());
    for (const auto& s : ds->sequences) {
      EXPECT_GE(s.length(), cfg.min_length);
      EXPECT_LE(s.length(), cfg.max_length);
      const Transcript tr = extract_transcript(s.labels);
      for (std::size_t k = 0; k < tr.size(); ++k) {
        EXPECT_GE(tr[k].end - tr[k].begin, cfg.min_duration);
        EXPECT_LE(tr[k].end - tr[k].begin, cfg.max_duration);
      }
    }
  }
}

TEST(GeneratorTest, NoiselessUnblurredFramesSitOnClassMeans) {
  GeneratorConfig cfg = small_generator();
  cfg.noise = 0.0;
  cfg.blur = 0.0;
  const Matrix means = class_means(cfg);
  SplitDataset d = generate(cfg);
  for (const auto& s : d.train.sequences) {
    std::vector<std::uint16_t> predicted;
    for (std::size_t t = 0; t < s.length(); ++t) {
      for (std::size_t i = 0; i < cfg.feature_dim; ++i) ASSERT_EQ(s.features(t, i), means(s.labels[t], i));
      predicted.push_back(nearest_mean(means, s.features.row(t)));
    }
    EXPECT_EQ(edit_score(segment_classes(extract_transcript(s.labels)), segment_classes(extract_transcript(predicted))),
              100.0);
  }
}

TEST(GeneratorTest, ClassMeansHaveConfiguredNorm) {
  GeneratorConfig cfg = small_generator();
  cfg.separation = 2.5;
  const Matrix means = class_means(cfg);
  for (std::size_t c = 0; c < cfg.classes; ++c) EXPECT_NEAR(frobenius_norm(slice_rows(means, c, c + 1)), 2.5, 1e-12);
}

TEST(GeneratorTest, NearestMeanErrorMatchesGaussianBayesError) {
  GeneratorConfig cfg = small_generator();
  cfg.classes = 2;
  cfg.blur = 0.0;
  cfg.noise = 0.8;
  cfg.separation = 1.0;
  cfg.train_count = 300;
  const Matrix means = class_means(cfg);
  double dist2 = 0.0;
  for (std::size_t i = 0; i < cfg.feature_dim; ++i) dist2 += std::pow(means(0, i) - means(1, i), 2);
  // Two isotropic Gaussians: error = Phi(-D / (2 sigma)).
  const double bayes = 0.5 * std::erfc(std::sqrt(dist2) / (2.0 * cfg.noise) / std::sqrt(2.0));
  SplitDataset d = generate(cfg);
  std::size_t wrong = 0, frames = 0;
  for (const auto& s : d.train.sequences) {
    for (std::size_t t = 0; t < s.length(); ++t) {
      wrong += nearest_mean(means, s.features.row(t)) != s.labels[t];
      ++frames;
    }
  }
  ASSERT_GE(frames, 10000u);
  EXPECT_NEAR(static_cast<double>(wrong) / static_cast<double>(frames), bayes, 0.02);
}

TEST(GeneratorTest, DurationsCoverRangeUniformly) {
  GeneratorConfig cfg;
  cfg.feature_dim = 1;
  cfg.train_count = 600;
  cfg.val_count = 0;
  cfg.test_count = 0;
  const std::size_t bins = cfg.max_duration - cfg.min_duration + 1;
  std::vector<double> counts(bins, 0.0);
  SplitDataset d = generate(cfg);
  double total = 0.0;
  for (const auto& s : d.train.sequences) {
    for (const auto& seg : extract_transcript(s.labels)) {
      counts[seg.end - seg.begin - cfg.min_duration] += 1.0;
      total += 1.0;
    }
  }
  ASSERT_GE(total, 10000.0);
  double chi2 = 0.0;
  const double expected = total / static_cast<double>(bins);
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(bins - 1.0), chi2));
  EXPECT_GT(p, 0.01) << "chi2 " << chi2;
}

TEST(GeneratorTest, BlurIncreasesBoundaryErrors) {
  std::vector<double> errors;
  for (double blur : {0.0, 2.0, 4.0}) {
    GeneratorConfig cfg = small_generator();
    cfg.blur = blur;
    cfg.noise = 0.4;
    cfg.train_count = 60;
    const Matrix means = class_means(cfg);
    SplitDataset d = generate(cfg);
    std::size_t wrong = 0, frames = 0;
    for (const auto& s : d.train.sequences) {
      for (std::size_t b = 1; b < s.length(); ++b) {
        if (s.labels[b] == s.labels[b - 1]) continue;
        for (std::size_t t = b >= 4 ? b - 4 : 0; t < std::min(s.length(), b + 4); ++t) {
          wrong += nearest_mean(means, s.features.row(t)) != s.labels[t];
          ++frames;
        }
      }
    }
    errors.push_back(static_cast<double>(wrong) / static_cast<double>(frames));
  }
  EXPECT_LT(errors[0], errors[1]);
  EXPECT_LT(errors[1], errors[2]);
}

TEST(GeneratorTest, BlurredMeanInterpolatesAcrossBoundary) {
  Matrix means = Matrix::from_rows({{0.0}, {1.0}});
  std::vector<std::uint16_t> labels = {0, 0, 0, 0, 1, 1, 1, 1};
  std::vector<double> out(1);
  // Boundary at 4, blur 2: centers 2.5 .. 5.5 are within reach.
  const double expected[] = {0.0, 0.0, 0.125, 0.375, 0.625, 0.875, 1.0, 1.0};
  for (std::size_t t = 0; t < labels.size(); ++t) {
    blurred_mean(means, labels, t, 2.0, out);
    EXPECT_DOUBLE_EQ(out[0], expected[t]) << t;
  }
}

TEST(GeneratorTest, SameSeedIsByteIdentical) {
  GeneratorConfig cfg = small_generator();
  EXPECT_EQ(encode_dataset(generate(cfg).train), encode_dataset(generate(cfg).train));
  cfg.seed = 12;
  EXPECT_NE(encode_dataset(generate(cfg).train), encode_dataset(generate(small_generator()).train));
}

TEST(GeneratorTest, InfeasibleConfigNamesField) {
  GeneratorConfig cfg = small_generator();
  cfg.min_length = 2;
  try {
    cfg.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("min_length"), std::string::npos);
  }
  cfg = small_generator();
  cfg.max_duration = 60;
  try {
    generate(cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("max_duration"), std::string::npos);
  }
  cfg = small_generator();
  cfg.noise = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(GeneratorTest, KeyValueRoundTrip) {
  GeneratorConfig cfg = small_generator();
  cfg.noise = 0.3;
  EXPECT_EQ(GeneratorConfig::from_key_values(cfg.to_key_values()).to_key_values(), cfg.to_key_values());
}

class DatasetIoTest : public ::testing::Test {
 protected:
  std::filesystem::path dir_ = std::filesystem::temp_directory_path() /
                               ("mmta_ds_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
  void SetUp() override { std::filesystem::remove_all(dir_); }
  void TearDown() override { std::filesystem::remove_all(dir_); }
};

TEST_F(DatasetIoTest, BinaryRoundTripIsExact) {
  Dataset ds = generate(small_generator()).train;
  save_dataset(ds, dir_ / "train.bin");
  EXPECT_EQ(load_dataset(dir_ / "train.bin"), ds);
}

TEST_F(DatasetIoTest, TruncationReportsExpectedAndActualBytes) {
  std::string bytes = encode_dataset(generate(small_generator()).val);
  const std::size_t full = bytes.size();
  bytes.resize(full - 10);
  try {
    decode_dataset(bytes, "val.bin");
    FAIL();
  } catch (const IoError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("expected " + std::to_string(full)), std::string::npos) << msg;
    EXPECT_NE(msg.find(std::to_string(full - 10)), std::string::npos) << msg;
  }
}

TEST_F(DatasetIoTest, RejectsVersionMagicAndTrailingBytes) {
  std::string bytes = encode_dataset(generate(small_generator()).val);
  std::string v = bytes;
  v[8] = 2;
  EXPECT_THROW(decode_dataset(v), IoError);
  std::string m = bytes;
  m[0] = 'Q';
  EXPECT_THROW(decode_dataset(m), IoError);
  EXPECT_THROW(decode_dataset(bytes + "xx"), IoError);
  EXPECT_THROW(load_dataset(dir_ / "missing.bin"), IoError);
}

TEST_F(DatasetIoTest, CsvInterchangeLoadsIdentically) {
  Dataset ds = generate(small_generator()).test;
  save_dataset(ds, dir_ / "test.bin");
  save_dataset_csv(ds, dir_ / "csv");
  EXPECT_EQ(load_dataset_csv(dir_ / "csv", ds.classes), load_dataset(dir_ / "test.bin"));
  EXPECT_EQ(load_dataset_any(dir_ / "csv", ds.classes), load_dataset_any(dir_ / "test.bin"));
}

TEST_F(DatasetIoTest, CsvRejectsRaggedRows) {
  std::filesystem::create_directories(dir_);
  binio::write_file(dir_ / "a.csv", "frame,label,f0,f1\n0,1,0.5,0.25\n1,1,0.5\n");
  EXPECT_THROW(load_dataset_csv(dir_, 2), IoError);
}

TEST_F(DatasetIoTest, LabelOutsideClassCountIsRejected) {
  Dataset ds = generate(small_generator()).val;
  ds.sequences[0].labels[3] = 9;
  EXPECT_THROW(encode_dataset(ds), LabelError);
}

}  // namespace
}  // namespace mmta
