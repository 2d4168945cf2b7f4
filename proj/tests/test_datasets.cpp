#include <cmath>
#include <numbers>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <gtest/gtest.h>

#include "tcwae/datasets.hpp"
#include "test_util.hpp"

namespace tcwae {
namespace {

std::string image_bytes(const FactorDataset& ds, std::size_t row) {
  const std::size_t n = ds.image_size();
  const double* p = ds.images.data().data() + row * n;
  std::string s(n, '\0');
  for (std::size_t i = 0; i < n; ++i) s[i] = p[i] > 0.5 ? '1' : '0';
  return s;
}

TEST(FactorSpecTest, Validation) {
  EXPECT_NO_THROW(FactorSpec::desk().validate());
  EXPECT_EQ(FactorSpec::desk().grid_size(), 1536u);
  EXPECT_THROW((FactorSpec{{}, {}}.validate()), std::invalid_argument);
  EXPECT_THROW((FactorSpec{{"shape"}, {3, 4}}.validate()), std::invalid_argument);
  EXPECT_THROW((FactorSpec{{"shape"}, {0}}.validate()), std::invalid_argument);
  EXPECT_THROW((FactorSpec{{"pos_x", "pos_x"}, {2, 2}}.validate()), std::invalid_argument);
  EXPECT_EQ(FactorSpec::desk().index_of("pos_x"), 2u);
  EXPECT_THROW(FactorSpec::desk().index_of("hue"), std::invalid_argument);
}

TEST(GenerateSprites, GridProductExample) {
  const auto ds = generate_sprites({{"shape", "pos_x", "pos_y"}, {2, 8, 8}}, 64, 0);
  EXPECT_EQ(ds.size(), 128u);
  EXPECT_EQ(ds.image_shape().height, 64u);
  EXPECT_EQ(ds.image_shape().channels, 1u);
  EXPECT_TRUE(ds.full_grid());
}

TEST(GenerateSprites, BinaryPixelsAndMixedRadixOrder) {
  const auto ds = generate_sprites(FactorSpec::desk(), 16, 0);
  for (double v : ds.images.data()) ASSERT_TRUE(v == 0.0 || v == 1.0);
  for (std::size_t i = 0; i < ds.size(); i += 37) {
    std::vector<int> values(4);
    for (Eigen::Index k = 0; k < 4; ++k) values[static_cast<std::size_t>(k)] = ds.factors(static_cast<Eigen::Index>(i), k);
    // Last factor fastest: i = ((s*8 + o)*8 + x)*8 + y.
    EXPECT_EQ(static_cast<std::size_t>(((values[0] * 8 + values[1]) * 8 + values[2]) * 8 + values[3]), i);
    EXPECT_EQ(ds.grid_index(values), i);
  }
  EXPECT_THROW(ds.grid_index(std::vector<int>{3, 0, 0, 0}), std::out_of_range);
}

TEST(GenerateSprites, DeterministicAndSeedOnlyMetadata) {
  const auto a = generate_sprites(FactorSpec::desk(), 32, 5);
  const auto b = generate_sprites(FactorSpec::desk(), 32, 5);
  EXPECT_EQ(a.images.data().size(), b.images.data().size());
  EXPECT_TRUE(std::equal(a.images.data().begin(), a.images.data().end(), b.images.data().begin()));
  EXPECT_EQ(a.factors, b.factors);
}

TEST(GenerateSprites, CentredSquareAreaMatchesAnalytic) {
  // Largest scale, centred, upright square: side = 2 * 0.1875 * resolution.
  for (std::size_t res : {16u, 32u, 64u}) {
    const auto ds = generate_sprites({{"shape"}, {1}}, res, 0);
    double count = 0.0;
    for (double v : ds.images.data()) count += v;
    const double side = 2.0 * 0.1875 * static_cast<double>(res);
    EXPECT_NEAR(count, side * side, 0.05 * side * side) << res;
  }
}

TEST(GenerateSprites, ShapeAreasMatchGeometry) {
  // Ellipse semi-axes (r, r/2); triangle inscribed in radius r.
  const auto ds = generate_sprites({{"shape"}, {3}}, 64, 0);
  const double r = 0.1875 * 64.0;
  const double expected[] = {4.0 * r * r, std::numbers::pi * r * r / 2.0, 3.0 * std::sqrt(3.0) / 4.0 * r * r};
  for (std::size_t s = 0; s < 3; ++s) {
    double count = 0.0;
    for (std::size_t p = 0; p < 64 * 64; ++p) count += ds.images.data()[s * 64 * 64 + p];
    EXPECT_NEAR(count, expected[s], 0.05 * expected[s]) << s;
  }
}

TEST(GenerateSprites, FullGridBalance) {
  const auto ds = generate_sprites(FactorSpec::desk(), 8, 0);
  for (std::size_t k = 0; k < 4; ++k) {
    const std::size_t card = ds.spec.cardinalities[k];
    std::vector<std::size_t> counts(card, 0);
    for (Eigen::Index i = 0; i < ds.factors.rows(); ++i) ++counts[static_cast<std::size_t>(ds.factors(i, static_cast<Eigen::Index>(k)))];
    for (auto c : counts) EXPECT_EQ(c, ds.size() / card);
  }
}

TEST(GenerateSprites, DistinctTuplesGiveDistinctImages) {
  for (std::size_t res : {16u, 64u}) {
    const auto ds = generate_sprites(FactorSpec::desk(), res, 0);
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < ds.size(); ++i) seen.insert(image_bytes(ds, i));
    EXPECT_EQ(seen.size(), ds.size()) << res;
  }
  const auto scaled = generate_sprites({{"shape", "scale", "pos_x"}, {3, 4, 4}}, 32, 0);
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < scaled.size(); ++i) seen.insert(image_bytes(scaled, i));
  EXPECT_EQ(seen.size(), scaled.size());
}

TEST(GenerateSprites, Errors) {
  EXPECT_THROW(generate_sprites({{"hue"}, {3}}, 64, 0), std::invalid_argument);
  EXPECT_THROW(generate_sprites(FactorSpec::desk(), 48, 0), std::invalid_argument);
}

TEST(NoiseBackground, ZeroImageIsUniformNoise) {
  FactorDataset ds;
  ds.spec = {{"shape"}, {1}};
  ds.images = Tensor({1, 64, 64, 1});
  ds.factors = FactorMatrix::Zero(1, 1);
  Rng rng(3);
  const auto out = add_noise_background(ds, rng);
  EXPECT_EQ(out.image_shape().channels, 3u);
  double sum = 0.0;
  for (double v : out.images.data()) {
    ASSERT_GE(v, 0.0);
    ASSERT_LT(v, 1.0);
    sum += v;
  }
  EXPECT_NEAR(sum / static_cast<double>(out.images.data().size()), 0.5, 0.02);
}

TEST(NoiseBackground, SpriteKeptAndFactorsUnchanged) {
  const auto ds = generate_sprites(FactorSpec::desk(), 16, 0);
  Rng rng(4);
  const auto out = add_noise_background(ds, rng);
  EXPECT_EQ(out.factors, ds.factors);
  const auto src = ds.images.data();
  const auto dst = out.images.data();
  for (std::size_t p = 0; p < src.size(); ++p) {
    if (src[p] == 1.0) {
      for (std::size_t c = 0; c < 3; ++c) ASSERT_EQ(dst[3 * p + c], 1.0);
    }
  }
  FactorDataset ones;
  ones.spec = {{"shape"}, {1}};
  ones.images = Tensor({1, 8, 8, 1});
  for (auto& v : ones.images.data()) v = 1.0;
  ones.factors = FactorMatrix::Zero(1, 1);
  const auto noisy_ones = add_noise_background(ones, rng);
  for (double v : noisy_ones.images.data()) EXPECT_EQ(v, 1.0);
  EXPECT_THROW(add_noise_background(out, rng), std::invalid_argument);
}

TEST(MinibatchStreamTest, RiggedIdentityCoversAllIndices) {
  std::size_t next = 0;
  MinibatchStream s(10, 10, Rng(1), [&](std::size_t n) { return next++ % n; });
  auto rows = s.next();
  std::sort(rows.begin(), rows.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(rows[i], i);
}

TEST(MinibatchStreamTest, EqualRngGivesEqualSequences) {
  MinibatchStream a(100, 7, Rng(9)), b(100, 7, Rng(9));
  for (int i = 0; i < 20; ++i) EXPECT_EQ(a.next(), b.next());
}

TEST(MinibatchStreamTest, IndexFrequenciesAreUniform) {
  const std::size_t m = 50, draws = 100000;
  MinibatchStream s(m, 50, Rng(11));
  std::vector<double> counts(m, 0.0);
  for (std::size_t i = 0; i < draws / 50; ++i) {
    for (auto r : s.next()) counts[r] += 1.0;
  }
  const double p = 1.0 / static_cast<double>(m);
  const double mean = static_cast<double>(draws) * p;
  const double se = std::sqrt(static_cast<double>(draws) * p * (1.0 - p));
  std::size_t outside = 0;
  double chi2 = 0.0;
  for (double c : counts) {
    outside += std::abs(c - mean) > 3.0 * se ? 1 : 0;
    chi2 += (c - mean) * (c - mean) / mean;
  }
  EXPECT_LE(outside, 1u);
  // 49 degrees of freedom: mean 49, sd about 9.9.
  EXPECT_LT(chi2, 49.0 + 4.0 * 9.9);
}

TEST(MinibatchStreamTest, DisjointBatches) {
  MinibatchStream s(20, 5, Rng(12));
  const auto batches = s.next_disjoint(4);
  std::set<std::size_t> all;
  for (const auto& b : batches) {
    EXPECT_EQ(b.size(), 5u);
    all.insert(b.begin(), b.end());
  }
  EXPECT_EQ(all.size(), 20u);
  EXPECT_THROW(s.next_disjoint(5), std::invalid_argument);
  EXPECT_THROW(MinibatchStream(4, 5, Rng(1)), std::invalid_argument);
  MinibatchStream bad(10, 2, Rng(1), [](std::size_t n) { return n; });
  EXPECT_THROW(bad.next(), std::out_of_range);
}

TEST(FixedFactorBatchTest, FixedColumnConstantOthersVary) {
  const auto ds = generate_sprites(FactorSpec::desk(), 8, 0);
  Rng rng(13);
  for (std::size_t k = 0; k < 4; ++k) {
    std::vector<bool> other_varied(4, false);
    for (int rep = 0; rep < 20; ++rep) {
      const auto b = sample_fixed_factor_batch(ds, k, 64, rng);
      const FactorMatrix f = ds.gather_factors(b.rows);
      for (Eigen::Index i = 0; i < f.rows(); ++i) ASSERT_EQ(f(i, static_cast<Eigen::Index>(k)), b.value);
      for (Eigen::Index j = 0; j < 4; ++j) {
        if (static_cast<std::size_t>(j) != k && (f.col(j).array() != f(0, j)).any()) other_varied[static_cast<std::size_t>(j)] = true;
      }
    }
    for (std::size_t j = 0; j < 4; ++j) {
      if (j != k) EXPECT_TRUE(other_varied[j]) << k << ' ' << j;
    }
  }
}

TEST(FixedFactorBatchTest, DeterministicAndErrors) {
  const auto ds = generate_sprites(FactorSpec::desk(), 8, 0);
  Rng a(14), b(14);
  const auto x = sample_fixed_factor_batch(ds, 1, 32, a);
  const auto y = sample_fixed_factor_batch(ds, 1, 32, b);
  EXPECT_EQ(x.rows, y.rows);
  EXPECT_EQ(x.value, y.value);
  EXPECT_THROW(sample_fixed_factor_batch(ds, 4, 8, a), std::out_of_range);
  const auto single = generate_sprites({{"shape", "pos_x"}, {1, 4}}, 8, 0);
  EXPECT_THROW(sample_fixed_factor_batch(single, 0, 8, a), std::invalid_argument);
}

TEST(ExportDataset, RoundTrip) {
  test::TempDir dir("export");
  Rng rng(15);
  const auto ds = add_noise_background(generate_sprites({{"shape", "pos_y"}, {3, 4}}, 16, 7), rng);
  export_dataset(ds, dir.path());
  const std::string bytes = test::read_file(dir.path() / "images.bin");
  EXPECT_EQ(bytes.substr(0, 4), "TCWD");
  const std::string csv = test::read_file(dir.path() / "factors.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "shape,pos_y");
  const auto back = load_dataset(dir.path());
  EXPECT_EQ(back.spec, ds.spec);
  EXPECT_EQ(back.seed, 7u);
  EXPECT_EQ(back.factors, ds.factors);
  ASSERT_EQ(back.images.data().size(), ds.images.data().size());
  for (std::size_t i = 0; i < ds.images.data().size(); ++i) {
    // Pixels are stored as f32.
    ASSERT_EQ(back.images.data()[i], static_cast<double>(static_cast<float>(ds.images.data()[i])));
  }
  EXPECT_THROW(load_dataset(dir.path() / "missing"), std::runtime_error);
}

}  // namespace
}  // namespace tcwae
