#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "tcwae/metrics.hpp"
#include "test_util.hpp"

namespace tcwae {
namespace {

// Latent table built directly from a factor grid; images are not needed.
FactorDataset grid(const FactorSpec& spec) { return generate_sprites(spec, 8, 0); }

RepresentationTable perfect_code(const FactorDataset& ds, Eigen::Index extra_constant = 0) {
  const Eigen::Index k = ds.factors.cols();
  RepresentationTable t{Matrix::Zero(ds.factors.rows(), k + extra_constant), ds.factors, ds.spec};
  t.latents.leftCols(k) = ds.factors.cast<double>();
  return t;
}

RepresentationTable noisy_code(const FactorDataset& ds, Rng& rng, double noise) {
  RepresentationTable t = perfect_code(ds);
  t.latents += test::normal_matrix(rng, t.latents.rows(), t.latents.cols(), noise);
  return t;
}

EncoderFn table_encoder(const Matrix& latents) {
  return [latents](std::span<const std::size_t> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), latents.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = latents.row(static_cast<Eigen::Index>(rows[i]));
    return out;
  };
}

double oracle_mi(const std::vector<int>& a, const std::vector<int>& b, int ka, int kb) {
  const double n = static_cast<double>(a.size());
  std::vector<std::vector<double>> joint(ka, std::vector<double>(kb, 0.0));
  std::vector<double> pa(ka, 0.0), pb(kb, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[a[i]][b[i]] += 1.0 / n;
    pa[a[i]] += 1.0 / n;
    pb[b[i]] += 1.0 / n;
  }
  double mi = 0.0;
  for (int x = 0; x < ka; ++x) {
    for (int y = 0; y < kb; ++y) {
      if (joint[x][y] > 0.0) mi += joint[x][y] * std::log(joint[x][y] / (pa[x] * pb[y]));
    }
  }
  return mi;
}

TEST(Discretize, Examples) {
  EXPECT_EQ(discretize(std::vector<double>(5, 3.0), 10), std::vector<int>(5, 0));
  EXPECT_EQ(discretize(std::vector<double>{0.0, 1.0}, 2), (std::vector<int>{0, 1}));
  std::vector<double> g(100);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (static_cast<double>(i) + 0.5) / 100.0;
  const auto bins = discretize(g, 20);
  std::vector<int> counts(20, 0);
  for (int b : bins) ++counts[static_cast<std::size_t>(b)];
  for (int c : counts) EXPECT_EQ(c, 5);
  EXPECT_THROW(discretize(g, 1), std::invalid_argument);
}

TEST(MutualInformation, Examples) {
  EXPECT_EQ(discrete_mutual_information(std::vector<int>(8, 2), std::vector<int>{0, 1, 2, 3, 0, 1, 2, 3}), 0.0);
  const std::vector<int> u{0, 1, 2, 3, 3, 2, 1, 0};
  EXPECT_NEAR(discrete_mutual_information(u, u), std::log(4.0), 1e-12);
  // Joint counts [[2,1],[1,2]].
  const std::vector<int> a{0, 0, 0, 1, 1, 1}, b{0, 0, 1, 0, 1, 1};
  const double hand = 2.0 / 3.0 * std::log(4.0 / 3.0) + 1.0 / 3.0 * std::log(2.0 / 3.0);
  EXPECT_NEAR(discrete_mutual_information(a, b), hand, 1e-12);
  EXPECT_THROW(discrete_mutual_information(a, u), std::invalid_argument);
}

TEST(MutualInformation, MatchesOracleAndBounds) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> a(200), b(200);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = static_cast<int>(rng.uniform_index(5));
      b[i] = rng.uniform() < 0.6 ? a[i] % 3 : static_cast<int>(rng.uniform_index(3));
    }
    const double mi = discrete_mutual_information(a, b);
    EXPECT_NEAR(mi, oracle_mi(a, b, 5, 3), 1e-12);
    EXPECT_GE(mi, 0.0);
    EXPECT_LE(mi, std::min(discrete_entropy(a), discrete_entropy(b)) + 1e-12);
  }
}

TEST(Mig, PerfectCodeScoresOne) {
  const auto ds = grid(FactorSpec::desk());
  EXPECT_NEAR(mig(perfect_code(ds, 3)), 1.0, 1e-12);
}

TEST(Mig, ConstantLatentsScoreZero) {
  const auto ds = grid(FactorSpec::desk());
  const RepresentationTable t{Matrix::Constant(static_cast<Eigen::Index>(ds.size()), 5, 0.3), ds.factors, ds.spec};
  EXPECT_EQ(mig(t), 0.0);
}

TEST(Mig, DuplicatedFactorHasNoGap) {
  const auto ds = grid({{"pos_x", "pos_y"}, {8, 16}});
  RepresentationTable t{Matrix::Zero(static_cast<Eigen::Index>(ds.size()), 3), ds.factors, ds.spec};
  t.latents.col(0) = ds.factors.col(0).cast<double>();
  t.latents.col(1) = ds.factors.col(0).cast<double>();
  t.latents.col(2) = ds.factors.col(1).cast<double>();
  // pos_x gap vanishes, pos_y is perfect.
  EXPECT_NEAR(mig(t), 0.5, 1e-12);
}

TEST(Mig, Errors) {
  const auto ds = grid({{"pos_x", "pos_y"}, {8, 16}});
  RepresentationTable one{ds.factors.leftCols(1).cast<double>(), ds.factors, ds.spec};
  EXPECT_THROW(mig(one), std::invalid_argument);
  const auto single = grid({{"shape", "pos_x"}, {1, 128}});
  EXPECT_THROW(mig(perfect_code(single)), std::invalid_argument);
  RepresentationTable small{Matrix::Zero(50, 2), FactorMatrix::Zero(50, 2), ds.spec};
  EXPECT_THROW(mig(small), std::invalid_argument);
  RepresentationTable bad = perfect_code(ds);
  bad.latents(3, 1) = NAN;
  EXPECT_THROW(mig(bad), std::invalid_argument);
}

TEST(Sap, Examples) {
  const auto ds = grid(FactorSpec::desk());
  EXPECT_NEAR(sap_score(perfect_code(ds, 2)), 1.0, 1e-12);
  const RepresentationTable c{Matrix::Constant(static_cast<Eigen::Index>(ds.size()), 4, 1.0), ds.factors, ds.spec};
  EXPECT_EQ(sap_score(c), 0.0);
}

TEST(Sap, EqualNoiseVarianceHalvesR2) {
  Rng rng(3);
  const Eigen::Index n = 20000;
  FactorMatrix f(n, 1);
  Matrix z = Matrix::Zero(n, 2);
  const double var_v = (8.0 * 8.0 - 1.0) / 12.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    f(i, 0) = static_cast<int>(rng.uniform_index(8));
    z(i, 0) = f(i, 0) + std::sqrt(var_v) * rng.normal();
  }
  const RepresentationTable t{z, f, {{"pos_x"}, {8}}};
  EXPECT_NEAR(sap_score(t), 0.5, 0.05);
}

TEST(Sap, NoiseDimensionKeepsTopEntry) {
  const auto ds = grid(FactorSpec::desk());
  Rng rng(4);
  RepresentationTable t = perfect_code(ds, 1);
  t.latents.col(4) = test::normal_matrix(rng, t.latents.rows(), 1);
  const double s = sap_score(t);
  EXPECT_LE(s, 1.0);
  EXPECT_GT(s, 0.99);
}

TEST(FactorVaeScore, PerfectCodeScoresOne) {
  const auto ds = grid(FactorSpec::desk());
  Rng rng(5);
  EXPECT_EQ(factor_vae_score(table_encoder(perfect_code(ds).latents), ds, rng), 1.0);
}

TEST(FactorVaeScore, NoiseIsAtChance) {
  // Independent noise: the vote classifier cannot beat 1/K on held-out votes.
  const auto ds = grid(FactorSpec::desk());
  const double chance = 0.25;
  double total = 0.0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(100 + static_cast<std::uint64_t>(s));
    const Matrix noise = test::normal_matrix(rng, static_cast<Eigen::Index>(ds.size()), 6);
    total += factor_vae_score(table_encoder(noise), ds, rng);
  }
  const double se = std::sqrt(chance * (1.0 - chance) / (200.0 * seeds));
  EXPECT_NEAR(total / seeds, chance, 3.0 * se);
}

TEST(FactorVaeScore, DeterministicAndErrors) {
  const auto ds = grid(FactorSpec::desk());
  Rng noise_rng(6);
  const RepresentationTable t = noisy_code(ds, noise_rng, 1.0);
  Rng a(7), b(7);
  EXPECT_EQ(factor_vae_score(table_encoder(t.latents), ds, a), factor_vae_score(table_encoder(t.latents), ds, b));
  Rng c(8);
  const Matrix flat = Matrix::Constant(static_cast<Eigen::Index>(ds.size()), 3, 2.0);
  try {
    factor_vae_score(table_encoder(flat), ds, c);
    FAIL() << "expected collapsed representation";
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "collapsed representation");
  }
  EXPECT_THROW(factor_vae_score(table_encoder(t.latents), ds, c, {0, 200, 64, 0.05}), std::invalid_argument);
}

TEST(Invariances, PermutationAndSignFlip) {
  const auto ds = grid(FactorSpec::desk());
  Rng rng(9);
  const RepresentationTable t = noisy_code(ds, rng, 0.8);
  RepresentationTable p = t;
  const std::vector<Eigen::Index> perm{2, 0, 3, 1};
  for (Eigen::Index j = 0; j < 4; ++j) p.latents.col(j) = t.latents.col(perm[static_cast<std::size_t>(j)]);
  RepresentationTable f = t;
  f.latents.col(1) *= -1.0;
  f.latents.col(3) *= -1.0;
  for (const auto* v : {&p, &f}) {
    EXPECT_NEAR(mig(*v), mig(t), 1e-12);
    EXPECT_NEAR(sap_score(*v), sap_score(t), 1e-12);
    Rng r1(10), r2(10);
    EXPECT_EQ(factor_vae_score(table_encoder(v->latents), ds, r1), factor_vae_score(table_encoder(t.latents), ds, r2));
  }
}

TEST(Invariances, LinearRescaling) {
  const auto ds = grid(FactorSpec::desk());
  Rng rng(11);
  const RepresentationTable t = noisy_code(ds, rng, 0.5);
  RepresentationTable s = t;
  for (Eigen::Index j = 0; j < 4; ++j) s.latents.col(j) = s.latents.col(j).array() * (0.5 + j) + 3.0 * j;
  EXPECT_NEAR(mig(s), mig(t), 1e-12);
  EXPECT_NEAR(sap_score(s), sap_score(t), 1e-12);
  // Affine maps keep the perfect code perfect.
  RepresentationTable e = perfect_code(ds, 1);
  e.latents.leftCols(4) = e.latents.leftCols(4).array() * 2.0 - 5.0;
  EXPECT_NEAR(mig(e), 1.0, 1e-12);
  EXPECT_NEAR(sap_score(e), 1.0, 1e-12);
}

TEST(Invariances, ScoresInUnitRange) {
  const auto ds = grid(FactorSpec::desk());
  Rng rng(12);
  for (double noise : {0.0, 0.3, 1.0, 5.0}) {
    const RepresentationTable t = noisy_code(ds, rng, noise);
    const ScoreReport r{0.0, mig(t), factor_vae_score(table_encoder(t.latents), ds, rng), sap_score(t)};
    EXPECT_TRUE(r.valid()) << noise;
  }
  EXPECT_FALSE((ScoreReport{-1.0, 0.5, 0.5, 0.5}.valid()));
  EXPECT_FALSE((ScoreReport{0.0, 1.5, 0.5, 0.5}.valid()));
}

TEST(ReconstructionMse, Examples) {
  const auto ds = generate_sprites(FactorSpec::desk(), 16, 0);
  EXPECT_EQ(reconstruction_mse([](const Matrix& x) { return x; }, ds), 0.0);
  const double half = reconstruction_mse([](const Matrix& x) { return Matrix::Constant(x.rows(), x.cols(), 0.5); }, ds);
  EXPECT_NEAR(half, 0.25 * 16 * 16, 1e-9);
  EXPECT_THROW(reconstruction_mse([](const Matrix& x) { return Matrix(x.leftCols(3)); }, ds), std::invalid_argument);
  EXPECT_THROW(reconstruction_mse(Matrix::Zero(2, 3), Matrix::Zero(3, 3)), std::invalid_argument);
}

TEST(ReconstructionMse, MatchesTwoPassOracle) {
  const auto ds = generate_sprites(FactorSpec::desk(), 16, 0);
  const AutoencoderFn model = [](const Matrix& x) { return Matrix((x.array() * 0.7 + 0.1).sin()); };
  const double got = reconstruction_mse(model, ds, 1000, 300);
  // First pass: per-image errors; second pass: their mean.
  std::vector<double> per_image;
  for (std::size_t i = 0; i < 1000; ++i) {
    const std::vector<std::size_t> row{i};
    const Matrix x = ds.gather(row);
    const Matrix r = model(x);
    double e = 0.0;
    for (Eigen::Index p = 0; p < x.cols(); ++p) e += (x(0, p) - r(0, p)) * (x(0, p) - r(0, p));
    per_image.push_back(e);
  }
  const double oracle = std::accumulate(per_image.begin(), per_image.end(), 0.0) / 1000.0;
  EXPECT_NEAR(got, oracle, 1e-9);
  EXPECT_NEAR(reconstruction_mse(ds.gather(std::vector<std::size_t>{0, 1}), model(ds.gather(std::vector<std::size_t>{0, 1}))),
              (per_image[0] + per_image[1]) / 2.0, 1e-9);
}

}  // namespace
}  // namespace tcwae
