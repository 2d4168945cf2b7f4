#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "tcwae/datasets.hpp"

namespace tcwae {

/// Posterior means of a dataset next to the factors that generated it.
struct RepresentationTable {
  Matrix latents;  ///< [M, d]
  FactorMatrix factors;
  FactorSpec spec;

  void validate() const;
};

/// Equal-width bins between the column min and max; constant columns map to bin 0.
std::vector<int> discretize(std::span<const double> column, std::size_t bins);

/// Plug-in entropy in nats.
double discrete_entropy(std::span<const int> a);

/// Plug-in mutual information in nats.
double discrete_mutual_information(std::span<const int> a, std::span<const int> b);

double mig(const RepresentationTable& table, std::size_t bins = 20);

/// Mean over factors of the gap between the two largest squared correlations.
double sap_score(const RepresentationTable& table);

struct FactorVaeOptions {
  std::size_t train_votes = 800;
  std::size_t eval_votes = 200;
  std::size_t batch_per_vote = 64;
  double prune_threshold = 0.05;
};

/// Maps dataset rows to latent means, one row per index.
using EncoderFn = std::function<Matrix(std::span<const std::size_t> rows)>;

/// Majority-vote classifier accuracy on held-out votes.
/// Throws "collapsed representation" if every dimension is pruned.
double factor_vae_score(const EncoderFn& encoder, const FactorDataset& ds, Rng& rng,
                        const FactorVaeOptions& opts = {});

/// Mean over images of the per-image squared error.
double reconstruction_mse(const Matrix& images, const Matrix& reconstructions);

/// Maps an image batch to its reconstructions.
using AutoencoderFn = std::function<Matrix(const Matrix& images)>;

/// reconstruction_mse over the first min(M, eval_size) images, in chunks.
double reconstruction_mse(const AutoencoderFn& model, const FactorDataset& ds,
                          std::size_t eval_size = 10000, std::size_t batch = 1000);

struct ScoreReport {
  double mse = 0.0;
  double mig = 0.0;
  double factor_vae = 0.0;
  double sap = 0.0;

  bool valid() const;
};

}  // namespace tcwae
