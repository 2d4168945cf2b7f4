#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tcwae/core_math.hpp"

namespace tcwae {

/// A minibatch of latent codes together with the posteriors they were drawn
/// from: row i of codes() is a sample of posterior(i).
class LatentBatch {
 public:
  /// log_vars are clamped like DiagonalGaussian's.
  LatentBatch(Matrix codes, Matrix means, Matrix log_vars);

  /// Draws one code per posterior with gaussian_sample.
  static LatentBatch sample(std::span<const DiagonalGaussian> posteriors, Rng& rng);

  std::size_t size() const { return static_cast<std::size_t>(codes_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(codes_.cols()); }
  const Matrix& codes() const { return codes_; }
  const Matrix& means() const { return means_; }
  const Matrix& log_vars() const { return log_vars_; }
  DiagonalGaussian posterior(std::size_t i) const;

 private:
  Matrix codes_;
  Matrix means_;
  Matrix log_vars_;
};

/// Mixture of inverse multiquadratic kernels sum_s s*C / (s*C + |x - y|^2).
struct KernelConfig {
  std::vector<double> scales;
  double base = 1.0;

  void validate() const;
  /// Scales {0.1, 0.2, 0.5, 1, 2, 5, 10}, C = 2 * latent_dim.
  static KernelConfig for_latent_dim(std::size_t latent_dim);
};

/// Minibatch-weighted-sampling estimate of log q(z_i) for every code:
/// logsumexp_j log q(z_i | x_j) - log(N * B).
Vector mws_log_qz(const LatentBatch& batch, std::size_t dataset_size);

/// Per-dimension analogue of mws_log_qz; returns [B, d].
Matrix mws_log_qz_dims(const LatentBatch& batch, std::size_t dataset_size);

struct TcAndDimwise {
  double tc = 0.0;
  double dimwise_kl = 0.0;
};

TcAndDimwise tc_and_dimwise_kl_mws(const LatentBatch& batch, std::size_t dataset_size,
                                   const DiagonalGaussian& prior);

/// Batch means of the four log-density families the MWS objectives combine.
struct MwsMeans {
  double log_qz = 0.0;          ///< mean_i mws_log_qz(i)
  double sum_log_qz_dims = 0.0; ///< mean_i sum_k mws_log_qz_dims(i, k)
  double log_q_self = 0.0;      ///< mean_i log q(z_i | x_i)
  double log_prior = 0.0;       ///< mean_i log p(z_i)

  double tc() const { return log_qz - sum_log_qz_dims; }
  double dimwise_kl() const { return sum_log_qz_dims - log_prior; }
  double index_code_mi() const { return log_q_self - log_qz; }
};

/// Coefficients of a linear functional of MwsMeans.
struct MwsWeights {
  double log_qz = 0.0;
  double sum_log_qz_dims = 0.0;
  double log_q_self = 0.0;
  double log_prior = 0.0;

  /// Weights of alpha*MI + beta*TC + gamma*dimwise-KL.
  static MwsWeights from_terms(double alpha, double beta, double gamma);
};

struct LatentGradients {
  Matrix codes;
  Matrix means;
  Matrix log_vars;
};

/// Evaluates MwsMeans. When grads is non-null, adds the gradient of
/// sum(weights * means) with respect to codes, means and log-variances,
/// treating codes and posterior parameters as independent inputs.
MwsMeans mws_means(const LatentBatch& batch, std::size_t dataset_size,
                   const DiagonalGaussian& prior, const MwsWeights* weights = nullptr,
                   LatentGradients* grads = nullptr);

/// Independent per-column permutation of a [B, d] code matrix (product of
/// marginals sampler).
Matrix permute_dims(const Matrix& codes, Rng& rng);

/// Applies explicit permutations: out(i, k) = codes(perms[k][i], k).
Matrix permute_dims(const Matrix& codes,
                    std::span<const std::vector<std::size_t>> perms);

/// KL readout from two-logit discriminator outputs [B, 2]: mean(l0 - l1).
double density_ratio_kl(const Matrix& logits);

double imq_kernel(const Vector& x, const Vector& y, const KernelConfig& cfg);

/// Unbiased U-statistic MMD^2 between the row sets of x and y. When dx is
/// non-null it receives d(mmd)/dx.
double mmd_unbiased(const Matrix& x, const Matrix& y, const KernelConfig& cfg,
                    Matrix* dx = nullptr);

}  // namespace tcwae
