#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "tcwae/estimators.hpp"

namespace tcwae {

enum class ObjectiveKind { tcwae_mws, tcwae_gan, beta_tcvae, factor_vae, wae_mmd, elbo };

std::string_view to_string(ObjectiveKind kind);
ObjectiveKind objective_from_string(std::string_view name);

/// Whether the objective trains a density-ratio discriminator.
bool uses_discriminator(ObjectiveKind kind);
/// Deterministic (sigmoid pixel) decoder for the WAE family, Bernoulli logits otherwise.
bool uses_deterministic_decoder(ObjectiveKind kind);

struct HyperParams {
  double beta = 0.0;    ///< total-correlation weight
  double gamma = 0.0;   ///< dimension-wise KL weight (FactorVAE: TC weight)
  double lambda = 0.0;  ///< WAE divergence weight
  double alpha = 0.0;   ///< index-code MI weight

  void validate() const;
  friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

struct LossBreakdown {
  double reconstruction = 0.0;
  double tc = 0.0;
  double dimwise_kl = 0.0;
  double index_code_mi = 0.0;
  double total = 0.0;

  bool all_finite() const;
  /// Name of the first non-finite field, if any.
  std::optional<std::string_view> first_non_finite() const;
};

/// Mean over the batch of the per-image squared Euclidean distance.
double recon_cost_sq_euclid(const Matrix& x, const Matrix& x_hat);
/// Mean over the batch of the per-image Bernoulli negative log-likelihood.
double recon_cost_bernoulli(const Matrix& x, const Matrix& logits);

LossBreakdown tcwae_mws_loss(const Matrix& x, const Matrix& x_hat, const LatentBatch& batch,
                             const HyperParams& hp, std::size_t dataset_size,
                             const DiagonalGaussian& prior);

/// TC through the discriminator readout, dimension-wise KL through the MWS
/// per-dimension estimate.
LossBreakdown tcwae_gan_loss(const Matrix& x, const Matrix& x_hat, const LatentBatch& batch,
                             const Matrix& disc_logits, const HyperParams& hp,
                             std::size_t dataset_size, const DiagonalGaussian& prior);

LossBreakdown beta_tcvae_loss(const Matrix& x, const Matrix& decoder_logits,
                              const LatentBatch& batch, const HyperParams& hp,
                              std::size_t dataset_size, const DiagonalGaussian& prior);

/// Closed-form KL is reported in the dimwise_kl slot.
LossBreakdown factor_vae_loss(const Matrix& x, const Matrix& decoder_logits,
                              const LatentBatch& batch, const Matrix& disc_logits,
                              double gamma);

/// The unweighted MMD is reported in the dimwise_kl slot.
LossBreakdown wae_mmd_loss(const Matrix& x, const Matrix& x_hat, const Matrix& codes,
                           const Matrix& prior_samples, double lambda,
                           const KernelConfig& cfg);

/// Plain negative ELBO; closed-form KL in the dimwise_kl slot.
LossBreakdown elbo_loss(const Matrix& x, const Matrix& decoder_logits, const LatentBatch& batch);

/// Two-class softmax cross-entropy; class 0 = samples of q(z), class 1 =
/// samples of the product of marginals.
double discriminator_loss(const Matrix& logits_on_q, const Matrix& logits_on_perm,
                          Matrix* d_logits_q = nullptr, Matrix* d_logits_perm = nullptr);

/// Everything an objective may consume, in one place.
struct ObjectiveInputs {
  const Matrix* images = nullptr;         ///< [B, P] targets
  const Matrix* decoder_output = nullptr; ///< [B, P] pixels (deterministic) or logits
  const LatentBatch* latents = nullptr;
  const Matrix* disc_logits = nullptr;    ///< [B, 2], GAN-family only
  const Matrix* prior_samples = nullptr;  ///< [B, d], WAE-MMD only
};

struct ObjectiveSettings {
  ObjectiveKind kind = ObjectiveKind::tcwae_mws;
  HyperParams hp;
  std::size_t dataset_size = 0;
  DiagonalGaussian prior = DiagonalGaussian::standard(1);
  KernelConfig kernel = KernelConfig::for_latent_dim(1);
};

/// Gradients of LossBreakdown::total with respect to each input.
struct ObjectiveGradients {
  Matrix decoder_output;
  LatentGradients latents;
  Matrix disc_logits;
};

LossBreakdown evaluate_objective(const ObjectiveSettings& settings, const ObjectiveInputs& in,
                                 ObjectiveGradients* grads = nullptr);

}  // namespace tcwae
