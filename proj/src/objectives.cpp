#include "tcwae/objectives.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace tcwae {
namespace {

constexpr std::array<std::pair<ObjectiveKind, std::string_view>, 6> kNames{{
    {ObjectiveKind::tcwae_mws, "tcwae_mws"},
    {ObjectiveKind::tcwae_gan, "tcwae_gan"},
    {ObjectiveKind::beta_tcvae, "beta_tcvae"},
    {ObjectiveKind::factor_vae, "factor_vae"},
    {ObjectiveKind::wae_mmd, "wae_mmd"},
    {ObjectiveKind::elbo, "elbo"},
}};

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }
}

template <typename T>
const T& need(const T* p, const char* what) {
  if (p == nullptr) throw std::invalid_argument(std::string("objective input missing: ") + what);
  return *p;
}

double sq_euclid(const Matrix& x, const Matrix& x_hat, Matrix* d_x_hat) {
  require_same_shape(x, x_hat, "recon_cost_sq_euclid");
  const double inv_b = 1.0 / static_cast<double>(x.rows());
  if (d_x_hat != nullptr) *d_x_hat = 2.0 * inv_b * (x_hat - x);
  return (x - x_hat).squaredNorm() * inv_b;
}

double bernoulli_nll(const Matrix& x, const Matrix& logits, Matrix* d_logits) {
  require_same_shape(x, logits, "recon_cost_bernoulli");
  if ((x.array() < 0.0).any() || (x.array() > 1.0).any()) {
    throw std::invalid_argument("recon_cost_bernoulli: targets outside [0, 1]");
  }
  const double inv_b = 1.0 / static_cast<double>(x.rows());
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double l = logits.data()[i];
    acc += softplus(l) - x.data()[i] * l;
  }
  if (d_logits != nullptr) {
    *d_logits = inv_b * (logits.unaryExpr(&sigmoid) - x);
  }
  return acc * inv_b;
}

// Closed-form KL to N(0, I), batch mean.
double closed_form_kl(const LatentBatch& latents, double weight, LatentGradients* g) {
  const double inv_b = 1.0 / static_cast<double>(latents.size());
  if (g != nullptr) {
    g->means += weight * inv_b * latents.means();
    g->log_vars.array() += weight * inv_b * 0.5 * (latents.log_vars().array().exp() - 1.0);
  }
  return kl_rows_to_standard(latents.means(), latents.log_vars()).mean();
}

double density_ratio_term(const Matrix& logits, double weight, Matrix* d_logits) {
  const double value = density_ratio_kl(logits);
  if (d_logits != nullptr) {
    const double inv_b = 1.0 / static_cast<double>(logits.rows());
    d_logits->resize(logits.rows(), 2);
    d_logits->col(0).setConstant(weight * inv_b);
    d_logits->col(1).setConstant(-weight * inv_b);
  }
  return value;
}

}  // namespace

std::string_view to_string(ObjectiveKind kind) {
  for (const auto& [k, name] : kNames) {
    if (k == kind) return name;
  }
  throw std::logic_error("unknown objective kind");
}

ObjectiveKind objective_from_string(std::string_view name) {
  for (const auto& [k, n] : kNames) {
    if (n == name) return k;
  }
  throw std::invalid_argument("unknown objective '" + std::string(name) + "'");
}

bool uses_discriminator(ObjectiveKind kind) {
  return kind == ObjectiveKind::tcwae_gan || kind == ObjectiveKind::factor_vae;
}

bool uses_deterministic_decoder(ObjectiveKind kind) {
  return kind == ObjectiveKind::tcwae_mws || kind == ObjectiveKind::tcwae_gan ||
         kind == ObjectiveKind::wae_mmd;
}

void HyperParams::validate() const {
  const std::array<std::pair<const char*, double>, 4> fields{
      {{"beta", beta}, {"gamma", gamma}, {"lambda", lambda}, {"alpha", alpha}}};
  for (const auto& [name, v] : fields) {
    if (!std::isfinite(v) || v < 0.0) {
      throw std::invalid_argument(std::string("hyperparameter ") + name +
                                  " must be finite and non-negative");
    }
  }
}

bool LossBreakdown::all_finite() const { return !first_non_finite().has_value(); }

std::optional<std::string_view> LossBreakdown::first_non_finite() const {
  if (!std::isfinite(reconstruction)) return "reconstruction";
  if (!std::isfinite(tc)) return "tc";
  if (!std::isfinite(dimwise_kl)) return "dimwise_kl";
  if (!std::isfinite(index_code_mi)) return "index_code_mi";
  if (!std::isfinite(total)) return "total";
  return std::nullopt;
}

double recon_cost_sq_euclid(const Matrix& x, const Matrix& x_hat) {
  return sq_euclid(x, x_hat, nullptr);
}

double recon_cost_bernoulli(const Matrix& x, const Matrix& logits) {
  return bernoulli_nll(x, logits, nullptr);
}

LossBreakdown evaluate_objective(const ObjectiveSettings& s, const ObjectiveInputs& in,
                                 ObjectiveGradients* grads) {
  s.hp.validate();
  const Matrix& x = need(in.images, "images");
  const Matrix& out = need(in.decoder_output, "decoder_output");
  const LatentBatch& lat = need(in.latents, "latents");
  const HyperParams& hp = s.hp;

  LatentGradients* lg = nullptr;
  if (grads != nullptr) {
    lg = &grads->latents;
    const auto b = static_cast<Eigen::Index>(lat.size());
    const auto d = static_cast<Eigen::Index>(lat.dim());
    lg->codes = Matrix::Zero(b, d);
    lg->means = Matrix::Zero(b, d);
    lg->log_vars = Matrix::Zero(b, d);
    grads->disc_logits.resize(0, 0);
  }
  Matrix* d_out = grads != nullptr ? &grads->decoder_output : nullptr;

  LossBreakdown r;
  switch (s.kind) {
    case ObjectiveKind::tcwae_mws: {
      r.reconstruction = sq_euclid(x, out, d_out);
      const MwsWeights w = MwsWeights::from_terms(0.0, hp.beta, hp.gamma);
      const MwsMeans m = mws_means(lat, s.dataset_size, s.prior, &w, lg);
      r.tc = m.tc();
      r.dimwise_kl = m.dimwise_kl();
      r.total = r.reconstruction + hp.beta * r.tc + hp.gamma * r.dimwise_kl;
      break;
    }
    case ObjectiveKind::tcwae_gan: {
      r.reconstruction = sq_euclid(x, out, d_out);
      r.tc = density_ratio_term(need(in.disc_logits, "disc_logits"), hp.beta,
                                grads != nullptr ? &grads->disc_logits : nullptr);
      const MwsWeights w = MwsWeights::from_terms(0.0, 0.0, hp.gamma);
      r.dimwise_kl = mws_means(lat, s.dataset_size, s.prior, &w, lg).dimwise_kl();
      r.total = r.reconstruction + hp.beta * r.tc + hp.gamma * r.dimwise_kl;
      break;
    }
    case ObjectiveKind::beta_tcvae: {
      r.reconstruction = bernoulli_nll(x, out, d_out);
      const MwsWeights w = MwsWeights::from_terms(hp.alpha, hp.beta, hp.gamma);
      const MwsMeans m = mws_means(lat, s.dataset_size, s.prior, &w, lg);
      r.tc = m.tc();
      r.dimwise_kl = m.dimwise_kl();
      r.index_code_mi = m.index_code_mi();
      r.total = r.reconstruction + hp.alpha * r.index_code_mi + hp.beta * r.tc +
                hp.gamma * r.dimwise_kl;
      break;
    }
    case ObjectiveKind::factor_vae: {
      r.reconstruction = bernoulli_nll(x, out, d_out);
      r.dimwise_kl = closed_form_kl(lat, 1.0, lg);
      r.tc = density_ratio_term(need(in.disc_logits, "disc_logits"), hp.gamma,
                                grads != nullptr ? &grads->disc_logits : nullptr);
      r.total = r.reconstruction + r.dimwise_kl + hp.gamma * r.tc;
      break;
    }
    case ObjectiveKind::wae_mmd: {
      r.reconstruction = sq_euclid(x, out, d_out);
      Matrix d_codes;
      r.dimwise_kl = mmd_unbiased(lat.codes(), need(in.prior_samples, "prior_samples"),
                                  s.kernel, grads != nullptr ? &d_codes : nullptr);
      if (lg != nullptr) lg->codes += hp.lambda * d_codes;
      r.total = r.reconstruction + hp.lambda * r.dimwise_kl;
      break;
    }
    case ObjectiveKind::elbo: {
      r.reconstruction = bernoulli_nll(x, out, d_out);
      r.dimwise_kl = closed_form_kl(lat, 1.0, lg);
      r.total = r.reconstruction + r.dimwise_kl;
      break;
    }
  }
  return r;
}

LossBreakdown tcwae_mws_loss(const Matrix& x, const Matrix& x_hat, const LatentBatch& batch,
                             const HyperParams& hp, std::size_t dataset_size,
                             const DiagonalGaussian& prior) {
  ObjectiveSettings s{ObjectiveKind::tcwae_mws, hp, dataset_size, prior};
  return evaluate_objective(s, {&x, &x_hat, &batch});
}

LossBreakdown tcwae_gan_loss(const Matrix& x, const Matrix& x_hat, const LatentBatch& batch,
                             const Matrix& disc_logits, const HyperParams& hp,
                             std::size_t dataset_size, const DiagonalGaussian& prior) {
  ObjectiveSettings s{ObjectiveKind::tcwae_gan, hp, dataset_size, prior};
  return evaluate_objective(s, {&x, &x_hat, &batch, &disc_logits});
}

LossBreakdown beta_tcvae_loss(const Matrix& x, const Matrix& decoder_logits,
                              const LatentBatch& batch, const HyperParams& hp,
                              std::size_t dataset_size, const DiagonalGaussian& prior) {
  ObjectiveSettings s{ObjectiveKind::beta_tcvae, hp, dataset_size, prior};
  return evaluate_objective(s, {&x, &decoder_logits, &batch});
}

LossBreakdown factor_vae_loss(const Matrix& x, const Matrix& decoder_logits,
                              const LatentBatch& batch, const Matrix& disc_logits,
                              double gamma) {
  ObjectiveSettings s{ObjectiveKind::factor_vae, HyperParams{.gamma = gamma}, batch.size(),
                      DiagonalGaussian::standard(batch.dim())};
  return evaluate_objective(s, {&x, &decoder_logits, &batch, &disc_logits});
}

LossBreakdown wae_mmd_loss(const Matrix& x, const Matrix& x_hat, const Matrix& codes,
                           const Matrix& prior_samples, double lambda,
                           const KernelConfig& cfg) {
  // The MMD path only reads codes; posterior parameters are placeholders.
  const LatentBatch batch(codes, codes, Matrix::Zero(codes.rows(), codes.cols()));
  ObjectiveSettings s{ObjectiveKind::wae_mmd, HyperParams{.lambda = lambda}, batch.size(),
                      DiagonalGaussian::standard(batch.dim()), cfg};
  return evaluate_objective(s, {&x, &x_hat, &batch, nullptr, &prior_samples});
}

LossBreakdown elbo_loss(const Matrix& x, const Matrix& decoder_logits, const LatentBatch& batch) {
  ObjectiveSettings s{ObjectiveKind::elbo, HyperParams{}, batch.size(),
                      DiagonalGaussian::standard(batch.dim())};
  return evaluate_objective(s, {&x, &decoder_logits, &batch});
}

double discriminator_loss(const Matrix& logits_on_q, const Matrix& logits_on_perm,
                          Matrix* d_logits_q, Matrix* d_logits_perm) {
  if (logits_on_q.cols() != 2 || logits_on_perm.cols() != 2 || logits_on_q.rows() == 0 ||
      logits_on_perm.rows() == 0) {
    throw std::invalid_argument("discriminator_loss: logits must be [B, 2]");
  }
  // -log softmax_c(l) = softplus(l_other - l_c)
  auto side = [](const Matrix& l, Eigen::Index cls, Matrix* d) {
    const Eigen::Index other = 1 - cls;
    const double inv_b = 1.0 / static_cast<double>(l.rows());
    double acc = 0.0;
    if (d != nullptr) d->resize(l.rows(), 2);
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
      const double margin = l(i, other) - l(i, cls);
      acc += softplus(margin);
      if (d != nullptr) {
        const double s = 0.5 * inv_b * sigmoid(margin);
        (*d)(i, other) = s;
        (*d)(i, cls) = -s;
      }
    }
    return acc * inv_b;
  };
  return 0.5 * (side(logits_on_q, 0, d_logits_q) + side(logits_on_perm, 1, d_logits_perm));
}

}  // namespace tcwae
