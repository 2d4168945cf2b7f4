#pragma once

#include <span>

#include "tcwae/rng.hpp"
#include "tcwae/tensor.hpp"

namespace tcwae {

inline constexpr double kLogVarMin = -30.0;
inline constexpr double kLogVarMax = 30.0;
/// 0.5 * log(2 * pi)
inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

/// log(sum(exp(v))) via max-shift. Throws on empty input.
double logsumexp(std::span<const double> values);

double softplus(double x);
double sigmoid(double x);
double clamp_log_var(double lv);

/// Diagonal-covariance Gaussian N(mean, diag(exp(log_var))).
/// log_var is clamped to [-30, 30] at construction.
class DiagonalGaussian {
 public:
  DiagonalGaussian(Vector mean, Vector log_var);

  static DiagonalGaussian standard(std::size_t dim);

  std::size_t dim() const { return static_cast<std::size_t>(mean_.size()); }
  const Vector& mean() const { return mean_; }
  const Vector& log_var() const { return log_var_; }

  /// Log density of one coordinate.
  double log_prob_1d(std::size_t k, double z) const;

 private:
  Vector mean_;
  Vector log_var_;
};

double gaussian_log_prob(const DiagonalGaussian& g, const Vector& z);

/// Reparameterized draw mean + exp(log_var / 2) * eps, eps ~ N(0, I) from rng.
Vector gaussian_sample(const DiagonalGaussian& g, Rng& rng);

/// Closed-form KL(g || N(0, I)).
double kl_diag_gaussian_to_standard(const DiagonalGaussian& g);

/// Row-wise closed-form KL to N(0, I) for a batch of posteriors; returns [B].
Vector kl_rows_to_standard(const Matrix& means, const Matrix& log_vars);

}  // namespace tcwae
