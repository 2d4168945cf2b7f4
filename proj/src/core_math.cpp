#include "tcwae/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace tcwae {

double logsumexp(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("empty reduction");
  const double m = *std::max_element(values.begin(), values.end());
  if (m == -std::numeric_limits<double>::infinity()) return m;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - m);
  return m + std::log(acc);
}

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double clamp_log_var(double lv) { return std::clamp(lv, kLogVarMin, kLogVarMax); }

DiagonalGaussian::DiagonalGaussian(Vector mean, Vector log_var)
    : mean_(std::move(mean)), log_var_(std::move(log_var)) {
  if (mean_.size() != log_var_.size()) {
    throw std::invalid_argument("DiagonalGaussian: mean and log_var shapes differ");
  }
  if (mean_.size() == 0) throw std::invalid_argument("DiagonalGaussian: empty");
  if (!mean_.allFinite() || log_var_.hasNaN()) {
    throw std::invalid_argument("DiagonalGaussian: non-finite parameters");
  }
  log_var_ = log_var_.unaryExpr(&clamp_log_var);
}

DiagonalGaussian DiagonalGaussian::standard(std::size_t dim) {
  return {Vector::Zero(static_cast<Eigen::Index>(dim)),
          Vector::Zero(static_cast<Eigen::Index>(dim))};
}

double DiagonalGaussian::log_prob_1d(std::size_t k, double z) const {
  const auto i = static_cast<Eigen::Index>(k);
  const double diff = z - mean_[i];
  return -kHalfLog2Pi - 0.5 * log_var_[i] -
         0.5 * diff * diff * std::exp(-log_var_[i]);
}

double gaussian_log_prob(const DiagonalGaussian& g, const Vector& z) {
  if (static_cast<std::size_t>(z.size()) != g.dim()) {
    throw std::invalid_argument("gaussian_log_prob: shape mismatch");
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < g.dim(); ++k) {
    acc += g.log_prob_1d(k, z[static_cast<Eigen::Index>(k)]);
  }
  return acc;
}

Vector gaussian_sample(const DiagonalGaussian& g, Rng& rng) {
  Vector out(g.mean().size());
  for (Eigen::Index k = 0; k < out.size(); ++k) {
    out[k] = g.mean()[k] + std::exp(0.5 * g.log_var()[k]) * rng.normal();
  }
  return out;
}

double kl_diag_gaussian_to_standard(const DiagonalGaussian& g) {
  const auto& mu = g.mean();
  const auto& lv = g.log_var();
  return 0.5 * (mu.array().square() + lv.array().exp() - 1.0 - lv.array()).sum();
}

Vector kl_rows_to_standard(const Matrix& means, const Matrix& log_vars) {
  return 0.5 * (means.array().square() + log_vars.array().exp() - 1.0 -
                log_vars.array())
                   .rowwise()
                   .sum()
                   .matrix();
}

}  // namespace tcwae
