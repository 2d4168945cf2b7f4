#include "tcwae/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tcwae {
namespace {

void check_sizes(const LatentBatch& batch, std::size_t dataset_size) {
  if (batch.size() == 0) throw std::invalid_argument("mws: empty batch");
  if (dataset_size < batch.size()) {
    throw std::invalid_argument("dataset smaller than batch");
  }
}

// Cross log-densities of code i under every posterior j, one column per
// latent dimension: block(j, k) = log q_k(z_ik | x_j).
void cross_log_density(const LatentBatch& batch, Eigen::Index i, Matrix& block) {
  const auto& z = batch.codes();
  const auto& mu = batch.means();
  const auto& lv = batch.log_vars();
  const Eigen::Index b = mu.rows();
  const Eigen::Index d = mu.cols();
  block.resize(b, d);
  for (Eigen::Index j = 0; j < b; ++j) {
    for (Eigen::Index k = 0; k < d; ++k) {
      const double diff = z(i, k) - mu(j, k);
      block(j, k) = -kHalfLog2Pi - 0.5 * lv(j, k) - 0.5 * diff * diff * std::exp(-lv(j, k));
    }
  }
}

double column_logsumexp(const Matrix& block, Eigen::Index k, Vector& scratch) {
  scratch = block.col(k);
  return logsumexp({scratch.data(), static_cast<std::size_t>(scratch.size())});
}

}  // namespace

LatentBatch::LatentBatch(Matrix codes, Matrix means, Matrix log_vars)
    : codes_(std::move(codes)), means_(std::move(means)), log_vars_(std::move(log_vars)) {
  if (codes_.rows() != means_.rows() || codes_.cols() != means_.cols() ||
      log_vars_.rows() != means_.rows() || log_vars_.cols() != means_.cols()) {
    throw std::invalid_argument("LatentBatch: codes/means/log_vars shape mismatch");
  }
  log_vars_ = log_vars_.unaryExpr(&clamp_log_var);
}

LatentBatch LatentBatch::sample(std::span<const DiagonalGaussian> posteriors, Rng& rng) {
  if (posteriors.empty()) throw std::invalid_argument("LatentBatch: no posteriors");
  const auto b = static_cast<Eigen::Index>(posteriors.size());
  const auto d = static_cast<Eigen::Index>(posteriors.front().dim());
  Matrix codes(b, d), means(b, d), log_vars(b, d);
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto& g = posteriors[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(g.dim()) != d) {
      throw std::invalid_argument("LatentBatch: posterior dimensions differ");
    }
    codes.row(i) = gaussian_sample(g, rng).transpose();
    means.row(i) = g.mean().transpose();
    log_vars.row(i) = g.log_var().transpose();
  }
  return {std::move(codes), std::move(means), std::move(log_vars)};
}

DiagonalGaussian LatentBatch::posterior(std::size_t i) const {
  const auto r = static_cast<Eigen::Index>(i);
  return {means_.row(r).transpose(), log_vars_.row(r).transpose()};
}

void KernelConfig::validate() const {
  if (scales.empty()) throw std::invalid_argument("KernelConfig: no scales");
  if (!(base > 0.0)) throw std::invalid_argument("KernelConfig: base must be positive");
  for (double s : scales) {
    if (!(s > 0.0)) throw std::invalid_argument("KernelConfig: scales must be positive");
  }
}

KernelConfig KernelConfig::for_latent_dim(std::size_t latent_dim) {
  return {{0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0}, 2.0 * static_cast<double>(latent_dim)};
}

Vector mws_log_qz(const LatentBatch& batch, std::size_t dataset_size) {
  check_sizes(batch, dataset_size);
  const auto b = static_cast<Eigen::Index>(batch.size());
  const double log_nb = std::log(static_cast<double>(dataset_size) * static_cast<double>(b));
  Vector out(b);
  Matrix block;
  Vector joint;
  for (Eigen::Index i = 0; i < b; ++i) {
    cross_log_density(batch, i, block);
    joint = block.rowwise().sum();
    out[i] = logsumexp({joint.data(), static_cast<std::size_t>(joint.size())}) - log_nb;
  }
  return out;
}

Matrix mws_log_qz_dims(const LatentBatch& batch, std::size_t dataset_size) {
  check_sizes(batch, dataset_size);
  const auto b = static_cast<Eigen::Index>(batch.size());
  const auto d = static_cast<Eigen::Index>(batch.dim());
  const double log_nb = std::log(static_cast<double>(dataset_size) * static_cast<double>(b));
  Matrix out(b, d);
  Matrix block;
  Vector scratch;
  for (Eigen::Index i = 0; i < b; ++i) {
    cross_log_density(batch, i, block);
    for (Eigen::Index k = 0; k < d; ++k) {
      out(i, k) = column_logsumexp(block, k, scratch) - log_nb;
    }
  }
  return out;
}

TcAndDimwise tc_and_dimwise_kl_mws(const LatentBatch& batch, std::size_t dataset_size,
                                   const DiagonalGaussian& prior) {
  const MwsMeans m = mws_means(batch, dataset_size, prior);
  return {m.tc(), m.dimwise_kl()};
}

MwsWeights MwsWeights::from_terms(double alpha, double beta, double gamma) {
  // alpha*(self - qz) + beta*(qz - dims) + gamma*(dims - prior)
  return {beta - alpha, gamma - beta, alpha, -gamma};
}

MwsMeans mws_means(const LatentBatch& batch, std::size_t dataset_size,
                   const DiagonalGaussian& prior, const MwsWeights* weights,
                   LatentGradients* grads) {
  check_sizes(batch, dataset_size);
  const auto b = static_cast<Eigen::Index>(batch.size());
  const auto d = static_cast<Eigen::Index>(batch.dim());
  if (static_cast<Eigen::Index>(prior.dim()) != d) {
    throw std::invalid_argument("mws: prior dimension does not match codes");
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  const double log_nb = std::log(static_cast<double>(dataset_size) * static_cast<double>(b));
  const bool backprop = weights != nullptr && grads != nullptr;
  if (backprop) {
    for (Matrix* g : {&grads->codes, &grads->means, &grads->log_vars}) {
      if (g->rows() != b || g->cols() != d) *g = Matrix::Zero(b, d);
    }
  }

  const auto& z = batch.codes();
  const auto& mu = batch.means();
  const auto& lv = batch.log_vars();

  MwsMeans acc;
  Matrix block, g_block;
  Vector joint, scratch, col_lse(d);
  for (Eigen::Index i = 0; i < b; ++i) {
    cross_log_density(batch, i, block);
    joint = block.rowwise().sum();
    const double lse_joint = logsumexp({joint.data(), static_cast<std::size_t>(joint.size())});
    acc.log_qz += lse_joint - log_nb;
    for (Eigen::Index k = 0; k < d; ++k) {
      col_lse[k] = column_logsumexp(block, k, scratch);
      acc.sum_log_qz_dims += col_lse[k] - log_nb;
    }
    acc.log_q_self += joint[i];
    double log_p = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) log_p += prior.log_prob_1d(static_cast<std::size_t>(k), z(i, k));
    acc.log_prior += log_p;

    if (!backprop) continue;
    // d/d block(j, k) of the weighted sum for this row i.
    g_block.resize(b, d);
    for (Eigen::Index j = 0; j < b; ++j) {
      const double w_joint = weights->log_qz * inv_b * std::exp(joint[j] - lse_joint);
      for (Eigen::Index k = 0; k < d; ++k) {
        g_block(j, k) = w_joint + weights->sum_log_qz_dims * inv_b * std::exp(block(j, k) - col_lse[k]);
      }
    }
    g_block.row(i).array() += weights->log_q_self * inv_b;
    for (Eigen::Index j = 0; j < b; ++j) {
      for (Eigen::Index k = 0; k < d; ++k) {
        const double g = g_block(j, k);
        const double prec = std::exp(-lv(j, k));
        const double u = z(i, k) - mu(j, k);
        grads->codes(i, k) -= g * u * prec;
        grads->means(j, k) += g * u * prec;
        grads->log_vars(j, k) += g * (-0.5 + 0.5 * u * u * prec);
      }
    }
    for (Eigen::Index k = 0; k < d; ++k) {
      const double prec = std::exp(-prior.log_var()[k]);
      grads->codes(i, k) -= weights->log_prior * inv_b * (z(i, k) - prior.mean()[k]) * prec;
    }
  }
  acc.log_qz *= inv_b;
  acc.sum_log_qz_dims *= inv_b;
  acc.log_q_self *= inv_b;
  acc.log_prior *= inv_b;
  return acc;
}

Matrix permute_dims(const Matrix& codes, Rng& rng) {
  const auto b = static_cast<std::size_t>(codes.rows());
  if (b < 2) throw std::invalid_argument("permute_dims: batch must have at least 2 rows");
  std::vector<std::vector<std::size_t>> perms(static_cast<std::size_t>(codes.cols()));
  for (auto& perm : perms) {
    perm.resize(b);
    for (std::size_t i = 0; i < b; ++i) perm[i] = i;
    // Fisher-Yates
    for (std::size_t i = b - 1; i > 0; --i) {
      std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
    }
  }
  return permute_dims(codes, perms);
}

Matrix permute_dims(const Matrix& codes, std::span<const std::vector<std::size_t>> perms) {
  const auto b = static_cast<std::size_t>(codes.rows());
  if (b < 2) throw std::invalid_argument("permute_dims: batch must have at least 2 rows");
  if (perms.size() != static_cast<std::size_t>(codes.cols())) {
    throw std::invalid_argument("permute_dims: one permutation per column required");
  }
  Matrix out(codes.rows(), codes.cols());
  for (std::size_t k = 0; k < perms.size(); ++k) {
    const auto& perm = perms[k];
    if (perm.size() != b) throw std::invalid_argument("permute_dims: permutation length");
    std::vector<bool> seen(b, false);
    for (std::size_t i = 0; i < b; ++i) {
      if (perm[i] >= b || seen[perm[i]]) {
        throw std::invalid_argument("permute_dims: not a permutation");
      }
      seen[perm[i]] = true;
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          codes(static_cast<Eigen::Index>(perm[i]), static_cast<Eigen::Index>(k));
    }
  }
  return out;
}

double density_ratio_kl(const Matrix& logits) {
  if (logits.cols() != 2 || logits.rows() == 0) {
    throw std::invalid_argument("density_ratio_kl: logits must be [B, 2]");
  }
  return (logits.col(0) - logits.col(1)).mean();
}

double imq_kernel(const Vector& x, const Vector& y, const KernelConfig& cfg) {
  if (x.size() != y.size()) throw std::invalid_argument("imq_kernel: shape mismatch");
  const double r2 = (x - y).squaredNorm();
  double acc = 0.0;
  for (double s : cfg.scales) acc += s * cfg.base / (s * cfg.base + r2);
  return acc;
}

namespace {

// Kernel value and dk/d(r2) for squared distance r2.
inline void imq_with_slope(double r2, const KernelConfig& cfg, double& k, double& dk_dr2) {
  k = 0.0;
  dk_dr2 = 0.0;
  for (double s : cfg.scales) {
    const double c = s * cfg.base;
    const double denom = c + r2;
    k += c / denom;
    dk_dr2 -= c / (denom * denom);
  }
}

}  // namespace

double mmd_unbiased(const Matrix& x, const Matrix& y, const KernelConfig& cfg, Matrix* dx) {
  cfg.validate();
  const Eigen::Index n = x.rows();
  const Eigen::Index m = y.rows();
  if (n < 2 || m < 2) throw std::invalid_argument("mmd_unbiased: need at least 2 samples per set");
  if (x.cols() != y.cols()) throw std::invalid_argument("mmd_unbiased: dimension mismatch");
  const double nn = static_cast<double>(n);
  const double mm = static_cast<double>(m);
  if (dx != nullptr) *dx = Matrix::Zero(n, x.cols());

  double k, slope;
  double sum_xx = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double r2 = (x.row(i) - x.row(j)).squaredNorm();
      imq_with_slope(r2, cfg, k, slope);
      sum_xx += 2.0 * k;
      if (dx != nullptr) {
        // Both (i, j) and (j, i) terms; d r2 / d x_i = 2 (x_i - x_j).
        const double c = 2.0 * slope * 2.0 / (nn * (nn - 1.0));
        dx->row(i) += c * (x.row(i) - x.row(j));
        dx->row(j) -= c * (x.row(i) - x.row(j));
      }
    }
  }
  double sum_yy = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) {
      imq_with_slope((y.row(i) - y.row(j)).squaredNorm(), cfg, k, slope);
      sum_yy += 2.0 * k;
    }
  }
  double sum_xy = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      imq_with_slope((x.row(i) - y.row(j)).squaredNorm(), cfg, k, slope);
      sum_xy += k;
      if (dx != nullptr) {
        dx->row(i) -= (2.0 / (nn * mm)) * slope * 2.0 * (x.row(i) - y.row(j));
      }
    }
  }
  return sum_xx / (nn * (nn - 1.0)) + sum_yy / (mm * (mm - 1.0)) - 2.0 * sum_xy / (nn * mm);
}

}  // namespace tcwae
