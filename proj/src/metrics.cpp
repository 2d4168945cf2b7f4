#include "tcwae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <utility>

namespace tcwae {

namespace {

// Entropy from counts summed in sorted order, so equal count multisets give
// bit-identical entropies.
double entropy_from_counts(std::vector<std::size_t> counts, std::size_t n) {
  std::sort(counts.begin(), counts.end());
  const double total = static_cast<double>(n);
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  return h;
}

template <typename Key>
std::vector<std::size_t> count_values(std::span<const Key> v) {
  std::map<Key, std::size_t> counts;
  for (const auto& x : v) ++counts[x];
  std::vector<std::size_t> out;
  out.reserve(counts.size());
  for (const auto& [k, c] : counts) out.push_back(c);
  return out;
}

std::vector<int> column(const FactorMatrix& m, Eigen::Index k) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m(i, k);
  return out;
}

std::vector<double> column(const Matrix& m, Eigen::Index k) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m(i, k);
  return out;
}

double variance(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return acc / n;
}

}  // namespace

void RepresentationTable::validate() const {
  spec.validate();
  if (latents.rows() < 100) throw std::invalid_argument("representation table: need at least 100 rows");
  if (latents.rows() != factors.rows()) {
    throw std::invalid_argument("representation table: latents and factors differ in rows");
  }
  if (static_cast<std::size_t>(factors.cols()) != spec.size()) {
    throw std::invalid_argument("representation table: factor columns differ from spec");
  }
  if (!latents.allFinite()) throw std::invalid_argument("representation table: non-finite latents");
}

std::vector<int> discretize(std::span<const double> values, std::size_t bins) {
  if (bins < 2) throw std::invalid_argument("discretize: bins must be at least 2");
  std::vector<int> out(values.size(), 0);
  if (values.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) return out;
  const double width = (hi - lo) / static_cast<double>(bins);
  const int last = static_cast<int>(bins) - 1;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = std::min(last, static_cast<int>(std::floor((values[i] - lo) / width)));
  }
  return out;
}

double discrete_entropy(std::span<const int> a) {
  if (a.empty()) return 0.0;
  return entropy_from_counts(count_values(a), a.size());
}

double discrete_mutual_information(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw std::invalid_argument("mutual information: length mismatch");
  if (a.empty()) return 0.0;
  std::vector<std::pair<int, int>> joint(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) joint[i] = {a[i], b[i]};
  const double h_joint =
      entropy_from_counts(count_values(std::span<const std::pair<int, int>>(joint)), a.size());
  // (H(a) - H(a,b)) + H(b) is exactly H(b) when a determines b and 0 when a
  // is constant.
  const double mi = (discrete_entropy(a) - h_joint) + discrete_entropy(b);
  return std::max(0.0, mi);
}

double mig(const RepresentationTable& table, std::size_t bins) {
  table.validate();
  const Eigen::Index d = table.latents.cols();
  if (d < 2) throw std::invalid_argument("mig: need at least two latent dimensions");
  std::vector<std::vector<int>> codes;
  for (Eigen::Index j = 0; j < d; ++j) codes.push_back(discretize(column(table.latents, j), bins));
  double total = 0.0;
  const auto k_count = table.factors.cols();
  for (Eigen::Index k = 0; k < k_count; ++k) {
    if (table.spec.cardinalities[static_cast<std::size_t>(k)] < 2) {
      throw std::invalid_argument("mig: factor '" + table.spec.names[static_cast<std::size_t>(k)] +
                                  "' has a single value");
    }
    const std::vector<int> v = column(table.factors, k);
    const double h = discrete_entropy(v);
    std::vector<double> mi;
    for (const auto& c : codes) mi.push_back(discrete_mutual_information(c, v));
    std::partial_sort(mi.begin(), mi.begin() + 2, mi.end(), std::greater<>());
    const double gap = h > 0.0 ? (mi[0] - mi[1]) / h : 0.0;
    total += std::clamp(gap, 0.0, 1.0);
  }
  return std::clamp(total / static_cast<double>(k_count), 0.0, 1.0);
}

double sap_score(const RepresentationTable& table) {
  table.validate();
  const Eigen::Index d = table.latents.cols();
  const Eigen::Index k_count = table.factors.cols();
  const double n = static_cast<double>(table.latents.rows());
  double total = 0.0;
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const Eigen::VectorXd v = table.factors.col(k).cast<double>();
    const Eigen::VectorXd vc = v.array() - v.mean();
    const double var_v = vc.squaredNorm() / n;
    std::vector<double> scores;
    for (Eigen::Index j = 0; j < d; ++j) {
      const Eigen::VectorXd z = table.latents.col(j);
      const Eigen::VectorXd zc = z.array() - z.mean();
      const double var_z = zc.squaredNorm() / n;
      const double cov = zc.dot(vc) / n;
      scores.push_back(var_z > 0.0 && var_v > 0.0 ? (cov * cov) / (var_z * var_v) : 0.0);
    }
    if (scores.size() < 2) scores.push_back(0.0);
    std::partial_sort(scores.begin(), scores.begin() + 2, scores.end(), std::greater<>());
    total += scores[0] - scores[1];
  }
  return std::clamp(total / static_cast<double>(k_count), 0.0, 1.0);
}

double factor_vae_score(const EncoderFn& encoder, const FactorDataset& ds, Rng& rng,
                        const FactorVaeOptions& opts) {
  if (opts.train_votes == 0 || opts.eval_votes == 0 || opts.batch_per_vote < 2) {
    throw std::invalid_argument("factor_vae_score: bad vote configuration");
  }
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const Matrix full = encoder(all);
  if (static_cast<std::size_t>(full.rows()) != ds.size()) {
    throw std::invalid_argument("factor_vae_score: encoder returned the wrong number of rows");
  }
  std::vector<Eigen::Index> kept;
  std::vector<double> scale;
  for (Eigen::Index j = 0; j < full.cols(); ++j) {
    const double var = variance(column(full, j));
    if (var >= opts.prune_threshold) {
      kept.push_back(j);
      scale.push_back(std::sqrt(var));
    }
  }
  if (kept.empty()) throw std::runtime_error("collapsed representation");

  std::vector<std::size_t> usable;
  for (std::size_t k = 0; k < ds.spec.size(); ++k) {
    if (ds.spec.cardinalities[k] >= 2) usable.push_back(k);
  }
  if (usable.empty()) throw std::invalid_argument("factor_vae_score: no factor has two values");

  const std::size_t total_votes = opts.train_votes + opts.eval_votes;
  std::vector<std::pair<std::size_t, std::size_t>> votes;  // (argmin dimension, factor)
  votes.reserve(total_votes);
  for (std::size_t v = 0; v < total_votes; ++v) {
    const std::size_t factor = usable[rng.uniform_index(usable.size())];
    const FixedFactorBatch batch = sample_fixed_factor_batch(ds, factor, opts.batch_per_vote, rng);
    std::size_t best = 0;
    double best_var = 0.0;
    for (std::size_t j = 0; j < kept.size(); ++j) {
      std::vector<double> vals(batch.rows.size());
      for (std::size_t i = 0; i < vals.size(); ++i) {
        vals[i] = full(static_cast<Eigen::Index>(batch.rows[i]), kept[j]) / scale[j];
      }
      const double var = variance(vals);
      if (j == 0 || var < best_var) {
        best = j;
        best_var = var;
      }
    }
    votes.emplace_back(best, factor);
  }

  std::vector<std::vector<std::size_t>> counts(kept.size(), std::vector<std::size_t>(ds.spec.size(), 0));
  for (std::size_t v = 0; v < opts.train_votes; ++v) ++counts[votes[v].first][votes[v].second];
  std::vector<std::size_t> predict(kept.size(), 0);
  for (std::size_t j = 0; j < kept.size(); ++j) {
    predict[j] = static_cast<std::size_t>(
        std::max_element(counts[j].begin(), counts[j].end()) - counts[j].begin());
  }
  std::size_t correct = 0;
  for (std::size_t v = opts.train_votes; v < total_votes; ++v) {
    correct += predict[votes[v].first] == votes[v].second ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(opts.eval_votes);
}

double reconstruction_mse(const Matrix& images, const Matrix& reconstructions) {
  if (images.rows() != reconstructions.rows() || images.cols() != reconstructions.cols()) {
    throw std::invalid_argument("reconstruction_mse: shape mismatch");
  }
  if (images.rows() == 0) throw std::invalid_argument("reconstruction_mse: empty batch");
  return (images - reconstructions).rowwise().squaredNorm().mean();
}

double reconstruction_mse(const AutoencoderFn& model, const FactorDataset& ds,
                          std::size_t eval_size, std::size_t batch) {
  if (batch == 0) throw std::invalid_argument("reconstruction_mse: batch must be positive");
  const std::size_t n = std::min(ds.size(), eval_size);
  if (n == 0) throw std::invalid_argument("reconstruction_mse: empty dataset");
  double total = 0.0;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t count = std::min(batch, n - start);
    std::vector<std::size_t> rows(count);
    std::iota(rows.begin(), rows.end(), start);
    const Matrix x = ds.gather(rows);
    const Matrix r = model(x);
    if (r.rows() != x.rows() || r.cols() != x.cols()) {
      throw std::invalid_argument("reconstruction_mse: model output shape mismatch");
    }
    total += (x - r).rowwise().squaredNorm().sum();
  }
  return total / static_cast<double>(n);
}

bool ScoreReport::valid() const {
  auto unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  return unit(mig) && unit(factor_vae) && unit(sap) && std::isfinite(mse) && mse >= 0.0;
}

}  // namespace tcwae
