#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tcwae/network.hpp"
#include "tcwae/rng.hpp"
#include "tcwae/tensor.hpp"

namespace tcwae {

using FactorMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Named generative factors and their numbers of values.
struct FactorSpec {
  std::vector<std::string> names;
  std::vector<std::size_t> cardinalities;

  void validate() const;
  std::size_t size() const { return names.size(); }
  std::size_t grid_size() const;
  /// Position of a factor by name; throws if absent.
  std::size_t index_of(const std::string& name) const;

  /// shape(3) x orientation(8) x pos_x(8) x pos_y(8).
  static FactorSpec desk();

  friend bool operator==(const FactorSpec&, const FactorSpec&) = default;
};

/// Images with the ground-truth factor values that generated them.
/// Full-grid datasets are stored in mixed-radix order, last factor fastest.
struct FactorDataset {
  Tensor images;  ///< [M, H, W, C], values in [0, 1]
  FactorMatrix factors;
  FactorSpec spec;
  std::uint64_t seed = 0;

  std::size_t size() const { return images.rows(); }
  ImageShape image_shape() const;
  std::size_t image_size() const { return images.row_size(); }
  bool full_grid() const;
  /// Row of a factor tuple on the full grid.
  std::size_t grid_index(std::span<const int> values) const;

  /// Rows of images as a [n, H*W*C] matrix.
  Matrix gather(std::span<const std::size_t> rows) const;
  FactorMatrix gather_factors(std::span<const std::size_t> rows) const;
};

/// Factor names the sprite renderer understands.
const std::vector<std::string>& known_factors();

/// Renders one binary sprite per factor tuple (4x4 supersampling, threshold
/// 0.5). Unnamed factors take their default (square, full scale, upright,
/// centred).
FactorDataset generate_sprites(const FactorSpec& spec, std::size_t resolution,
                               std::uint64_t seed);

/// Three-channel copy with background pixels replaced by uniform noise and
/// sprite pixels set to 1.
FactorDataset add_noise_background(const FactorDataset& ds, Rng& rng);

/// Infinite stream of minibatch row indices.
class MinibatchStream {
 public:
  /// Maps a bound n to an index in [0, n); replaces the generator's draw.
  using IndexDraw = std::function<std::size_t(std::size_t)>;

  MinibatchStream(std::size_t dataset_size, std::size_t batch_size, Rng rng,
                  IndexDraw draw = {});

  /// Uniform sampling with replacement.
  std::vector<std::size_t> next();
  /// `count` minibatches of distinct rows (partial Fisher-Yates).
  std::vector<std::vector<std::size_t>> next_disjoint(std::size_t count);

  const Rng& rng() const { return rng_; }

 private:
  std::size_t draw(std::size_t n);

  std::size_t dataset_size_;
  std::size_t batch_size_;
  Rng rng_;
  IndexDraw draw_;
};

struct FixedFactorBatch {
  std::vector<std::size_t> rows;
  int value = 0;
};

/// Batch sharing one random value of factor k; other factors uniform.
FixedFactorBatch sample_fixed_factor_batch(const FactorDataset& ds, std::size_t factor,
                                           std::size_t batch_size, Rng& rng);

/// Writes images.bin, factors.csv and spec.json into dir.
void export_dataset(const FactorDataset& ds, const std::filesystem::path& dir);
FactorDataset load_dataset(const std::filesystem::path& dir);

}  // namespace tcwae
