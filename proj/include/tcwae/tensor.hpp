#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace tcwae {

/// Row-major dynamic matrix. Rows index the batch everywhere in this library.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = Mat<double>;
using Vector = Eigen::VectorXd;

/// Dense row-major array of doubles with an explicit shape.
///
/// Rank-2 numeric data (codes, logits) is usually passed around as `Matrix`;
/// `Tensor` is used where the rank matters, e.g. image batches [B, H, W, C].
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);

  static Tensor from_matrix(const Matrix& m);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  /// Leading axis as rows, remaining axes flattened into columns.
  std::size_t rows() const;
  std::size_t row_size() const;
  Eigen::Map<const Matrix> as_rows() const;
  Eigen::Map<Matrix> as_rows();

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_product(std::span<const std::size_t> shape);

}  // namespace tcwae
