#include "tcwae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>

namespace tcwae {

std::size_t shape_product(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw std::invalid_argument("tensor: shape product " +
                                std::to_string(shape_product(shape_)) +
                                " does not match data length " +
                                std::to_string(data_.size()));
  }
  if (std::any_of(shape_.begin(), shape_.end(),
                  [](std::size_t d) { return d == 0; })) {
    throw std::invalid_argument("tensor: zero-sized axis");
  }
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : Tensor(shape, std::vector<double>(shape_product(shape), fill)) {}

Tensor Tensor::from_matrix(const Matrix& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return Tensor({static_cast<std::size_t>(m.rows()),
                 static_cast<std::size_t>(m.cols())},
                std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw std::out_of_range("tensor: axis out of range");
  return shape_[axis];
}

std::size_t Tensor::rows() const { return shape_.empty() ? 0 : shape_[0]; }

std::size_t Tensor::row_size() const {
  return shape_.empty() ? 0 : data_.size() / shape_[0];
}

Eigen::Map<const Matrix> Tensor::as_rows() const {
  return {data_.data(), static_cast<Eigen::Index>(rows()),
          static_cast<Eigen::Index>(row_size())};
}

Eigen::Map<Matrix> Tensor::as_rows() {
  return {data_.data(), static_cast<Eigen::Index>(rows()),
          static_cast<Eigen::Index>(row_size())};
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace tcwae
