#include "abnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "abnet/errors.hpp"

namespace abnet {

std::size_t shape_product(std::span<const std::size_t> shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != shape_product(shape_)) {
    throw ContractError("tensor value count does not match shape");
  }
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t width = size() / shape_.at(0);
  return std::span<double>(values_).subspan(r * width, width);
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t width = size() / shape_.at(0);
  return std::span<const double>(values_).subspan(r * width, width);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) noexcept { std::fill(values_.begin(), values_.end(), v); }

}  // namespace abnet
