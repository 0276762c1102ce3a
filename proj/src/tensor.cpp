#include "refiner/tensor.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace refiner {

namespace {
std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

void check_shape(const std::vector<std::size_t>& shape) {
  if (shape.empty() || shape.size() > 3) {
    throw std::invalid_argument("tensor rank must be 1..3");
  }
  for (std::size_t s : shape) {
    if (s == 0) throw std::invalid_argument("tensor extents must be positive");
  }
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape_in) : shape(std::move(shape_in)) {
  check_shape(shape);
  data.assign(product(shape), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape_in, std::vector<double> data_in)
    : shape(std::move(shape_in)), data(std::move(data_in)) {
  check_shape(shape);
  if (product(shape) != data.size()) {
    throw std::invalid_argument("tensor data length does not match shape");
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  return Tensor(std::move(shape));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = value;
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw std::invalid_argument("rows(): tensor is not rank-2");
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw std::invalid_argument("cols(): tensor is not rank-2");
  return shape[1];
}

double& Tensor::operator()(std::size_t i, std::size_t j) {
  return data[i * shape[1] + j];
}

double Tensor::operator()(std::size_t i, std::size_t j) const {
  return data[i * shape[1] + j];
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace refiner
