#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace refiner {

// Dense row-major tensor of 64-bit floats, rank 1 to 3.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape_in);
  Tensor(std::vector<std::size_t> shape_in, std::vector<double> data_in);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor scalar(double value);
  static Tensor row(std::vector<double> values);  // 1 x n
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values);

  std::size_t rank() const { return shape.size(); }
  std::size_t size() const { return data.size(); }

  std::size_t rows() const;  // rank-2 only
  std::size_t cols() const;

  double& operator()(std::size_t i) { return data[i]; }
  double operator()(std::size_t i) const { return data[i]; }
  double& operator()(std::size_t i, std::size_t j);
  double operator()(std::size_t i, std::size_t j) const;

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  std::string shape_str() const;
};

}  // namespace refiner
