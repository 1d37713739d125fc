#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xdg {

using Shape = std::vector<std::size_t>;

/// Thrown when operand shapes do not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown for out-of-range arguments (probabilities, class ids, ...).
class ValueError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles. Value semantics; copying copies data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  /// Scalar value of a single-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  void fill(double v);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Rows [begin, end) along the leading dimension.
Tensor slice0(const Tensor& t, std::size_t begin, std::size_t end);
/// Gathers the given leading-dimension rows in order.
Tensor take0(const Tensor& t, std::span<const std::size_t> rows);
/// Concatenates along the leading dimension; trailing dimensions must agree.
Tensor concat0(std::span<const Tensor> parts);

double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

}  // namespace xdg
