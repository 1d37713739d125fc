#include "xdg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace xdg {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != data_.size()) {
    throw ShapeError("shape " + shape_str(shape_) + " does not match buffer of " +
                     std::to_string(data_.size()) + " values");
  }
}

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= shape_.size()) {
    throw ShapeError("dimension " + std::to_string(i) + " out of range for " + shape_str(shape_));
  }
  return shape_[i];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (shape_ != other.shape_) {
    throw ShapeError("+= shape mismatch " + shape_str(shape_) + " vs " + shape_str(other.shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

Tensor slice0(const Tensor& t, std::size_t begin, std::size_t end) {
  if (t.rank() == 0 || begin >= end || end > t.dim(0)) {
    throw ShapeError("slice0 [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                     shape_str(t.shape()));
  }
  const std::size_t row = t.size() / t.dim(0);
  Shape s = t.shape();
  s[0] = end - begin;
  std::vector<double> d(t.data().begin() + static_cast<std::ptrdiff_t>(begin * row),
                        t.data().begin() + static_cast<std::ptrdiff_t>(end * row));
  return Tensor(std::move(s), std::move(d));
}

Tensor take0(const Tensor& t, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ShapeError("take0 with no rows");
  const std::size_t row = t.size() / t.dim(0);
  Shape s = t.shape();
  s[0] = rows.size();
  std::vector<double> d;
  d.reserve(rows.size() * row);
  for (auto r : rows) {
    if (r >= t.dim(0)) throw ShapeError("take0 row " + std::to_string(r) + " out of range");
    auto first = t.data().begin() + static_cast<std::ptrdiff_t>(r * row);
    d.insert(d.end(), first, first + static_cast<std::ptrdiff_t>(row));
  }
  return Tensor(std::move(s), std::move(d));
}

Tensor concat0(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat0 of nothing");
  Shape s = parts[0].shape();
  std::size_t rows = 0;
  std::vector<double> d;
  for (const auto& p : parts) {
    if (p.rank() != s.size() || !std::equal(s.begin() + 1, s.end(), p.shape().begin() + 1)) {
      throw ShapeError("concat0 trailing shape mismatch " + shape_str(s) + " vs " + shape_str(p.shape()));
    }
    rows += p.dim(0);
    d.insert(d.end(), p.data().begin(), p.data().end());
  }
  s[0] = rows;
  return Tensor(std::move(s), std::move(d));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace xdg
