#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cplab {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense row-major array of doubles.
class NdArray {
 public:
  NdArray() = default;
  explicit NdArray(Shape shape, double fill = 0.0);
  NdArray(Shape shape, std::vector<double> values);

  static NdArray scalar(double v) { return NdArray(Shape{1}, std::vector<double>{v}); }
  static NdArray from(std::initializer_list<double> values);
  static NdArray matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  // Rows/cols of the array viewed as 2-D: leading dims folded into rows.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return values_; }
  std::span<const double> data() const { return values_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double item() const;

  NdArray reshaped(Shape shape) const;
  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const NdArray& a, const NdArray& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  Shape shape_;
  std::vector<double> values_;
};

}  // namespace cplab
