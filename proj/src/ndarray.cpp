#include "cplab/ndarray.hpp"

#include <cmath>
#include <sstream>

namespace cplab {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

static void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("empty shape");
  for (auto d : shape)
    if (d == 0) throw ShapeError("zero dimension in shape " + shape_str(shape));
}

NdArray::NdArray(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  values_.assign(shape_size(shape_), fill);
}

NdArray::NdArray(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_shape(shape_);
  if (shape_size(shape_) != values_.size())
    throw ShapeError("shape " + shape_str(shape_) + " does not match " +
                     std::to_string(values_.size()) + " values");
}

NdArray NdArray::from(std::initializer_list<double> values) {
  return NdArray(Shape{values.size()}, std::vector<double>(values));
}

NdArray NdArray::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return NdArray(Shape{rows, cols}, std::vector<double>(values));
}

std::size_t NdArray::rows() const {
  if (shape_.size() <= 1) return 1;
  return values_.size() / shape_.back();
}

std::size_t NdArray::cols() const { return shape_.empty() ? 0 : shape_.back(); }

double NdArray::item() const {
  if (values_.size() != 1) throw ShapeError("item() on array of shape " + shape_str(shape_));
  return values_[0];
}

NdArray NdArray::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size())
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return NdArray(std::move(shape), values_);
}

void NdArray::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool NdArray::all_finite() const {
  for (double v : values_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace cplab
