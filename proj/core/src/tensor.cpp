#include "xagg/tensor.hpp"

#include <cmath>

namespace xagg {

std::int64_t shape_count(const std::vector<int>& dims) {
  std::int64_t n = 1;
  for (int d : dims) n *= d;
  return n;
}

Tensor::Tensor(std::vector<int> dims_, std::vector<double> data)
    : dims(std::move(dims_)), v(std::move(data)) {
  if (shape_count(dims) != static_cast<std::int64_t>(v.size()))
    throw ShapeError("tensor data length does not match shape");
}

Tensor Tensor::zeros(std::vector<int> dims_) {
  Tensor t;
  t.dims = std::move(dims_);
  t.v.assign(shape_count(t.dims), 0.0);
  return t;
}

ImageTensor::ImageTensor(Shape3 s, std::vector<double> data,
                         std::optional<std::pair<double, double>> range)
    : shape(s), v(std::move(data)), value_range(range) {
  if (shape.count() != static_cast<std::int64_t>(v.size()))
    throw ShapeError("image data length does not match (c,h,w) shape");
}

ImageTensor ImageTensor::zeros(Shape3 s) {
  ImageTensor t;
  t.shape = s;
  t.v.assign(s.count(), 0.0);
  return t;
}

void ImageTensor::validate() const {
  if (shape.c <= 0 || shape.h <= 0 || shape.w <= 0)
    throw ShapeError("image shape must be positive in every dimension");
  if (shape.count() != static_cast<std::int64_t>(v.size()))
    throw ShapeError("image data length does not match (c,h,w) shape");
  for (double x : v) {
    if (!std::isfinite(x)) throw ShapeError("image contains non-finite values");
  }
  if (value_range) {
    for (double x : v) {
      if (x < value_range->first || x > value_range->second)
        throw ShapeError("image value outside declared range");
    }
  }
}

}  // namespace xagg
