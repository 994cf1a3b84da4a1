#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "xagg/errors.hpp"

namespace xagg {

/// Dense row-major tensor of 64-bit floats. Rank and shape are dynamic; the
/// layer implementations index into the flat buffer directly.
struct Tensor {
  std::vector<int> dims;
  std::vector<double> v;

  Tensor() = default;
  Tensor(std::vector<int> dims_, std::vector<double> data);
  static Tensor zeros(std::vector<int> dims_);

  std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
  bool same_shape(const Tensor& o) const { return dims == o.dims; }

  double* data() { return v.data(); }
  const double* data() const { return v.data(); }
};

std::int64_t shape_count(const std::vector<int>& dims);

/// (channels, height, width) of an image-shaped value.
struct Shape3 {
  int c = 0, h = 0, w = 0;
  bool operator==(const Shape3&) const = default;
  std::int64_t count() const {
    return static_cast<std::int64_t>(c) * h * w;
  }
};

/// Dense image holding an input x, a target, or an adversarial input.
/// Values are row-major per channel. An optional inclusive value range
/// documents (and lets callers enforce) the model's input domain.
struct ImageTensor {
  Shape3 shape;
  std::vector<double> v;
  std::optional<std::pair<double, double>> value_range;

  ImageTensor() = default;
  ImageTensor(Shape3 s, std::vector<double> data,
              std::optional<std::pair<double, double>> range = std::nullopt);
  static ImageTensor zeros(Shape3 s);

  double at(int c, int y, int x) const {
    return v[(static_cast<std::int64_t>(c) * shape.h + y) * shape.w + x];
  }
  double& at(int c, int y, int x) {
    return v[(static_cast<std::int64_t>(c) * shape.h + y) * shape.w + x];
  }

  /// Throws ShapeError if the buffer does not match the shape, any value is
  /// non-finite, or a declared range is violated.
  void validate() const;
};

}  // namespace xagg
