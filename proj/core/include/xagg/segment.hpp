#pragma once

#include <cstdint>
#include <vector>

#include "xagg/tensor.hpp"

namespace xagg::seg {

/// Partition of an image into connected segments: one label per pixel,
/// labels contiguous in 0..count-1, every segment 4-connected.
struct SegmentMap {
  int h = 0, w = 0;
  std::uint32_t count = 0;
  std::vector<std::uint32_t> labels;  // row-major

  std::uint32_t at(int y, int x) const {
    return labels[static_cast<std::int64_t>(y) * w + x];
  }

  /// Throws ShapeError unless all invariants hold (full cover, contiguous
  /// labels, 4-connectivity of every segment).
  void validate() const;
};

/// SLIC superpixels on a single-channel image: k-means in (scaled intensity,
/// y, x) space seeded from a regular grid, followed by connectivity
/// enforcement (orphan regions merged into the largest adjacent segment).
/// Deterministic; the seed parameter is accepted for interface stability.
SegmentMap slic(const ImageTensor& x, int n_segments, double compactness = 0.1,
                int max_iters = 10, std::uint64_t seed = 0);

/// Square tiling with edge cells truncated.
SegmentMap grid_segments(int h, int w, int cell);

}  // namespace xagg::seg
