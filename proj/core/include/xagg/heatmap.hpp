#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "xagg/errors.hpp"

namespace xagg {

/// Where a heatmap came from: method, model, image, class, hyperparameters,
/// plus free-form flags (e.g. fallback warnings).
struct Provenance {
  std::string method;
  std::string model_id;
  std::int64_t image_id = -1;
  int target_class = -1;
  bool positive_only = false;
  std::map<std::string, double> params;
  std::vector<std::string> flags;
};

/// Per-pixel relevance map, the common currency between explainers,
/// aggregators, evaluators and attacks. Values may be negative depending on
/// the producing method.
struct Heatmap {
  int h = 0, w = 0;
  std::vector<double> v;
  Provenance prov;

  Heatmap() = default;
  Heatmap(int h_, int w_, std::vector<double> values);
  static Heatmap zeros(int h, int w);
  static Heatmap uniform(int h, int w);

  std::int64_t count() const { return static_cast<std::int64_t>(h) * w; }
  double at(int y, int x) const { return v[static_cast<std::int64_t>(y) * w + x]; }
  double& at(int y, int x) { return v[static_cast<std::int64_t>(y) * w + x]; }
  double sum() const;

  /// Throws ShapeError if the buffer mismatches (h,w) or holds non-finite
  /// values.
  void validate() const;
};

}  // namespace xagg
