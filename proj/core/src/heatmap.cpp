#include "xagg/heatmap.hpp"

#include <cmath>
#include <numeric>

namespace xagg {

Heatmap::Heatmap(int h_, int w_, std::vector<double> values)
    : h(h_), w(w_), v(std::move(values)) {
  if (static_cast<std::int64_t>(v.size()) != count())
    throw ShapeError("heatmap data length does not match (h,w)");
}

Heatmap Heatmap::zeros(int h, int w) {
  return Heatmap(h, w, std::vector<double>(static_cast<std::size_t>(h) * w, 0.0));
}

Heatmap Heatmap::uniform(int h, int w) {
  const double u = 1.0 / (static_cast<double>(h) * w);
  return Heatmap(h, w, std::vector<double>(static_cast<std::size_t>(h) * w, u));
}

double Heatmap::sum() const { return std::accumulate(v.begin(), v.end(), 0.0); }

void Heatmap::validate() const {
  if (h <= 0 || w <= 0) throw ShapeError("heatmap shape must be positive");
  if (static_cast<std::int64_t>(v.size()) != count())
    throw ShapeError("heatmap data length does not match (h,w)");
  for (double x : v) {
    if (!std::isfinite(x)) throw ShapeError("heatmap contains non-finite values");
  }
}

}  // namespace xagg
