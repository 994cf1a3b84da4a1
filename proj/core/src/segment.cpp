#include "xagg/segment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <queue>

namespace xagg::seg {

void SegmentMap::validate() const {
  if (h <= 0 || w <= 0) throw ShapeError("segment map shape must be positive");
  if (labels.size() != static_cast<std::size_t>(h) * w)
    throw ShapeError("segment map label buffer does not match shape");
  if (count == 0) throw ShapeError("segment map must have at least one segment");
  std::vector<std::int64_t> seen(count, 0);
  for (std::uint32_t l : labels) {
    if (l >= count) throw ShapeError("segment label out of range");
    ++seen[l];
  }
  for (std::uint32_t s = 0; s < count; ++s) {
    if (seen[s] == 0)
      throw ShapeError("segment labels are not contiguous (missing " +
                       std::to_string(s) + ")");
  }
  // 4-connectivity: one BFS per segment from its first pixel.
  std::vector<std::int64_t> first(count, -1);
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(labels.size()); ++i) {
    if (first[labels[i]] < 0) first[labels[i]] = i;
  }
  std::vector<std::uint8_t> visited(labels.size(), 0);
  for (std::uint32_t s = 0; s < count; ++s) {
    std::queue<std::int64_t> q;
    q.push(first[s]);
    visited[first[s]] = 1;
    std::int64_t reached = 0;
    while (!q.empty()) {
      const std::int64_t i = q.front();
      q.pop();
      ++reached;
      const int y = static_cast<int>(i / w), x = static_cast<int>(i % w);
      const int dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const int ny = y + dy[k], nx = x + dx[k];
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        const std::int64_t j = static_cast<std::int64_t>(ny) * w + nx;
        if (!visited[j] && labels[j] == s) {
          visited[j] = 1;
          q.push(j);
        }
      }
    }
    if (reached != seen[s])
      throw ShapeError("segment " + std::to_string(s) + " is not 4-connected");
  }
}

namespace {

/// Relabels to contiguous ids in row-major first-occurrence order and merges
/// disconnected fragments into the largest 4-adjacent segment.
SegmentMap enforce_connectivity(int h, int w, const std::vector<std::uint32_t>& raw) {
  const std::int64_t n = static_cast<std::int64_t>(h) * w;
  // Connected components of the raw labeling.
  std::vector<std::int32_t> comp(n, -1);
  std::vector<std::int64_t> comp_size;
  std::vector<std::uint32_t> comp_label;
  for (std::int64_t i = 0; i < n; ++i) {
    if (comp[i] >= 0) continue;
    const std::int32_t id = static_cast<std::int32_t>(comp_size.size());
    std::queue<std::int64_t> q;
    q.push(i);
    comp[i] = id;
    std::int64_t size = 0;
    while (!q.empty()) {
      const std::int64_t p = q.front();
      q.pop();
      ++size;
      const int y = static_cast<int>(p / w), x = static_cast<int>(p % w);
      const int dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const int ny = y + dy[k], nx = x + dx[k];
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        const std::int64_t jp = static_cast<std::int64_t>(ny) * w + nx;
        if (comp[jp] < 0 && raw[jp] == raw[i]) {
          comp[jp] = id;
          q.push(jp);
        }
      }
    }
    comp_size.push_back(size);
    comp_label.push_back(raw[i]);
  }

  // Keep the largest component per raw label; everything else is an orphan.
  std::map<std::uint32_t, std::int32_t> main_comp;
  for (std::size_t c = 0; c < comp_size.size(); ++c) {
    auto it = main_comp.find(comp_label[c]);
    if (it == main_comp.end() || comp_size[c] > comp_size[it->second])
      main_comp[comp_label[c]] = static_cast<std::int32_t>(c);
  }
  std::vector<std::uint8_t> is_orphan(comp_size.size(), 0);
  for (std::size_t c = 0; c < comp_size.size(); ++c)
    is_orphan[c] = main_comp[comp_label[c]] != static_cast<std::int32_t>(c);

  // Merge orphans into the largest adjacent non-orphan component; iterate
  // until stable (orphan chains resolve in a couple of rounds).
  std::vector<std::int32_t> merged(comp_size.size());
  for (std::size_t c = 0; c < comp_size.size(); ++c)
    merged[c] = static_cast<std::int32_t>(c);
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t c = 0; c < comp_size.size(); ++c) {
      if (!is_orphan[c]) continue;
      std::int32_t best = -1;
      std::int64_t best_size = -1;
      for (std::int64_t i = 0; i < n; ++i) {
        if (merged[comp[i]] != static_cast<std::int32_t>(c)) continue;
        const int y = static_cast<int>(i / w), x = static_cast<int>(i % w);
        const int dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int ny = y + dy[k], nx = x + dx[k];
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const std::int32_t nc = merged[comp[static_cast<std::int64_t>(ny) * w + nx]];
          if (nc == static_cast<std::int32_t>(c) || is_orphan[nc]) continue;
          if (comp_size[nc] > best_size) {
            best_size = comp_size[nc];
            best = nc;
          }
        }
      }
      if (best >= 0) {
        merged[c] = best;
        comp_size[best] += comp_size[c];
        is_orphan[c] = 0;
        changed = true;
      }
    }
  }

  SegmentMap out;
  out.h = h;
  out.w = w;
  out.labels.assign(n, 0);
  std::map<std::int32_t, std::uint32_t> relabel;
  for (std::int64_t i = 0; i < n; ++i) {
    std::int32_t c = merged[comp[i]];
    while (merged[c] != c) c = merged[c];  // follow merge chains
    auto [it, inserted] = relabel.try_emplace(c, static_cast<std::uint32_t>(relabel.size()));
    out.labels[i] = it->second;
  }
  out.count = static_cast<std::uint32_t>(relabel.size());
  return out;
}

}  // namespace

SegmentMap slic(const ImageTensor& x, int n_segments, double compactness,
                int max_iters, std::uint64_t seed) {
  (void)seed;  // the pipeline is fully deterministic
  x.validate();
  if (x.shape.c != 1) throw ShapeError("slic expects a single-channel image");
  const int h = x.shape.h, w = x.shape.w;
  const std::int64_t n = static_cast<std::int64_t>(h) * w;
  if (n_segments < 1 || n_segments > n)
    throw ShapeError("n_segments must be in [1, pixel count]");
  if (n_segments == 1) {
    SegmentMap out;
    out.h = h;
    out.w = w;
    out.count = 1;
    out.labels.assign(n, 0);
    return out;
  }

  // Regular grid initialization.
  const double step = std::sqrt(static_cast<double>(n) / n_segments);
  struct Center {
    double val, y, x;
  };
  std::vector<Center> centers;
  const int grid_y = std::max(1, static_cast<int>(std::round(h / step)));
  const int grid_x = std::max(1, static_cast<int>(std::round(w / step)));
  for (int gy = 0; gy < grid_y; ++gy) {
    for (int gx = 0; gx < grid_x; ++gx) {
      const double cy = (gy + 0.5) * h / grid_y;
      const double cx = (gx + 0.5) * w / grid_x;
      const int iy = std::min(h - 1, static_cast<int>(cy));
      const int ix = std::min(w - 1, static_cast<int>(cx));
      centers.push_back({x.at(0, iy, ix), cy, cx});
    }
  }

  // Distance: intensity term plus compactness-weighted spatial term,
  // spatial offsets normalized by the grid interval.
  const double spatial_scale = compactness / step;
  std::vector<std::uint32_t> labels(n, 0);
  std::vector<double> best_d(n);
  for (int iter = 0; iter < max_iters; ++iter) {
    std::fill(best_d.begin(), best_d.end(), std::numeric_limits<double>::infinity());
    for (std::size_t ci = 0; ci < centers.size(); ++ci) {
      const Center& c = centers[ci];
      const int y0 = std::max(0, static_cast<int>(c.y - 2 * step));
      const int y1 = std::min(h - 1, static_cast<int>(c.y + 2 * step));
      const int x0 = std::max(0, static_cast<int>(c.x - 2 * step));
      const int x1 = std::min(w - 1, static_cast<int>(c.x + 2 * step));
      for (int y = y0; y <= y1; ++y) {
        for (int xx = x0; xx <= x1; ++xx) {
          const std::int64_t i = static_cast<std::int64_t>(y) * w + xx;
          const double dv = x.v[i] - c.val;
          const double dy = (y - c.y) * spatial_scale;
          const double dx = (xx - c.x) * spatial_scale;
          const double d = dv * dv + dy * dy + dx * dx;
          if (d < best_d[i]) {
            best_d[i] = d;
            labels[i] = static_cast<std::uint32_t>(ci);
          }
        }
      }
    }
    // Some pixels can fall outside every search window for skewed aspect
    // ratios; assign them to the nearest center outright.
    for (std::int64_t i = 0; i < n; ++i) {
      if (std::isinf(best_d[i])) {
        const int y = static_cast<int>(i / w), xx = static_cast<int>(i % w);
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t ci = 0; ci < centers.size(); ++ci) {
          const double dy = y - centers[ci].y, dx = xx - centers[ci].x;
          const double d = dy * dy + dx * dx;
          if (d < best) {
            best = d;
            labels[i] = static_cast<std::uint32_t>(ci);
          }
        }
      }
    }
    // Update centers.
    std::vector<double> sum_v(centers.size(), 0), sum_y(centers.size(), 0),
        sum_x(centers.size(), 0);
    std::vector<std::int64_t> cnt(centers.size(), 0);
    for (std::int64_t i = 0; i < n; ++i) {
      const std::uint32_t l = labels[i];
      sum_v[l] += x.v[i];
      sum_y[l] += static_cast<double>(i / w);
      sum_x[l] += static_cast<double>(i % w);
      ++cnt[l];
    }
    for (std::size_t ci = 0; ci < centers.size(); ++ci) {
      if (cnt[ci] == 0) continue;  // empty cluster keeps its position
      centers[ci] = {sum_v[ci] / cnt[ci], sum_y[ci] / cnt[ci], sum_x[ci] / cnt[ci]};
    }
  }
  return enforce_connectivity(h, w, labels);
}

SegmentMap grid_segments(int h, int w, int cell) {
  if (h <= 0 || w <= 0) throw ShapeError("grid shape must be positive");
  if (cell < 1) throw ShapeError("grid cell must be >= 1");
  const int gy = (h + cell - 1) / cell;
  const int gx = (w + cell - 1) / cell;
  SegmentMap out;
  out.h = h;
  out.w = w;
  out.count = static_cast<std::uint32_t>(gy) * gx;
  out.labels.assign(static_cast<std::size_t>(h) * w, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out.labels[static_cast<std::int64_t>(y) * w + x] =
          static_cast<std::uint32_t>((y / cell) * gx + (x / cell));
    }
  }
  return out;
}

}  // namespace xagg::seg
