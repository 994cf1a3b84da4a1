#include "xagg/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "xagg/explain.hpp"
#include "xagg/rng.hpp"

namespace xagg::eval {

namespace {

int predicted_class(const Graph& g, const ImageTensor& x) {
  ForwardResult r = forward(g, x);
  int best = 0;
  for (std::size_t k = 1; k < r.logits.size(); ++k) {
    if (r.logits[k] > r.logits[best]) best = static_cast<int>(k);
  }
  return best;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

/// Indices of the k largest values, ties resolved toward lower indices.
std::vector<std::int64_t> topk_indices(std::span<const double> v, std::int64_t k) {
  std::vector<std::int64_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::int64_t i, std::int64_t j) {
    if (v[i] != v[j]) return v[i] > v[j];
    return i < j;
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

}  // namespace

IrofScore irof(const Graph& g, const ImageTensor& x, const Heatmap& e,
               const seg::SegmentMap& segments, double baseline_value, int steps,
               int target_class) {
  e.validate();
  if (e.h != x.shape.h || e.w != x.shape.w)
    throw ShapeError("heatmap shape does not match image");
  if (segments.h != x.shape.h || segments.w != x.shape.w)
    throw ShapeError("segment map does not match image");
  const int S = static_cast<int>(segments.count);
  if (steps < 0) steps = S;
  if (steps > S) throw ContractError("irof steps exceed segment count");

  if (target_class < 0) target_class = predicted_class(g, x);
  const double p0 = forward(g, x).probs[target_class];
  if (p0 <= 0.0)
    throw ContractError("irof undefined: original class probability is zero");

  // Rank segments by mean relevance, descending, ties by lowest label.
  std::vector<double> rel_sum(S, 0.0);
  std::vector<std::int64_t> area(S, 0);
  for (std::int64_t i = 0; i < e.count(); ++i) {
    rel_sum[segments.labels[i]] += e.v[i];
    ++area[segments.labels[i]];
  }
  std::vector<std::uint32_t> order(S);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    const double ma = rel_sum[a] / area[a], mb = rel_sum[b] / area[b];
    if (ma != mb) return ma > mb;
    return a < b;
  });

  DegradationCurve curve;
  curve.removal_order.assign(order.begin(), order.begin() + steps);
  curve.baseline = "value:" + std::to_string(baseline_value);
  curve.p_hat.reserve(steps + 1);
  curve.p_hat.push_back(1.0);

  ImageTensor degraded = x;
  if (degraded.value_range &&
      (baseline_value < degraded.value_range->first ||
       baseline_value > degraded.value_range->second)) {
    degraded.value_range.reset();
  }
  const std::int64_t plane = static_cast<std::int64_t>(x.shape.h) * x.shape.w;
  for (int t = 0; t < steps; ++t) {
    const std::uint32_t seg_id = order[t];
    for (std::int64_t i = 0; i < plane; ++i) {
      if (segments.labels[i] == seg_id) {
        for (int c = 0; c < x.shape.c; ++c) degraded.v[c * plane + i] = baseline_value;
      }
    }
    const double p = forward(g, degraded).probs[target_class];
    curve.p_hat.push_back(std::clamp(p / p0, 0.0, 1.0));
  }

  IrofScore out;
  double sum = 0;
  for (double p : curve.p_hat) sum += 1.0 - p;
  out.score = 100.0 * sum / static_cast<double>(steps + 1);
  out.curve = std::move(curve);
  return out;
}

SensitivityNResult sensitivity_n(const Graph& g,
                                 std::span<const ImageTensor> images,
                                 std::span<const Heatmap> heatmaps,
                                 const std::vector<int>& n_grid, int subsets_per_n,
                                 std::uint64_t seed, bool use_logit,
                                 double removed_value) {
  if (images.size() != heatmaps.size())
    throw ShapeError("images and heatmaps counts differ");
  if (images.empty()) throw ContractError("sensitivity_n requires >= 1 image");
  const std::int64_t px = images[0].shape.count() / images[0].shape.c;
  for (int n : n_grid) {
    if (n < 1 || n > px) throw ContractError("subset size outside [1, pixel count]");
  }

  SensitivityNResult result;
  result.subsets_per_n = subsets_per_n;
  result.seed = seed;
  for (std::size_t gi = 0; gi < n_grid.size(); ++gi) {
    const int n = n_grid[gi];
    double pcc_sum = 0;
    int included = 0, excluded = 0;
    for (std::size_t img = 0; img < images.size(); ++img) {
      const ImageTensor& x = images[img];
      const Heatmap& e = heatmaps[img];
      const int cls = predicted_class(g, x);
      const ForwardResult orig = forward(g, x);
      const double base = use_logit ? orig.logits[cls] : orig.probs[cls];

      RandomEngine rng(derive_seed(seed, gi, img));
      const std::int64_t plane = static_cast<std::int64_t>(x.shape.h) * x.shape.w;
      std::vector<std::int64_t> pool(plane);
      std::iota(pool.begin(), pool.end(), 0);
      std::vector<double> decrease(subsets_per_n), rel(subsets_per_n);
      ImageTensor masked = x;
      for (int s = 0; s < subsets_per_n; ++s) {
        // Partial Fisher-Yates: the first n entries become the subset.
        for (int j = 0; j < n; ++j) {
          std::uniform_int_distribution<std::int64_t> pick(j, plane - 1);
          std::swap(pool[j], pool[pick(rng)]);
        }
        masked.v = x.v;
        double r = 0;
        for (int j = 0; j < n; ++j) {
          const std::int64_t p = pool[j];
          for (int c = 0; c < x.shape.c; ++c) masked.v[c * plane + p] = removed_value;
          r += e.v[p];
        }
        const ForwardResult out = forward(g, masked);
        decrease[s] = base - (use_logit ? out.logits[cls] : out.probs[cls]);
        rel[s] = r;
      }
      // Degenerate subsets (e.g. removing every pixel) leave only rounding
      // noise on both sides; treat spreads below the float noise floor as
      // zero variance.
      auto spread_is_noise = [](std::span<const double> v) {
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        const double scale = std::max({std::abs(*lo), std::abs(*hi), 1.0});
        return (*hi - *lo) <= 1e-9 * scale;
      };
      const double pcc = spread_is_noise(decrease) || spread_is_noise(rel)
                             ? std::numeric_limits<double>::quiet_NaN()
                             : pearson(decrease, rel);
      if (std::isnan(pcc)) {
        ++excluded;
      } else {
        pcc_sum += pcc;
        ++included;
      }
    }
    SensitivityNResult::Row row;
    row.n = n;
    row.mean_pcc = included > 0 ? pcc_sum / included : 0.0;
    row.n_excluded = excluded;
    result.rows.push_back(row);
  }
  return result;
}

std::vector<int> log_spaced_grid(int lo, int hi, int points) {
  if (lo < 1 || hi < lo || points < 1) throw ContractError("bad log grid bounds");
  std::vector<int> grid;
  for (int i = 0; i < points; ++i) {
    const double t = points > 1 ? static_cast<double>(i) / (points - 1) : 0.0;
    const int n = static_cast<int>(std::round(
        std::exp(std::log(static_cast<double>(lo)) +
                 t * (std::log(static_cast<double>(hi)) - std::log(static_cast<double>(lo))))));
    if (grid.empty() || grid.back() != n) grid.push_back(n);
  }
  return grid;
}

Heatmap sobel_baseline(const ImageTensor& x) {
  if (x.shape.c != 1) throw ShapeError("sobel baseline expects a single channel");
  const int h = x.shape.h, w = x.shape.w;
  static const int gx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  static const int gy[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  Heatmap e = Heatmap::zeros(h, w);
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < w; ++xx) {
      double sx = 0, sy = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          // Replicated border: a constant image has zero response everywhere.
          const int yy = std::clamp(y + dy, 0, h - 1);
          const int xc = std::clamp(xx + dx, 0, w - 1);
          const double v = x.at(0, yy, xc);
          sx += gx[dy + 1][dx + 1] * v;
          sy += gy[dy + 1][dx + 1] * v;
        }
      }
      e.at(y, xx) = std::sqrt(sx * sx + sy * sy);
    }
  }
  e = explain::normalize_heatmap(e, false);
  e.prov.method = "sobel";
  return e;
}

Heatmap random_baseline(int h, int w, std::uint64_t seed) {
  RandomEngine rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Heatmap e = Heatmap::zeros(h, w);
  for (double& v : e.v) v = u(rng);
  e = explain::normalize_heatmap(e, false);
  e.prov.method = "random";
  return e;
}

double similarity(const Heatmap& a, const Heatmap& b, const SimilarityMetric& m) {
  a.validate();
  b.validate();
  if (a.h != b.h || a.w != b.w) throw ShapeError("similarity inputs differ in shape");
  switch (m.kind) {
    case Metric::MSE: {
      const Heatmap na = explain::normalize_heatmap(a, false);
      const Heatmap nb = explain::normalize_heatmap(b, false);
      double s = 0;
      for (std::int64_t i = 0; i < na.count(); ++i) {
        const double d = na.v[i] - nb.v[i];
        s += d * d;
      }
      return s / static_cast<double>(na.count());
    }
    case Metric::PCC:
      return pearson(a.v, b.v);
    case Metric::TopK: {
      if (!(m.topk_fraction > 0.0) || m.topk_fraction > 1.0)
        throw ContractError("topk fraction must be in (0,1]");
      const std::int64_t k = static_cast<std::int64_t>(
          std::ceil(m.topk_fraction * static_cast<double>(a.count())));
      std::vector<std::int64_t> ia = topk_indices(a.v, k);
      std::vector<std::int64_t> ib = topk_indices(b.v, k);
      std::sort(ia.begin(), ia.end());
      std::sort(ib.begin(), ib.end());
      std::vector<std::int64_t> inter;
      std::set_intersection(ia.begin(), ia.end(), ib.begin(), ib.end(),
                            std::back_inserter(inter));
      return static_cast<double>(inter.size()) / static_cast<double>(k);
    }
  }
  throw ContractError("unknown similarity metric");
}

double metric_diff(const Heatmap& target, const Heatmap& adversarial,
                   const Heatmap& original, const SimilarityMetric& m) {
  return similarity(target, adversarial, m) - similarity(target, original, m);
}

void AnnotationMask::validate() const {
  if (h <= 0 || w <= 0 || v.size() != static_cast<std::size_t>(h) * w)
    throw ShapeError("annotation mask shape mismatch");
  for (double x : v) {
    if (!(x >= 0.0 && x <= 1.0)) throw ShapeError("annotation values must be in [0,1]");
  }
}

double cosine_alignment(const Heatmap& e, const AnnotationMask& a) {
  e.validate();
  a.validate();
  if (e.h != a.h || e.w != a.w) throw ShapeError("annotation shape differs");
  for (double v : e.v) {
    if (v < 0) throw ContractError("cosine alignment expects a nonnegative heatmap");
  }
  double dot = 0, na = 0, ne = 0;
  for (std::int64_t i = 0; i < e.count(); ++i) {
    dot += a.v[i] * e.v[i];
    na += a.v[i] * a.v[i];
    ne += e.v[i] * e.v[i];
  }
  if (na == 0.0 || ne == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(ne));
}

}  // namespace xagg::eval
