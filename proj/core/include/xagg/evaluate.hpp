#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xagg/graph.hpp"
#include "xagg/heatmap.hpp"
#include "xagg/segment.hpp"

namespace xagg::eval {

/// Class-probability ratios along the removal schedule; p_hat[0] == 1.
struct DegradationCurve {
  std::vector<double> p_hat;                // length steps+1, clipped to [0,1]
  std::vector<std::uint32_t> removal_order;  // segments, most relevant first
  std::string baseline;
};

/// Area over the degradation curve on a 0..100 scale.
struct IrofScore {
  double score = 0;
  DegradationCurve curve;
};

/// Replaces segments with baseline_value in decreasing order of mean
/// relevance (ties by lowest label) and integrates the probability drop of
/// the target class (default: the predicted class). steps < 0 removes every
/// segment. Throws ContractError when the original class probability is
/// zero (the curve is undefined; callers skip such images).
IrofScore irof(const Graph& g, const ImageTensor& x, const Heatmap& e,
               const seg::SegmentMap& segments, double baseline_value,
               int steps = -1, int target_class = -1);

struct SensitivityNResult {
  struct Row {
    int n = 0;
    double mean_pcc = 0;
    int n_excluded = 0;  // images with an undefined correlation at this n
  };
  std::vector<Row> rows;
  int subsets_per_n = 0;
  std::uint64_t seed = 0;
};

/// For each n: samples pixel subsets, zeroes them out, and correlates the
/// output decrease of the predicted class with the summed relevance.
/// use_logit selects the pre-softmax decrease (default) or the softmax one.
SensitivityNResult sensitivity_n(const Graph& g,
                                 std::span<const ImageTensor> images,
                                 std::span<const Heatmap> heatmaps,
                                 const std::vector<int>& n_grid,
                                 int subsets_per_n, std::uint64_t seed,
                                 bool use_logit = true,
                                 double removed_value = 0.0);

/// Logarithmically spaced integer grid (inclusive ends, deduplicated).
std::vector<int> log_spaced_grid(int lo, int hi, int points);

/// 3x3 Sobel gradient magnitude, normalized to sum one. Model-independent.
Heatmap sobel_baseline(const ImageTensor& x);

/// I.i.d. uniform values normalized to sum one.
Heatmap random_baseline(int h, int w, std::uint64_t seed);

enum class Metric : std::uint8_t { MSE, PCC, TopK };

struct SimilarityMetric {
  Metric kind = Metric::PCC;
  double topk_fraction = 0.10;
};

/// MSE compares sum-normalized maps; PCC correlates raw values (NaN when
/// either map has zero variance); TopK intersects the k highest-relevance
/// pixel sets, k = ceil(fraction * pixels), ties by lowest pixel index.
double similarity(const Heatmap& a, const Heatmap& b, const SimilarityMetric& m);

/// m(target, adversarial) - m(target, original); 0 means the attack changed
/// nothing.
double metric_diff(const Heatmap& target, const Heatmap& adversarial,
                   const Heatmap& original, const SimilarityMetric& m);

/// Human-annotation mask in [0,1] per pixel.
struct AnnotationMask {
  int h = 0, w = 0;
  std::vector<double> v;
  void validate() const;
};

/// sum(A .* E) / (|A| |E|); 0 if either norm vanishes. E must be nonnegative.
double cosine_alignment(const Heatmap& e, const AnnotationMask& a);

}  // namespace xagg::eval
