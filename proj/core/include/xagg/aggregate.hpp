#pragma once

#include <utility>
#include <vector>

#include "xagg/heatmap.hpp"

namespace xagg::agg {

/// J >= 2 heatmaps of identical shape, each normalized to sum one.
struct HeatmapStack {
  std::vector<Heatmap> maps;

  int methods() const { return static_cast<int>(maps.size()); }
  /// Throws ShapeError/ContractError on any stack invariant violation.
  void validate() const;
};

/// Stabilizer for the variance-weighted aggregate, together with the rule it
/// was derived by (multiplier times the dataset-mean sigma).
struct AggVarConfig {
  double epsilon = 0.0;
  double multiplier = 10.0;
};

/// Pixelwise arithmetic mean of the stack; sums to one.
Heatmap agg_mean(const HeatmapStack& stack);

/// Pixelwise mean of E_j / (sigma + epsilon), where sigma is the population
/// standard deviation across methods at that pixel; re-normalized to sum one.
Heatmap agg_var(const HeatmapStack& stack, const AggVarConfig& cfg);

/// Per-pixel population standard deviation across the stack's methods.
Heatmap sigma_map(const HeatmapStack& stack);

/// epsilon = multiplier * global mean of all provided sigma values
/// (default multiplier 10).
AggVarConfig epsilon_from_dataset(const std::vector<Heatmap>& sigma_maps,
                                  double multiplier = 10.0);

/// Known ground truth plus noisy observations of it; drives the
/// error-decomposition checks.
struct SyntheticTruthCase {
  Heatmap truth;
  std::vector<Heatmap> observations;
};

/// Squared-error bookkeeping over a case collection. The invariant
/// mean_mse = aggregate_mse + variance_term (to 1e-10) is what the
/// aggregation argument rests on.
struct DecompositionReport {
  std::vector<double> per_method_mse;
  double mean_mse = 0;
  double aggregate_mse = 0;
  double variance_term = 0;
};

DecompositionReport decompose_mse(const std::vector<SyntheticTruthCase>& cases);

/// Stable ordering of all 2-element method index pairs (j < k).
std::vector<std::pair<int, int>> method_pairs(int methods);

/// All two-method stacks for one image's per-method maps, in method_pairs
/// order.
std::vector<HeatmapStack> pairwise_stacks(const std::vector<Heatmap>& maps);

}  // namespace xagg::agg
