#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "xagg/deriv.hpp"
#include "xagg/explain.hpp"
#include "xagg/graph.hpp"
#include "xagg/heatmap.hpp"

namespace xagg::attack {

/// What the attacker optimizes the explanation of. Sampling-based methods
/// (IG, SG) are evaluated against attacks but never attacked themselves.
enum class AttackedExplainer : std::uint8_t { SM, GB, LRP, AggMean };

const char* attacked_name(AttackedExplainer a);
std::vector<explain::Method> attack_members(AttackedExplainer a);

/// Reproduce another input's explanation.
struct TargetExplanation {
  Heatmap target;  // normalized; same spatial shape as the input
};

/// Drive the relevance inside a pixel mask to zero.
struct BlankRegion {
  int h = 0, w = 0;
  std::vector<std::uint8_t> mask;  // 1 = inside the blanked region

  static BlankRegion centered_square(int h, int w);  // area = 1/4 of image
  std::int64_t active() const;
};

using AttackObjective = std::variant<TargetExplanation, BlankRegion>;

enum class BetaGrowth : std::uint8_t { Geometric, Linear, Constant };

struct AttackConfig {
  AttackedExplainer explainer = AttackedExplainer::SM;
  double lr = 1e-3;
  int iterations = 1500;  // CI profile uses 300
  double beta_start = 10.0;
  double beta_end = 800.0;
  BetaGrowth growth = BetaGrowth::Geometric;
  double w_explanation = 1.0;
  double w_output = -1.0;  // < 0: balanced against the explanation term on a
                           // probe step, so both terms start at equal scale
  double clamp_lo = 0.0, clamp_hi = 1.0;
  /// Perturbation budget: per-pixel mean squared deviation from the clean
  /// input. Steps project back onto the ball, so every run spends the same
  /// budget and robustness comparisons stay fair. <= 0 disables the budget.
  double max_input_mse = 9e-3;
  std::uint64_t seed = 0;
  /// Stabilizer for relevance maps inside attack runs. A fixed moderate
  /// value keeps the +-epsilon denominator jumps at zero pre-activations
  /// small enough for gradient descent to traverse; with the relative
  /// explain-side default the objective stalls at this input scale.
  LrpEpsilon lrp_eps{LrpEpsilon::Mode::Fixed, 0.05};

  void validate() const;
};

struct AttackResult {
  ImageTensor adversarial;
  std::vector<double> loss_trace;  // length iterations+1
  Heatmap explanation_original;    // attacked explainer, ReLU graph
  Heatmap explanation_adversarial;
  Heatmap explanation_target;  // objective rendering (mask for blank runs)
  double mse_diff = 0, pcc_diff = 0, topk_diff = 0;
  double input_mse = 0;  // ||x' - x||^2 / pixels
  bool label_preserved = true;
  double w_output_used = 0;
};

/// Gradient descent on the input: minimizes
///   w_e * ||E~(x') - target||^2 + w_out * ||logits(x') - logits(x)||^2
/// where E~ is the positively-normalized explanation computed on the
/// SoftPlus-substituted graph with scheduled beta; each step clamps to the
/// input range. Reported explanations are computed on the original ReLU
/// graph. Non-finite losses halve the step and retry (<= 5 times).
AttackResult attack(const Graph& relu_graph, const ImageTensor& x,
                    const AttackObjective& objective, const AttackConfig& cfg);

/// The attacked explainer's normalized explanation of x on the ReLU graph,
/// at x's own predicted class (used to build target maps).
Heatmap attacked_explanation(const Graph& relu_graph, const ImageTensor& x,
                             const AttackConfig& cfg);

struct BlankAttackResult {
  AttackResult result;
  double start_fraction = 0;  // in-mask relevance share before the attack
  double end_fraction = 0;
  double preserved = 1.0;  // end / start
};

BlankAttackResult attack_blank_region(const Graph& relu_graph, const ImageTensor& x,
                                      const BlankRegion& region,
                                      const AttackConfig& cfg);

/// One (attacked, evaluated, image) observation; all three metrics.
struct TransferRecord {
  std::int64_t image_id = -1;
  AttackedExplainer attacked{};
  explain::Method evaluated{};
  double mse_before = 0, mse_after = 0;
  double pcc_before = 0, pcc_after = 0;
  double topk_before = 0, topk_after = 0;
  double input_mse = 0;
  bool label_preserved = true;

  double mse_diff() const { return mse_after - mse_before; }
  double pcc_diff() const { return pcc_after - pcc_before; }
  double topk_diff() const { return topk_after - topk_before; }
};

struct TransferResult {
  std::vector<AttackedExplainer> attacked;
  std::vector<explain::Method> evaluated;
  std::vector<std::vector<double>> mean_pcc_diff;  // [attacked][evaluated]
  std::vector<std::vector<double>> mean_topk_diff;
  std::vector<std::vector<double>> mean_mse_diff;
  std::vector<TransferRecord> records;
};

/// For every attacked method A and image i, attacks toward A's explanation
/// of the paired target image (the next image in the list), then evaluates
/// every method B on the same adversarial input. Records feed the
/// transferability scatter plots.
TransferResult transfer_matrix(const Graph& relu_graph,
                               std::span<const ImageTensor> images,
                               const std::vector<AttackedExplainer>& attacked_set,
                               const std::vector<explain::Method>& evaluated_set,
                               const AttackConfig& cfg);

}  // namespace xagg::attack
