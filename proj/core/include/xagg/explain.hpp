#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "xagg/deriv.hpp"
#include "xagg/graph.hpp"
#include "xagg/heatmap.hpp"
#include "xagg/segment.hpp"

namespace xagg::explain {

enum class Method : std::uint8_t { SM, GB, IG, SG, GC, LRP, LIME };

const char* method_name(Method m);
std::optional<Method> parse_method(const std::string& name);

/// Channel-summed |d logit_class / d x|.
Heatmap saliency(const Graph& g, const ImageTensor& x, int target_class);

/// Saliency variant that zeroes negative upstream gradients at every
/// rectifier during the backward pass (channel-summed, signed). On a graph
/// without rectifiers it falls back to saliency and flags the provenance.
Heatmap guided_backprop(const Graph& g, const ImageTensor& x, int target_class);

/// (x - baseline) .* mean gradient along the straight path from baseline to
/// x (left Riemann sum with coefficients k/steps, k = 0..steps-1).
Heatmap integrated_gradients(const Graph& g, const ImageTensor& x, int target_class,
                             const ImageTensor& baseline, int steps);

/// Mean saliency over `samples` Gaussian-noised copies of x.
Heatmap smoothgrad(const Graph& g, const ImageTensor& x, int target_class,
                   double noise_sigma, int samples, std::uint64_t seed);

/// Feature-map weighting: alpha_k = spatial mean of d logit / d A_k, coarse
/// map ReLU(sum_k alpha_k A_k), bilinearly upsampled to the input size.
/// target_layer indexes the layer whose output is the feature map; -1 picks
/// the activation following the last convolution.
Heatmap grad_cam(const Graph& g, const ImageTensor& x, int target_class,
                 int target_layer = -1);

/// Epsilon-rule relevance propagation from the class logit, channel-summed.
Heatmap lrp_epsilon(const Graph& g, const ImageTensor& x, int target_class,
                    const LrpEpsilon& eps = {});

struct LimeOptions {
  int samples = 1000;
  double kernel_width = 0.25;  // exponential kernel on cosine distance
  double ridge = 1e-3;
  double baseline_value = 0.0;  // masked segments are painted with this
  std::uint64_t seed = 0;
};

/// Weighted ridge regression from binary segment masks onto the class
/// probability; each segment's coefficient is painted over its pixels.
Heatmap lime(const Graph& g, const ImageTensor& x, int target_class,
             const seg::SegmentMap& segments, const LimeOptions& opts = {});

/// Optionally clips negatives to zero, then divides by the total so the map
/// sums to one. An all-zero map becomes uniform so downstream rankings stay
/// defined. Idempotent.
Heatmap normalize_heatmap(const Heatmap& e, bool positive_only);

/// Hyperparameters for the dispatching front end (defaults per method).
struct ExplainerOptions {
  int ig_steps = 64;
  double sg_sigma_fraction = 0.15;  // of the declared input range width
  int sg_samples = 25;
  int gc_target_layer = -1;
  LrpEpsilon lrp_eps{};
  LimeOptions lime{};
  std::uint64_t seed = 0;
};

/// Runs one method with standard defaults and fills provenance. LIME needs
/// `segments`; other methods ignore it.
Heatmap compute(Method m, const Graph& g, const ImageTensor& x, int target_class,
                const ExplainerOptions& opts = {},
                const seg::SegmentMap* segments = nullptr);

}  // namespace xagg::explain
