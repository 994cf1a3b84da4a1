#pragma once

#include <functional>
#include <span>
#include <vector>

#include "xagg/graph.hpp"

namespace xagg {

enum class BackwardStyle : std::uint8_t {
  Plain,   // ordinary reverse-mode pass
  Guided,  // rectifier layers additionally zero negative upstream gradients
};

/// Everything one input-space backward pass produces: the gradient map at
/// stage 0 plus the adjoints at every interface (stage i holds d scalar /
/// d acts[i]). Guided passes also record the upstream-sign masks they
/// applied, so the pass can be differentiated once more with the masks
/// frozen.
struct BackwardRecord {
  std::vector<std::vector<double>> adjoints;
  std::vector<std::vector<std::uint8_t>> guided_masks;  // per layer
};

/// Seed for the backward pass at the logits interface of class class_index;
/// use_logit=false composes the softmax derivative into the seed.
std::vector<double> output_seed(const Graph& g, const Tape& tape,
                                int class_index, bool use_logit);

/// Reverse sweep from an arbitrary cotangent at the logits interface down to
/// the input. `record`, when non-null, captures per-stage adjoints.
std::vector<double> backward_sweep(const Graph& g, const Tape& tape,
                                   std::span<const double> logits_cotangent,
                                   BackwardStyle style,
                                   BackwardRecord* record = nullptr);

/// Scalar function of a gradient map and its (hand-supplied) gradient.
struct GradScalarFn {
  std::function<double(std::span<const double>)> value;
  std::function<std::vector<double>(std::span<const double>)> grad;
};

/// Directional derivative of the input gradient: d/de grad_input(x + e*v) at
/// e=0, i.e. a Hessian-vector product of the selected logit. Implemented as
/// a forward tangent sweep followed by a reverse sweep carrying
/// (adjoint, adjoint-tangent) pairs; per-layer rules only, no general tape.
/// Requires a twice-differentiable chain: ReLU and Softmax layers are
/// rejected with ContractError (substitute SoftPlus first).
ImageTensor hvp(const Graph& g, const ImageTensor& x,
                std::span<const double> v, int class_index);

/// d(scalar_fn(grad_input(x)))/dx. The caller must have substituted
/// SoftPlus for ReLU; scalar_fn must be differentiable in the gradient map.
ImageTensor grad_of_scalar_of_grad(const Graph& g, const ImageTensor& x,
                                   int class_index, const GradScalarFn& fn);

/// Exact gradient of <u, m(x)> where m(x) is the input-space backward map of
/// the class logit (plain or guided style), with all discrete masks (maxpool
/// routing, ReLU and guided sign masks) frozen at x. This is the descent
/// direction used by explanation attacks on gradient-family methods.
std::vector<double> backward_map_vjp(const Graph& g, const ImageTensor& x,
                                     int class_index, BackwardStyle style,
                                     std::span<const double> u);

/// Epsilon-rule stabilizer for relevance propagation.
struct LrpEpsilon {
  enum class Mode {
    Fixed,           // same epsilon at every layer
    RelativeMeanAbs  // value * mean |pre-activation| per layer
  };
  Mode mode = Mode::RelativeMeanAbs;
  double value = 1e-2;
};

/// Epsilon-rule relevance propagation from the class logit down to the
/// input stage. Rules: Dense/Conv redistribute by weighted-contribution
/// share with a sign-stabilized denominator, MaxPool routes winner-take-all,
/// rectifiers/Dropout pass through, Flatten reshapes. Softmax layers are
/// unsupported and rejected.
std::vector<double> lrp_input_relevance(const Graph& g, const Tape& tape,
                                        int class_index, const LrpEpsilon& eps);

/// Exact gradient of <u, lrp(x)> with frozen discrete choices (argmax
/// routing, denominator signs) and the stabilizer treated as a constant.
std::vector<double> lrp_map_vjp(const Graph& g, const ImageTensor& x,
                                int class_index, const LrpEpsilon& eps,
                                std::span<const double> u);

}  // namespace xagg
