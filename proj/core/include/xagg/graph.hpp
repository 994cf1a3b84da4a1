#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xagg/tensor.hpp"

namespace xagg {

enum class LayerKind : std::uint8_t {
  Conv2D,     // valid padding, stride 1
  MaxPool2D,  // non-overlapping, stride = kernel
  Dense,
  ReLU,
  SoftPlus,
  Dropout,  // identity at inference
  Flatten,
  Softmax,
};

const char* layer_kind_name(LayerKind k);

struct Layer {
  LayerKind kind{};
  Tensor weight;  // Conv2D: [out_c, in_c, kh, kw]; Dense: [out, in]
  Tensor bias;    // [out_c] / [out]
  int pool_h = 0, pool_w = 0;
  double beta = 1.0;  // SoftPlus sharpness
  double rate = 0.0;  // Dropout rate (training only)

  static Layer conv2d(Tensor weight, Tensor bias);
  static Layer maxpool2d(int ph, int pw);
  static Layer dense(Tensor weight, Tensor bias);
  static Layer relu();
  static Layer softplus(double beta);
  static Layer dropout(double rate);
  static Layer flatten();
  static Layer softmax();
};

/// Feed-forward chain of layers with exactly one output head. Immutable
/// after finalize(); forward evaluation on identical input is bit-identical
/// across calls.
class Graph {
 public:
  Shape3 input_shape;
  std::vector<Layer> layers;

  /// Checks that consecutive layer shapes compose and caches the interface
  /// shapes. Must be called after construction and after any layer edit.
  void finalize();

  /// Shapes at every layer interface: stage(0) = input, stage(layers.size())
  /// = output. Flat stages are reported as (n, 1, 1).
  const std::vector<Shape3>& stages() const { return stages_; }
  Shape3 output_shape() const { return stages_.back(); }
  int output_dim() const { return static_cast<int>(stages_.back().count()); }

  /// Index of the interface holding the logits: input of a trailing Softmax
  /// layer if present, otherwise the output.
  int logits_stage() const;

  bool has_layer(LayerKind k) const;
  std::int64_t parameter_count() const;

 private:
  std::vector<Shape3> stages_;
};

/// Forward activations recorded for one input; required by every backward
/// pass. Valid only for the input it was recorded on.
struct Tape {
  std::vector<std::vector<double>> acts;          // acts[i] = stage i value
  std::vector<std::vector<std::int32_t>> argmax;  // per layer; maxpool only
};

struct ForwardResult {
  std::vector<double> logits;
  std::vector<double> probs;  // softmax of logits
};

/// Numerically stable softmax.
std::vector<double> softmax(const std::vector<double>& z);

/// Runs the graph on x. Throws ShapeError on input mismatch and NumericError
/// (naming the layer) if any intermediate is non-finite.
ForwardResult forward(const Graph& g, const ImageTensor& x);

/// Forward pass that records all activations.
Tape forward_tape(const Graph& g, const ImageTensor& x);

/// Gradient of the selected output scalar w.r.t. every input element.
/// use_logit selects the pre-softmax logit (true) or the softmax probability
/// (false) of class_index.
ImageTensor grad_input(const Graph& g, const ImageTensor& x, int class_index,
                       bool use_logit = true);

enum class Nonlinearity { ReLU, SoftPlus };

/// Returns a copy of the graph with every ReLU<->SoftPlus swapped; parameter
/// tensors are copied unchanged.
Graph substitute_nonlinearity(const Graph& g, Nonlinearity mode,
                              double beta = 1.0);

}  // namespace xagg
