#include "xagg/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "layer_ops.hpp"

namespace xagg {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::MaxPool2D: return "maxpool2d";
    case LayerKind::Dense: return "dense";
    case LayerKind::ReLU: return "relu";
    case LayerKind::SoftPlus: return "softplus";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

Layer Layer::conv2d(Tensor weight, Tensor bias) {
  if (weight.dims.size() != 4) throw ShapeError("conv2d weight must be [out,in,kh,kw]");
  if (bias.dims.size() != 1 || bias.dims[0] != weight.dims[0])
    throw ShapeError("conv2d bias must be [out]");
  Layer l;
  l.kind = LayerKind::Conv2D;
  l.weight = std::move(weight);
  l.bias = std::move(bias);
  return l;
}

Layer Layer::maxpool2d(int ph, int pw) {
  if (ph < 1 || pw < 1) throw ShapeError("maxpool window must be >= 1");
  Layer l;
  l.kind = LayerKind::MaxPool2D;
  l.pool_h = ph;
  l.pool_w = pw;
  return l;
}

Layer Layer::dense(Tensor weight, Tensor bias) {
  if (weight.dims.size() != 2) throw ShapeError("dense weight must be [out,in]");
  if (bias.dims.size() != 1 || bias.dims[0] != weight.dims[0])
    throw ShapeError("dense bias must be [out]");
  Layer l;
  l.kind = LayerKind::Dense;
  l.weight = std::move(weight);
  l.bias = std::move(bias);
  return l;
}

Layer Layer::relu() { return Layer{.kind = LayerKind::ReLU}; }

Layer Layer::softplus(double beta) {
  if (!(beta > 0)) throw ShapeError("softplus beta must be positive");
  Layer l;
  l.kind = LayerKind::SoftPlus;
  l.beta = beta;
  return l;
}

Layer Layer::dropout(double rate) {
  if (rate < 0 || rate >= 1) throw ShapeError("dropout rate must be in [0,1)");
  Layer l;
  l.kind = LayerKind::Dropout;
  l.rate = rate;
  return l;
}

Layer Layer::flatten() { return Layer{.kind = LayerKind::Flatten}; }
Layer Layer::softmax() { return Layer{.kind = LayerKind::Softmax}; }

void Graph::finalize() {
  if (input_shape.c <= 0 || input_shape.h <= 0 || input_shape.w <= 0)
    throw ShapeError("graph input shape must be positive");
  stages_.clear();
  stages_.reserve(layers.size() + 1);
  stages_.push_back(input_shape);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    Shape3 s = stages_.back();
    const std::string where = "layer " + std::to_string(i) + " (" + layer_kind_name(l.kind) + ")";
    switch (l.kind) {
      case LayerKind::Conv2D: {
        const int out_c = l.weight.dims[0], in_c = l.weight.dims[1];
        const int kh = l.weight.dims[2], kw = l.weight.dims[3];
        if (s.c != in_c) throw ShapeError(where + ": input channels mismatch");
        if (s.h < kh || s.w < kw) throw ShapeError(where + ": input smaller than kernel");
        s = Shape3{out_c, s.h - kh + 1, s.w - kw + 1};
        break;
      }
      case LayerKind::MaxPool2D: {
        if (s.h < l.pool_h || s.w < l.pool_w)
          throw ShapeError(where + ": input smaller than pooling window");
        s = Shape3{s.c, s.h / l.pool_h, s.w / l.pool_w};
        break;
      }
      case LayerKind::Dense: {
        if (s.h != 1 || s.w != 1)
          throw ShapeError(where + ": dense input must be flat (use Flatten)");
        if (s.c != l.weight.dims[1]) throw ShapeError(where + ": input width mismatch");
        s = Shape3{l.weight.dims[0], 1, 1};
        break;
      }
      case LayerKind::ReLU:
      case LayerKind::SoftPlus:
      case LayerKind::Dropout:
        break;
      case LayerKind::Flatten:
        s = Shape3{static_cast<int>(s.count()), 1, 1};
        break;
      case LayerKind::Softmax: {
        if (s.h != 1 || s.w != 1) throw ShapeError(where + ": softmax input must be flat");
        if (i + 1 != layers.size())
          throw ShapeError(where + ": softmax is only supported as the output head");
        break;
      }
    }
    stages_.push_back(s);
  }
}

int Graph::logits_stage() const {
  int end = static_cast<int>(layers.size());
  if (!layers.empty() && layers.back().kind == LayerKind::Softmax) --end;
  return end;
}

bool Graph::has_layer(LayerKind k) const {
  return std::any_of(layers.begin(), layers.end(),
                     [k](const Layer& l) { return l.kind == k; });
}

std::int64_t Graph::parameter_count() const {
  std::int64_t n = 0;
  for (const Layer& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

std::vector<double> softmax(const std::vector<double>& z) {
  std::vector<double> p(z.size());
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return p;
}

namespace {

void check_finite(const std::vector<double>& v, const Graph& g, std::size_t layer_idx) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError("non-finite value at layer " + std::to_string(layer_idx) +
                         " (" + std::string(layer_kind_name(g.layers[layer_idx].kind)) + ")");
    }
  }
}

}  // namespace

Tape forward_tape(const Graph& g, const ImageTensor& x) {
  if (!(x.shape == g.input_shape)) throw ShapeError("input shape does not match graph");
  x.validate();
  Tape tape;
  tape.acts.resize(g.layers.size() + 1);
  tape.argmax.resize(g.layers.size());
  tape.acts[0] = x.v;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const Layer& l = g.layers[i];
    const Shape3 in = g.stages()[i], out = g.stages()[i + 1];
    const std::vector<double>& a = tape.acts[i];
    std::vector<double>& b = tape.acts[i + 1];
    b.assign(out.count(), 0.0);
    switch (l.kind) {
      case LayerKind::Conv2D: {
        detail::ConvGeom geom{in.c, in.h, in.w, out.c, l.weight.dims[2], l.weight.dims[3]};
        std::vector<double> col(std::int64_t(geom.patch()) * geom.cols());
        detail::conv_forward(l.weight.data(), l.bias.data(), a.data(), geom, b.data(),
                             col.data());
        break;
      }
      case LayerKind::MaxPool2D: {
        tape.argmax[i].resize(out.count());
        detail::maxpool_forward(a.data(), in.c, in.h, in.w, l.pool_h, l.pool_w,
                                b.data(), tape.argmax[i].data());
        break;
      }
      case LayerKind::Dense:
        detail::dense_forward(l.weight.data(), l.bias.data(), a.data(),
                              l.weight.dims[1], l.weight.dims[0], b.data());
        break;
      case LayerKind::ReLU:
        for (std::size_t j = 0; j < a.size(); ++j) b[j] = a[j] > 0 ? a[j] : 0.0;
        break;
      case LayerKind::SoftPlus:
        for (std::size_t j = 0; j < a.size(); ++j)
          b[j] = detail::softplus_value(a[j], l.beta);
        break;
      case LayerKind::Dropout:  // identity at inference
      case LayerKind::Flatten:
        b = a;
        break;
      case LayerKind::Softmax:
        b = softmax(a);
        break;
    }
    check_finite(b, g, i);
  }
  return tape;
}

ForwardResult forward(const Graph& g, const ImageTensor& x) {
  Tape tape = forward_tape(g, x);
  ForwardResult r;
  r.logits = tape.acts[g.logits_stage()];
  if (!g.layers.empty() && g.layers.back().kind == LayerKind::Softmax)
    r.probs = tape.acts.back();
  else
    r.probs = softmax(r.logits);
  return r;
}

Graph substitute_nonlinearity(const Graph& g, Nonlinearity mode, double beta) {
  Graph out = g;
  for (Layer& l : out.layers) {
    if (mode == Nonlinearity::SoftPlus && l.kind == LayerKind::ReLU) {
      l = Layer::softplus(beta);
    } else if (mode == Nonlinearity::ReLU && l.kind == LayerKind::SoftPlus) {
      l = Layer::relu();
    }
  }
  out.finalize();
  return out;
}

}  // namespace xagg
