#include "xagg/explain.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "layer_ops.hpp"
#include "xagg/rng.hpp"

namespace xagg::explain {

namespace {

Heatmap channel_sum(const ImageTensor& t, bool absolute) {
  Heatmap e = Heatmap::zeros(t.shape.h, t.shape.w);
  for (int c = 0; c < t.shape.c; ++c) {
    for (int y = 0; y < t.shape.h; ++y) {
      for (int x = 0; x < t.shape.w; ++x) {
        const double g = t.at(c, y, x);
        e.at(y, x) += absolute ? std::abs(g) : g;
      }
    }
  }
  return e;
}

/// Bilinear upsampling, corner-aligned.
Heatmap upsample_bilinear(const std::vector<double>& coarse, int ch, int cw,
                          int oh, int ow) {
  Heatmap out = Heatmap::zeros(oh, ow);
  for (int y = 0; y < oh; ++y) {
    const double sy = oh > 1 ? static_cast<double>(y) * (ch - 1) / (oh - 1) : 0.0;
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(ch - 1, y0 + 1);
    const double fy = sy - y0;
    for (int x = 0; x < ow; ++x) {
      const double sx = ow > 1 ? static_cast<double>(x) * (cw - 1) / (ow - 1) : 0.0;
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(cw - 1, x0 + 1);
      const double fx = sx - x0;
      const double v00 = coarse[static_cast<std::size_t>(y0) * cw + x0];
      const double v01 = coarse[static_cast<std::size_t>(y0) * cw + x1];
      const double v10 = coarse[static_cast<std::size_t>(y1) * cw + x0];
      const double v11 = coarse[static_cast<std::size_t>(y1) * cw + x1];
      out.at(y, x) = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                     fy * ((1 - fx) * v10 + fx * v11);
    }
  }
  return out;
}

}  // namespace

const char* method_name(Method m) {
  switch (m) {
    case Method::SM: return "sm";
    case Method::GB: return "gb";
    case Method::IG: return "ig";
    case Method::SG: return "sg";
    case Method::GC: return "gc";
    case Method::LRP: return "lrp";
    case Method::LIME: return "lime";
  }
  return "?";
}

std::optional<Method> parse_method(const std::string& name) {
  if (name == "sm") return Method::SM;
  if (name == "gb") return Method::GB;
  if (name == "ig") return Method::IG;
  if (name == "sg") return Method::SG;
  if (name == "gc") return Method::GC;
  if (name == "lrp") return Method::LRP;
  if (name == "lime") return Method::LIME;
  return std::nullopt;
}

Heatmap saliency(const Graph& g, const ImageTensor& x, int target_class) {
  ImageTensor grad = grad_input(g, x, target_class, true);
  Heatmap e = channel_sum(grad, true);
  e.prov.method = "sm";
  e.prov.target_class = target_class;
  return e;
}

Heatmap guided_backprop(const Graph& g, const ImageTensor& x, int target_class) {
  if (!g.has_layer(LayerKind::ReLU) && !g.has_layer(LayerKind::SoftPlus)) {
    Heatmap e = saliency(g, x, target_class);
    e.prov.method = "gb";
    e.prov.flags.push_back("fallback_saliency_no_rectifier");
    return e;
  }
  Tape tape = forward_tape(g, x);
  std::vector<double> seed = output_seed(g, tape, target_class, true);
  std::vector<double> grad = backward_sweep(g, tape, seed, BackwardStyle::Guided);
  Heatmap e = channel_sum(ImageTensor(g.input_shape, std::move(grad)), false);
  e.prov.method = "gb";
  e.prov.target_class = target_class;
  return e;
}

Heatmap integrated_gradients(const Graph& g, const ImageTensor& x, int target_class,
                             const ImageTensor& baseline, int steps) {
  if (steps < 1) throw ContractError("integrated_gradients requires steps >= 1");
  if (!(baseline.shape == x.shape))
    throw ShapeError("baseline shape does not match input");
  std::vector<double> mean_grad(x.v.size(), 0.0);
  ImageTensor xi = x;
  for (int k = 0; k < steps; ++k) {
    const double a = static_cast<double>(k) / steps;
    for (std::size_t i = 0; i < x.v.size(); ++i)
      xi.v[i] = baseline.v[i] + a * (x.v[i] - baseline.v[i]);
    ImageTensor grad = grad_input(g, xi, target_class, true);
    for (std::size_t i = 0; i < mean_grad.size(); ++i) mean_grad[i] += grad.v[i];
  }
  ImageTensor attr = ImageTensor::zeros(x.shape);
  for (std::size_t i = 0; i < attr.v.size(); ++i)
    attr.v[i] = (x.v[i] - baseline.v[i]) * mean_grad[i] / steps;
  Heatmap e = channel_sum(attr, false);
  e.prov.method = "ig";
  e.prov.target_class = target_class;
  e.prov.params["steps"] = steps;
  return e;
}

Heatmap smoothgrad(const Graph& g, const ImageTensor& x, int target_class,
                   double noise_sigma, int samples, std::uint64_t seed) {
  if (samples < 1) throw ContractError("smoothgrad requires samples >= 1");
  if (noise_sigma < 0) throw ContractError("smoothgrad noise_sigma must be >= 0");
  Heatmap e;
  if (noise_sigma == 0.0) {
    e = saliency(g, x, target_class);  // exact identity, not a sample mean
  } else {
    RandomEngine rng(seed);
    std::normal_distribution<double> noise(0.0, noise_sigma);
    Heatmap acc = Heatmap::zeros(x.shape.h, x.shape.w);
    ImageTensor xi = x;
    xi.value_range.reset();  // noisy copies may leave the declared range
    for (int s = 0; s < samples; ++s) {
      for (std::size_t i = 0; i < x.v.size(); ++i) xi.v[i] = x.v[i] + noise(rng);
      Heatmap one = saliency(g, xi, target_class);
      for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += one.v[i];
    }
    for (double& v : acc.v) v /= samples;
    e = std::move(acc);
  }
  e.prov.method = "sg";
  e.prov.target_class = target_class;
  e.prov.params["sigma"] = noise_sigma;
  e.prov.params["samples"] = samples;
  return e;
}

Heatmap grad_cam(const Graph& g, const ImageTensor& x, int target_class,
                 int target_layer) {
  if (target_layer < 0) {
    // Activation following the last convolution, or the convolution itself.
    int last_conv = -1;
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
      if (g.layers[i].kind == LayerKind::Conv2D) last_conv = static_cast<int>(i);
    }
    if (last_conv < 0) throw ShapeError("grad_cam requires a convolutional layer");
    target_layer = last_conv;
    if (static_cast<std::size_t>(last_conv + 1) < g.layers.size()) {
      const LayerKind k = g.layers[last_conv + 1].kind;
      if (k == LayerKind::ReLU || k == LayerKind::SoftPlus) target_layer = last_conv + 1;
    }
  }
  if (target_layer >= static_cast<int>(g.layers.size()))
    throw ShapeError("grad_cam target layer out of range");
  const Shape3 fm = g.stages()[target_layer + 1];
  if (fm.h * fm.w <= 1)
    throw ShapeError("grad_cam target layer output is not spatial");

  Tape tape = forward_tape(g, x);
  std::vector<double> seed = output_seed(g, tape, target_class, true);
  BackwardRecord rec;
  backward_sweep(g, tape, seed, BackwardStyle::Plain, &rec);
  const std::vector<double>& adj = rec.adjoints[target_layer + 1];
  const std::vector<double>& act = tape.acts[target_layer + 1];

  const std::int64_t plane = static_cast<std::int64_t>(fm.h) * fm.w;
  std::vector<double> coarse(plane, 0.0);
  for (int c = 0; c < fm.c; ++c) {
    double alpha = 0;
    for (std::int64_t j = 0; j < plane; ++j) alpha += adj[c * plane + j];
    alpha /= static_cast<double>(plane);
    for (std::int64_t j = 0; j < plane; ++j) coarse[j] += alpha * act[c * plane + j];
  }
  for (double& v : coarse) v = v > 0 ? v : 0.0;

  Heatmap e = upsample_bilinear(coarse, fm.h, fm.w, x.shape.h, x.shape.w);
  e.prov.method = "gc";
  e.prov.target_class = target_class;
  e.prov.params["target_layer"] = target_layer;
  return e;
}

Heatmap lrp_epsilon(const Graph& g, const ImageTensor& x, int target_class,
                    const LrpEpsilon& eps) {
  Tape tape = forward_tape(g, x);
  std::vector<double> rel = lrp_input_relevance(g, tape, target_class, eps);
  Heatmap e = channel_sum(ImageTensor(g.input_shape, std::move(rel)), false);
  e.prov.method = "lrp";
  e.prov.target_class = target_class;
  e.prov.params["epsilon"] = eps.value;
  e.prov.params["epsilon_relative"] = eps.mode == LrpEpsilon::Mode::RelativeMeanAbs;
  return e;
}

Heatmap lime(const Graph& g, const ImageTensor& x, int target_class,
             const seg::SegmentMap& segments, const LimeOptions& opts) {
  if (segments.h != x.shape.h || segments.w != x.shape.w)
    throw ShapeError("segment map does not cover the image");
  const int S = static_cast<int>(segments.count);
  if (opts.samples < S)
    throw ContractError("lime requires samples >= segment count");

  RandomEngine rng(opts.seed);
  std::uniform_int_distribution<int> bit(0, 1);

  Eigen::MatrixXd design(opts.samples, S + 1);  // + intercept column
  Eigen::VectorXd target(opts.samples);
  Eigen::VectorXd weight(opts.samples);
  ImageTensor masked = x;
  for (int s = 0; s < opts.samples; ++s) {
    std::vector<std::uint8_t> mask(S);
    int on = 0;
    for (int j = 0; j < S; ++j) {
      mask[j] = static_cast<std::uint8_t>(bit(rng));
      on += mask[j];
    }
    for (std::size_t i = 0; i < x.v.size(); ++i) {
      const std::uint32_t lbl = segments.labels[i % segments.labels.size()];
      masked.v[i] = mask[lbl] ? x.v[i] : opts.baseline_value;
    }
    ForwardResult r = forward(g, masked);
    target(s) = r.probs[target_class];
    for (int j = 0; j < S; ++j) design(s, j) = mask[j];
    design(s, S) = 1.0;
    const double cos_sim = on > 0 ? std::sqrt(static_cast<double>(on) / S) : 0.0;
    const double d = 1.0 - cos_sim;
    weight(s) = std::exp(-(d * d) / (opts.kernel_width * opts.kernel_width));
  }

  // Weighted ridge regression; the intercept is not penalized. If the solve
  // degenerates, boost the ridge strength and flag it.
  Eigen::MatrixXd xtwx = design.transpose() * weight.asDiagonal() * design;
  Eigen::VectorXd xtwy = design.transpose() * (weight.array() * target.array()).matrix();
  double ridge = opts.ridge;
  Eigen::VectorXd coef;
  bool boosted = false;
  for (int attempt = 0; attempt < 6; ++attempt) {
    Eigen::MatrixXd reg = xtwx;
    for (int j = 0; j < S; ++j) reg(j, j) += ridge;
    Eigen::LDLT<Eigen::MatrixXd> solver(reg);
    coef = solver.solve(xtwy);
    if (solver.info() == Eigen::Success && coef.allFinite()) break;
    ridge *= 10.0;
    boosted = true;
  }
  if (!coef.allFinite()) throw NumericError("lime regression did not converge");

  Heatmap e = Heatmap::zeros(x.shape.h, x.shape.w);
  for (std::int64_t i = 0; i < e.count(); ++i) e.v[i] = coef(segments.labels[i]);
  e.prov.method = "lime";
  e.prov.target_class = target_class;
  e.prov.params["samples"] = opts.samples;
  e.prov.params["kernel_width"] = opts.kernel_width;
  e.prov.params["ridge"] = ridge;
  if (boosted) e.prov.flags.push_back("ridge_boosted");
  return e;
}

Heatmap normalize_heatmap(const Heatmap& e, bool positive_only) {
  e.validate();
  Heatmap out = e;
  if (positive_only) {
    for (double& v : out.v) v = v > 0 ? v : 0.0;
  }
  const double s = out.sum();
  if (s == 0.0) {
    const double u = 1.0 / static_cast<double>(out.count());
    std::fill(out.v.begin(), out.v.end(), u);
  } else {
    for (double& v : out.v) v /= s;
  }
  out.prov.positive_only = positive_only;
  return out;
}

Heatmap compute(Method m, const Graph& g, const ImageTensor& x, int target_class,
                const ExplainerOptions& opts, const seg::SegmentMap* segments) {
  switch (m) {
    case Method::SM:
      return saliency(g, x, target_class);
    case Method::GB:
      return guided_backprop(g, x, target_class);
    case Method::IG: {
      // Black baseline: the low end of the declared range.
      ImageTensor baseline = ImageTensor::zeros(x.shape);
      if (x.value_range) {
        std::fill(baseline.v.begin(), baseline.v.end(), x.value_range->first);
        baseline.value_range = x.value_range;
      }
      return integrated_gradients(g, x, target_class, baseline, opts.ig_steps);
    }
    case Method::SG: {
      const double width = x.value_range
                               ? x.value_range->second - x.value_range->first
                               : 1.0;
      return smoothgrad(g, x, target_class, opts.sg_sigma_fraction * width,
                        opts.sg_samples,
                        derive_seed(opts.seed, static_cast<std::uint64_t>(Method::SG)));
    }
    case Method::GC:
      return grad_cam(g, x, target_class, opts.gc_target_layer);
    case Method::LRP:
      return lrp_epsilon(g, x, target_class, opts.lrp_eps);
    case Method::LIME: {
      if (segments == nullptr) throw ContractError("lime requires a segment map");
      LimeOptions lo = opts.lime;
      lo.seed = derive_seed(opts.seed, static_cast<std::uint64_t>(Method::LIME));
      return lime(g, x, target_class, *segments, lo);
    }
  }
  throw ContractError("unknown explanation method");
}

}  // namespace xagg::explain
