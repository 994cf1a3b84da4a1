#include "xagg/deriv.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "layer_ops.hpp"

namespace xagg {

namespace {

using detail::ConvGeom;

ConvGeom conv_geom(const Graph& g, std::size_t i) {
  const Layer& l = g.layers[i];
  const Shape3 in = g.stages()[i];
  return ConvGeom{in.c, in.h, in.w, l.weight.dims[0], l.weight.dims[2], l.weight.dims[3]};
}

/// One plain reverse step through layer i: cot_out (stage i+1) -> stage i.
std::vector<double> plain_layer_vjp(const Graph& g, const Tape& tape, std::size_t i,
                                    const std::vector<double>& cot_out) {
  const Layer& l = g.layers[i];
  const Shape3 in = g.stages()[i];
  std::vector<double> cot_in(in.count(), 0.0);
  switch (l.kind) {
    case LayerKind::Conv2D: {
      ConvGeom geom = conv_geom(g, i);
      std::vector<double> col(std::int64_t(geom.patch()) * geom.cols());
      detail::conv_input_vjp(l.weight.data(), cot_out.data(), geom, cot_in.data(),
                             col.data());
      break;
    }
    case LayerKind::MaxPool2D:
      detail::maxpool_scatter_add(cot_out.data(), tape.argmax[i].data(),
                                  static_cast<std::int64_t>(cot_out.size()),
                                  cot_in.data());
      break;
    case LayerKind::Dense:
      detail::dense_input_vjp(l.weight.data(), cot_out.data(), l.weight.dims[1],
                              l.weight.dims[0], cot_in.data());
      break;
    case LayerKind::ReLU: {
      const std::vector<double>& z = tape.acts[i];
      for (std::size_t j = 0; j < cot_out.size(); ++j)
        cot_in[j] = z[j] > 0 ? cot_out[j] : 0.0;
      break;
    }
    case LayerKind::SoftPlus: {
      const std::vector<double>& z = tape.acts[i];
      for (std::size_t j = 0; j < cot_out.size(); ++j)
        cot_in[j] = cot_out[j] * detail::sigmoid(l.beta * z[j]);
      break;
    }
    case LayerKind::Dropout:
    case LayerKind::Flatten:
      cot_in = cot_out;
      break;
    case LayerKind::Softmax: {
      // d p / d z with p from the tape: grad_z = p .* (cot - <cot, p>)
      const std::vector<double>& p = tape.acts[i + 1];
      double dot = 0;
      for (std::size_t j = 0; j < p.size(); ++j) dot += cot_out[j] * p[j];
      for (std::size_t j = 0; j < p.size(); ++j) cot_in[j] = p[j] * (cot_out[j] - dot);
      break;
    }
  }
  return cot_in;
}

/// Forward application of layer i's Jacobian (bias dropped, discrete
/// routing frozen from the tape): tangent at stage i -> stage i+1.
std::vector<double> frozen_layer_jvp(const Graph& g, const Tape& tape, std::size_t i,
                                     const std::vector<double>& t_in) {
  const Layer& l = g.layers[i];
  const Shape3 in = g.stages()[i], out = g.stages()[i + 1];
  std::vector<double> t_out(out.count(), 0.0);
  switch (l.kind) {
    case LayerKind::Conv2D: {
      ConvGeom geom = conv_geom(g, i);
      std::vector<double> col(std::int64_t(geom.patch()) * geom.cols());
      detail::conv_forward(l.weight.data(), nullptr, t_in.data(), geom, t_out.data(),
                           col.data());
      break;
    }
    case LayerKind::MaxPool2D:
      detail::maxpool_gather(t_in.data(), tape.argmax[i].data(),
                             static_cast<std::int64_t>(t_out.size()), t_out.data());
      break;
    case LayerKind::Dense:
      detail::dense_forward_nobias(l.weight.data(), t_in.data(), l.weight.dims[1],
                                   l.weight.dims[0], t_out.data());
      break;
    case LayerKind::ReLU: {
      const std::vector<double>& z = tape.acts[i];
      for (std::size_t j = 0; j < t_out.size(); ++j)
        t_out[j] = z[j] > 0 ? t_in[j] : 0.0;
      break;
    }
    case LayerKind::SoftPlus: {
      const std::vector<double>& z = tape.acts[i];
      for (std::size_t j = 0; j < t_out.size(); ++j)
        t_out[j] = t_in[j] * detail::sigmoid(l.beta * z[j]);
      break;
    }
    case LayerKind::Dropout:
    case LayerKind::Flatten:
      t_out = t_in;
      break;
    case LayerKind::Softmax:
      throw ContractError("softmax has no frozen linearization here");
  }
  (void)in;
  return t_out;
}

void require_twice_differentiable(const Graph& g) {
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    if (g.layers[i].kind == LayerKind::ReLU)
      throw ContractError("second-order pass requires a ReLU-free graph; "
                          "substitute SoftPlus first (layer " + std::to_string(i) + ")");
    if (g.layers[i].kind == LayerKind::Softmax)
      throw ContractError("second-order pass operates on the logit head; "
                          "remove the Softmax layer");
  }
}

}  // namespace

std::vector<double> output_seed(const Graph& g, const Tape& tape, int class_index,
                                bool use_logit) {
  const int ls = g.logits_stage();
  const std::vector<double>& logits = tape.acts[ls];
  if (class_index < 0 || class_index >= static_cast<int>(logits.size()))
    throw ShapeError("class index out of range");
  std::vector<double> seed(logits.size(), 0.0);
  if (use_logit) {
    seed[class_index] = 1.0;
  } else {
    const std::vector<double> p =
        (ls < static_cast<int>(g.layers.size())) ? tape.acts.back() : softmax(logits);
    for (std::size_t k = 0; k < seed.size(); ++k)
      seed[k] = p[class_index] * ((static_cast<int>(k) == class_index ? 1.0 : 0.0) - p[k]);
  }
  return seed;
}

std::vector<double> backward_sweep(const Graph& g, const Tape& tape,
                                   std::span<const double> logits_cotangent,
                                   BackwardStyle style, BackwardRecord* record) {
  const int ls = g.logits_stage();
  if (static_cast<std::int64_t>(logits_cotangent.size()) != g.stages()[ls].count())
    throw ShapeError("cotangent length does not match logits width");
  std::vector<double> cot(logits_cotangent.begin(), logits_cotangent.end());
  if (record != nullptr) {
    record->adjoints.assign(g.layers.size() + 1, {});
    record->guided_masks.assign(g.layers.size(), {});
    record->adjoints[ls] = cot;
  }
  for (int i = ls - 1; i >= 0; --i) {
    const Layer& l = g.layers[i];
    const bool rectifier = l.kind == LayerKind::ReLU || l.kind == LayerKind::SoftPlus;
    if (style == BackwardStyle::Guided && rectifier) {
      // Guided rule: zero negative upstream gradients before applying the
      // rectifier derivative.
      std::vector<std::uint8_t> mask(cot.size());
      for (std::size_t j = 0; j < cot.size(); ++j) {
        mask[j] = cot[j] > 0 ? 1 : 0;
        if (!mask[j]) cot[j] = 0.0;
      }
      if (record != nullptr) record->guided_masks[i] = std::move(mask);
    }
    cot = plain_layer_vjp(g, tape, static_cast<std::size_t>(i), cot);
    if (record != nullptr) record->adjoints[i] = cot;
  }
  return cot;
}

ImageTensor grad_input(const Graph& g, const ImageTensor& x, int class_index,
                       bool use_logit) {
  Tape tape = forward_tape(g, x);
  std::vector<double> seed = output_seed(g, tape, class_index, use_logit);
  std::vector<double> grad = backward_sweep(g, tape, seed, BackwardStyle::Plain);
  for (double v : grad) {
    if (!std::isfinite(v)) throw NumericError("non-finite input gradient");
  }
  return ImageTensor(g.input_shape, std::move(grad));
}

ImageTensor hvp(const Graph& g, const ImageTensor& x, std::span<const double> v,
                int class_index) {
  require_twice_differentiable(g);
  if (static_cast<std::int64_t>(v.size()) != g.input_shape.count())
    throw ShapeError("direction length does not match input shape");
  Tape tape = forward_tape(g, x);
  const int ls = g.logits_stage();

  // Forward tangent sweep along v.
  std::vector<std::vector<double>> tangents(ls + 1);
  tangents[0].assign(v.begin(), v.end());
  for (int i = 0; i < ls; ++i)
    tangents[i + 1] = frozen_layer_jvp(g, tape, i, tangents[i]);

  // Reverse sweep carrying (adjoint, adjoint-tangent).
  std::vector<double> adj = output_seed(g, tape, class_index, true);
  std::vector<double> adj_dot(adj.size(), 0.0);
  for (int i = ls - 1; i >= 0; --i) {
    const Layer& l = g.layers[i];
    if (l.kind == LayerKind::SoftPlus) {
      const std::vector<double>& z = tape.acts[i];
      std::vector<double> next_adj(z.size()), next_dot(z.size());
      for (std::size_t j = 0; j < z.size(); ++j) {
        const double d = detail::sigmoid(l.beta * z[j]);
        const double dprime = l.beta * d * (1.0 - d);
        next_adj[j] = adj[j] * d;
        next_dot[j] = adj_dot[j] * d + adj[j] * dprime * tangents[i][j];
      }
      adj = std::move(next_adj);
      adj_dot = std::move(next_dot);
    } else {
      adj = plain_layer_vjp(g, tape, i, adj);
      adj_dot = plain_layer_vjp(g, tape, i, adj_dot);
    }
  }
  return ImageTensor(g.input_shape, std::move(adj_dot));
}

ImageTensor grad_of_scalar_of_grad(const Graph& g, const ImageTensor& x,
                                   int class_index, const GradScalarFn& fn) {
  require_twice_differentiable(g);
  ImageTensor grad = grad_input(g, x, class_index, true);
  std::vector<double> v = fn.grad(grad.v);
  if (v.size() != grad.v.size())
    throw ShapeError("scalar_fn gradient length does not match gradient map");
  return hvp(g, x, v, class_index);
}

std::vector<double> backward_map_vjp(const Graph& g, const ImageTensor& x,
                                     int class_index, BackwardStyle style,
                                     std::span<const double> u) {
  if (static_cast<std::int64_t>(u.size()) != g.input_shape.count())
    throw ShapeError("cotangent length does not match input shape");
  Tape tape = forward_tape(g, x);
  const int ls = g.logits_stage();

  BackwardRecord rec;
  std::vector<double> seed = output_seed(g, tape, class_index, true);
  backward_sweep(g, tape, seed, style, &rec);

  // Walk the recorded backward chain from the input side up, propagating the
  // cotangent of the per-stage adjoints and accumulating the smooth
  // activation-derivative terms onto the forward activations.
  std::vector<std::vector<double>> act_cot(ls + 1);
  std::vector<double> b(u.begin(), u.end());
  for (int i = 0; i < ls; ++i) {
    const Layer& l = g.layers[i];
    const std::vector<double>& a_out = rec.adjoints[i + 1];
    std::vector<double> b_next;
    switch (l.kind) {
      case LayerKind::ReLU: {
        const std::vector<double>& z = tape.acts[i];
        b_next.assign(a_out.size(), 0.0);
        for (std::size_t j = 0; j < a_out.size(); ++j) {
          double m = z[j] > 0 ? 1.0 : 0.0;
          if (style == BackwardStyle::Guided && !rec.guided_masks[i].empty())
            m *= rec.guided_masks[i][j];
          b_next[j] = b[j] * m;
        }
        break;
      }
      case LayerKind::SoftPlus: {
        const std::vector<double>& z = tape.acts[i];
        b_next.assign(a_out.size(), 0.0);
        if (act_cot[i].empty()) act_cot[i].assign(z.size(), 0.0);
        for (std::size_t j = 0; j < a_out.size(); ++j) {
          const double d = detail::sigmoid(l.beta * z[j]);
          const double dprime = l.beta * d * (1.0 - d);
          double q = 1.0;
          if (style == BackwardStyle::Guided && !rec.guided_masks[i].empty())
            q = rec.guided_masks[i][j];
          b_next[j] = b[j] * q * d;
          act_cot[i][j] += b[j] * (a_out[j] * q) * dprime;
        }
        break;
      }
      default:
        // Linear layers: the transpose of "multiply by J^T" is "multiply by
        // J" with the bias dropped and discrete routing frozen.
        b_next = frozen_layer_jvp(g, tape, i, b);
        break;
    }
    b = std::move(b_next);
  }

  // Final plain reverse sweep injecting the accumulated activation
  // cotangents.
  std::vector<double> c(g.stages()[ls].count(), 0.0);
  for (int i = ls - 1; i >= 0; --i) {
    c = plain_layer_vjp(g, tape, i, c);
    if (!act_cot[i].empty()) {
      for (std::size_t j = 0; j < c.size(); ++j) c[j] += act_cot[i][j];
    }
  }
  return c;
}

namespace {

struct LrpLayerStash {
  std::vector<double> share;    // s = R_out / denom
  std::vector<double> denom;    // z + eps * sign(z)
  std::vector<double> backmap;  // weights-only transpose applied to share
};

double layer_epsilon(const LrpEpsilon& eps, const std::vector<double>& z) {
  if (eps.mode == LrpEpsilon::Mode::Fixed) return eps.value;
  double mean_abs = 0;
  for (double v : z) mean_abs += std::abs(v);
  mean_abs /= static_cast<double>(z.size());
  return eps.value * mean_abs;
}

std::vector<double> weights_only_transpose(const Graph& g, std::size_t i,
                                           const std::vector<double>& s) {
  const Layer& l = g.layers[i];
  const Shape3 in = g.stages()[i];
  std::vector<double> out(in.count(), 0.0);
  if (l.kind == LayerKind::Dense) {
    detail::dense_input_vjp(l.weight.data(), s.data(), l.weight.dims[1],
                            l.weight.dims[0], out.data());
  } else {
    ConvGeom geom = conv_geom(g, i);
    std::vector<double> col(std::int64_t(geom.patch()) * geom.cols());
    detail::conv_input_vjp(l.weight.data(), s.data(), geom, out.data(), col.data());
  }
  return out;
}

std::vector<double> weights_only_forward(const Graph& g, std::size_t i,
                                         const std::vector<double>& v) {
  const Layer& l = g.layers[i];
  const Shape3 out = g.stages()[i + 1];
  std::vector<double> r(out.count(), 0.0);
  if (l.kind == LayerKind::Dense) {
    detail::dense_forward_nobias(l.weight.data(), v.data(), l.weight.dims[1],
                                 l.weight.dims[0], r.data());
  } else {
    ConvGeom geom = conv_geom(g, i);
    std::vector<double> col(std::int64_t(geom.patch()) * geom.cols());
    detail::conv_forward(l.weight.data(), nullptr, v.data(), geom, r.data(), col.data());
  }
  return r;
}

/// Relevance walk from the logits down to the input. Stashes per-layer
/// intermediates when requested (needed by the attack derivative).
std::vector<double> lrp_walk(const Graph& g, const Tape& tape, int class_index,
                             const LrpEpsilon& eps,
                             std::vector<LrpLayerStash>* stash) {
  const int ls = g.logits_stage();
  const std::vector<double>& logits = tape.acts[ls];
  if (class_index < 0 || class_index >= static_cast<int>(logits.size()))
    throw ShapeError("class index out of range");
  if (stash != nullptr) stash->assign(g.layers.size(), {});
  std::vector<double> rel(logits.size(), 0.0);
  rel[class_index] = logits[class_index];
  for (int i = ls - 1; i >= 0; --i) {
    const Layer& l = g.layers[i];
    switch (l.kind) {
      case LayerKind::Dense:
      case LayerKind::Conv2D: {
        const std::vector<double>& z = tape.acts[i + 1];
        const double e = layer_epsilon(eps, z);
        LrpLayerStash st;
        st.denom.resize(z.size());
        st.share.resize(z.size());
        for (std::size_t j = 0; j < z.size(); ++j) {
          st.denom[j] = z[j] + (z[j] >= 0 ? e : -e);
          st.share[j] = rel[j] / st.denom[j];
        }
        st.backmap = weights_only_transpose(g, static_cast<std::size_t>(i), st.share);
        const std::vector<double>& a_in = tape.acts[i];
        std::vector<double> next(a_in.size());
        for (std::size_t j = 0; j < a_in.size(); ++j) next[j] = a_in[j] * st.backmap[j];
        rel = std::move(next);
        if (stash != nullptr) (*stash)[i] = std::move(st);
        break;
      }
      case LayerKind::MaxPool2D: {
        std::vector<double> next(g.stages()[i].count(), 0.0);
        detail::maxpool_scatter_add(rel.data(), tape.argmax[i].data(),
                                    static_cast<std::int64_t>(rel.size()), next.data());
        rel = std::move(next);
        break;
      }
      case LayerKind::ReLU:
      case LayerKind::SoftPlus:
      case LayerKind::Dropout:
      case LayerKind::Flatten:
        break;  // relevance passes through unchanged
      case LayerKind::Softmax:
        throw ContractError("relevance propagation has no rule for layer " +
                            std::to_string(i) + " (softmax)");
    }
  }
  return rel;
}

}  // namespace

std::vector<double> lrp_input_relevance(const Graph& g, const Tape& tape,
                                        int class_index, const LrpEpsilon& eps) {
  return lrp_walk(g, tape, class_index, eps, nullptr);
}

std::vector<double> lrp_map_vjp(const Graph& g, const ImageTensor& x,
                                int class_index, const LrpEpsilon& eps,
                                std::span<const double> u) {
  if (static_cast<std::int64_t>(u.size()) != g.input_shape.count())
    throw ShapeError("cotangent length does not match input shape");
  Tape tape = forward_tape(g, x);
  const int ls = g.logits_stage();
  std::vector<LrpLayerStash> stash;
  lrp_walk(g, tape, class_index, eps, &stash);

  // Cotangent sweep from the input relevance up to the logits, accumulating
  // contributions onto the forward activations. The stabilizer and the
  // denominator signs are frozen.
  std::vector<std::vector<double>> act_cot(ls + 1);
  std::vector<double> rbar(u.begin(), u.end());
  for (int i = 0; i < ls; ++i) {
    const Layer& l = g.layers[i];
    switch (l.kind) {
      case LayerKind::Dense:
      case LayerKind::Conv2D: {
        const LrpLayerStash& st = stash[i];
        const std::vector<double>& a_in = tape.acts[i];
        if (act_cot[i].empty()) act_cot[i].assign(a_in.size(), 0.0);
        std::vector<double> vbar(a_in.size());
        for (std::size_t j = 0; j < a_in.size(); ++j) {
          act_cot[i][j] += rbar[j] * st.backmap[j];
          vbar[j] = rbar[j] * a_in[j];
        }
        std::vector<double> sbar =
            weights_only_forward(g, static_cast<std::size_t>(i), vbar);
        if (act_cot[i + 1].empty()) act_cot[i + 1].assign(sbar.size(), 0.0);
        std::vector<double> next(sbar.size());
        for (std::size_t j = 0; j < sbar.size(); ++j) {
          next[j] = sbar[j] / st.denom[j];
          act_cot[i + 1][j] += -sbar[j] * st.share[j] / st.denom[j];
        }
        rbar = std::move(next);
        break;
      }
      case LayerKind::MaxPool2D: {
        std::vector<double> next(g.stages()[i + 1].count(), 0.0);
        detail::maxpool_gather(rbar.data(), tape.argmax[i].data(),
                               static_cast<std::int64_t>(next.size()), next.data());
        rbar = std::move(next);
        break;
      }
      default:
        break;  // pass-through layers leave the cotangent unchanged
    }
  }
  // Seed relevance was e_c * logit_c.
  if (act_cot[ls].empty()) act_cot[ls].assign(g.stages()[ls].count(), 0.0);
  act_cot[ls][class_index] += rbar[class_index];

  std::vector<double> c = std::move(act_cot[ls]);
  for (int i = ls - 1; i >= 0; --i) {
    c = plain_layer_vjp(g, tape, i, c);
    if (!act_cot[i].empty()) {
      for (std::size_t j = 0; j < c.size(); ++j) c[j] += act_cot[i][j];
    }
  }
  return c;
}

}  // namespace xagg
