#include "xagg/attack.hpp"

#include <algorithm>
#include <cmath>

#include "xagg/aggregate.hpp"
#include "xagg/evaluate.hpp"

namespace xagg::attack {

const char* attacked_name(AttackedExplainer a) {
  switch (a) {
    case AttackedExplainer::SM: return "sm";
    case AttackedExplainer::GB: return "gb";
    case AttackedExplainer::LRP: return "lrp";
    case AttackedExplainer::AggMean: return "agg-mean";
  }
  return "?";
}

std::vector<explain::Method> attack_members(AttackedExplainer a) {
  using explain::Method;
  switch (a) {
    case AttackedExplainer::SM: return {Method::SM};
    case AttackedExplainer::GB: return {Method::GB};
    case AttackedExplainer::LRP: return {Method::LRP};
    case AttackedExplainer::AggMean: return {Method::SM, Method::GB, Method::LRP};
  }
  return {};
}

BlankRegion BlankRegion::centered_square(int h, int w) {
  BlankRegion r;
  r.h = h;
  r.w = w;
  r.mask.assign(static_cast<std::size_t>(h) * w, 0);
  const int sh = h / 2, sw = w / 2;  // quarter of the image area
  const int y0 = (h - sh) / 2, x0 = (w - sw) / 2;
  for (int y = y0; y < y0 + sh; ++y) {
    for (int x = x0; x < x0 + sw; ++x) r.mask[static_cast<std::size_t>(y) * w + x] = 1;
  }
  return r;
}

std::int64_t BlankRegion::active() const {
  std::int64_t n = 0;
  for (std::uint8_t m : mask) n += m;
  return n;
}

void AttackConfig::validate() const {
  if (iterations < 0) throw ContractError("attack iterations must be >= 0");
  if (lr < 0) throw ContractError("attack learning rate must be >= 0");
  if (beta_start > beta_end) throw ContractError("beta schedule must not decrease");
  if (!(beta_start > 0)) throw ContractError("beta must be positive");
  if (clamp_lo >= clamp_hi) throw ContractError("bad clamp range");
}

namespace {

using explain::Method;

double beta_at(const AttackConfig& cfg, int t) {
  const int last = std::max(cfg.iterations - 1, 1);
  const double a = std::clamp(static_cast<double>(t) / last, 0.0, 1.0);
  switch (cfg.growth) {
    case BetaGrowth::Geometric:
      return cfg.beta_start * std::pow(cfg.beta_end / cfg.beta_start, a);
    case BetaGrowth::Linear:
      return cfg.beta_start + a * (cfg.beta_end - cfg.beta_start);
    case BetaGrowth::Constant:
      return cfg.beta_start;
  }
  return cfg.beta_start;
}

void set_beta(Graph& g, double beta) {
  for (Layer& l : g.layers) {
    if (l.kind == LayerKind::SoftPlus) l.beta = beta;
  }
}

/// Raw magnitude map of one member method on the given graph, reusing the
/// tape: channel-summed absolute signal. Negative evidence counts by
/// magnitude, so the optimization sees every pixel of the map. The raw
/// input-space signal is handed back for the sign chain.
Heatmap raw_member_map(const Graph& g, const Tape& tape, const ImageTensor& x,
                       int cls, Method m, const LrpEpsilon& lrp_eps,
                       std::vector<double>* signal) {
  std::vector<double> s;
  switch (m) {
    case Method::SM:
    case Method::GB: {
      std::vector<double> seed = output_seed(g, tape, cls, true);
      s = backward_sweep(g, tape, seed,
                         m == Method::SM ? BackwardStyle::Plain
                                         : BackwardStyle::Guided);
      break;
    }
    case Method::LRP:
      s = lrp_input_relevance(g, tape, cls, lrp_eps);
      break;
    default:
      throw ContractError("method cannot be attacked");
  }
  const Shape3 sh = g.input_shape;
  Heatmap e = Heatmap::zeros(sh.h, sh.w);
  const std::int64_t plane = static_cast<std::int64_t>(sh.h) * sh.w;
  for (int c = 0; c < sh.c; ++c) {
    for (std::int64_t i = 0; i < plane; ++i) e.v[i] += std::abs(s[c * plane + i]);
  }
  if (signal != nullptr) *signal = std::move(s);
  return e;
}

/// One evaluation of the attack objective on the SoftPlus graph: loss value
/// and, when `grad` is non-null, d loss / d input.
struct Evaluation {
  double loss = 0;
  double loss_explanation = 0;
  double loss_output = 0;
};

Evaluation evaluate_objective(const Graph& sp, const ImageTensor& xcur,
                              const std::vector<double>& logits0, int cls,
                              const AttackObjective& objective,
                              const AttackConfig& cfg, double w_out,
                              std::vector<double>* grad) {
  const std::vector<Method> members = attack_members(cfg.explainer);
  const int J = static_cast<int>(members.size());
  Tape tape = forward_tape(sp, xcur);
  const std::vector<double>& logits = tape.acts[sp.logits_stage()];
  const std::int64_t plane =
      static_cast<std::int64_t>(sp.input_shape.h) * sp.input_shape.w;

  // Member maps and their normalized versions.
  std::vector<Heatmap> raw(J);
  std::vector<std::vector<double>> signals(J);
  std::vector<Heatmap> norm(J);
  for (int j = 0; j < J; ++j) {
    raw[j] = raw_member_map(sp, tape, xcur, cls, members[j], cfg.lrp_eps, &signals[j]);
    norm[j] = explain::normalize_heatmap(raw[j], true);
  }
  Heatmap agg = norm[0];
  for (int j = 1; j < J; ++j) {
    for (std::int64_t i = 0; i < agg.count(); ++i) agg.v[i] += norm[j].v[i];
  }
  for (double& v : agg.v) v /= J;

  Evaluation ev;
  std::vector<double> d_agg(plane, 0.0);  // d loss_e / d aggregated map
  if (const auto* tgt = std::get_if<TargetExplanation>(&objective)) {
    for (std::int64_t i = 0; i < plane; ++i) {
      const double d = agg.v[i] - tgt->target.v[i];
      ev.loss_explanation += d * d;
      d_agg[i] = 2.0 * d;
    }
  } else {
    const auto& blank = std::get<BlankRegion>(objective);
    for (std::int64_t i = 0; i < plane; ++i) {
      if (blank.mask[i]) {
        ev.loss_explanation += agg.v[i];
        d_agg[i] = 1.0;
      }
    }
  }
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double d = logits[k] - logits0[k];
    ev.loss_output += d * d;
  }
  ev.loss = cfg.w_explanation * ev.loss_explanation + w_out * ev.loss_output;

  if (grad == nullptr) return ev;

  grad->assign(xcur.v.size(), 0.0);
  // Output-preservation term: one reverse sweep seeded with 2*(l - l0).
  if (w_out != 0.0) {
    std::vector<double> seed(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k)
      seed[k] = 2.0 * w_out * (logits[k] - logits0[k]);
    std::vector<double> gout = backward_sweep(sp, tape, seed, BackwardStyle::Plain);
    for (std::size_t i = 0; i < grad->size(); ++i) (*grad)[i] += gout[i];
  }
  // Explanation term: chain through the aggregate mean, the normalization,
  // the positive clip and the channel reduction, then one map VJP per
  // member.
  for (int j = 0; j < J; ++j) {
    const double s = raw[j].sum();
    if (s == 0.0) continue;  // degenerate map normalized to uniform: no signal
    double inner = 0;
    for (std::int64_t i = 0; i < plane; ++i) inner += d_agg[i] * norm[j].v[i];
    std::vector<double> u(sp.input_shape.count(), 0.0);
    for (std::int64_t i = 0; i < plane; ++i) {
      const double d_rawmap = cfg.w_explanation * (d_agg[i] - inner) / (J * s);
      for (int c = 0; c < sp.input_shape.c; ++c) {
        const std::int64_t k = c * plane + i;
        // Subgradient of |.| with sign(0) := +1, so pixels whose relevance
        // sits exactly at zero still receive a push toward the target.
        const double sg = signals[j][k] >= 0 ? 1.0 : -1.0;
        u[k] = d_rawmap * sg;
      }
    }
    std::vector<double> gj;
    switch (members[j]) {
      case Method::SM:
        gj = backward_map_vjp(sp, xcur, cls, BackwardStyle::Plain, u);
        break;
      case Method::GB:
        gj = backward_map_vjp(sp, xcur, cls, BackwardStyle::Guided, u);
        break;
      case Method::LRP:
        gj = lrp_map_vjp(sp, xcur, cls, cfg.lrp_eps, u);
        break;
      default:
        throw ContractError("method cannot be attacked");
    }
    for (std::size_t i = 0; i < grad->size(); ++i) (*grad)[i] += gj[i];
  }
  return ev;
}

/// The attacked explainer's normalized explanation on the ReLU graph, using
/// the same magnitude convention as the optimization loop.
Heatmap relu_explanation(const Graph& relu, const ImageTensor& x, int cls,
                         const AttackConfig& cfg) {
  const std::vector<Method> members = attack_members(cfg.explainer);
  std::vector<Heatmap> norm;
  for (Method m : members) {
    Heatmap e;
    switch (m) {
      case Method::SM: e = explain::saliency(relu, x, cls); break;
      case Method::GB: e = explain::guided_backprop(relu, x, cls); break;
      case Method::LRP: e = explain::lrp_epsilon(relu, x, cls, cfg.lrp_eps); break;
      default: throw ContractError("method cannot be attacked");
    }
    for (double& v : e.v) v = std::abs(v);
    norm.push_back(explain::normalize_heatmap(e, true));
  }
  if (norm.size() == 1) return norm[0];
  agg::HeatmapStack stack;
  stack.maps = std::move(norm);
  return agg::agg_mean(stack);
}

int argmax_class(const std::vector<double>& logits) {
  int best = 0;
  for (std::size_t k = 1; k < logits.size(); ++k) {
    if (logits[k] > logits[best]) best = static_cast<int>(k);
  }
  return best;
}

}  // namespace

Heatmap attacked_explanation(const Graph& relu_graph, const ImageTensor& x,
                             const AttackConfig& cfg) {
  const int cls = argmax_class(forward(relu_graph, x).logits);
  return relu_explanation(relu_graph, x, cls, cfg);
}

AttackResult attack(const Graph& relu_graph, const ImageTensor& x,
                    const AttackObjective& objective, const AttackConfig& cfg) {
  cfg.validate();
  x.validate();
  if (const auto* tgt = std::get_if<TargetExplanation>(&objective)) {
    if (tgt->target.h != x.shape.h || tgt->target.w != x.shape.w)
      throw ShapeError("target explanation shape does not match input");
  } else {
    const auto& blank = std::get<BlankRegion>(objective);
    if (blank.h != x.shape.h || blank.w != x.shape.w)
      throw ShapeError("blank mask shape does not match input");
    if (blank.active() == 0) throw ContractError("blank mask is empty");
  }

  const ForwardResult orig = forward(relu_graph, x);
  const int cls = argmax_class(orig.logits);

  Graph sp = substitute_nonlinearity(relu_graph, Nonlinearity::SoftPlus, cfg.beta_start);
  const std::vector<double> logits0 = [&] {
    Tape t = forward_tape(sp, x);
    return t.acts[sp.logits_stage()];
  }();

  AttackResult res;
  res.adversarial = x;
  res.adversarial.value_range = std::make_pair(cfg.clamp_lo, cfg.clamp_hi);
  for (double& v : res.adversarial.v) v = std::clamp(v, cfg.clamp_lo, cfg.clamp_hi);

  // Balance the output term against the explanation term: take one pure
  // explanation-descent probe step, then weight the output term so both
  // terms pull with equal gradient magnitude at that point. A raw value
  // ratio is ill-conditioned here because the output term starts at exactly
  // zero.
  double w_out = cfg.w_output;
  if (w_out < 0) {
    w_out = 1.0;
    if (cfg.iterations > 0 && cfg.lr > 0) {
      set_beta(sp, beta_at(cfg, 0));
      std::vector<double> g;
      evaluate_objective(sp, res.adversarial, logits0, cls, objective, cfg, 0.0, &g);
      ImageTensor probe = res.adversarial;
      for (std::size_t i = 0; i < probe.v.size(); ++i)
        probe.v[i] = std::clamp(probe.v[i] - cfg.lr * g[i], cfg.clamp_lo, cfg.clamp_hi);
      std::vector<double> ge, gout;
      evaluate_objective(sp, probe, logits0, cls, objective, cfg, 0.0, &ge);
      {
        // Output-term gradient alone at the probe point.
        Tape tape = forward_tape(sp, probe);
        const std::vector<double>& logits = tape.acts[sp.logits_stage()];
        std::vector<double> seed(logits.size());
        for (std::size_t k = 0; k < logits.size(); ++k)
          seed[k] = 2.0 * (logits[k] - logits0[k]);
        gout = backward_sweep(sp, tape, seed, BackwardStyle::Plain);
      }
      double ne = 0, no = 0;
      for (double v : ge) ne += v * v;
      for (double v : gout) no += v * v;
      if (no > 0 && ne > 0)
        w_out = std::clamp(std::sqrt(ne / no), 1e-6, 1e6);
    }
  }
  res.w_output_used = w_out;

  set_beta(sp, beta_at(cfg, 0));
  std::vector<double> grad;
  Evaluation ev =
      evaluate_objective(sp, res.adversarial, logits0, cls, objective, cfg, w_out, &grad);
  res.loss_trace.push_back(ev.loss);

  // Adam on the input pixels. The explanation term of normalized maps lives
  // at a tiny raw scale, so fixed-size gradient steps either stall or blow
  // past the optimum; the published attack settings (lr 1e-3 over a long
  // schedule) assume per-coordinate step normalization.
  double lr = cfg.lr;
  std::vector<double> m1(grad.size(), 0.0), m2(grad.size(), 0.0);
  const double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;
  for (int t = 0; t < cfg.iterations; ++t) {
    const double next_beta = beta_at(cfg, std::min(t + 1, cfg.iterations - 1));
    for (std::size_t i = 0; i < grad.size(); ++i) {
      m1[i] = b1 * m1[i] + (1 - b1) * grad[i];
      m2[i] = b2 * m2[i] + (1 - b2) * grad[i] * grad[i];
    }
    const double c1 = 1.0 - std::pow(b1, t + 1);
    const double c2 = 1.0 - std::pow(b2, t + 1);
    int retries = 0;
    ImageTensor cand = res.adversarial;
    Evaluation cand_ev;
    std::vector<double> cand_grad;
    while (true) {
      for (std::size_t i = 0; i < cand.v.size(); ++i) {
        const double step = lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + adam_eps);
        cand.v[i] = res.adversarial.v[i] - step;
      }
      if (cfg.max_input_mse > 0) {
        // Project the perturbation back onto the budget ball; the clamp
        // below only shrinks it further.
        double mse = 0;
        for (std::size_t i = 0; i < cand.v.size(); ++i) {
          const double d = cand.v[i] - x.v[i];
          mse += d * d;
        }
        mse /= static_cast<double>(cand.v.size());
        if (mse > cfg.max_input_mse) {
          const double shrink = std::sqrt(cfg.max_input_mse / mse);
          for (std::size_t i = 0; i < cand.v.size(); ++i)
            cand.v[i] = x.v[i] + shrink * (cand.v[i] - x.v[i]);
        }
      }
      for (std::size_t i = 0; i < cand.v.size(); ++i)
        cand.v[i] = std::clamp(cand.v[i], cfg.clamp_lo, cfg.clamp_hi);
      bool ok = true;
      try {
        set_beta(sp, next_beta);
        cand_ev = evaluate_objective(sp, cand, logits0, cls, objective, cfg, w_out,
                                     &cand_grad);
        ok = std::isfinite(cand_ev.loss);
      } catch (const NumericError&) {
        ok = false;
      }
      if (ok) break;
      if (++retries > 5)
        throw AttackDiverged("attack loss stayed non-finite after 5 step halvings",
                             res.loss_trace);
      lr *= 0.5;
    }
    res.adversarial = std::move(cand);
    grad = std::move(cand_grad);
    res.loss_trace.push_back(cand_ev.loss);
  }

  // Final reporting always uses the original ReLU graph.
  res.explanation_original = relu_explanation(relu_graph, x, cls, cfg);
  res.explanation_adversarial = relu_explanation(relu_graph, res.adversarial, cls, cfg);
  if (const auto* tgt = std::get_if<TargetExplanation>(&objective)) {
    res.explanation_target = tgt->target;
    using eval::Metric;
    res.mse_diff = eval::metric_diff(res.explanation_target, res.explanation_adversarial,
                                     res.explanation_original, {Metric::MSE, 0.10});
    res.pcc_diff = eval::metric_diff(res.explanation_target, res.explanation_adversarial,
                                     res.explanation_original, {Metric::PCC, 0.10});
    res.topk_diff = eval::metric_diff(res.explanation_target, res.explanation_adversarial,
                                      res.explanation_original, {Metric::TopK, 0.10});
  } else {
    const auto& blank = std::get<BlankRegion>(objective);
    res.explanation_target = Heatmap::zeros(x.shape.h, x.shape.w);
    for (std::int64_t i = 0; i < res.explanation_target.count(); ++i)
      res.explanation_target.v[i] = blank.mask[i];
    res.explanation_target.prov.method = "blank-mask";
    const double nan = std::numeric_limits<double>::quiet_NaN();
    res.mse_diff = res.pcc_diff = res.topk_diff = nan;
  }

  double l2 = 0;
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    const double d = res.adversarial.v[i] - x.v[i];
    l2 += d * d;
  }
  res.input_mse = l2 / static_cast<double>(x.v.size());
  res.label_preserved =
      argmax_class(forward(relu_graph, res.adversarial).logits) == cls;
  return res;
}

BlankAttackResult attack_blank_region(const Graph& relu_graph, const ImageTensor& x,
                                      const BlankRegion& region,
                                      const AttackConfig& cfg) {
  BlankAttackResult out;
  out.result = attack(relu_graph, x, AttackObjective(region), cfg);
  auto in_mask = [&](const Heatmap& e) {
    double s = 0;
    for (std::int64_t i = 0; i < e.count(); ++i) {
      if (region.mask[i]) s += e.v[i];
    }
    return s;
  };
  out.start_fraction = in_mask(out.result.explanation_original);
  out.end_fraction = in_mask(out.result.explanation_adversarial);
  out.preserved =
      out.start_fraction > 0 ? out.end_fraction / out.start_fraction : 1.0;
  return out;
}

TransferResult transfer_matrix(const Graph& relu_graph,
                               std::span<const ImageTensor> images,
                               const std::vector<AttackedExplainer>& attacked_set,
                               const std::vector<explain::Method>& evaluated_set,
                               const AttackConfig& cfg) {
  if (images.size() < 2)
    throw ContractError("transfer experiments need >= 2 images (targets are paired)");
  TransferResult result;
  result.attacked = attacked_set;
  result.evaluated = evaluated_set;
  const std::size_t A = attacked_set.size(), B = evaluated_set.size();
  result.mean_pcc_diff.assign(A, std::vector<double>(B, 0.0));
  result.mean_topk_diff.assign(A, std::vector<double>(B, 0.0));
  result.mean_mse_diff.assign(A, std::vector<double>(B, 0.0));

  explain::ExplainerOptions eopts;
  eopts.lrp_eps = cfg.lrp_eps;
  for (std::size_t ai = 0; ai < A; ++ai) {
    AttackConfig run_cfg = cfg;
    run_cfg.explainer = attacked_set[ai];
    for (std::size_t img = 0; img < images.size(); ++img) {
      const ImageTensor& x = images[img];
      const int cls = argmax_class(forward(relu_graph, x).logits);
      const ImageTensor& target_img = images[(img + 1) % images.size()];
      const int target_cls = argmax_class(forward(relu_graph, target_img).logits);

      // The optimization target is the attacked method's map of the target
      // image, explained at that image's own prediction.
      TargetExplanation objective{
          relu_explanation(relu_graph, target_img, target_cls, run_cfg)};
      AttackResult run = attack(relu_graph, x, objective, run_cfg);

      for (std::size_t bi = 0; bi < B; ++bi) {
        const explain::Method m = evaluated_set[bi];
        const Heatmap e_target = explain::normalize_heatmap(
            explain::compute(m, relu_graph, target_img, target_cls, eopts), true);
        const Heatmap e_orig = explain::normalize_heatmap(
            explain::compute(m, relu_graph, x, cls, eopts), true);
        const Heatmap e_adv = explain::normalize_heatmap(
            explain::compute(m, relu_graph, run.adversarial, cls, eopts), true);
        using eval::Metric;
        TransferRecord rec;
        rec.image_id = static_cast<std::int64_t>(img);
        rec.attacked = attacked_set[ai];
        rec.evaluated = m;
        rec.mse_before = eval::similarity(e_target, e_orig, {Metric::MSE, 0.10});
        rec.mse_after = eval::similarity(e_target, e_adv, {Metric::MSE, 0.10});
        rec.pcc_before = eval::similarity(e_target, e_orig, {Metric::PCC, 0.10});
        rec.pcc_after = eval::similarity(e_target, e_adv, {Metric::PCC, 0.10});
        rec.topk_before = eval::similarity(e_target, e_orig, {Metric::TopK, 0.10});
        rec.topk_after = eval::similarity(e_target, e_adv, {Metric::TopK, 0.10});
        rec.input_mse = run.input_mse;
        rec.label_preserved = run.label_preserved;
        result.records.push_back(rec);
        result.mean_pcc_diff[ai][bi] += rec.pcc_diff() / images.size();
        result.mean_topk_diff[ai][bi] += rec.topk_diff() / images.size();
        result.mean_mse_diff[ai][bi] += rec.mse_diff() / images.size();
      }
    }
  }
  return result;
}

}  // namespace xagg::attack
