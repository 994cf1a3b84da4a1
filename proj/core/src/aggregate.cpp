#include "xagg/aggregate.hpp"

#include <cmath>
#include <string>

#include "xagg/explain.hpp"

namespace xagg::agg {

void HeatmapStack::validate() const {
  if (maps.size() < 2) throw ContractError("aggregation requires J >= 2 heatmaps");
  for (const Heatmap& m : maps) {
    m.validate();
    if (m.h != maps[0].h || m.w != maps[0].w)
      throw ShapeError("heatmap stack shapes differ");
    if (std::abs(m.sum() - 1.0) > 1e-9)
      throw ContractError("stack heatmap is not normalized to sum one");
  }
}

namespace {

std::string member_list(const HeatmapStack& stack) {
  std::string s;
  for (const Heatmap& m : stack.maps) {
    if (!s.empty()) s += "+";
    s += m.prov.method.empty() ? "?" : m.prov.method;
  }
  return s;
}

}  // namespace

Heatmap agg_mean(const HeatmapStack& stack) {
  stack.validate();
  const int J = stack.methods();
  Heatmap out = Heatmap::zeros(stack.maps[0].h, stack.maps[0].w);
  for (std::int64_t i = 0; i < out.count(); ++i) {
    double s = 0;
    for (const Heatmap& m : stack.maps) s += m.v[i];
    out.v[i] = s / J;
  }
  out.prov.method = "agg-mean";
  out.prov.flags.push_back("members:" + member_list(stack));
  return out;
}

Heatmap sigma_map(const HeatmapStack& stack) {
  stack.validate();
  const int J = stack.methods();
  Heatmap out = Heatmap::zeros(stack.maps[0].h, stack.maps[0].w);
  for (std::int64_t i = 0; i < out.count(); ++i) {
    double mean = 0;
    for (const Heatmap& m : stack.maps) mean += m.v[i];
    mean /= J;
    double var = 0;
    for (const Heatmap& m : stack.maps) var += (m.v[i] - mean) * (m.v[i] - mean);
    out.v[i] = std::sqrt(var / J);  // population deviation, well-defined at J=2
  }
  out.prov.method = "sigma";
  return out;
}

Heatmap agg_var(const HeatmapStack& stack, const AggVarConfig& cfg) {
  stack.validate();
  if (!(cfg.epsilon > 0)) throw ContractError("agg_var requires epsilon > 0");
  const int J = stack.methods();
  Heatmap sigma = sigma_map(stack);
  Heatmap out = Heatmap::zeros(stack.maps[0].h, stack.maps[0].w);
  for (std::int64_t i = 0; i < out.count(); ++i) {
    double s = 0;
    for (const Heatmap& m : stack.maps) s += m.v[i] / (sigma.v[i] + cfg.epsilon);
    out.v[i] = s / J;
  }
  out = explain::normalize_heatmap(out, false);
  out.prov.method = "agg-var";
  out.prov.params["epsilon"] = cfg.epsilon;
  out.prov.flags.push_back("members:" + member_list(stack));
  return out;
}

AggVarConfig epsilon_from_dataset(const std::vector<Heatmap>& sigma_maps,
                                  double multiplier) {
  if (sigma_maps.empty())
    throw ContractError("epsilon_from_dataset requires at least one sigma map");
  if (!(multiplier > 0)) throw ContractError("epsilon multiplier must be positive");
  double sum = 0;
  std::int64_t n = 0;
  for (const Heatmap& m : sigma_maps) {
    m.validate();
    for (double v : m.v) sum += v;
    n += m.count();
  }
  AggVarConfig cfg;
  cfg.multiplier = multiplier;
  cfg.epsilon = multiplier * (sum / static_cast<double>(n));
  return cfg;
}

DecompositionReport decompose_mse(const std::vector<SyntheticTruthCase>& cases) {
  if (cases.empty()) throw ContractError("decompose_mse requires at least one case");
  const int J = static_cast<int>(cases[0].observations.size());
  if (J < 2) throw ContractError("decompose_mse requires >= 2 methods per case");
  for (const SyntheticTruthCase& c : cases) {
    if (static_cast<int>(c.observations.size()) != J)
      throw ShapeError("cases disagree on the number of methods");
    for (const Heatmap& o : c.observations) {
      if (o.h != c.truth.h || o.w != c.truth.w)
        throw ShapeError("observation shape differs from truth");
    }
  }
  const double N = static_cast<double>(cases.size());
  DecompositionReport rep;
  rep.per_method_mse.assign(J, 0.0);
  for (const SyntheticTruthCase& c : cases) {
    const std::int64_t px = c.truth.count();
    std::vector<double> mean(px, 0.0);
    for (const Heatmap& o : c.observations) {
      for (std::int64_t i = 0; i < px; ++i) mean[i] += o.v[i];
    }
    for (std::int64_t i = 0; i < px; ++i) mean[i] /= J;
    for (int j = 0; j < J; ++j) {
      double err = 0, spread = 0;
      for (std::int64_t i = 0; i < px; ++i) {
        const double d = c.observations[j].v[i] - c.truth.v[i];
        err += d * d;
        const double s = mean[i] - c.observations[j].v[i];
        spread += s * s;
      }
      rep.per_method_mse[j] += err / N;
      rep.variance_term += spread / (N * J);
    }
    double agg_err = 0;
    for (std::int64_t i = 0; i < px; ++i) {
      const double d = mean[i] - c.truth.v[i];
      agg_err += d * d;
    }
    rep.aggregate_mse += agg_err / N;
  }
  for (double m : rep.per_method_mse) rep.mean_mse += m / J;
  return rep;
}

std::vector<std::pair<int, int>> method_pairs(int methods) {
  if (methods < 2) throw ContractError("method pairs require >= 2 methods");
  std::vector<std::pair<int, int>> pairs;
  for (int j = 0; j < methods; ++j) {
    for (int k = j + 1; k < methods; ++k) pairs.emplace_back(j, k);
  }
  return pairs;
}

std::vector<HeatmapStack> pairwise_stacks(const std::vector<Heatmap>& maps) {
  std::vector<HeatmapStack> stacks;
  for (auto [j, k] : method_pairs(static_cast<int>(maps.size()))) {
    HeatmapStack s;
    s.maps = {maps[j], maps[k]};
    stacks.push_back(std::move(s));
  }
  return stacks;
}

}  // namespace xagg::agg
