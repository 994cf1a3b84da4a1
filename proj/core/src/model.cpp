#include "xagg/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "layer_ops.hpp"
#include "xagg/rng.hpp"

namespace xagg::model {

namespace {

using detail::ConvGeom;
using nlohmann::json;

}  // namespace

void TrainConfig::validate() const {
  if (patience < 1) throw ContractError("patience must be >= 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ContractError("validation fraction must be in (0,1)");
  if (batch_size < 1) throw ContractError("batch size must be >= 1");
  if (max_epochs < 1) throw ContractError("max epochs must be >= 1");
  if (!(rho > 0.0 && rho < 1.0)) throw ContractError("rho must be in (0,1)");
  if (!(eps_opt > 0.0)) throw ContractError("eps_opt must be positive");
}

Graph Architecture::compile(std::uint64_t seed) const {
  Graph g;
  g.input_shape = input_shape;
  Shape3 s = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& spec = layers[i];
    switch (spec.kind) {
      case LayerKind::Conv2D: {
        const int in_c = s.c;
        Tensor w = Tensor::zeros({spec.out, in_c, spec.kh, spec.kw});
        const double fan_in = static_cast<double>(in_c) * spec.kh * spec.kw;
        const double fan_out = static_cast<double>(spec.out) * spec.kh * spec.kw;
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        RandomEngine rng(derive_seed(seed, 0x696e6974, i));  // "init"
        std::uniform_real_distribution<double> u(-limit, limit);
        for (double& v : w.v) v = u(rng);
        g.layers.push_back(Layer::conv2d(std::move(w), Tensor::zeros({spec.out})));
        s = Shape3{spec.out, s.h - spec.kh + 1, s.w - spec.kw + 1};
        break;
      }
      case LayerKind::Dense: {
        const int in_dim = static_cast<int>(s.count());
        Tensor w = Tensor::zeros({spec.out, in_dim});
        const double limit = std::sqrt(6.0 / (in_dim + spec.out));
        RandomEngine rng(derive_seed(seed, 0x696e6974, i));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (double& v : w.v) v = u(rng);
        g.layers.push_back(Layer::dense(std::move(w), Tensor::zeros({spec.out})));
        s = Shape3{spec.out, 1, 1};
        break;
      }
      case LayerKind::MaxPool2D:
        g.layers.push_back(Layer::maxpool2d(spec.ph, spec.pw));
        s = Shape3{s.c, s.h / spec.ph, s.w / spec.pw};
        break;
      case LayerKind::ReLU:
        g.layers.push_back(Layer::relu());
        break;
      case LayerKind::SoftPlus:
        g.layers.push_back(Layer::softplus(spec.beta));
        break;
      case LayerKind::Dropout:
        g.layers.push_back(Layer::dropout(spec.rate));
        break;
      case LayerKind::Flatten:
        g.layers.push_back(Layer::flatten());
        s = Shape3{static_cast<int>(s.count()), 1, 1};
        break;
      case LayerKind::Softmax:
        g.layers.push_back(Layer::softmax());
        break;
    }
  }
  g.finalize();
  return g;
}

Architecture reference_cnn() {
  Architecture a;
  a.input_shape = Shape3{1, 28, 28};
  using LS = Architecture::LayerSpec;
  a.layers = {
      LS{.kind = LayerKind::Conv2D, .out = 32, .kh = 3, .kw = 3},
      LS{.kind = LayerKind::ReLU},
      LS{.kind = LayerKind::Conv2D, .out = 64, .kh = 3, .kw = 3},
      LS{.kind = LayerKind::ReLU},
      LS{.kind = LayerKind::MaxPool2D, .ph = 2, .pw = 2},
      LS{.kind = LayerKind::Dropout, .rate = 0.25},
      LS{.kind = LayerKind::Flatten},
      LS{.kind = LayerKind::Dense, .out = 128},
      LS{.kind = LayerKind::ReLU},
      LS{.kind = LayerKind::Dropout, .rate = 0.5},
      LS{.kind = LayerKind::Dense, .out = 10},
  };
  return a;
}

Architecture linear_model(int inputs, int outputs) {
  Architecture a;
  a.input_shape = Shape3{inputs, 1, 1};
  a.layers = {Architecture::LayerSpec{.kind = LayerKind::Dense, .out = outputs}};
  return a;
}

void Adadelta::init(std::size_t n) {
  acc_grad_sq.assign(n, 0.0);
  acc_update_sq.assign(n, 0.0);
}

void Adadelta::step(std::span<double> params, std::span<const double> grads) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    acc_grad_sq[i] = rho * acc_grad_sq[i] + (1.0 - rho) * g * g;
    const double update =
        -std::sqrt(acc_update_sq[i] + eps) / std::sqrt(acc_grad_sq[i] + eps) * g;
    acc_update_sq[i] = rho * acc_update_sq[i] + (1.0 - rho) * update * update;
    params[i] += update;
  }
}

namespace {

/// Batched evaluation engine over the Graph's layers. Activations are laid
/// out image-major: buffer[b * stage_count + offset].
struct BatchedNet {
  const Graph& g;
  int capacity;  // max batch size
  std::vector<std::vector<double>> acts;
  std::vector<std::vector<double>> dacts;
  std::vector<std::vector<std::int32_t>> argmax;
  std::vector<std::vector<double>> dropout_scale;  // per dropout layer
  std::vector<std::vector<double>> col;            // per conv layer scratch

  explicit BatchedNet(const Graph& graph, int max_batch)
      : g(graph), capacity(max_batch) {
    acts.resize(g.layers.size() + 1);
    dacts.resize(g.layers.size() + 1);
    argmax.resize(g.layers.size());
    dropout_scale.resize(g.layers.size());
    col.resize(g.layers.size());
    for (std::size_t i = 0; i <= g.layers.size(); ++i) {
      acts[i].resize(static_cast<std::size_t>(capacity) * g.stages()[i].count());
      dacts[i].resize(acts[i].size());
    }
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
      if (g.layers[i].kind == LayerKind::MaxPool2D)
        argmax[i].resize(static_cast<std::size_t>(capacity) * g.stages()[i + 1].count());
      if (g.layers[i].kind == LayerKind::Dropout)
        dropout_scale[i].resize(static_cast<std::size_t>(capacity) *
                                g.stages()[i].count());
      if (g.layers[i].kind == LayerKind::Conv2D) {
        const Shape3 in = g.stages()[i];
        const Layer& l = g.layers[i];
        ConvGeom geom{in.c, in.h, in.w, l.weight.dims[0], l.weight.dims[2],
                      l.weight.dims[3]};
        col[i].resize(static_cast<std::size_t>(geom.patch()) * geom.cols());
      }
    }
  }

  ConvGeom geom_at(std::size_t i) const {
    const Shape3 in = g.stages()[i];
    const Layer& l = g.layers[i];
    return ConvGeom{in.c, in.h, in.w, l.weight.dims[0], l.weight.dims[2],
                    l.weight.dims[3]};
  }

  /// training=true applies inverted dropout using rng.
  void forward(int B, bool training, RandomEngine* rng) {
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
      const Layer& l = g.layers[i];
      const std::int64_t in_count = g.stages()[i].count();
      const std::int64_t out_count = g.stages()[i + 1].count();
      const double* in = acts[i].data();
      double* out = acts[i + 1].data();
      switch (l.kind) {
        case LayerKind::Conv2D: {
          const ConvGeom geom = geom_at(i);
          for (int b = 0; b < B; ++b) {
            detail::conv_forward(l.weight.data(), l.bias.data(), in + b * in_count,
                                 geom, out + b * out_count, col[i].data());
          }
          break;
        }
        case LayerKind::MaxPool2D: {
          const Shape3 s = g.stages()[i];
          for (int b = 0; b < B; ++b) {
            detail::maxpool_forward(in + b * in_count, s.c, s.h, s.w, l.pool_h,
                                    l.pool_w, out + b * out_count,
                                    argmax[i].data() + b * out_count);
            // Argmax indices are image-local; offset them for scatter later.
          }
          break;
        }
        case LayerKind::Dense: {
          const int in_dim = l.weight.dims[1], out_dim = l.weight.dims[0];
          detail::CMapRM x(in, B, in_dim);
          detail::CMapRM w(l.weight.data(), out_dim, in_dim);
          detail::MapRM y(out, B, out_dim);
          y.noalias() = x * w.transpose();
          y.rowwise() +=
              Eigen::Map<const Eigen::RowVectorXd>(l.bias.data(), out_dim);
          break;
        }
        case LayerKind::ReLU:
          for (std::int64_t j = 0; j < B * in_count; ++j)
            out[j] = in[j] > 0 ? in[j] : 0.0;
          break;
        case LayerKind::SoftPlus:
          for (std::int64_t j = 0; j < B * in_count; ++j)
            out[j] = detail::softplus_value(in[j], l.beta);
          break;
        case LayerKind::Dropout: {
          if (training && l.rate > 0) {
            const double keep = 1.0 - l.rate;
            std::uniform_real_distribution<double> u(0.0, 1.0);
            double* scale = dropout_scale[i].data();
            for (std::int64_t j = 0; j < B * in_count; ++j) {
              scale[j] = u(*rng) < keep ? 1.0 / keep : 0.0;
              out[j] = in[j] * scale[j];
            }
          } else {
            std::memcpy(out, in, sizeof(double) * B * in_count);
          }
          break;
        }
        case LayerKind::Flatten:
          std::memcpy(out, in, sizeof(double) * B * in_count);
          break;
        case LayerKind::Softmax:
          for (int b = 0; b < B; ++b) {
            const double* z = in + b * in_count;
            double* p = out + b * out_count;
            const double m = *std::max_element(z, z + in_count);
            double sum = 0;
            for (std::int64_t k = 0; k < in_count; ++k) {
              p[k] = std::exp(z[k] - m);
              sum += p[k];
            }
            for (std::int64_t k = 0; k < in_count; ++k) p[k] /= sum;
          }
          break;
      }
    }
  }

  /// Backward from dacts[last]; accumulates parameter gradients (mean
  /// weighting is the caller's concern) and was_training dropout masks.
  void backward(int B, bool training, std::vector<Tensor>& dweight,
                std::vector<Tensor>& dbias) {
    for (int li = static_cast<int>(g.layers.size()) - 1; li >= 0; --li) {
      const Layer& l = g.layers[li];
      const std::int64_t in_count = g.stages()[li].count();
      const std::int64_t out_count = g.stages()[li + 1].count();
      const double* dout = dacts[li + 1].data();
      double* din = dacts[li].data();
      const double* in = acts[li].data();
      switch (l.kind) {
        case LayerKind::Conv2D: {
          const ConvGeom geom = geom_at(li);
          for (int b = 0; b < B; ++b) {
            detail::conv_input_vjp(l.weight.data(), dout + b * out_count, geom,
                                   din + b * in_count, col[li].data());
            detail::conv_param_grad_add(dout + b * out_count, in + b * in_count,
                                        geom, dweight[li].data(),
                                        dbias[li].data(), col[li].data());
          }
          break;
        }
        case LayerKind::MaxPool2D: {
          std::memset(din, 0, sizeof(double) * B * in_count);
          for (int b = 0; b < B; ++b) {
            detail::maxpool_scatter_add(dout + b * out_count,
                                        argmax[li].data() + b * out_count,
                                        out_count, din + b * in_count);
          }
          break;
        }
        case LayerKind::Dense: {
          const int in_dim = l.weight.dims[1], out_dim = l.weight.dims[0];
          detail::CMapRM dy(dout, B, out_dim);
          detail::CMapRM x(in, B, in_dim);
          detail::CMapRM w(l.weight.data(), out_dim, in_dim);
          detail::MapRM dx(din, B, in_dim);
          dx.noalias() = dy * w;
          detail::MapRM dw(dweight[li].data(), out_dim, in_dim);
          dw.noalias() += dy.transpose() * x;
          Eigen::Map<Eigen::VectorXd> db(dbias[li].data(), out_dim);
          db.noalias() += dy.colwise().sum().transpose();
          break;
        }
        case LayerKind::ReLU:
          for (std::int64_t j = 0; j < B * in_count; ++j)
            din[j] = in[j] > 0 ? dout[j] : 0.0;
          break;
        case LayerKind::SoftPlus:
          for (std::int64_t j = 0; j < B * in_count; ++j)
            din[j] = dout[j] * detail::sigmoid(l.beta * in[j]);
          break;
        case LayerKind::Dropout:
          if (training && l.rate > 0) {
            const double* scale = dropout_scale[li].data();
            for (std::int64_t j = 0; j < B * in_count; ++j)
              din[j] = dout[j] * scale[j];
          } else {
            std::memcpy(din, dout, sizeof(double) * B * in_count);
          }
          break;
        case LayerKind::Flatten:
          std::memcpy(din, dout, sizeof(double) * B * in_count);
          break;
        case LayerKind::Softmax:
          throw ContractError("training operates on the logit head");
      }
    }
  }
};

void fill_batch(const io::Dataset& data, std::span<const int> idx, int B,
                std::vector<double>& dst) {
  const std::int64_t count = data.shape.count();
  for (int b = 0; b < B; ++b) {
    std::memcpy(dst.data() + b * count, data.images.data() + std::int64_t(idx[b]) * count,
                sizeof(double) * count);
  }
}

/// Mean cross-entropy over the batch; fills dlogits = (softmax - onehot)/B.
double softmax_ce(const double* logits, std::span<const int> labels, int B, int K,
                  double* dlogits) {
  double loss = 0;
  for (int b = 0; b < B; ++b) {
    const double* z = logits + std::int64_t(b) * K;
    double* dz = dlogits == nullptr ? nullptr : dlogits + std::int64_t(b) * K;
    const double m = *std::max_element(z, z + K);
    double sum = 0;
    for (int k = 0; k < K; ++k) sum += std::exp(z[k] - m);
    const double logsum = m + std::log(sum);
    loss += logsum - z[labels[b]];
    if (dz != nullptr) {
      for (int k = 0; k < K; ++k)
        dz[k] = (std::exp(z[k] - logsum) - (k == labels[b] ? 1.0 : 0.0)) / B;
    }
  }
  return loss / B;
}

std::vector<Tensor> snapshot_params(const Graph& g) {
  std::vector<Tensor> out;
  for (const Layer& l : g.layers) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

void restore_params(Graph& g, const std::vector<Tensor>& snap) {
  std::size_t k = 0;
  for (Layer& l : g.layers) {
    l.weight = snap[k++];
    l.bias = snap[k++];
  }
}

}  // namespace

std::pair<double, double> evaluate_loss_accuracy(const Graph& g,
                                                 const io::Dataset& data) {
  const int K = g.output_dim();
  const int B = 256;
  BatchedNet net(g, B);
  double loss_sum = 0;
  std::int64_t correct = 0;
  for (int start = 0; start < data.n; start += B) {
    const int cur = std::min(B, data.n - start);
    std::vector<int> idx(cur);
    std::iota(idx.begin(), idx.end(), start);
    fill_batch(data, idx, cur, net.acts[0]);
    net.forward(cur, false, nullptr);
    const double* logits = net.acts[g.logits_stage()].data();
    std::vector<int> labels(cur);
    for (int b = 0; b < cur; ++b) labels[b] = data.label(start + b);
    loss_sum += softmax_ce(logits, labels, cur, K, nullptr) * cur;
    for (int b = 0; b < cur; ++b) {
      const double* z = logits + std::int64_t(b) * K;
      int best = 0;
      for (int k = 1; k < K; ++k) {
        if (z[k] > z[best]) best = k;
      }
      if (best == labels[b]) ++correct;
    }
  }
  return {loss_sum / data.n, static_cast<double>(correct) / data.n};
}

double evaluate_accuracy(const Graph& g, const io::Dataset& test) {
  return evaluate_loss_accuracy(g, test).second;
}

Checkpoint train(const Architecture& arch, const io::Dataset& data,
                 const TrainConfig& cfg, std::vector<EpochStats>* trace) {
  cfg.validate();
  if (data.n < 2) throw ContractError("training requires at least two samples");

  Checkpoint ckpt;
  ckpt.arch = arch;
  ckpt.graph = arch.compile(cfg.seed);
  Graph& g = ckpt.graph;
  if (!g.layers.empty() && g.layers.back().kind == LayerKind::Softmax)
    throw ContractError("training expects a logit head (loss applies softmax)");
  const int K = g.output_dim();

  // Deterministic split: shuffle all indices once, hold out the tail.
  std::vector<int> order(data.n);
  std::iota(order.begin(), order.end(), 0);
  {
    RandomEngine rng(derive_seed(cfg.seed, 0x73706c69));  // "spli"
    std::shuffle(order.begin(), order.end(), rng);
  }
  const int val_n = std::max(1, static_cast<int>(std::llround(data.n * cfg.val_fraction)));
  const int train_n = data.n - val_n;
  if (train_n < 1) throw ContractError("validation split leaves no training data");
  std::vector<int> train_idx(order.begin(), order.begin() + train_n);
  std::vector<int> val_idx(order.begin() + train_n, order.end());

  io::Dataset val;
  val.id = data.id + "-val";
  val.shape = data.shape;
  val.n = val_n;
  val.images.resize(static_cast<std::size_t>(val_n) * data.shape.count());
  val.labels.resize(val_n);
  for (int i = 0; i < val_n; ++i) {
    std::memcpy(val.images.data() + std::int64_t(i) * data.shape.count(),
                data.images.data() + std::int64_t(val_idx[i]) * data.shape.count(),
                sizeof(double) * data.shape.count());
    val.labels[i] = data.labels[val_idx[i]];
  }

  BatchedNet net(g, cfg.batch_size);
  std::vector<Tensor> dweight, dbias;
  std::vector<Adadelta> opt_w, opt_b;
  for (const Layer& l : g.layers) {
    dweight.push_back(Tensor::zeros(l.weight.dims.empty() ? std::vector<int>{0}
                                                          : l.weight.dims));
    dbias.push_back(Tensor::zeros(l.bias.dims.empty() ? std::vector<int>{0}
                                                      : l.bias.dims));
    Adadelta aw{cfg.rho, cfg.eps_opt, {}, {}};
    aw.init(l.weight.v.size());
    opt_w.push_back(std::move(aw));
    Adadelta ab{cfg.rho, cfg.eps_opt, {}, {}};
    ab.init(l.bias.v.size());
    opt_b.push_back(std::move(ab));
  }

  RandomEngine dropout_rng(derive_seed(cfg.seed, 0x64726f70));  // "drop"
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params = snapshot_params(g);
  int best_epoch = -1;
  double best_val_acc = 0;
  int epochs_run = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    RandomEngine shuffle_rng(derive_seed(cfg.seed, 0x65706f63, epoch));  // "epoc"
    std::shuffle(train_idx.begin(), train_idx.end(), shuffle_rng);

    double epoch_loss = 0;
    std::int64_t batches = 0;
    for (int start = 0; start < train_n; start += cfg.batch_size) {
      const int B = std::min(cfg.batch_size, train_n - start);
      std::span<const int> idx(train_idx.data() + start, static_cast<std::size_t>(B));
      fill_batch(data, idx, B, net.acts[0]);
      net.forward(B, true, &dropout_rng);

      std::vector<int> labels(B);
      for (int b = 0; b < B; ++b) labels[b] = data.label(idx[b]);
      const int ls = g.logits_stage();
      const double loss =
          softmax_ce(net.acts[ls].data(), labels, B, K, net.dacts[ls].data());
      if (!std::isfinite(loss)) {
        throw TrainingDiverged("non-finite training loss at epoch " +
                               std::to_string(epoch) + ", batch " +
                               std::to_string(batches));
      }
      epoch_loss += loss;
      ++batches;

      for (std::size_t li = 0; li < g.layers.size(); ++li) {
        std::fill(dweight[li].v.begin(), dweight[li].v.end(), 0.0);
        std::fill(dbias[li].v.begin(), dbias[li].v.end(), 0.0);
      }
      net.backward(B, true, dweight, dbias);
      for (std::size_t li = 0; li < g.layers.size(); ++li) {
        Layer& l = g.layers[li];
        if (!l.weight.v.empty()) opt_w[li].step(l.weight.v, dweight[li].v);
        if (!l.bias.v.empty()) opt_b[li].step(l.bias.v, dbias[li].v);
      }
    }

    const auto [val_loss, val_acc] = evaluate_loss_accuracy(g, val);
    ++epochs_run;
    if (trace != nullptr)
      trace->push_back(EpochStats{epoch_loss / std::max<std::int64_t>(batches, 1),
                                  val_loss, val_acc});
    if (cfg.verbose) {
      std::fprintf(stderr, "epoch %d: train loss %.4f, val loss %.4f, val acc %.4f\n",
                   epoch, epoch_loss / std::max<std::int64_t>(batches, 1), val_loss,
                   val_acc);
    }
    if (val_loss < best_val_loss) {
      best_val_loss = val_loss;
      best_val_acc = val_acc;
      best_epoch = epoch;
      best_params = snapshot_params(g);
    } else if (epoch - best_epoch >= cfg.patience) {
      break;  // no improvement for `patience` epochs
    }
  }

  restore_params(g, best_params);
  ckpt.meta.dataset = data.id;
  ckpt.meta.epochs_trained = epochs_run;
  ckpt.meta.best_epoch = best_epoch;
  ckpt.meta.val_loss = best_val_loss;
  ckpt.meta.val_accuracy = best_val_acc;
  ckpt.meta.seed = cfg.seed;
  return ckpt;
}

Prediction predict(const Checkpoint& ckpt, const ImageTensor& x) {
  ForwardResult r = forward(ckpt.graph, x);
  Prediction p;
  p.probs = r.probs;
  p.label = 0;
  for (std::size_t k = 1; k < r.logits.size(); ++k) {
    if (r.logits[k] > r.logits[p.label]) p.label = static_cast<int>(k);
  }
  return p;
}

std::string Checkpoint::model_id() const {
  return (meta.dataset.empty() ? "model" : meta.dataset) + "-s" +
         std::to_string(meta.seed);
}

namespace {

json arch_to_json(const Architecture& a) {
  json layers = json::array();
  for (const auto& l : a.layers) {
    json e;
    e["kind"] = layer_kind_name(l.kind);
    switch (l.kind) {
      case LayerKind::Conv2D:
        e["out"] = l.out;
        e["kernel"] = {l.kh, l.kw};
        break;
      case LayerKind::Dense:
        e["out"] = l.out;
        break;
      case LayerKind::MaxPool2D:
        e["pool"] = {l.ph, l.pw};
        break;
      case LayerKind::SoftPlus:
        e["beta"] = l.beta;
        break;
      case LayerKind::Dropout:
        e["rate"] = l.rate;
        break;
      default:
        break;
    }
    layers.push_back(e);
  }
  return json{{"input_shape", {a.input_shape.c, a.input_shape.h, a.input_shape.w}},
              {"layers", layers}};
}

Architecture arch_from_json(const json& j) {
  Architecture a;
  const auto& shape = j.at("input_shape");
  a.input_shape = Shape3{shape.at(0), shape.at(1), shape.at(2)};
  for (const auto& e : j.at("layers")) {
    Architecture::LayerSpec l;
    const std::string kind = e.at("kind");
    if (kind == "conv2d") {
      l.kind = LayerKind::Conv2D;
      l.out = e.at("out");
      l.kh = e.at("kernel").at(0);
      l.kw = e.at("kernel").at(1);
    } else if (kind == "dense") {
      l.kind = LayerKind::Dense;
      l.out = e.at("out");
    } else if (kind == "maxpool2d") {
      l.kind = LayerKind::MaxPool2D;
      l.ph = e.at("pool").at(0);
      l.pw = e.at("pool").at(1);
    } else if (kind == "relu") {
      l.kind = LayerKind::ReLU;
    } else if (kind == "softplus") {
      l.kind = LayerKind::SoftPlus;
      l.beta = e.at("beta");
    } else if (kind == "dropout") {
      l.kind = LayerKind::Dropout;
      l.rate = e.at("rate");
    } else if (kind == "flatten") {
      l.kind = LayerKind::Flatten;
    } else if (kind == "softmax") {
      l.kind = LayerKind::Softmax;
    } else {
      throw ParseError("unknown layer kind in checkpoint: " + kind);
    }
    a.layers.push_back(l);
  }
  return a;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json header;
  header["format_version"] = 1;
  header["architecture"] = arch_to_json(ckpt.arch);
  header["metadata"] = {{"dataset", ckpt.meta.dataset},
                        {"epochs_trained", ckpt.meta.epochs_trained},
                        {"best_epoch", ckpt.meta.best_epoch},
                        {"val_loss", ckpt.meta.val_loss},
                        {"val_accuracy", ckpt.meta.val_accuracy},
                        {"test_accuracy", ckpt.meta.test_accuracy},
                        {"seed", ckpt.meta.seed}};
  json blobs = json::array();
  std::int64_t offset = 0;
  for (std::size_t i = 0; i < ckpt.graph.layers.size(); ++i) {
    const Layer& l = ckpt.graph.layers[i];
    for (const auto& [name, t] :
         {std::pair<const char*, const Tensor*>{"weight", &l.weight},
          std::pair<const char*, const Tensor*>{"bias", &l.bias}}) {
      if (t->v.empty()) continue;
      blobs.push_back({{"layer", i}, {"name", name}, {"offset", offset},
                       {"count", t->v.size()}});
      offset += static_cast<std::int64_t>(t->v.size()) * 8;
    }
  }
  header["blobs"] = blobs;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path);
  const std::string text = header.dump();
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.put('\n');
  // Blob payload interleaves weight/bias per layer, matching `blobs`.
  std::vector<double> all;
  for (const Layer& l : ckpt.graph.layers) {
    if (!l.weight.v.empty()) all.insert(all.end(), l.weight.v.begin(), l.weight.v.end());
    if (!l.bias.v.empty()) all.insert(all.end(), l.bias.v.begin(), l.bias.v.end());
  }
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(all.data()),
              static_cast<std::streamsize>(all.size() * 8));
  } else {
    for (double d : all) {
      std::uint64_t u;
      std::memcpy(&u, &d, 8);
      for (int k = 0; k < 8; ++k) out.put(static_cast<char>((u >> (8 * k)) & 0xff));
    }
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  json header;
  try {
    in >> header;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad checkpoint header: ") + e.what());
  }
  if (header.value("format_version", -1) != 1)
    throw ParseError("unsupported checkpoint format version");
  if (in.get() != '\n') throw ParseError("missing header terminator");
  const std::streampos base = in.tellg();

  Checkpoint ckpt;
  ckpt.arch = arch_from_json(header.at("architecture"));
  ckpt.graph = ckpt.arch.compile(0);
  const json& meta = header.at("metadata");
  ckpt.meta.dataset = meta.value("dataset", "");
  ckpt.meta.epochs_trained = meta.value("epochs_trained", 0);
  ckpt.meta.best_epoch = meta.value("best_epoch", -1);
  ckpt.meta.val_loss = meta.value("val_loss", -1.0);
  ckpt.meta.val_accuracy = meta.value("val_accuracy", -1.0);
  ckpt.meta.test_accuracy = meta.value("test_accuracy", -1.0);
  ckpt.meta.seed = meta.value("seed", std::uint64_t{0});

  for (const json& blob : header.at("blobs")) {
    const std::size_t layer = blob.at("layer");
    const std::string name = blob.at("name");
    const std::int64_t offset = blob.at("offset");
    const std::size_t count = blob.at("count");
    if (layer >= ckpt.graph.layers.size())
      throw ParseError("checkpoint blob references missing layer");
    Tensor& t = name == "weight" ? ckpt.graph.layers[layer].weight
                                 : ckpt.graph.layers[layer].bias;
    if (t.v.size() != count) throw ParseError("checkpoint blob size mismatch");
    in.seekg(base + std::streampos(offset));
    if constexpr (std::endian::native == std::endian::little) {
      in.read(reinterpret_cast<char*>(t.v.data()),
              static_cast<std::streamsize>(count * 8));
      if (static_cast<std::size_t>(in.gcount()) != count * 8)
        throw ParseError("truncated checkpoint blob");
    } else {
      for (std::size_t k = 0; k < count; ++k) {
        unsigned char b[8];
        in.read(reinterpret_cast<char*>(b), 8);
        if (!in) throw ParseError("truncated checkpoint blob");
        std::uint64_t u = 0;
        for (int j = 0; j < 8; ++j) u |= std::uint64_t(b[j]) << (8 * j);
        std::memcpy(&t.v[k], &u, 8);
      }
    }
  }
  ckpt.graph.finalize();
  return ckpt;
}

}  // namespace xagg::model
