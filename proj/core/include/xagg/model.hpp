#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xagg/dataio.hpp"
#include "xagg/graph.hpp"

namespace xagg::model {

/// Declarative layer list; compiles to a Graph with seeded Glorot-uniform
/// weights and zero biases.
struct Architecture {
  struct LayerSpec {
    LayerKind kind{};
    int out = 0;          // conv out channels / dense width
    int kh = 0, kw = 0;   // conv kernel
    int ph = 0, pw = 0;   // pooling window
    double beta = 1.0;    // softplus
    double rate = 0.0;    // dropout
  };
  Shape3 input_shape{1, 28, 28};
  std::vector<LayerSpec> layers;

  Graph compile(std::uint64_t seed) const;
};

/// conv(32,3,3) -> conv(64,3,3) -> maxpool(2,2) -> dropout .25 -> dense 128
/// -> dropout .5 -> dense 10, ReLU nonlinearity, input (1,28,28).
Architecture reference_cnn();

/// Small diagnostic architectures used throughout the test suites.
Architecture linear_model(int inputs, int outputs);

struct TrainConfig {
  double rho = 0.95;       // Adadelta decay
  double eps_opt = 1e-6;   // Adadelta stabilizer
  int batch_size = 128;
  int max_epochs = 30;
  int patience = 3;        // early-stopping epochs without improvement
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  bool verbose = false;

  void validate() const;
};

struct TrainMeta {
  std::string dataset;
  int epochs_trained = 0;
  int best_epoch = -1;
  double val_loss = -1;
  double val_accuracy = -1;
  double test_accuracy = -1;  // filled by callers that hold a test split
  std::uint64_t seed = 0;
};

/// Serializable model: architecture descriptor, weights, training metadata.
struct Checkpoint {
  Architecture arch;
  Graph graph;
  TrainMeta meta;

  std::string model_id() const;
};

struct EpochStats {
  double train_loss = 0;
  double val_loss = 0;
  double val_accuracy = 0;
};

/// Adadelta on softmax cross-entropy with a held-out validation split and
/// early stopping; returns the best-validation weights. Single-threaded and
/// deterministic for a fixed seed. Throws TrainingDiverged on non-finite
/// loss.
Checkpoint train(const Architecture& arch, const io::Dataset& data,
                 const TrainConfig& cfg, std::vector<EpochStats>* trace = nullptr);

struct Prediction {
  int label = 0;
  std::vector<double> probs;
};

/// Argmax prediction; ties break toward the lowest class index.
Prediction predict(const Checkpoint& ckpt, const ImageTensor& x);

/// Batched test-set accuracy.
double evaluate_accuracy(const Graph& g, const io::Dataset& test);

/// Mean cross-entropy and accuracy over a dataset (batched).
std::pair<double, double> evaluate_loss_accuracy(const Graph& g,
                                                 const io::Dataset& data);

/// Checkpoint file: UTF-8 JSON header line (format version, architecture,
/// metadata, per-blob byte offsets) followed by raw little-endian float64
/// weight blobs in layer order. Round trips are bit-exact.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// The published parameter-wise recurrence, exposed for direct trace tests.
struct Adadelta {
  double rho = 0.95;
  double eps = 1e-6;
  std::vector<double> acc_grad_sq;
  std::vector<double> acc_update_sq;

  void init(std::size_t n);
  void step(std::span<double> params, std::span<const double> grads);
};

}  // namespace xagg::model
