#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "triage/label.hpp"
#include "triage/nb.hpp"
#include "triage/vectorize.hpp"

namespace triage {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct BiLSTMConfig {
  std::vector<std::size_t> hidden_sizes{128};  // one entry per stacked BiLSTM layer
  std::size_t embedding_dim = 64;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 20;
  std::size_t patience = 2;
  double learning_rate = 1.0;
  double clip_norm = 5.0;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  std::size_t max_len = 200;
  PerClass<double> class_weights{1.0, 1.0, 1.0};
};

/// Parameters of one LSTM direction. Gate blocks are stacked in the order
/// input, forget, cell candidate, output along the 4H axis.
struct LSTMDirection {
  Matrix w;  // 4H x input
  Matrix u;  // 4H x H
  Matrix b;  // 1 x 4H
};

struct BiLSTMLayer {
  LSTMDirection fwd;
  LSTMDirection bwd;
};

struct BiLSTMParams {
  Matrix embedding;  // (V + 2) x E, row 0 (PAD) stays zero
  std::vector<BiLSTMLayer> layers;
  Matrix head_w;  // 3 x 2H_last
  Matrix head_b;  // 1 x 3

  /// Zero tensor of identical shape.
  BiLSTMParams zeros_like() const;
};

/// Calls f(name, tensor) for every parameter tensor in a fixed order.
void for_each_tensor(BiLSTMParams& p, const std::function<void(const std::string&, Matrix&)>& f);
void for_each_tensor(const BiLSTMParams& p,
                     const std::function<void(const std::string&, const Matrix&)>& f);

struct BiLSTMModel {
  BiLSTMParams params;
  BiLSTMConfig config;
  std::shared_ptr<const Vocabulary> vocab;
};

/// Glorot-uniform weights per matrix, zero biases except forget gate = 1,
/// zero PAD row. Deterministic in config.seed.
BiLSTMModel init_params(const BiLSTMConfig& config, std::size_t vocab_size,
                        std::shared_ptr<const Vocabulary> vocab = nullptr);

/// Activations kept for backpropagation.
struct ForwardCache {
  struct Direction {
    Matrix x;      // steps*B x input, rows in reading order
    Matrix gates;  // steps*B x 4H, post-activation
    Matrix c;      // steps*B x H
    Matrix tanh_c; // steps*B x H
    Matrix h;      // steps*B x H
  };
  struct Layer {
    Direction fwd;
    Direction bwd;
    Matrix out;  // steps*B x 2H, rows ordered by position (p * B + b)
  };
  std::size_t steps = 0;  // longest true length in the batch
  std::size_t batch = 0;
  std::vector<std::size_t> lengths;
  std::vector<const std::int32_t*> ids;
  std::vector<Layer> layers;
  Matrix pooled;  // B x 2H_last
  Matrix logits;  // B x 3
};

/// Logits for a batch (B x 3). Sequences must all have length config.max_len.
Matrix forward(const BiLSTMModel& model, std::span<const TokenSequence> batch,
               ForwardCache* cache = nullptr);

struct LossAndGrads {
  double loss = 0.0;
  BiLSTMParams grads;
};

/// loss = mean_b w[y_b] * -ln softmax(logits_b)[y_b], with gradients for
/// every parameter by backpropagation through time.
LossAndGrads loss_and_grads(const BiLSTMModel& model, std::span<const TokenSequence> batch,
                            std::span<const Label> labels, const PerClass<double>& class_weights);

struct EpochRecord {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  std::size_t stopped_epoch = 0;  // 1-based
  std::size_t best_epoch = 0;     // 1-based
};

struct BiLSTMTrainResult {
  BiLSTMModel model;  // parameters from the best epoch
  TrainingHistory history;
};

/// Trains on `train` with early stopping on `validation`.
BiLSTMTrainResult bilstm_fit(std::span<const Labeled<TokenSequence>> train,
                             std::span<const Labeled<TokenSequence>> validation,
                             const BiLSTMConfig& config, std::shared_ptr<const Vocabulary> vocab);

/// Splits off a stratified validation holdout of config.validation_fraction
/// and calls bilstm_fit.
BiLSTMTrainResult bilstm_train(std::span<const Labeled<TokenSequence>> data,
                               const BiLSTMConfig& config, std::shared_ptr<const Vocabulary> vocab);

struct BiLSTMPrediction {
  Label label;
  PerClass<double> probs;
};

std::vector<BiLSTMPrediction> bilstm_predict(const BiLSTMModel& model,
                                             std::span<const TokenSequence> sequences);

/// Weighted mean loss and accuracy over a labeled set, evaluated in batches.
std::pair<double, double> bilstm_evaluate(const BiLSTMModel& model,
                                          std::span<const Labeled<TokenSequence>> data,
                                          const PerClass<double>& class_weights);

}  // namespace triage
