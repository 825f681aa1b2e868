#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "triage/label.hpp"
#include "triage/nb.hpp"
#include "triage/vectorize.hpp"

namespace triage {

struct LRHyperparams {
  double learning_rate = 0.1;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double l2 = 1e-4;
  PerClass<double> class_weights{1.0, 1.0, 1.0};
  std::uint64_t seed = 0;
};

/// Softmax regression over TF-IDF features.
struct LRModel {
  std::vector<double> weights;  // kNumClasses x V, row-major
  PerClass<double> bias{};
  std::shared_ptr<const Vocabulary> vocab;
  LRHyperparams hp;

  std::size_t dim() const { return weights.size() / kNumClasses; }
};

/// Zero-initialized model over the vocabulary.
LRModel lr_init(std::shared_ptr<const Vocabulary> vocab, const LRHyperparams& hp);

struct LRPrediction {
  Label label;
  PerClass<double> probs;
};

PerClass<double> softmax(const PerClass<double>& logits);
/// ln(sum exp(logits)) with max subtraction.
double log_sum_exp(const PerClass<double>& logits);

LRPrediction lr_predict(const LRModel& model, const TfidfVector& x);

/// n / (K * n_c); balanced counts give all ones.
PerClass<double> class_weights_from_counts(const PerClass<std::size_t>& counts);

struct LRGradient {
  double loss = 0.0;
  std::vector<double> d_weights;
  PerClass<double> d_bias{};
};

/// Objective mean_i(w_{y_i} * -ln p(y_i | x_i)) + l2/2 * ||W||^2 (bias is not
/// penalized) and its exact gradient.
LRGradient lr_loss_and_grad(const LRModel& model, std::span<const Labeled<TfidfVector>> batch,
                            const PerClass<double>& class_weights, double l2);

struct LRTrainResult {
  LRModel model;
  std::vector<double> loss_history;  // mean objective per epoch
};

/// Mini-batch gradient descent from zero weights with a seeded shuffle per
/// epoch. Throws TrainingError if the loss becomes non-finite.
LRTrainResult lr_train(std::span<const Labeled<TfidfVector>> data, const LRHyperparams& hp,
                       std::shared_ptr<const Vocabulary> vocab);

}  // namespace triage
