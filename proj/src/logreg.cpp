#include "triage/logreg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "triage/error.hpp"
#include "triage/rng.hpp"

namespace triage {

PerClass<double> softmax(const PerClass<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  PerClass<double> p{};
  double sum = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) sum += (p[c] = std::exp(logits[c] - mx));
  for (auto& v : p) v /= sum;
  return p;
}

double log_sum_exp(const PerClass<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  return mx + std::log(sum);
}

LRModel lr_init(std::shared_ptr<const Vocabulary> vocab, const LRHyperparams& hp) {
  if (!vocab) throw UsageError("lr_init: missing vocabulary");
  LRModel m;
  m.weights.assign(kNumClasses * vocab->size(), 0.0);
  m.vocab = std::move(vocab);
  m.hp = hp;
  return m;
}

namespace {

PerClass<double> logits_of(const LRModel& m, const TfidfVector& x) {
  PerClass<double> z = m.bias;
  const std::size_t v = m.dim();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double* row = m.weights.data() + c * v;
    for (auto [t, w] : x.entries)
      if (t < v) z[c] += row[t] * w;
  }
  return z;
}

// Accumulates the data term over `idx` into g (already sized and zeroed).
double accumulate(const LRModel& m, std::span<const Labeled<TfidfVector>> data,
                  std::span<const std::size_t> idx, const PerClass<double>& cw, double l2,
                  LRGradient& g) {
  const std::size_t v = m.dim();
  const double inv_b = 1.0 / static_cast<double>(idx.size());
  double loss = 0.0;
  for (std::size_t i : idx) {
    const auto& ex = data[i];
    const auto z = logits_of(m, ex.x);
    const std::size_t y = index_of(ex.y);
    const double w = cw[y];
    loss += w * (log_sum_exp(z) - z[y]);
    auto p = softmax(z);
    p[y] -= 1.0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const double coef = w * p[c] * inv_b;
      g.d_bias[c] += coef;
      double* row = g.d_weights.data() + c * v;
      for (auto [t, xv] : ex.x.entries)
        if (t < v) row[t] += coef * xv;
    }
  }
  loss *= inv_b;
  if (l2 != 0.0) {
    double sq = 0.0;
    for (std::size_t j = 0; j < m.weights.size(); ++j) {
      sq += m.weights[j] * m.weights[j];
      g.d_weights[j] += l2 * m.weights[j];
    }
    loss += 0.5 * l2 * sq;
  }
  return loss;
}

}  // namespace

LRPrediction lr_predict(const LRModel& model, const TfidfVector& x) {
  const auto probs = softmax(logits_of(model, x));
  return {label_at(argmax_lowest(probs)), probs};
}

PerClass<double> class_weights_from_counts(const PerClass<std::size_t>& counts) {
  const double n = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  PerClass<double> w{};
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (counts[c] == 0)
      throw DataError("class weights: class " + std::string(label_name(label_at(c))) +
                      " has zero documents");
    w[c] = n / (static_cast<double>(kNumClasses) * static_cast<double>(counts[c]));
  }
  return w;
}

LRGradient lr_loss_and_grad(const LRModel& model, std::span<const Labeled<TfidfVector>> batch,
                            const PerClass<double>& class_weights, double l2) {
  if (batch.empty()) throw UsageError("lr_loss_and_grad: empty batch");
  LRGradient g;
  g.d_weights.assign(model.weights.size(), 0.0);
  std::vector<std::size_t> idx(batch.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  g.loss = accumulate(model, batch, idx, class_weights, l2, g);
  return g;
}

LRTrainResult lr_train(std::span<const Labeled<TfidfVector>> data, const LRHyperparams& hp,
                       std::shared_ptr<const Vocabulary> vocab) {
  if (!(hp.learning_rate > 0.0)) throw UsageError("lr_train: learning rate must be positive");
  if (hp.batch_size < 1) throw UsageError("lr_train: batch size must be at least 1");
  for (double w : hp.class_weights)
    if (!(w > 0.0)) throw UsageError("lr_train: class weights must be positive");
  PerClass<std::size_t> seen{};
  for (const auto& ex : data) ++seen[index_of(ex.y)];
  for (std::size_t c = 0; c < kNumClasses; ++c)
    if (seen[c] == 0)
      throw DataError("lr_train: class " + std::string(label_name(label_at(c))) +
                      " has no training documents");

  LRTrainResult out{lr_init(std::move(vocab), hp), {}};
  LRModel& m = out.model;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  LRGradient g;

  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    Rng rng(derive_seed({hp.seed, epoch}));
    rng.shuffle(std::span(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
      const std::size_t stop = std::min(order.size(), start + hp.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      g.d_weights.assign(m.weights.size(), 0.0);
      g.d_bias = {};
      const double loss = accumulate(m, data, batch, hp.class_weights, hp.l2, g);
      if (!std::isfinite(loss))
        throw TrainingError("logistic regression diverged at epoch " + std::to_string(epoch + 1));
      epoch_loss += loss * static_cast<double>(batch.size());
      for (std::size_t j = 0; j < m.weights.size(); ++j)
        m.weights[j] -= hp.learning_rate * g.d_weights[j];
      for (std::size_t c = 0; c < kNumClasses; ++c) m.bias[c] -= hp.learning_rate * g.d_bias[c];
    }
    out.loss_history.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return out;
}

}  // namespace triage
