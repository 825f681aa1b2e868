#pragma once

// Random tiny instances and finite-difference gradient checks for the
// logistic regression and BiLSTM losses.

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "support.hpp"
#include "triage/bilstm.hpp"
#include "triage/logreg.hpp"
#include "triage/rng.hpp"

namespace triage::gradcheck {

// ---------------------------------------------------------------------------
// BiLSTM

inline TokenSequence random_sequence(Rng& rng, std::size_t vocab_rows, std::size_t max_len) {
  TokenSequence s;
  s.true_length = 1 + rng.below(max_len);
  s.ids.assign(max_len, Vocabulary::kPad);
  for (std::size_t t = 0; t < s.true_length; ++t)
    s.ids[t] = static_cast<std::int32_t>(1 + rng.below(vocab_rows - 1));
  return s;
}

struct Instance {
  BiLSTMModel model;
  std::vector<TokenSequence> batch;
  std::vector<Label> labels;
  PerClass<double> weights;
};

inline Instance random_instance(std::uint64_t seed, std::vector<std::size_t> hidden = {4}) {
  Rng rng(seed);
  BiLSTMConfig cfg;
  cfg.hidden_sizes = std::move(hidden);
  cfg.embedding_dim = 3;
  cfg.max_len = 5;
  cfg.seed = seed;
  Instance in{init_params(cfg, 6), {}, {}, {}};
  // Random biases and head so no gradient is trivially zero.
  for_each_tensor(in.model.params, [&](const std::string& name, Matrix& m) {
    if (name.ends_with(".b") || name.starts_with("head"))
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-0.5, 0.5);
  });
  for (int b = 0; b < 2; ++b) {
    in.batch.push_back(random_sequence(rng, 8, cfg.max_len));
    in.labels.push_back(label_at(rng.below(3)));
  }
  in.weights = {rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
  return in;
}

inline double max_gradient_error(Instance& in) {
  const auto analytic = loss_and_grads(in.model, in.batch, in.labels, in.weights);
  std::vector<const Matrix*> grads;
  for_each_tensor(analytic.grads, [&](const std::string&, const Matrix& m) { grads.push_back(&m); });

  constexpr double eps = 1e-5;
  double worst = 0.0;
  std::size_t k = 0;
  for_each_tensor(in.model.params, [&](const std::string& name, Matrix& m) {
    const Matrix& g = *grads[k++];
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      if (name == "embedding" && i < m.cols()) continue;  // PAD row is frozen
      const double saved = m.data()[i];
      m.data()[i] = saved + eps;
      const double up = loss_and_grads(in.model, in.batch, in.labels, in.weights).loss;
      m.data()[i] = saved - eps;
      const double down = loss_and_grads(in.model, in.batch, in.labels, in.weights).loss;
      m.data()[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      worst = std::max(worst, test::rel_error(g.data()[i], numeric));
    }
  });
  return worst;
}


// ---------------------------------------------------------------------------
// Logistic regression

struct LRInstance {
  LRModel model;
  std::vector<Labeled<TfidfVector>> batch;
  PerClass<double> weights;
  double l2 = 0.0;
};

/// V in [2, 10], n in [2, 20], random sparse unit-norm inputs, random
/// parameters, class weights and l2.
inline LRInstance random_lr_instance(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t v = 2 + rng.below(9);
  std::vector<std::string> names;
  for (std::size_t t = 0; t < v; ++t) names.push_back("t" + std::to_string(t));
  LRInstance in{lr_init(test::vocab_of(names), {}), {}, {}, rng.uniform(0.0, 0.1)};
  for (auto& w : in.model.weights) w = rng.uniform(-1.0, 1.0);
  for (auto& b : in.model.bias) b = rng.uniform(-1.0, 1.0);
  const std::size_t n = 2 + rng.below(19);
  for (std::size_t i = 0; i < n; ++i) {
    TfidfVector x;
    x.dim = v;
    double norm = 0;
    for (std::size_t t = 0; t < v; ++t)
      if (rng.below(2) == 0) {
        const double w = rng.uniform(0.1, 1.0);
        x.entries.emplace_back(t, w);
        norm += w * w;
      }
    for (auto& e : x.entries) e.second /= std::sqrt(norm);
    in.batch.push_back({std::move(x), label_at(rng.below(3))});
  }
  in.weights = {rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
  return in;
}

inline double lr_max_gradient_error(LRInstance& in) {
  const auto g = lr_loss_and_grad(in.model, in.batch, in.weights, in.l2);
  constexpr double eps = 1e-5;
  auto loss = [&] { return lr_loss_and_grad(in.model, in.batch, in.weights, in.l2).loss; };
  auto numeric = [&](double& x) {
    const double saved = x;
    x = saved + eps;
    const double up = loss();
    x = saved - eps;
    const double down = loss();
    x = saved;
    return (up - down) / (2 * eps);
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < in.model.weights.size(); ++i)
    worst = std::max(worst, test::rel_error(g.d_weights[i], numeric(in.model.weights[i])));
  for (std::size_t c = 0; c < kNumClasses; ++c)
    worst = std::max(worst, test::rel_error(g.d_bias[c], numeric(in.model.bias[c])));
  return worst;
}

}  // namespace triage::gradcheck
