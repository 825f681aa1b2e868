#pragma once

#include <memory>
#include <span>
#include <vector>

#include "triage/label.hpp"
#include "triage/vectorize.hpp"

namespace triage {

template <typename X>
struct Labeled {
  X x;
  Label y;
};

/// Multinomial Naive Bayes with additive smoothing, stored in log space.
struct NBModel {
  PerClass<double> class_log_prior{};
  std::vector<double> token_log_likelihood;  // kNumClasses x V, row-major
  double alpha = 1.0;
  std::shared_ptr<const Vocabulary> vocab;

  std::size_t vocab_size() const { return token_log_likelihood.size() / kNumClasses; }
  double log_likelihood(std::size_t c, std::size_t t) const {
    return token_log_likelihood[c * vocab_size() + t];
  }
};

/// prior_c = n_c / n, P(t|c) = (count_ct + alpha) / (total_c + alpha * V).
/// Throws UsageError for alpha <= 0 and DataError when a class is absent.
NBModel nb_train(std::span<const Labeled<CountVector>> data, double alpha,
                 std::shared_ptr<const Vocabulary> vocab);

struct NBPrediction {
  Label label;
  PerClass<double> scores;  // log posterior up to a shared constant
};

NBPrediction nb_predict(const NBModel& model, const CountVector& x);

}  // namespace triage
