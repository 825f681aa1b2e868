#include "triage/nb.hpp"

#include <cmath>

#include "triage/error.hpp"

namespace triage {

NBModel nb_train(std::span<const Labeled<CountVector>> data, double alpha,
                 std::shared_ptr<const Vocabulary> vocab) {
  if (!(alpha > 0.0)) throw UsageError("nb_train: alpha must be positive");
  if (!vocab || vocab->size() == 0) throw UsageError("nb_train: empty vocabulary");
  const std::size_t v = vocab->size();

  PerClass<std::size_t> docs{};
  std::vector<double> counts(kNumClasses * v, 0.0);
  PerClass<double> totals{};
  for (const auto& ex : data) {
    const std::size_t c = index_of(ex.y);
    ++docs[c];
    for (auto [t, n] : ex.x.entries) {
      if (t >= v) throw UsageError("nb_train: feature index outside vocabulary");
      counts[c * v + t] += n;
      totals[c] += n;
    }
  }
  for (std::size_t c = 0; c < kNumClasses; ++c)
    if (docs[c] == 0)
      throw DataError("nb_train: class " + std::string(label_name(label_at(c))) +
                      " has no training documents");

  NBModel m;
  m.alpha = alpha;
  m.vocab = std::move(vocab);
  m.token_log_likelihood.resize(kNumClasses * v);
  const auto n = static_cast<double>(data.size());
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    m.class_log_prior[c] = std::log(static_cast<double>(docs[c]) / n);
    const double denom = std::log(totals[c] + alpha * static_cast<double>(v));
    for (std::size_t t = 0; t < v; ++t)
      m.token_log_likelihood[c * v + t] = std::log(counts[c * v + t] + alpha) - denom;
  }
  return m;
}

NBPrediction nb_predict(const NBModel& model, const CountVector& x) {
  NBPrediction p{Label::Change, model.class_log_prior};
  const std::size_t v = model.vocab_size();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double* row = model.token_log_likelihood.data() + c * v;
    for (auto [t, n] : x.entries)
      if (t < v) p.scores[c] += static_cast<double>(n) * row[t];
  }
  p.label = label_at(argmax_lowest(p.scores));
  return p;
}

}  // namespace triage
