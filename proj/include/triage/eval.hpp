#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "triage/corpus.hpp"
#include "triage/label.hpp"
#include "triage/model.hpp"

namespace triage {

/// Rows are the true class, columns the predicted class.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> cells{};

  std::size_t total() const;
  std::size_t trace() const;
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion(std::span<const Label> golds, std::span<const Label> preds);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool degenerate = false;  // some ratio was 0/0 and reported as 0
};

struct Metrics {
  PerClass<ClassMetrics> per_class{};
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

Metrics metrics(const ConfusionMatrix& m);

/// A model family as seen by the cross-validation harness: fit on training
/// documents, then label test documents.
using Predictor = std::function<std::vector<Label>(std::span<const CleanDocument* const>)>;
using Fitter = std::function<Predictor(std::span<const CleanDocument* const> train, std::uint64_t seed)>;

struct ModelSpec {
  std::string name;
  nlohmann::ordered_json hyperparams;
  Fitter fit;
};

/// Built-in family from training options (options.seed is replaced per repeat).
ModelSpec model_spec(const TrainOptions& options);

struct FoldResult {
  std::size_t repeat = 0;
  std::size_t fold = 0;
  std::size_t train_size = 0;
  ConfusionMatrix matrix;
  double train_seconds = 0.0;
  double predict_seconds = 0.0;
};

struct AggregateMetrics {
  double accuracy = 0.0;  // pooled: sum of traces / sum of totals
  double fold_accuracy_mean = 0.0;
  double fold_accuracy_std = 0.0;  // sample standard deviation
  PerClass<double> precision{};
  PerClass<double> recall{};
  PerClass<double> f1{};
  double macro_f1 = 0.0;
};

struct EvaluationReport {
  std::string model_type;
  nlohmann::ordered_json hyperparams;
  std::size_t k = 0;
  std::size_t repeats = 0;
  std::uint64_t seed = 0;
  std::string dataset_hash;
  std::size_t documents = 0;
  std::vector<FoldResult> folds;
  AggregateMetrics aggregate;
  std::size_t best_fold = 0;  // index into folds, highest accuracy
};

/// Aggregates recomputed from the stored per-fold matrices.
AggregateMetrics aggregate_folds(std::span<const FoldResult> folds);

/// Repeated stratified k-fold cross-validation. Errors from fitting are
/// rethrown with the (repeat, fold) position attached.
EvaluationReport run_cv(const Dataset& ds, const ModelSpec& spec, std::size_t k,
                        std::size_t repeats, std::uint64_t seed);

/// Timings are wall-clock and therefore excluded unless asked for, keeping the
/// default report byte-stable across runs.
nlohmann::ordered_json report_to_json(const EvaluationReport& report, bool include_timings = false);
nlohmann::ordered_json timings_to_json(const EvaluationReport& report);
std::string render_report(const EvaluationReport& report);

struct NamedModel {
  std::string name;
  const TrainedModel* model;
};

struct ThroughputRow {
  std::string model;
  std::size_t batch_size = 0;
  std::size_t documents = 0;
  double docs_per_second = 0.0;
  double p50_ms = 0.0;  // per-document latency
  double p95_ms = 0.0;
};

struct ThroughputReport {
  std::string hardware_note;
  std::vector<ThroughputRow> rows;
};

ThroughputReport bench(std::span<const NamedModel> models,
                       std::span<const std::vector<std::string>> docs,
                       std::span<const std::size_t> batch_sizes);

nlohmann::ordered_json throughput_to_json(const ThroughputReport& report);
std::string render_throughput(const ThroughputReport& report);

}  // namespace triage
