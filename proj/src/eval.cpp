#include "triage/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include <fmt/format.h>

#include "triage/error.hpp"
#include "triage/rng.hpp"

namespace triage {

using Clock = std::chrono::steady_clock;

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (const auto& row : cells) n = std::accumulate(row.begin(), row.end(), n);
  return n;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t n = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) n += cells[c][c];
  return n;
}

ConfusionMatrix confusion(std::span<const Label> golds, std::span<const Label> preds) {
  if (golds.size() != preds.size())
    throw UsageError("confusion: " + std::to_string(golds.size()) + " gold labels but " +
                     std::to_string(preds.size()) + " predictions");
  if (golds.empty()) throw UsageError("confusion: no documents");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < golds.size(); ++i) ++m.cells[index_of(golds[i])][index_of(preds[i])];
  return m;
}

Metrics metrics(const ConfusionMatrix& m) {
  Metrics out;
  const std::size_t total = m.total();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::size_t tp = m.cells[c][c];
    std::size_t predicted = 0, actual = 0;
    for (std::size_t o = 0; o < kNumClasses; ++o) {
      predicted += m.cells[o][c];
      actual += m.cells[c][o];
    }
    auto& cm = out.per_class[c];
    auto ratio = [&](std::size_t num, std::size_t den) {
      if (den == 0) {
        cm.degenerate = true;
        return 0.0;
      }
      return static_cast<double>(num) / static_cast<double>(den);
    };
    cm.precision = ratio(tp, predicted);
    cm.recall = ratio(tp, actual);
    if (cm.precision + cm.recall > 0.0) {
      cm.f1 = 2.0 * cm.precision * cm.recall / (cm.precision + cm.recall);
    } else {
      cm.f1 = 0.0;
      cm.degenerate = true;
    }
    out.macro_f1 += cm.f1;
  }
  out.macro_f1 /= static_cast<double>(kNumClasses);
  out.accuracy = total == 0 ? 0.0 : static_cast<double>(m.trace()) / static_cast<double>(total);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::ordered_json options_json(const TrainOptions& o) {
  nlohmann::ordered_json j;
  j["vocab.min_df"] = o.vocab.min_df;
  j["vocab.max_size"] = o.vocab.max_size;
  switch (o.type) {
    case ModelType::NaiveBayes:
      j["nb.alpha"] = o.nb_alpha;
      break;
    case ModelType::LogReg:
      j["logreg.learning_rate"] = o.logreg.learning_rate;
      j["logreg.epochs"] = o.logreg.epochs;
      j["logreg.batch_size"] = o.logreg.batch_size;
      j["logreg.l2"] = o.logreg.l2;
      j["logreg.class_weighting"] = o.logreg_balanced;
      break;
    case ModelType::BiLSTM:
      j["bilstm.hidden_sizes"] = o.bilstm.hidden_sizes;
      j["bilstm.embedding_dim"] = o.bilstm.embedding_dim;
      j["bilstm.batch_size"] = o.bilstm.batch_size;
      j["bilstm.max_epochs"] = o.bilstm.max_epochs;
      j["bilstm.patience"] = o.bilstm.patience;
      j["bilstm.learning_rate"] = o.bilstm.learning_rate;
      j["bilstm.clip_norm"] = o.bilstm.clip_norm;
      j["bilstm.validation_fraction"] = o.bilstm.validation_fraction;
      j["bilstm.max_len"] = o.bilstm.max_len;
      j["bilstm.class_weighting"] = o.bilstm_balanced;
      break;
  }
  return j;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

ModelSpec model_spec(const TrainOptions& options) {
  ModelSpec spec;
  spec.name = std::string(model_type_name(options.type));
  spec.hyperparams = options_json(options);
  spec.fit = [options](std::span<const CleanDocument* const> train, std::uint64_t seed) {
    TrainOptions o = options;
    o.seed = seed;
    auto model = std::make_shared<const TrainedModel>(train_model(train, o));
    return Predictor([model](std::span<const CleanDocument* const> test) {
      std::vector<std::vector<std::string>> toks;
      toks.reserve(test.size());
      for (const auto* d : test) toks.push_back(d->tokens);
      std::vector<Label> out;
      out.reserve(test.size());
      for (const auto& p : predict_batch(*model, toks)) out.push_back(p.label);
      return out;
    });
  };
  return spec;
}

AggregateMetrics aggregate_folds(std::span<const FoldResult> folds) {
  AggregateMetrics a;
  if (folds.empty()) return a;
  const auto n = static_cast<double>(folds.size());
  std::size_t trace = 0, total = 0;
  std::vector<double> accs;
  for (const auto& f : folds) {
    trace += f.matrix.trace();
    total += f.matrix.total();
    const Metrics m = metrics(f.matrix);
    accs.push_back(m.accuracy);
    a.macro_f1 += m.macro_f1 / n;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      a.precision[c] += m.per_class[c].precision / n;
      a.recall[c] += m.per_class[c].recall / n;
      a.f1[c] += m.per_class[c].f1 / n;
    }
  }
  a.accuracy = static_cast<double>(trace) / static_cast<double>(total);
  a.fold_accuracy_mean = std::accumulate(accs.begin(), accs.end(), 0.0) / n;
  if (folds.size() > 1) {
    double ss = 0.0;
    for (double x : accs) ss += (x - a.fold_accuracy_mean) * (x - a.fold_accuracy_mean);
    a.fold_accuracy_std = std::sqrt(ss / (n - 1.0));
  }
  return a;
}

EvaluationReport run_cv(const Dataset& ds, const ModelSpec& spec, std::size_t k,
                        std::size_t repeats, std::uint64_t seed) {
  if (k < 2) throw UsageError("run_cv: k must be at least 2");
  if (repeats < 1) throw UsageError("run_cv: repeats must be at least 1");
  require_usable(ds);

  EvaluationReport rep;
  rep.model_type = spec.name;
  rep.hyperparams = spec.hyperparams;
  rep.k = k;
  rep.repeats = repeats;
  rep.seed = seed;
  rep.dataset_hash = ds.content_hash();
  rep.documents = ds.size();

  for (std::size_t r = 0; r < repeats; ++r) {
    const FoldAssignment fa = assign_folds(ds, k, r, seed);
    const std::uint64_t model_seed = derive_seed({seed, r});
    for (std::size_t f = 0; f < k; ++f) {
      std::vector<const CleanDocument*> train, test;
      std::vector<Label> golds;
      for (const auto& d : ds.documents) {
        if (fa.fold_of_doc[d.doc_id] == f) {
          test.push_back(&d);
          golds.push_back(d.label);
        } else {
          train.push_back(&d);
        }
      }
      // Leakage guard: the fitter sees exactly the documents outside fold f.
      std::vector<char> is_test(ds.size(), 0);
      for (const auto* d : test) is_test[d->doc_id] = 1;
      for (const auto* d : train)
        if (is_test[d->doc_id]) throw std::logic_error("run_cv: test document in training split");
      if (train.size() + test.size() != ds.size())
        throw std::logic_error("run_cv: folds do not partition the dataset");

      const std::string where =
          " (repeat " + std::to_string(r) + ", fold " + std::to_string(f) + ")";
      FoldResult fr;
      fr.repeat = r;
      fr.fold = f;
      fr.train_size = train.size();
      try {
        const auto t0 = Clock::now();
        Predictor predict = spec.fit(train, model_seed);
        fr.train_seconds = seconds_since(t0);
        const auto t1 = Clock::now();
        const auto preds = predict(test);
        fr.predict_seconds = seconds_since(t1);
        fr.matrix = confusion(golds, preds);
      } catch (const DataError& e) {
        throw DataError(e.what() + where);
      } catch (const UsageError& e) {
        throw UsageError(e.what() + where);
      } catch (const TrainingError& e) {
        throw TrainingError(e.what() + where);
      }
      rep.folds.push_back(std::move(fr));
    }
  }

  rep.aggregate = aggregate_folds(rep.folds);
  double best = -1.0;
  for (std::size_t i = 0; i < rep.folds.size(); ++i) {
    const double acc = metrics(rep.folds[i].matrix).accuracy;
    if (acc > best) {
      best = acc;
      rep.best_fold = i;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Report rendering

namespace {

nlohmann::ordered_json per_class_json(const PerClass<double>& p, const PerClass<double>& r,
                                      const PerClass<double>& f) {
  nlohmann::ordered_json j;
  for (std::size_t c = 0; c < kNumClasses; ++c)
    j[std::string(label_name(label_at(c)))] = {{"precision", p[c]}, {"recall", r[c]}, {"f1", f[c]}};
  return j;
}

nlohmann::ordered_json metrics_json(const Metrics& m) {
  PerClass<double> p{}, r{}, f{};
  nlohmann::ordered_json degenerate = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    p[c] = m.per_class[c].precision;
    r[c] = m.per_class[c].recall;
    f[c] = m.per_class[c].f1;
    if (m.per_class[c].degenerate) degenerate.push_back(label_name(label_at(c)));
  }
  return {{"accuracy", m.accuracy},
          {"macro_f1", m.macro_f1},
          {"per_class", per_class_json(p, r, f)},
          {"degenerate_classes", degenerate}};
}

}  // namespace

nlohmann::ordered_json report_to_json(const EvaluationReport& rep, bool include_timings) {
  nlohmann::ordered_json j;
  j["report"] = "cross_validation";
  j["configuration"] = {{"model_type", rep.model_type},
                        {"hyperparameters", rep.hyperparams},
                        {"k", rep.k},
                        {"repeats", rep.repeats},
                        {"seed", rep.seed},
                        {"stratified", true},
                        {"dataset_hash", rep.dataset_hash},
                        {"documents", rep.documents}};
  const auto& a = rep.aggregate;
  j["aggregate"] = {{"accuracy", a.accuracy},
                    {"fold_accuracy_mean", a.fold_accuracy_mean},
                    {"fold_accuracy_std", a.fold_accuracy_std},
                    {"macro_f1", a.macro_f1},
                    {"per_class_mean", per_class_json(a.precision, a.recall, a.f1)}};
  if (!rep.folds.empty()) {
    const auto& b = rep.folds[rep.best_fold];
    j["best_fold"] = {{"repeat", b.repeat}, {"fold", b.fold}, {"metrics", metrics_json(metrics(b.matrix))}};
  }
  nlohmann::ordered_json folds = nlohmann::ordered_json::array();
  for (const auto& f : rep.folds) {
    nlohmann::ordered_json jf = {{"repeat", f.repeat},
                                 {"fold", f.fold},
                                 {"train_size", f.train_size},
                                 {"confusion", f.matrix.cells}};
    if (include_timings) {
      jf["train_seconds"] = f.train_seconds;
      jf["predict_seconds"] = f.predict_seconds;
    }
    folds.push_back(std::move(jf));
  }
  j["folds"] = std::move(folds);
  return j;
}

nlohmann::ordered_json timings_to_json(const EvaluationReport& rep) {
  nlohmann::ordered_json folds = nlohmann::ordered_json::array();
  double train = 0.0, predict = 0.0;
  for (const auto& f : rep.folds) {
    folds.push_back({{"repeat", f.repeat},
                     {"fold", f.fold},
                     {"train_seconds", f.train_seconds},
                     {"predict_seconds", f.predict_seconds}});
    train += f.train_seconds;
    predict += f.predict_seconds;
  }
  const double n = rep.folds.empty() ? 1.0 : static_cast<double>(rep.folds.size());
  return {{"mean_train_seconds", train / n}, {"mean_predict_seconds", predict / n}, {"folds", folds}};
}

std::string render_report(const EvaluationReport& rep) {
  const auto& a = rep.aggregate;
  std::string s;
  s += fmt::format("model {}  k={} repeats={} seed={} documents={}\n", rep.model_type, rep.k,
                   rep.repeats, rep.seed, rep.documents);
  s += fmt::format("accuracy {:.4f} (fold mean {:.4f} +/- {:.4f})  macro-F1 {:.4f}\n", a.accuracy,
                   a.fold_accuracy_mean, a.fold_accuracy_std, a.macro_f1);
  double train = 0.0, predict = 0.0;
  for (const auto& f : rep.folds) {
    train += f.train_seconds;
    predict += f.predict_seconds;
  }
  if (!rep.folds.empty())
    s += fmt::format("mean train {:.4f} s, mean predict {:.4f} s per fold\n",
                     train / static_cast<double>(rep.folds.size()),
                     predict / static_cast<double>(rep.folds.size()));

  auto table = [&](const std::string& title, const PerClass<double>& p, const PerClass<double>& r,
                   const PerClass<double>& f) {
    s += "\n" + title + "\n";
    s += fmt::format("{:<10} {:>10} {:>10} {:>10}\n", "Class", "Precision", "Recall", "F1");
    for (std::size_t c = 0; c < kNumClasses; ++c)
      s += fmt::format("{:<10} {:>10.4f} {:>10.4f} {:>10.4f}\n", label_name(label_at(c)), p[c], r[c],
                       f[c]);
  };
  table("mean over folds", a.precision, a.recall, a.f1);
  if (!rep.folds.empty()) {
    const auto& b = rep.folds[rep.best_fold];
    const Metrics m = metrics(b.matrix);
    PerClass<double> p{}, r{}, f{};
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      p[c] = m.per_class[c].precision;
      r[c] = m.per_class[c].recall;
      f[c] = m.per_class[c].f1;
    }
    table(fmt::format("best fold (repeat {}, fold {}, accuracy {:.4f})", b.repeat, b.fold, m.accuracy),
          p, r, f);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Throughput

namespace {

std::string hardware_note() {
  std::string cpu = "unknown cpu";
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.starts_with("model name")) {
      if (auto colon = line.find(':'); colon != std::string::npos) cpu = line.substr(colon + 2);
      break;
    }
  }
  return fmt::format("{}; {} hardware threads; single-threaded inference", cpu,
                     std::thread::hardware_concurrency());
}

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

}  // namespace

ThroughputReport bench(std::span<const NamedModel> models,
                       std::span<const std::vector<std::string>> docs,
                       std::span<const std::size_t> batch_sizes) {
  if (docs.empty()) throw UsageError("bench: no documents");
  ThroughputReport rep;
  rep.hardware_note = hardware_note();
  for (const auto& nm : models) {
    // Warm-up pass, not timed.
    predict_batch(*nm.model, docs.first(std::min<std::size_t>(docs.size(), 64)));
    for (std::size_t bs : batch_sizes) {
      if (bs < 1) throw UsageError("bench: batch sizes must be at least 1");
      std::vector<double> per_doc_ms;
      const auto t0 = Clock::now();
      for (std::size_t start = 0; start < docs.size(); start += bs) {
        const std::size_t n = std::min(bs, docs.size() - start);
        const auto b0 = Clock::now();
        predict_batch(*nm.model, docs.subspan(start, n));
        per_doc_ms.push_back(seconds_since(b0) * 1e3 / static_cast<double>(n));
      }
      const double total = std::max(seconds_since(t0), 1e-12);
      rep.rows.push_back({nm.name, bs, docs.size(), static_cast<double>(docs.size()) / total,
                          percentile(per_doc_ms, 0.50), percentile(per_doc_ms, 0.95)});
    }
  }
  return rep;
}

nlohmann::ordered_json throughput_to_json(const ThroughputReport& rep) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : rep.rows)
    rows.push_back({{"model", r.model},
                    {"batch_size", r.batch_size},
                    {"documents", r.documents},
                    {"docs_per_second", r.docs_per_second},
                    {"p50_latency_ms", r.p50_ms},
                    {"p95_latency_ms", r.p95_ms}});
  return {{"report", "throughput"}, {"hardware", rep.hardware_note}, {"rows", rows}};
}

std::string render_throughput(const ThroughputReport& rep) {
  std::string s = "hardware: " + rep.hardware_note + "\n";
  s += fmt::format("{:<24} {:>6} {:>14} {:>12} {:>12}\n", "Model", "Batch", "Docs/s", "p50 ms",
                   "p95 ms");
  for (const auto& r : rep.rows)
    s += fmt::format("{:<24} {:>6} {:>14.1f} {:>12.4f} {:>12.4f}\n", r.model, r.batch_size,
                     r.docs_per_second, r.p50_ms, r.p95_ms);
  return s;
}

}  // namespace triage
