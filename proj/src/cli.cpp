#include "triage/cli.hpp"

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <pthread.h>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "triage/error.hpp"
#include "triage/eval.hpp"
#include "triage/http_server.hpp"
#include "triage/model.hpp"
#include "triage/router.hpp"
#include "triage/synth.hpp"

namespace triage {

namespace {

void use_stderr_logger() {
  if (!spdlog::get("triage")) spdlog::set_default_logger(spdlog::stderr_color_mt("triage"));
}

std::string iso_from_epoch(std::time_t t) {
  std::tm tm{};
  gmtime_r(&t, &tm);
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}Z", tm.tm_year + 1900, tm.tm_mon + 1,
                     tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
}

Dataset load_dataset(const std::string& path) {
  const auto raw = load_csv(path);
  Dataset ds = build_dataset(raw);
  spdlog::info("{}: {} documents (Change {}, Problem {}, Request {}), {} dropped", path, ds.size(),
               ds.class_counts[0], ds.class_counts[1], ds.class_counts[2], ds.dropped_count);
  require_usable(ds);
  return ds;
}

struct TextRow {
  std::size_t row;
  std::vector<std::string> tokens;
};

std::vector<TextRow> load_texts(const std::string& path) {
  ColumnMap cols;
  cols.label.clear();
  std::vector<TextRow> out;
  for (const auto& t : load_csv(path, cols))
    out.push_back({t.source_row, split_tokens(clean_text(t.subject + " " + t.body))});
  if (out.empty()) throw DataError(path + " has no rows");
  return out;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  if (!out) throw Error("cannot write " + path);
}

std::string probs_tsv(const Prediction& p) {
  return fmt::format("{}\t{:.6f}\t{:.6f}\t{:.6f}", label_name(p.label), p.probs[0], p.probs[1],
                     p.probs[2]);
}

TrainOptions options_for(const std::string& type, const std::string& config,
                         std::optional<std::uint64_t> seed) {
  TrainOptions opts;
  opts.type = parse_model_type(type);
  if (!config.empty()) apply_config(opts, read_config_file(config));
  if (seed) opts.seed = *seed;
  return opts;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string model, data, out, config, created_at;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  TrainOptions opts = options_for(a.model, a.config, a.seed);
  const Dataset ds = load_dataset(a.data);
  std::vector<const CleanDocument*> docs;
  for (const auto& d : ds.documents) docs.push_back(&d);

  TrainingHistory history;
  TrainedModel model = train_model(docs, opts, &history);
  model.dataset_hash = ds.content_hash();
  if (!a.created_at.empty()) {
    model.created_at = a.created_at;
  } else if (const char* sde = std::getenv("SOURCE_DATE_EPOCH")) {
    model.created_at = iso_from_epoch(static_cast<std::time_t>(std::strtoll(sde, nullptr, 10)));
  }
  for (std::size_t e = 0; e < history.epochs.size(); ++e)
    spdlog::info("epoch {:>2}  train loss {:.4f}  val loss {:.4f}  val acc {:.4f}", e + 1,
                 history.epochs[e].train_loss, history.epochs[e].val_loss,
                 history.epochs[e].val_accuracy);
  if (!history.epochs.empty())
    spdlog::info("stopped after epoch {}, restored epoch {}", history.stopped_epoch,
                 history.best_epoch);

  save_model(model, a.out);
  std::cout << fmt::format("wrote {} ({}, {} terms, fingerprint {})\n", a.out,
                           model_type_name(model.type()), model.vocab().size(), model.fingerprint);
  return kExitOk;
}

struct EvalArgs {
  std::string model_type, data, report, config;
  std::size_t k = 5, repeats = 10;
  std::optional<std::uint64_t> seed;
};

int cmd_evaluate(const EvalArgs& a) {
  const TrainOptions opts = options_for(a.model_type, a.config, a.seed);
  if (a.k < 2) throw UsageError("--k must be at least 2");
  if (a.repeats < 1) throw UsageError("--repeats must be at least 1");
  const Dataset ds = load_dataset(a.data);
  const auto rep = run_cv(ds, model_spec(opts), a.k, a.repeats, opts.seed);
  if (!a.report.empty()) {
    write_file(a.report, report_to_json(rep).dump(2) + "\n");
    write_file(a.report + ".timings.json", timings_to_json(rep).dump(2) + "\n");
  }
  std::cout << render_report(rep);
  return kExitOk;
}

struct ClassifyArgs {
  std::string model, text, input, output;
};

int cmd_classify(const ClassifyArgs& a) {
  if (a.text.empty() == a.input.empty()) throw UsageError("give exactly one of --text or --input");
  if (!a.input.empty() && a.output.empty()) throw UsageError("--input needs --output");
  const TrainedModel model = load_model(a.model);
  if (!a.text.empty()) {
    const auto tokens = split_tokens(clean_text(a.text));
    std::cout << probs_tsv(predict_tokens(model, tokens)) << "\n";
    return kExitOk;
  }
  const auto rows = load_texts(a.input);
  std::vector<std::vector<std::string>> docs;
  for (const auto& r : rows) docs.push_back(r.tokens);
  const auto preds = predict_batch(model, docs);
  std::string out = "row,label,p_change,p_problem,p_request\n";
  for (std::size_t i = 0; i < rows.size(); ++i)
    out += fmt::format("{},{},{:.6f},{:.6f},{:.6f}\n", rows[i].row, label_name(preds[i].label),
                       preds[i].probs[0], preds[i].probs[1], preds[i].probs[2]);
  write_file(a.output, out);
  spdlog::info("classified {} rows into {}", rows.size(), a.output);
  return kExitOk;
}

struct ServeArgs {
  std::string model, config, listen;
};

int cmd_serve(const ServeArgs& a) {
  RouterConfig cfg;
  if (!a.config.empty()) cfg = read_router_config(a.config);
  if (!a.model.empty()) cfg.model_path = a.model;
  if (!a.listen.empty()) {
    const auto colon = a.listen.rfind(':');
    if (colon == std::string::npos) throw UsageError("--listen must be host:port");
    cfg.listen_host = a.listen.substr(0, colon);
    cfg.listen_port = std::stoi(a.listen.substr(colon + 1));
  }
  if (cfg.model_path.empty()) throw UsageError("serve needs --model or a model entry in --config");

  // Signals are taken synchronously by one thread; block them before any
  // other thread exists so every thread inherits the mask.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  auto model = std::make_shared<const TrainedModel>(load_model(cfg.model_path));
  RouterService service(cfg, model);
  for (const auto& w : service.recovery_warnings()) std::cerr << "warning: " << w << "\n";
  HttpFrontend http(service);
  const int port = http.bind(cfg.listen_host, cfg.listen_port);
  service.start();

  std::atomic<bool> signalled = false;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    signalled = true;
    spdlog::info("signal {}: shutting down", sig);
    http.stop();
  });
  std::cout << "listening on " << cfg.listen_host << ":" << port << std::endl;
  spdlog::info("model {} ({}), {} workers, queue capacity {}", cfg.model_path.string(),
               model->fingerprint, cfg.worker_count, cfg.queue_capacity);
  http.serve();
  if (!signalled) pthread_kill(waiter.native_handle(), SIGTERM);  // listener died on its own
  waiter.join();
  service.stop();
  return kExitOk;
}

struct BenchArgs {
  std::vector<std::string> models;
  std::string data, batch_sizes = "1,32,64", report;
  std::size_t limit = 0;
};

int cmd_bench(const BenchArgs& a) {
  std::vector<std::size_t> sizes;
  std::stringstream ss(a.batch_sizes);
  for (std::string part; std::getline(ss, part, ',');) {
    if (part.empty()) continue;
    try {
      sizes.push_back(std::stoull(part));
    } catch (const std::exception&) {
      throw UsageError("bad batch size '" + part + "'");
    }
    if (sizes.back() == 0) throw UsageError("batch sizes must be positive");
  }
  std::vector<TrainedModel> loaded;
  loaded.reserve(a.models.size());
  for (const auto& m : a.models) loaded.push_back(load_model(m));
  std::vector<NamedModel> named;
  for (std::size_t i = 0; i < loaded.size(); ++i)
    named.push_back({fmt::format("{} ({})", std::filesystem::path(a.models[i]).filename().string(),
                                 model_type_name(loaded[i].type())),
                     &loaded[i]});
  std::vector<std::vector<std::string>> docs;
  for (auto& r : load_texts(a.data)) docs.push_back(std::move(r.tokens));
  if (a.limit && docs.size() > a.limit) docs.resize(a.limit);

  const auto rep = bench(named, docs, sizes);
  if (!a.report.empty()) write_file(a.report, throughput_to_json(rep).dump(2) + "\n");
  std::cout << render_throughput(rep);
  return kExitOk;
}

struct GenerateArgs {
  std::string out, ratio = "1,6,3";
  std::size_t documents = 1200;
  std::uint64_t seed = 0;
};

int cmd_generate(const GenerateArgs& a) {
  SynthOptions o;
  o.documents = a.documents;
  o.seed = a.seed;
  std::stringstream ss(a.ratio);
  std::size_t c = 0;
  for (std::string part; std::getline(ss, part, ',');) {
    if (c == kNumClasses) throw UsageError("--ratio takes three numbers");
    try {
      o.ratio[c++] = std::stoull(part);
    } catch (const std::exception&) {
      throw UsageError("bad ratio entry '" + part + "'");
    }
  }
  if (c != kNumClasses) throw UsageError("--ratio takes three numbers");
  const auto tickets = generate_synthetic(o);
  std::ofstream out(a.out, std::ios::binary | std::ios::trunc);
  write_tickets_csv(out, tickets);
  if (!out) throw Error("cannot write " + a.out);
  std::cout << fmt::format("wrote {} tickets to {}\n", tickets.size(), a.out);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  use_stderr_logger();
  CLI::App app{"Support ticket triage: train, evaluate, classify, serve, bench"};
  app.name("triage");
  app.set_version_flag("--version", fmt::format("triage {} (model format_version {})", kToolVersion,
                                                kFormatVersion));
  app.require_subcommand(1);
  app.fallthrough();
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Fit a model on a labeled CSV and save it");
  train->add_option("--model", ta.model, "nb | logreg | bilstm")->required();
  train->add_option("--data", ta.data, "Labeled ticket CSV")->required();
  train->add_option("--out", ta.out, "Model file to write")->required();
  train->add_option("--config", ta.config, "key = value hyperparameter file");
  train->add_option("--seed", ta.seed, "Random seed (overrides the config)");
  train->add_option("--created-at", ta.created_at,
                    "Timestamp stored in the model (default SOURCE_DATE_EPOCH or the epoch)");

  EvalArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "Repeated stratified k-fold cross-validation");
  evaluate->add_option("--model-type", ea.model_type, "nb | logreg | bilstm")->required();
  evaluate->add_option("--data", ea.data, "Labeled ticket CSV")->required();
  evaluate->add_option("--k", ea.k, "Folds")->capture_default_str();
  evaluate->add_option("--repeats", ea.repeats, "Repeats")->capture_default_str();
  evaluate->add_option("--seed", ea.seed, "Random seed (overrides the config)");
  evaluate->add_option("--report", ea.report, "JSON report path (timings go to <path>.timings.json)");
  evaluate->add_option("--config", ea.config, "key = value hyperparameter file");

  ClassifyArgs ca;
  auto* classify = app.add_subcommand("classify", "Label text with a saved model");
  classify->add_option("--model", ca.model, "Model file")->required();
  classify->add_option("--text", ca.text, "Single ticket text");
  classify->add_option("--input", ca.input, "CSV with subject and body columns");
  classify->add_option("--output", ca.output, "CSV of predictions for --input");

  ServeArgs sa;
  auto* serve = app.add_subcommand("serve", "Run the HTTP ticket router");
  serve->add_option("--model", sa.model, "Model file (overrides the config)");
  serve->add_option("--config", sa.config, "Router config file");
  serve->add_option("--listen", sa.listen, "host:port (overrides the config, port 0 = any)");

  BenchArgs ba;
  auto* benchc = app.add_subcommand("bench", "Measure prediction throughput and latency");
  benchc->add_option("--models", ba.models, "Model files")->required();
  benchc->add_option("--data", ba.data, "CSV with subject and body columns")->required();
  benchc->add_option("--batch-sizes", ba.batch_sizes, "Comma separated")->capture_default_str();
  benchc->add_option("--limit", ba.limit, "Use at most this many documents (0 = all)");
  benchc->add_option("--report", ba.report, "JSON report path");

  GenerateArgs ga;
  auto* generate = app.add_subcommand("generate", "Write the synthetic labeled ticket corpus");
  generate->add_option("--out", ga.out, "CSV path")->required();
  generate->add_option("--documents", ga.documents, "Number of tickets")->capture_default_str();
  generate->add_option("--ratio", ga.ratio, "Change,Problem,Request proportions")
      ->capture_default_str();
  generate->add_option("--seed", ga.seed, "Random seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*train) return cmd_train(ta);
    if (*evaluate) return cmd_evaluate(ea);
    if (*classify) return cmd_classify(ca);
    if (*serve) return cmd_serve(sa);
    if (*benchc) return cmd_bench(ba);
    if (*generate) return cmd_generate(ga);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ModelFormatError& e) {
    std::cerr << "model error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace triage
