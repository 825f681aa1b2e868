#include "triage/model.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "triage/error.hpp"
#include "triage/hash.hpp"

namespace triage {

using ojson = nlohmann::ordered_json;

std::string_view model_type_name(ModelType t) noexcept {
  switch (t) {
    case ModelType::NaiveBayes: return "nb";
    case ModelType::LogReg: return "logreg";
    case ModelType::BiLSTM: return "bilstm";
  }
  return "?";
}

ModelType parse_model_type(std::string_view name) {
  if (name == "nb") return ModelType::NaiveBayes;
  if (name == "logreg") return ModelType::LogReg;
  if (name == "bilstm") return ModelType::BiLSTM;
  throw UsageError("unknown model type '" + std::string(name) + "' (expected nb, logreg or bilstm)");
}

ModelType TrainedModel::type() const { return static_cast<ModelType>(model.index()); }

const Vocabulary& TrainedModel::vocab() const {
  const Vocabulary* v = std::visit([](const auto& m) { return m.vocab.get(); }, model);
  if (!v) throw ModelFormatError("model has no vocabulary");
  return *v;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* b = value.data();
  const char* e = b + value.size();
  auto [ptr, ec] = std::from_chars(b, e, out);
  if (ec != std::errc{} || ptr != e)
    throw UsageError("config: invalid value '" + value + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw UsageError("config: invalid boolean '" + value + "' for " + key);
}

std::vector<std::size_t> parse_layers(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= value.size()) {
    auto end = value.find_first_of("x,", pos);
    if (end == std::string::npos) end = value.size();
    out.push_back(parse_number<std::size_t>(key, value.substr(pos, end - pos)));
    pos = end + 1;
  }
  return out;
}

}  // namespace

void apply_config(TrainOptions& o, const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) {
    if (k == "seed") o.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "vocab.min_df") o.vocab.min_df = parse_number<std::size_t>(k, v);
    else if (k == "vocab.max_size") o.vocab.max_size = parse_number<std::size_t>(k, v);
    else if (k == "nb.alpha") o.nb_alpha = parse_number<double>(k, v);
    else if (k == "logreg.learning_rate") o.logreg.learning_rate = parse_number<double>(k, v);
    else if (k == "logreg.epochs") o.logreg.epochs = parse_number<std::size_t>(k, v);
    else if (k == "logreg.batch_size") o.logreg.batch_size = parse_number<std::size_t>(k, v);
    else if (k == "logreg.l2") o.logreg.l2 = parse_number<double>(k, v);
    else if (k == "logreg.class_weighting") o.logreg_balanced = parse_bool(k, v);
    else if (k == "bilstm.hidden_sizes") o.bilstm.hidden_sizes = parse_layers(k, v);
    else if (k == "bilstm.embedding_dim") o.bilstm.embedding_dim = parse_number<std::size_t>(k, v);
    else if (k == "bilstm.batch_size") o.bilstm.batch_size = parse_number<std::size_t>(k, v);
    else if (k == "bilstm.max_epochs") o.bilstm.max_epochs = parse_number<std::size_t>(k, v);
    else if (k == "bilstm.patience") o.bilstm.patience = parse_number<std::size_t>(k, v);
    else if (k == "bilstm.learning_rate") o.bilstm.learning_rate = parse_number<double>(k, v);
    else if (k == "bilstm.clip_norm") o.bilstm.clip_norm = parse_number<double>(k, v);
    else if (k == "bilstm.validation_fraction")
      o.bilstm.validation_fraction = parse_number<double>(k, v);
    else if (k == "bilstm.max_len") o.bilstm.max_len = parse_number<std::size_t>(k, v);
    else if (k == "bilstm.class_weighting") o.bilstm_balanced = parse_bool(k, v);
    else throw UsageError("config: unknown key '" + k + "'");
  }
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file: " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

// ---------------------------------------------------------------------------
// Training and prediction dispatch

TrainedModel train_model(std::span<const CleanDocument* const> docs, const TrainOptions& opts,
                         TrainingHistory* bilstm_history) {
  if (docs.empty()) throw DataError("no training documents");
  auto vocab = std::make_shared<const Vocabulary>(build_vocab(docs, opts.vocab));
  PerClass<std::size_t> counts{};
  for (const auto* d : docs) ++counts[index_of(d->label)];

  TrainedModel out;
  switch (opts.type) {
    case ModelType::NaiveBayes: {
      std::vector<Labeled<CountVector>> data;
      data.reserve(docs.size());
      for (const auto* d : docs) data.push_back({bow_counts(*d, *vocab), d->label});
      out.model = nb_train(data, opts.nb_alpha, vocab);
      break;
    }
    case ModelType::LogReg: {
      std::vector<Labeled<TfidfVector>> data;
      data.reserve(docs.size());
      for (const auto* d : docs) data.push_back({tfidf_transform(bow_counts(*d, *vocab), *vocab), d->label});
      LRHyperparams hp = opts.logreg;
      hp.seed = opts.seed;
      if (opts.logreg_balanced) hp.class_weights = class_weights_from_counts(counts);
      out.model = lr_train(data, hp, vocab).model;
      break;
    }
    case ModelType::BiLSTM: {
      BiLSTMConfig cfg = opts.bilstm;
      cfg.seed = opts.seed;
      if (opts.bilstm_balanced) cfg.class_weights = class_weights_from_counts(counts);
      std::vector<Labeled<TokenSequence>> data;
      data.reserve(docs.size());
      for (const auto* d : docs) data.push_back({encode_sequence(*d, *vocab, cfg.max_len), d->label});
      auto res = bilstm_train(data, cfg, vocab);
      if (bilstm_history) *bilstm_history = std::move(res.history);
      out.model = std::move(res.model);
      break;
    }
  }
  return out;
}

std::vector<Prediction> predict_batch(const TrainedModel& model,
                                      std::span<const std::vector<std::string>> docs) {
  std::vector<Prediction> out;
  out.reserve(docs.size());
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        const Vocabulary& vocab = *m.vocab;
        if constexpr (std::is_same_v<M, NBModel>) {
          for (const auto& toks : docs) {
            auto p = nb_predict(m, bow_counts(toks, vocab));
            out.push_back({p.label, softmax(p.scores)});
          }
        } else if constexpr (std::is_same_v<M, LRModel>) {
          for (const auto& toks : docs) {
            auto p = lr_predict(m, tfidf_transform(bow_counts(toks, vocab), vocab));
            out.push_back({p.label, p.probs});
          }
        } else {
          std::vector<TokenSequence> seqs;
          seqs.reserve(docs.size());
          for (const auto& toks : docs) seqs.push_back(encode_sequence(toks, vocab, m.config.max_len));
          for (const auto& p : bilstm_predict(m, seqs)) out.push_back({p.label, p.probs});
        }
      },
      model.model);
  return out;
}

Prediction predict_tokens(const TrainedModel& model, std::span<const std::string> tokens) {
  std::vector<std::vector<std::string>> one{std::vector<std::string>(tokens.begin(), tokens.end())};
  return predict_batch(model, one).front();
}

void check_consistency(const TrainedModel& model) {
  const std::size_t v = model.vocab().size();
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        bool ok = true;
        if constexpr (std::is_same_v<M, NBModel>) {
          ok = m.token_log_likelihood.size() == kNumClasses * v;
        } else if constexpr (std::is_same_v<M, LRModel>) {
          ok = m.weights.size() == kNumClasses * v;
        } else {
          ok = static_cast<std::size_t>(m.params.embedding.rows()) == v + Vocabulary::kOffset &&
               !m.params.layers.empty();
        }
        if (!ok) throw ModelFormatError("model parameters do not match its vocabulary");
      },
      model.model);
}

// ---------------------------------------------------------------------------
// Envelope
//
//   triage-model\n
//   <header length in bytes>\n
//   <header JSON>
//   <payload: float64 little-endian arrays, in header order, row-major>
//   sha256:<64 hex digits>\n          (hash of every preceding byte)

namespace {

static_assert(std::endian::native == std::endian::little, "envelope payload assumes little-endian");

constexpr std::string_view kMagic = "triage-model\n";
constexpr std::string_view kTrailerTag = "sha256:";
constexpr std::size_t kTrailerSize = 7 + 64 + 1;

struct ArrayRef {
  std::string name;
  std::vector<std::size_t> shape;
  const double* data;
  std::size_t size;
};

std::vector<ArrayRef> arrays_of(const TrainedModel& tm) {
  std::vector<ArrayRef> out;
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, NBModel>) {
          out.push_back({"class_log_prior", {kNumClasses}, m.class_log_prior.data(), kNumClasses});
          out.push_back({"token_log_likelihood", {kNumClasses, m.vocab_size()},
                         m.token_log_likelihood.data(), m.token_log_likelihood.size()});
        } else if constexpr (std::is_same_v<M, LRModel>) {
          out.push_back({"weights", {kNumClasses, m.dim()}, m.weights.data(), m.weights.size()});
          out.push_back({"bias", {kNumClasses}, m.bias.data(), kNumClasses});
        } else {
          for_each_tensor(m.params, [&](const std::string& name, const Matrix& t) {
            out.push_back({name,
                           {static_cast<std::size_t>(t.rows()), static_cast<std::size_t>(t.cols())},
                           t.data(),
                           static_cast<std::size_t>(t.size())});
          });
        }
      },
      tm.model);
  return out;
}

ojson hyperparams_of(const TrainedModel& tm) {
  return std::visit(
      [](const auto& m) -> ojson {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, NBModel>) {
          return {{"alpha", m.alpha}};
        } else if constexpr (std::is_same_v<M, LRModel>) {
          const auto& h = m.hp;
          return {{"learning_rate", h.learning_rate}, {"epochs", h.epochs},
                  {"batch_size", h.batch_size},       {"l2", h.l2},
                  {"class_weights", h.class_weights}, {"seed", h.seed}};
        } else {
          const auto& c = m.config;
          return {{"hidden_sizes", c.hidden_sizes},
                  {"embedding_dim", c.embedding_dim},
                  {"batch_size", c.batch_size},
                  {"max_epochs", c.max_epochs},
                  {"patience", c.patience},
                  {"learning_rate", c.learning_rate},
                  {"clip_norm", c.clip_norm},
                  {"validation_fraction", c.validation_fraction},
                  {"seed", c.seed},
                  {"max_len", c.max_len},
                  {"class_weights", c.class_weights}};
        }
      },
      tm.model);
}

std::string body_of(const TrainedModel& tm) {
  const Vocabulary& v = tm.vocab();
  ojson header;
  header["format_version"] = kFormatVersion;
  header["model_type"] = model_type_name(tm.type());
  header["created_at"] = tm.created_at;
  header["dataset_hash"] = tm.dataset_hash;
  header["vocabulary"] = {{"tokens", v.tokens()}, {"doc_freq", v.doc_freq()},
                          {"total_docs", v.total_docs()}};
  header["hyperparameters"] = hyperparams_of(tm);
  const auto arrays = arrays_of(tm);
  ojson list = ojson::array();
  for (const auto& a : arrays) list.push_back({{"name", a.name}, {"shape", a.shape}});
  header["arrays"] = std::move(list);

  const std::string h = header.dump();
  std::string out;
  out += kMagic;
  out += std::to_string(h.size());
  out += '\n';
  out += h;
  for (const auto& a : arrays)
    out.append(reinterpret_cast<const char*>(a.data), a.size * sizeof(double));
  return out;
}

[[noreturn]] void bad(const std::string& why) { throw ModelFormatError("model file: " + why); }

}  // namespace

std::string serialize_model(const TrainedModel& model) {
  std::string body = body_of(model);
  const std::string digest = sha256_hex(body);
  body += kTrailerTag;
  body += digest;
  body += '\n';
  return body;
}

void stamp_fingerprint(TrainedModel& model) { model.fingerprint = sha256_hex(body_of(model)); }

TrainedModel deserialize_model(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + kTrailerSize || !bytes.starts_with(kMagic))
    bad("not a model envelope");
  const std::string_view body = bytes.substr(0, bytes.size() - kTrailerSize);
  const std::string_view trailer = bytes.substr(bytes.size() - kTrailerSize);
  if (!trailer.starts_with(kTrailerTag) || trailer.back() != '\n') bad("missing fingerprint trailer");
  const std::string expected(trailer.substr(kTrailerTag.size(), 64));
  const std::string actual = sha256_hex(body);
  if (expected != actual) bad("fingerprint mismatch (file is corrupt or was modified)");

  std::string_view rest = body.substr(kMagic.size());
  const auto nl = rest.find('\n');
  if (nl == std::string_view::npos) bad("missing header length");
  std::size_t header_len = 0;
  {
    auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + nl, header_len);
    if (ec != std::errc{} || ptr != rest.data() + nl) bad("invalid header length");
  }
  rest.remove_prefix(nl + 1);
  if (header_len > rest.size()) bad("truncated header");

  ojson header;
  try {
    header = ojson::parse(rest.substr(0, header_len));
  } catch (const std::exception& e) {
    bad(std::string("header is not valid JSON: ") + e.what());
  }
  rest.remove_prefix(header_len);

  try {
    const int version = header.at("format_version").get<int>();
    if (version != kFormatVersion) bad("unsupported format_version " + std::to_string(version));

    const auto& jv = header.at("vocabulary");
    auto vocab = std::make_shared<const Vocabulary>(
        jv.at("tokens").get<std::vector<std::string>>(),
        jv.at("doc_freq").get<std::vector<std::size_t>>(), jv.at("total_docs").get<std::size_t>());
    const std::size_t v = vocab->size();
    const auto& hp = header.at("hyperparameters");

    // Payload arrays in header order.
    std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<double>>> arrays;
    for (const auto& a : header.at("arrays")) {
      auto shape = a.at("shape").get<std::vector<std::size_t>>();
      std::size_t n = 1;
      for (auto s : shape) n *= s;
      if (n * sizeof(double) > rest.size()) bad("truncated payload");
      std::vector<double> data(n);
      std::memcpy(data.data(), rest.data(), n * sizeof(double));
      rest.remove_prefix(n * sizeof(double));
      arrays[a.at("name").get<std::string>()] = {std::move(shape), std::move(data)};
    }
    if (!rest.empty()) bad("unexpected bytes after payload");
    auto take = [&](const std::string& name, std::vector<std::size_t> shape) {
      auto it = arrays.find(name);
      if (it == arrays.end()) bad("missing array " + name);
      if (it->second.first != shape) bad("array " + name + " has unexpected shape");
      return std::move(it->second.second);
    };

    TrainedModel tm;
    tm.created_at = header.at("created_at").get<std::string>();
    tm.dataset_hash = header.at("dataset_hash").get<std::string>();
    const auto type = parse_model_type(header.at("model_type").get<std::string>());
    switch (type) {
      case ModelType::NaiveBayes: {
        NBModel m;
        m.alpha = hp.at("alpha").get<double>();
        auto prior = take("class_log_prior", {kNumClasses});
        std::copy(prior.begin(), prior.end(), m.class_log_prior.begin());
        m.token_log_likelihood = take("token_log_likelihood", {kNumClasses, v});
        m.vocab = vocab;
        tm.model = std::move(m);
        break;
      }
      case ModelType::LogReg: {
        LRModel m;
        m.hp.learning_rate = hp.at("learning_rate").get<double>();
        m.hp.epochs = hp.at("epochs").get<std::size_t>();
        m.hp.batch_size = hp.at("batch_size").get<std::size_t>();
        m.hp.l2 = hp.at("l2").get<double>();
        m.hp.class_weights = hp.at("class_weights").get<PerClass<double>>();
        m.hp.seed = hp.at("seed").get<std::uint64_t>();
        m.weights = take("weights", {kNumClasses, v});
        auto bias = take("bias", {kNumClasses});
        std::copy(bias.begin(), bias.end(), m.bias.begin());
        m.vocab = vocab;
        tm.model = std::move(m);
        break;
      }
      case ModelType::BiLSTM: {
        BiLSTMConfig c;
        c.hidden_sizes = hp.at("hidden_sizes").get<std::vector<std::size_t>>();
        c.embedding_dim = hp.at("embedding_dim").get<std::size_t>();
        c.batch_size = hp.at("batch_size").get<std::size_t>();
        c.max_epochs = hp.at("max_epochs").get<std::size_t>();
        c.patience = hp.at("patience").get<std::size_t>();
        c.learning_rate = hp.at("learning_rate").get<double>();
        c.clip_norm = hp.at("clip_norm").get<double>();
        c.validation_fraction = hp.at("validation_fraction").get<double>();
        c.seed = hp.at("seed").get<std::uint64_t>();
        c.max_len = hp.at("max_len").get<std::size_t>();
        c.class_weights = hp.at("class_weights").get<PerClass<double>>();
        BiLSTMModel m = init_params(c, v, vocab);
        for_each_tensor(m.params, [&](const std::string& name, Matrix& t) {
          auto data = take(name, {static_cast<std::size_t>(t.rows()), static_cast<std::size_t>(t.cols())});
          std::memcpy(t.data(), data.data(), data.size() * sizeof(double));
        });
        tm.model = std::move(m);
        break;
      }
    }
    tm.fingerprint = actual;
    check_consistency(tm);
    return tm;
  } catch (const ModelFormatError&) {
    throw;
  } catch (const std::exception& e) {
    bad(std::string("invalid header: ") + e.what());
  }
}

void save_model(TrainedModel& model, const std::filesystem::path& path) {
  const std::string bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write model file: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing model file: " + path.string());
  model.fingerprint = bytes.substr(bytes.size() - 65, 64);
}

TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelFormatError("cannot open model file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_model(ss.str());
}

}  // namespace triage
