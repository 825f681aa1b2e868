#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "triage/bilstm.hpp"
#include "triage/corpus.hpp"
#include "triage/logreg.hpp"
#include "triage/nb.hpp"
#include "triage/vectorize.hpp"

namespace triage {

enum class ModelType { NaiveBayes, LogReg, BiLSTM };

std::string_view model_type_name(ModelType t) noexcept;  // "nb", "logreg", "bilstm"
ModelType parse_model_type(std::string_view name);       // throws UsageError

struct TrainedModel {
  std::variant<NBModel, LRModel, BiLSTMModel> model;
  std::string created_at = "1970-01-01T00:00:00Z";
  std::string dataset_hash;
  std::string fingerprint;  // set by stamp_fingerprint, save_model and load_model

  ModelType type() const;
  const Vocabulary& vocab() const;
};

/// Every knob for the three families. Flat key=value config files map onto
/// this struct through apply_config.
struct TrainOptions {
  ModelType type = ModelType::NaiveBayes;
  VocabOptions vocab;
  double nb_alpha = 1.0;
  LRHyperparams logreg;
  bool logreg_balanced = true;
  BiLSTMConfig bilstm;
  bool bilstm_balanced = true;
  std::uint64_t seed = 0;
};

/// Applies `key = value` settings (see docs/config.md). Unknown keys throw
/// UsageError.
void apply_config(TrainOptions& opts, const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

/// Fits vocabulary and model on the given documents only.
/// `bilstm_history` receives the early-stopping trace when non-null.
TrainedModel train_model(std::span<const CleanDocument* const> docs, const TrainOptions& opts,
                         TrainingHistory* bilstm_history = nullptr);

struct Prediction {
  Label label = Label::Change;
  PerClass<double> probs{};
};

/// Vectorizes per model family and predicts. Documents may be empty token
/// lists (they get the model's no-evidence answer).
std::vector<Prediction> predict_batch(const TrainedModel& model,
                                      std::span<const std::vector<std::string>> docs);
Prediction predict_tokens(const TrainedModel& model, std::span<const std::string> tokens);

/// Throws ModelFormatError when parameter shapes disagree with the vocabulary.
void check_consistency(const TrainedModel& model);

// Model envelope -----------------------------------------------------------

inline constexpr int kFormatVersion = 1;

/// Serialized bytes of the envelope including the fingerprint trailer.
std::string serialize_model(const TrainedModel& model);
/// Parses and verifies; throws ModelFormatError on any mismatch.
TrainedModel deserialize_model(std::string_view bytes);

/// Sets model.fingerprint to the hash the envelope would carry.
void stamp_fingerprint(TrainedModel& model);

void save_model(TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

}  // namespace triage
