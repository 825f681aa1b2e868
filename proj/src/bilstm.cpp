#include "triage/bilstm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "triage/corpus.hpp"
#include "triage/error.hpp"
#include "triage/logreg.hpp"
#include "triage/rng.hpp"

namespace triage {

using Eigen::Index;

namespace {

using Array = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Derived>
Array sigmoid(const Eigen::ArrayBase<Derived>& z) {
  return 1.0 / (1.0 + (-z).exp());
}

void glorot(Matrix& m, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-s, s);
}

std::size_t position(bool reverse, std::size_t step, std::size_t length) {
  return reverse ? length - 1 - step : step;
}

// Runs one direction over the position-ordered layer input and writes its
// hidden states into columns [col, col + H) of `out`.
void run_direction(const LSTMDirection& p, bool reverse, const Matrix& input,
                   const std::vector<std::size_t>& lengths, std::size_t steps,
                   ForwardCache::Direction& d, Matrix& out, Index col) {
  const auto batch = static_cast<Index>(lengths.size());
  const Index h = p.u.cols();
  const auto rows = static_cast<Index>(steps) * batch;

  d.x.setZero(rows, input.cols());
  for (Index b = 0; b < batch; ++b) {
    const std::size_t len = lengths[static_cast<std::size_t>(b)];
    for (std::size_t s = 0; s < len; ++s)
      d.x.row(static_cast<Index>(s) * batch + b) =
          input.row(static_cast<Index>(position(reverse, s, len)) * batch + b);
  }

  Matrix z = d.x * p.w.transpose();
  z.rowwise() += p.b.row(0);
  d.gates.resize(rows, 4 * h);
  d.c.resize(rows, h);
  d.tanh_c.resize(rows, h);
  d.h.resize(rows, h);

  Matrix h_prev = Matrix::Zero(batch, h);
  Matrix c_prev = Matrix::Zero(batch, h);
  for (std::size_t s = 0; s < steps; ++s) {
    const Index r0 = static_cast<Index>(s) * batch;
    auto zs = z.middleRows(r0, batch);
    zs.noalias() += h_prev * p.u.transpose();
    auto gs = d.gates.middleRows(r0, batch);
    gs.leftCols(h) = sigmoid(zs.leftCols(h).array()).matrix();
    gs.middleCols(h, h) = sigmoid(zs.middleCols(h, h).array()).matrix();
    gs.middleCols(2 * h, h) = zs.middleCols(2 * h, h).array().tanh().matrix();
    gs.rightCols(h) = sigmoid(zs.rightCols(h).array()).matrix();

    auto cs = d.c.middleRows(r0, batch);
    cs = (gs.middleCols(h, h).array() * c_prev.array() +
          gs.leftCols(h).array() * gs.middleCols(2 * h, h).array())
             .matrix();
    auto tcs = d.tanh_c.middleRows(r0, batch);
    tcs = cs.array().tanh().matrix();
    auto hs = d.h.middleRows(r0, batch);
    hs = (gs.rightCols(h).array() * tcs.array()).matrix();
    h_prev = hs;
    c_prev = cs;
  }

  for (Index b = 0; b < batch; ++b) {
    const std::size_t len = lengths[static_cast<std::size_t>(b)];
    for (std::size_t s = 0; s < len; ++s)
      out.row(static_cast<Index>(position(reverse, s, len)) * batch + b).segment(col, h) =
          d.h.row(static_cast<Index>(s) * batch + b);
  }
}

// Backpropagates the position-ordered gradient columns [col, col + H) of
// `dout` through one direction, accumulating parameter gradients into `g`
// and input gradients into `dinput`.
void back_direction(const LSTMDirection& p, LSTMDirection& g, bool reverse,
                    const ForwardCache::Direction& d, const std::vector<std::size_t>& lengths,
                    std::size_t steps, const Matrix& dout, Index col, Matrix& dinput) {
  const auto batch = static_cast<Index>(lengths.size());
  const Index h = p.u.cols();
  const auto rows = static_cast<Index>(steps) * batch;

  Matrix dh_ext = Matrix::Zero(rows, h);
  for (Index b = 0; b < batch; ++b) {
    const std::size_t len = lengths[static_cast<std::size_t>(b)];
    for (std::size_t s = 0; s < len; ++s)
      dh_ext.row(static_cast<Index>(s) * batch + b) =
          dout.row(static_cast<Index>(position(reverse, s, len)) * batch + b).segment(col, h);
  }

  // Rows past a sequence's end receive zero upstream gradient, so their
  // gradients stay exactly zero through the recursion.
  Matrix dz(rows, 4 * h);
  Matrix dh_next = Matrix::Zero(batch, h);
  Array dc_next = Array::Zero(batch, h);
  const Array zero_state = Array::Zero(batch, h);
  for (std::size_t s = steps; s-- > 0;) {
    const Index r0 = static_cast<Index>(s) * batch;
    const auto gs = d.gates.middleRows(r0, batch).array();
    const Array i = gs.leftCols(h), f = gs.middleCols(h, h), gg = gs.middleCols(2 * h, h),
                o = gs.rightCols(h);
    const Array tc = d.tanh_c.middleRows(r0, batch).array();
    const Array dh = dh_ext.middleRows(r0, batch).array() + dh_next.array();
    const Array c_prev = s > 0 ? Array(d.c.middleRows(r0 - batch, batch).array()) : zero_state;

    const Array d_o = dh * tc;
    const Array dc = dh * o * (1.0 - tc.square()) + dc_next;
    auto dzs = dz.middleRows(r0, batch);
    dzs.leftCols(h) = (dc * gg * i * (1.0 - i)).matrix();
    dzs.middleCols(h, h) = (dc * c_prev * f * (1.0 - f)).matrix();
    dzs.middleCols(2 * h, h) = (dc * i * (1.0 - gg.square())).matrix();
    dzs.rightCols(h) = (d_o * o * (1.0 - o)).matrix();

    dc_next = dc * f;
    dh_next.noalias() = dzs * p.u;
  }

  if (steps > 1) {
    const Index tail = rows - batch;
    g.u.noalias() += dz.bottomRows(tail).transpose() * d.h.topRows(tail);
  }
  g.w.noalias() += dz.transpose() * d.x;
  g.b += dz.colwise().sum();

  const Matrix dx = dz * p.w;
  for (Index b = 0; b < batch; ++b) {
    const std::size_t len = lengths[static_cast<std::size_t>(b)];
    for (std::size_t s = 0; s < len; ++s)
      dinput.row(static_cast<Index>(position(reverse, s, len)) * batch + b) +=
          dx.row(static_cast<Index>(s) * batch + b);
  }
}

using SeqPtrs = std::vector<const TokenSequence*>;

Matrix forward_impl(const BiLSTMModel& model, const SeqPtrs& batch, ForwardCache& cache) {
  if (batch.empty()) throw UsageError("bilstm forward: empty batch");
  const auto& cfg = model.config;
  const auto& prm = model.params;
  const auto nb = static_cast<Index>(batch.size());

  cache.batch = batch.size();
  cache.lengths.clear();
  cache.ids.clear();
  std::size_t steps = 0;
  for (const auto* seq : batch) {
    if (seq->ids.size() != cfg.max_len)
      throw UsageError("bilstm forward: sequence length " + std::to_string(seq->ids.size()) +
                       " does not match configured max_len " + std::to_string(cfg.max_len));
    if (seq->true_length > seq->ids.size())
      throw UsageError("bilstm forward: true_length exceeds sequence length");
    cache.lengths.push_back(seq->true_length);
    cache.ids.push_back(seq->ids.data());
    steps = std::max(steps, seq->true_length);
  }
  steps = std::max<std::size_t>(steps, 1);
  cache.steps = steps;
  const auto rows = static_cast<Index>(steps) * nb;
  const auto vocab_rows = static_cast<std::size_t>(prm.embedding.rows());

  Matrix input = Matrix::Zero(rows, prm.embedding.cols());
  for (Index b = 0; b < nb; ++b) {
    const std::size_t len = cache.lengths[static_cast<std::size_t>(b)];
    const std::int32_t* ids = cache.ids[static_cast<std::size_t>(b)];
    for (std::size_t t = 0; t < len; ++t) {
      if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= vocab_rows)
        throw UsageError("bilstm forward: token id outside embedding table");
      input.row(static_cast<Index>(t) * nb + b) = prm.embedding.row(ids[t]);
    }
  }

  cache.layers.resize(prm.layers.size());
  const Matrix* layer_in = &input;
  for (std::size_t l = 0; l < prm.layers.size(); ++l) {
    const auto& layer = prm.layers[l];
    auto& lc = cache.layers[l];
    const Index h = layer.fwd.u.cols();
    lc.out.setZero(rows, 2 * h);
    run_direction(layer.fwd, false, *layer_in, cache.lengths, steps, lc.fwd, lc.out, 0);
    run_direction(layer.bwd, true, *layer_in, cache.lengths, steps, lc.bwd, lc.out, h);
    layer_in = &lc.out;
  }

  const Matrix& top = *layer_in;
  cache.pooled.setZero(nb, top.cols());
  for (Index b = 0; b < nb; ++b) {
    const std::size_t len = cache.lengths[static_cast<std::size_t>(b)];
    if (len == 0) continue;
    for (std::size_t t = 0; t < len; ++t)
      cache.pooled.row(b) += top.row(static_cast<Index>(t) * nb + b);
    cache.pooled.row(b) /= static_cast<double>(len);
  }
  cache.logits = cache.pooled * prm.head_w.transpose();
  cache.logits.rowwise() += prm.head_b.row(0);
  return cache.logits;
}

LossAndGrads loss_and_grads_impl(const BiLSTMModel& model, const SeqPtrs& batch,
                                 std::span<const Label> labels,
                                 const PerClass<double>& class_weights) {
  if (labels.size() != batch.size())
    throw UsageError("bilstm loss: label count does not match batch size");
  const auto& prm = model.params;
  ForwardCache cache;
  const Matrix logits = forward_impl(model, batch, cache);
  const auto nb = static_cast<Index>(batch.size());
  const double inv_b = 1.0 / static_cast<double>(nb);

  LossAndGrads out;
  Matrix dlogits(nb, static_cast<Index>(kNumClasses));
  for (Index b = 0; b < nb; ++b) {
    PerClass<double> z{logits(b, 0), logits(b, 1), logits(b, 2)};
    const std::size_t y = index_of(labels[static_cast<std::size_t>(b)]);
    const double w = class_weights[y];
    out.loss += w * (log_sum_exp(z) - z[y]);
    auto p = softmax(z);
    p[y] -= 1.0;
    for (std::size_t c = 0; c < kNumClasses; ++c)
      dlogits(b, static_cast<Index>(c)) = w * inv_b * p[c];
  }
  out.loss *= inv_b;
  if (!std::isfinite(out.loss)) throw TrainingError("bilstm loss is not finite");

  out.grads = prm.zeros_like();
  auto& g = out.grads;
  g.head_w.noalias() = dlogits.transpose() * cache.pooled;
  g.head_b = dlogits.colwise().sum();
  const Matrix dpooled = dlogits * prm.head_w;

  const std::size_t steps = cache.steps;
  const auto rows = static_cast<Index>(steps) * nb;
  Matrix dout = Matrix::Zero(rows, dpooled.cols());
  for (Index b = 0; b < nb; ++b) {
    const std::size_t len = cache.lengths[static_cast<std::size_t>(b)];
    if (len == 0) continue;
    const Eigen::RowVectorXd share = dpooled.row(b) / static_cast<double>(len);
    for (std::size_t t = 0; t < len; ++t) dout.row(static_cast<Index>(t) * nb + b) = share;
  }

  for (std::size_t l = prm.layers.size(); l-- > 0;) {
    const auto& layer = prm.layers[l];
    const auto& lc = cache.layers[l];
    const Index h = layer.fwd.u.cols();
    Matrix dinput = Matrix::Zero(rows, layer.fwd.w.cols());
    back_direction(layer.fwd, g.layers[l].fwd, false, lc.fwd, cache.lengths, steps, dout, 0,
                   dinput);
    back_direction(layer.bwd, g.layers[l].bwd, true, lc.bwd, cache.lengths, steps, dout, h,
                   dinput);
    dout = std::move(dinput);
  }

  for (Index b = 0; b < nb; ++b) {
    const std::size_t len = cache.lengths[static_cast<std::size_t>(b)];
    const std::int32_t* ids = cache.ids[static_cast<std::size_t>(b)];
    for (std::size_t t = 0; t < len; ++t)
      if (ids[t] != Vocabulary::kPad) g.embedding.row(ids[t]) += dout.row(static_cast<Index>(t) * nb + b);
  }
  return out;
}

SeqPtrs pointers(std::span<const TokenSequence> seqs) {
  SeqPtrs p;
  p.reserve(seqs.size());
  for (const auto& s : seqs) p.push_back(&s);
  return p;
}

double squared_norm(const BiLSTMParams& g) {
  double sq = 0.0;
  for_each_tensor(g, [&](const std::string&, const Matrix& m) { sq += m.squaredNorm(); });
  return sq;
}

void sgd_step(BiLSTMParams& p, BiLSTMParams& g, double step) {
  // The PAD row never receives gradient, so it stays zero.
  std::vector<Matrix*> grads;
  for_each_tensor(g, [&](const std::string&, Matrix& m) { grads.push_back(&m); });
  std::size_t k = 0;
  for_each_tensor(p, [&](const std::string&, Matrix& m) { m.noalias() -= step * *grads[k++]; });
}

}  // namespace

BiLSTMParams BiLSTMParams::zeros_like() const {
  BiLSTMParams z;
  z.embedding = Matrix::Zero(embedding.rows(), embedding.cols());
  z.layers.resize(layers.size());
  auto zero = [](const LSTMDirection& d) {
    return LSTMDirection{Matrix::Zero(d.w.rows(), d.w.cols()), Matrix::Zero(d.u.rows(), d.u.cols()),
                         Matrix::Zero(d.b.rows(), d.b.cols())};
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    z.layers[l].fwd = zero(layers[l].fwd);
    z.layers[l].bwd = zero(layers[l].bwd);
  }
  z.head_w = Matrix::Zero(head_w.rows(), head_w.cols());
  z.head_b = Matrix::Zero(head_b.rows(), head_b.cols());
  return z;
}

namespace {

template <typename P, typename F>
void visit(P& p, F&& f) {
  f(std::string("embedding"), p.embedding);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const std::string base = "layer" + std::to_string(l);
    f(base + ".fwd.w", p.layers[l].fwd.w);
    f(base + ".fwd.u", p.layers[l].fwd.u);
    f(base + ".fwd.b", p.layers[l].fwd.b);
    f(base + ".bwd.w", p.layers[l].bwd.w);
    f(base + ".bwd.u", p.layers[l].bwd.u);
    f(base + ".bwd.b", p.layers[l].bwd.b);
  }
  f(std::string("head.w"), p.head_w);
  f(std::string("head.b"), p.head_b);
}

}  // namespace

void for_each_tensor(BiLSTMParams& p, const std::function<void(const std::string&, Matrix&)>& f) {
  visit(p, f);
}

void for_each_tensor(const BiLSTMParams& p,
                     const std::function<void(const std::string&, const Matrix&)>& f) {
  visit(p, f);
}

BiLSTMModel init_params(const BiLSTMConfig& config, std::size_t vocab_size,
                        std::shared_ptr<const Vocabulary> vocab) {
  if (vocab_size < 1) throw UsageError("init_params: vocabulary must not be empty");
  if (config.hidden_sizes.empty()) throw UsageError("init_params: need at least one layer");
  if (config.embedding_dim < 1 || config.max_len < 1 || config.batch_size < 1)
    throw UsageError("init_params: sizes must be at least 1");
  for (auto h : config.hidden_sizes)
    if (h < 1) throw UsageError("init_params: hidden sizes must be at least 1");

  BiLSTMModel m;
  m.config = config;
  m.vocab = std::move(vocab);
  Rng rng(derive_seed({config.seed, 0x1217}));
  auto& p = m.params;

  const auto rows = static_cast<Index>(vocab_size + Vocabulary::kOffset);
  p.embedding.resize(rows, static_cast<Index>(config.embedding_dim));
  glorot(p.embedding, rng);
  p.embedding.row(Vocabulary::kPad).setZero();

  auto in = static_cast<Index>(config.embedding_dim);
  for (auto hs : config.hidden_sizes) {
    const auto h = static_cast<Index>(hs);
    BiLSTMLayer layer;
    for (auto* d : {&layer.fwd, &layer.bwd}) {
      d->w.resize(4 * h, in);
      glorot(d->w, rng);
      d->u.resize(4 * h, h);
      glorot(d->u, rng);
      d->b = Matrix::Zero(1, 4 * h);
      d->b.block(0, h, 1, h).setOnes();
    }
    p.layers.push_back(std::move(layer));
    in = 2 * h;
  }
  p.head_w.resize(static_cast<Index>(kNumClasses), in);
  glorot(p.head_w, rng);
  p.head_b = Matrix::Zero(1, static_cast<Index>(kNumClasses));
  return m;
}

Matrix forward(const BiLSTMModel& model, std::span<const TokenSequence> batch,
               ForwardCache* cache) {
  ForwardCache local;
  return forward_impl(model, pointers(batch), cache ? *cache : local);
}

LossAndGrads loss_and_grads(const BiLSTMModel& model, std::span<const TokenSequence> batch,
                            std::span<const Label> labels, const PerClass<double>& class_weights) {
  return loss_and_grads_impl(model, pointers(batch), labels, class_weights);
}

std::pair<double, double> bilstm_evaluate(const BiLSTMModel& model,
                                          std::span<const Labeled<TokenSequence>> data,
                                          const PerClass<double>& class_weights) {
  if (data.empty()) return {0.0, 0.0};
  constexpr std::size_t kChunk = 256;
  double loss = 0.0;
  std::size_t correct = 0;
  ForwardCache cache;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t stop = std::min(data.size(), start + kChunk);
    SeqPtrs batch;
    for (std::size_t i = start; i < stop; ++i) batch.push_back(&data[i].x);
    const Matrix logits = forward_impl(model, batch, cache);
    for (std::size_t i = start; i < stop; ++i) {
      const auto r = static_cast<Index>(i - start);
      PerClass<double> z{logits(r, 0), logits(r, 1), logits(r, 2)};
      const std::size_t y = index_of(data[i].y);
      loss += class_weights[y] * (log_sum_exp(z) - z[y]);
      if (argmax_lowest(softmax(z)) == y) ++correct;
    }
  }
  const auto n = static_cast<double>(data.size());
  return {loss / n, static_cast<double>(correct) / n};
}

BiLSTMTrainResult bilstm_fit(std::span<const Labeled<TokenSequence>> train,
                             std::span<const Labeled<TokenSequence>> validation,
                             const BiLSTMConfig& config, std::shared_ptr<const Vocabulary> vocab) {
  if (!vocab) throw UsageError("bilstm_fit: missing vocabulary");
  if (!(config.learning_rate > 0.0)) throw UsageError("bilstm_fit: learning rate must be positive");
  PerClass<std::size_t> in_train{}, in_val{};
  for (const auto& ex : train) ++in_train[index_of(ex.y)];
  for (const auto& ex : validation) ++in_val[index_of(ex.y)];
  for (std::size_t c = 0; c < kNumClasses; ++c)
    if (in_train[c] == 0 || in_val[c] == 0)
      throw DataError("degenerate split: class " + std::string(label_name(label_at(c))) +
                      " missing from the training or validation part");

  BiLSTMTrainResult out{init_params(config, vocab->size(), vocab), {}};
  BiLSTMModel& model = out.model;
  BiLSTMParams best = model.params;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t streak = 0;
  const std::size_t stop_after = std::max<std::size_t>(config.patience, 1);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  SeqPtrs batch;
  std::vector<Label> labels;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed({config.seed, 0xe90c, epoch}));
    rng.shuffle(std::span(order));
    double train_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      batch.clear();
      labels.clear();
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(&train[order[i]].x);
        labels.push_back(train[order[i]].y);
      }
      LossAndGrads lg;
      try {
        lg = loss_and_grads_impl(model, batch, labels, config.class_weights);
      } catch (const TrainingError&) {
        throw TrainingError("bilstm training diverged at epoch " + std::to_string(epoch));
      }
      double step = config.learning_rate;
      const double norm = std::sqrt(squared_norm(lg.grads));
      if (!std::isfinite(norm))
        throw TrainingError("bilstm gradient is not finite at epoch " + std::to_string(epoch));
      if (config.clip_norm > 0.0 && norm > config.clip_norm) step *= config.clip_norm / norm;
      sgd_step(model.params, lg.grads, step);
      train_loss += lg.loss * static_cast<double>(stop - start);
    }
    train_loss /= static_cast<double>(std::max<std::size_t>(order.size(), 1));

    const auto [val_loss, val_acc] = bilstm_evaluate(model, validation, config.class_weights);
    if (!std::isfinite(val_loss))
      throw TrainingError("bilstm validation loss is not finite at epoch " +
                          std::to_string(epoch));
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.history.epochs.push_back({train_loss, val_loss, val_acc, secs});
    out.history.stopped_epoch = epoch;

    if (val_loss < best_loss) {
      best_loss = val_loss;
      best = model.params;
      out.history.best_epoch = epoch;
      streak = 0;
    } else if (++streak >= stop_after) {
      break;
    }
  }
  model.params = std::move(best);
  return out;
}

BiLSTMTrainResult bilstm_train(std::span<const Labeled<TokenSequence>> data,
                               const BiLSTMConfig& config, std::shared_ptr<const Vocabulary> vocab) {
  std::vector<Label> labels;
  labels.reserve(data.size());
  for (const auto& ex : data) labels.push_back(ex.y);
  auto [keep, held] =
      stratified_holdout(labels, config.validation_fraction, derive_seed({config.seed, 0x7a1}));
  std::vector<Labeled<TokenSequence>> train, val;
  train.reserve(keep.size());
  val.reserve(held.size());
  for (auto i : keep) train.push_back(data[i]);
  for (auto i : held) val.push_back(data[i]);
  return bilstm_fit(train, val, config, std::move(vocab));
}

std::vector<BiLSTMPrediction> bilstm_predict(const BiLSTMModel& model,
                                             std::span<const TokenSequence> sequences) {
  constexpr std::size_t kChunk = 256;
  std::vector<BiLSTMPrediction> out;
  out.reserve(sequences.size());
  ForwardCache cache;
  for (std::size_t start = 0; start < sequences.size(); start += kChunk) {
    const std::size_t stop = std::min(sequences.size(), start + kChunk);
    const Matrix logits =
        forward_impl(model, pointers(sequences.subspan(start, stop - start)), cache);
    for (Index r = 0; r < logits.rows(); ++r) {
      const auto probs = softmax({logits(r, 0), logits(r, 1), logits(r, 2)});
      out.push_back({label_at(argmax_lowest(probs)), probs});
    }
  }
  return out;
}

}  // namespace triage
