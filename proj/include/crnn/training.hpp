#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "crnn/adam.hpp"
#include "crnn/corpus.hpp"
#include "crnn/model.hpp"
#include "crnn/rng.hpp"

namespace crnn {

struct TrainConfig {
  std::size_t batch_size = 256;
  std::size_t iterations = 10000;
  double lr_start = 0.01;
  double lr_end = 0.001;
  std::uint64_t seed = 0;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
  std::size_t valid_every = 0;
  AdamHyper adam;

  void validate() const {
    if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
    if (iterations == 0) throw ConfigError("train: iterations must be positive");
    if (!(lr_end > 0.0) || !(lr_start >= lr_end))
      throw ConfigError("train: need lr_start >= lr_end > 0");
    if (clip_norm < 0.0) throw ConfigError("train: clip_norm must be nonnegative");
  }
};

/// Square-root decay from lr_start at step 0 to lr_end at step `iterations`:
///   lr(t) = lr_start / sqrt(1 + (t / T) * ((lr_start / lr_end)^2 - 1)).
inline double lr_schedule(std::size_t step, std::size_t iterations, double lr_start,
                          double lr_end) {
  if (step >= iterations) return lr_end;
  const double ratio = lr_start / lr_end;
  const double frac = static_cast<double>(step) / static_cast<double>(iterations);
  return lr_start / std::sqrt(1.0 + frac * (ratio * ratio - 1.0));
}

inline double lr_schedule(std::size_t step, const TrainConfig& cfg) {
  return lr_schedule(step, cfg.iterations, cfg.lr_start, cfg.lr_end);
}

/// Sessions with their precomputed context vectors.
struct EncodedCorpus {
  std::vector<Session> sessions;
  std::vector<std::vector<ContextVector>> contexts;
  std::size_t context_dim = 0;
  std::size_t context_active = 0;

  static EncodedCorpus build(std::vector<Session> sessions, const ContextSchema& schema) {
    EncodedCorpus c;
    c.context_dim = schema.dim();
    c.context_active = schema.active_count();
    c.contexts.reserve(sessions.size());
    for (const auto& s : sessions) c.contexts.push_back(session_contexts(s, schema));
    c.sessions = std::move(sessions);
    return c;
  }

  std::size_t prediction_count() const {
    std::size_t n = 0;
    for (const auto& s : sessions) n += s.events.empty() ? 0 : s.events.size() - 1;
    return n;
  }
};

/// Endless stream of padded mini-batches. Each epoch visits every session
/// once in a seeded random order; the last batch of an epoch may be short.
template <class T>
class BatchStream {
 public:
  BatchStream(const EncodedCorpus& corpus, std::size_t batch_size, std::uint64_t seed)
      : corpus_(corpus), batch_size_(batch_size), rng_(seed) {
    if (corpus.sessions.empty()) throw InputError("make_batches: empty corpus");
    if (batch_size == 0) throw ConfigError("make_batches: batch_size must be positive");
    for (const auto& s : corpus.sessions)
      if (s.events.size() < 2)
        throw InputError("make_batches: session " + s.id + " has fewer than two events");
    order_.resize(corpus.sessions.size());
    reshuffle();
  }

  Batch<T> next() {
    if (pos_ >= order_.size()) {
      ++epoch_;
      reshuffle();
    }
    const std::size_t end = std::min(order_.size(), pos_ + batch_size_);
    std::vector<const Session*> ss;
    std::vector<const std::vector<ContextVector>*> cs;
    for (std::size_t i = pos_; i < end; ++i) {
      ss.push_back(&corpus_.sessions[order_[i]]);
      cs.push_back(&corpus_.contexts[order_[i]]);
    }
    pos_ = end;
    return make_batch<T, Session>(ss, cs, corpus_.context_active, corpus_.context_dim);
  }

  std::size_t epoch() const noexcept { return epoch_; }
  bool at_epoch_end() const noexcept { return pos_ >= order_.size(); }

 private:
  void reshuffle() {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    rng_.shuffle(order_);
    pos_ = 0;
  }

  const EncodedCorpus& corpus_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
};

struct TrainLogRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;      // mean NLL over the batch's prediction positions
  double loss_sum = 0.0;  // summed NLL
  double count = 0.0;     // prediction positions in the batch
  double grad_norm = 0.0;
  double wall_ms = 0.0;
  std::optional<double> valid_recall;
};

template <class T>
struct TrainResult {
  ModelParams<T> params;
  std::vector<TrainLogRecord> log;
  bool aborted = false;
  std::string diagnostic;
};

template <class T>
double global_grad_norm(const ModelParams<T>& params) {
  double s = 0.0;
  for (const auto* p : params.list())
    for (T g : p->grad.values()) s += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(s);
}

template <class T>
struct TrainHooks {
  // Called after every logged step.
  std::function<void(const TrainLogRecord&)> on_log;
  // Returns validation Recall@K for the current parameters.
  std::function<double(const ModelParams<T>&)> validate;
};

/// Runs cfg.iterations Adam steps on the mean masked NLL of each batch.
/// A non-finite loss or gradient stops training; the returned parameters are
/// then the last ones that produced a finite loss.
template <class T>
TrainResult<T> train(const EncodedCorpus& corpus, const ModelConfig& model_cfg,
                     const TrainConfig& cfg, ModelParams<T> params,
                     const TrainHooks<T>& hooks = {}) {
  cfg.validate();
  check_params(model_cfg, params);
  if (corpus.context_dim != model_cfg.context_dim && model_cfg.uses_context())
    throw ConfigError("train: corpus context width " + std::to_string(corpus.context_dim) +
                      " differs from model context width " +
                      std::to_string(model_cfg.context_dim));
  TrainResult<T> result;
  BatchStream<T> stream(corpus, cfg.batch_size, cfg.seed);
  AdamState<T> adam;
  adam.hyper = cfg.adam;
  Tape<T> tape;
  ModelParams<T> last_good = params;
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t step = 0; step < cfg.iterations; ++step) {
    const Batch<T> batch = stream.next();
    tape.clear();
    params.zero_grad();
    std::optional<TapedLoss<T>> taped;
    try {
      taped = taped_batch_loss(tape, params, model_cfg, batch);
    } catch (const NumericError& e) {
      result.aborted = true;
      result.diagnostic = std::string(e.what()) + " at step " + std::to_string(step);
      break;
    }
    const TapedLoss<T>& loss = *taped;
    TrainLogRecord rec;
    rec.step = step;
    rec.lr = lr_schedule(step, cfg);
    rec.loss = static_cast<double>(loss.mean.value()(0, 0));
    rec.loss_sum = static_cast<double>(loss.sum);
    rec.count = static_cast<double>(loss.count);
    if (!std::isfinite(rec.loss)) {
      result.aborted = true;
      result.diagnostic = "non-finite loss at step " + std::to_string(step);
      break;
    }
    last_good = params;
    tape.backward(loss.mean);
    rec.grad_norm = global_grad_norm(params);
    if (cfg.clip_norm > 0.0 && std::isfinite(rec.grad_norm) && rec.grad_norm > cfg.clip_norm) {
      const T f = static_cast<T>(cfg.clip_norm / rec.grad_norm);
      for (auto* p : params.list())
        for (T& g : p->grad.values()) g *= f;
    }
    try {
      const auto plist = params.list();
      adam_step<T>(plist, adam, rec.lr);
    } catch (const NumericError& e) {
      result.aborted = true;
      result.diagnostic = std::string(e.what()) + " at step " + std::to_string(step);
      break;
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (hooks.validate && cfg.valid_every > 0 &&
        ((step + 1) % cfg.valid_every == 0 || step + 1 == cfg.iterations))
      rec.valid_recall = hooks.validate(params);
    result.log.push_back(rec);
    if (hooks.on_log) hooks.on_log(rec);
  }
  tape.clear();
  result.params = result.aborted ? std::move(last_good) : std::move(params);
  return result;
}

}  // namespace crnn
