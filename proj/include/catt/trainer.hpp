#ifndef CATT_TRAINER_HPP
#define CATT_TRAINER_HPP

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "catt/data.hpp"
#include "catt/encoder.hpp"
#include "catt/loss.hpp"
#include "catt/optim.hpp"

namespace catt {

struct TrainConfig {
  double learning_rate = 1e-3;
  Index batch_size = 8;
  Index seq_len = 119;
  double temperature = 0.5;
  LossVariant variant = LossVariant::mp_xent;
  bool per_sequence_mask = false;
  /// nullopt resolves by dataset size.
  std::optional<std::int64_t> n_iterations;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  AdamWConfig adamw() const { return {learning_rate, adam_beta1, adam_beta2, adam_eps, weight_decay}; }
  void validate() const {
    adamw().validate();
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (seq_len < 3) throw ConfigError("TrainConfig: seq_len must be >= 3");
    if (n_iterations && *n_iterations < 0) throw ConfigError("TrainConfig: n_iterations must be >= 0");
    LossConfig{temperature, variant, 0, per_sequence_mask}.validate();
  }
};

inline constexpr std::int64_t kLargeDatasetThreshold = 100000;

/// 200 optimizer steps below 100,000 instances, 600 otherwise; explicit requests pass through.
inline std::int64_t resolve_iterations(std::int64_t dataset_size, std::optional<std::int64_t> requested) {
  if (dataset_size < 1) throw ConfigError("resolve_iterations: dataset_size must be >= 1");
  if (requested) return *requested;
  return dataset_size < kLargeDatasetThreshold ? 200 : 600;
}

struct IterationRecord {
  std::int64_t iteration = 0;
  double loss = 0;
  double wall_ms = 0;
};

struct RunLog {
  std::vector<IterationRecord> records;
  double total_seconds = 0;
  std::string variant;
  double temperature = 0;
};

/// One JSON object per line: {"iteration", "loss", "wall_ms", "variant", "tau"}.
void write_run_log(std::ostream& os, const RunLog& log);

template <typename Scalar>
struct PretrainResult {
  EncoderState<Scalar> state;
  OptimizerState<Scalar> optimizer;
  RunLog log;
};

/// Draws batches (reshuffled every pass over the windows), encodes, applies the configured
/// loss and steps AdamW. Deterministic given the seeds in `enc_cfg` and `train_cfg`.
template <typename Scalar>
PretrainResult<Scalar> pretrain(const InstanceSequence& seq, const EncoderConfig& enc_cfg,
                                const TrainConfig& train_cfg) {
  train_cfg.validate();
  if (enc_cfg.input_dim != seq.dim())
    throw ConfigError("pretrain: encoder input_dim " + std::to_string(enc_cfg.input_dim) +
                      " does not match data dimension " + std::to_string(seq.dim()));
  const std::int64_t iterations = resolve_iterations(seq.length(), train_cfg.n_iterations);

  PretrainResult<Scalar> res{init_params<Scalar>(enc_cfg), {}, {}};
  res.optimizer = OptimizerState<Scalar>::zeros_like(res.state.params);
  res.log.variant = to_string(train_cfg.variant);
  res.log.temperature = train_cfg.temperature;
  set_mode(res.state, EncoderMode::train);

  const std::uint64_t batch_seed = derive_seed(train_cfg.seed, "batch");
  const std::uint64_t shuffle_seed = derive_seed(train_cfg.seed, "shuffle");
  std::uint64_t epoch = 0;
  BatchStream stream(seq, train_cfg.seq_len, train_cfg.batch_size, mix_seed(batch_seed + epoch));
  const AdamWConfig adamw = train_cfg.adamw();

  const auto start = std::chrono::steady_clock::now();
  for (std::int64_t it = 1; it <= iterations; ++it) {
    std::optional<SequenceBatch> batch = stream.next();
    if (!batch) {
      ++epoch;
      stream = BatchStream(seq, train_cfg.seq_len, train_cfg.batch_size, mix_seed(batch_seed + epoch));
      batch = stream.next();
    }
    const SequenceTensor<Scalar> x = batch->data.template cast<Scalar>();
    auto [z, cache] = forward(res.state, x);

    LossConfig loss_cfg{train_cfg.temperature, train_cfg.variant,
                        mix_seed(shuffle_seed + static_cast<std::uint64_t>(it)), train_cfg.per_sequence_mask};
    LossOutput<Scalar> loss;
    try {
      loss = compute_loss(z, loss_cfg);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at iteration " + std::to_string(it), it, NAN);
    }
    const double value = static_cast<double>(loss.value);
    if (!std::isfinite(value) || !loss.grad.rows.allFinite())
      throw NumericError("non-finite loss or loss gradient at iteration " + std::to_string(it) +
                             " (loss = " + std::to_string(value) + ")",
                         it, value);

    auto grads = backward(res.state, cache, loss.grad);
    try {
      adamw_step(res.state.params, grads.param_grads, res.optimizer, adamw, it);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (loss = " + std::to_string(value) + ")", it, value);
    }

    const auto now = std::chrono::steady_clock::now();
    res.log.records.push_back({it, value, std::chrono::duration<double, std::milli>(now - start).count()});
  }
  res.log.total_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

}  // namespace catt

#endif  // CATT_TRAINER_HPP
