#ifndef CATT_EVAL_HPP
#define CATT_EVAL_HPP

#include <cstdint>
#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "catt/data.hpp"
#include "catt/encoder.hpp"
#include "catt/types.hpp"

namespace catt {

struct Embedding {
  MatrixXd rows;  // T_used x F
  std::optional<Eigen::VectorXi> labels;
  /// Rows of the source sequence that were embedded: [0, used).
  Index used = 0;
};

/// Splits `seq` into floor(T / seq_len) contiguous windows, runs the eval-mode encoder and
/// returns the embeddings in instance order. Trailing instances that do not fill a window
/// are dropped, together with their labels.
template <typename Scalar>
Embedding embed_dataset(const EncoderState<Scalar>& state, const InstanceSequence& seq, Index seq_len,
                        Index windows_per_chunk = 64) {
  if (state.mode != EncoderMode::eval) throw ConfigError("embed_dataset: encoder must be in eval mode");
  if (seq_len < 1) throw ConfigError("embed_dataset: seq_len must be >= 1");
  if (seq.dim() != state.config.input_dim)
    throw ConfigError("embed_dataset: data dimension " + std::to_string(seq.dim()) +
                      " does not match encoder input_dim " + std::to_string(state.config.input_dim));
  const Index n_windows = seq.length() / seq_len;
  Embedding out;
  out.used = n_windows * seq_len;
  out.rows.resize(out.used, state.config.output_dim);
  for (Index w0 = 0; w0 < n_windows; w0 += windows_per_chunk) {
    const Index nw = std::min(windows_per_chunk, n_windows - w0);
    const Index r0 = w0 * seq_len;
    SequenceTensor<Scalar> x(nw, seq_len, seq.instances.middleRows(r0, nw * seq_len).template cast<Scalar>());
    out.rows.middleRows(r0, nw * seq_len) = forward_eval(state, x).rows.template cast<double>();
  }
  if (seq.labels) out.labels = seq.labels->head(out.used);
  return out;
}

struct ClassStats {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  Index support = 0;
};

/// Named metrics plus optional per-class breakdown and a row table (one row per horizon or
/// per label fraction). Serialized as JSON and as an aligned text table.
struct EvalReport {
  std::string kind;
  std::vector<std::pair<std::string, double>> metrics;
  std::map<int, ClassStats> per_class;
  std::vector<std::string> table_columns;
  std::vector<std::pair<std::string, std::vector<double>>> table_rows;
  nlohmann::json meta = nlohmann::json::object();

  void set(const std::string& name, double value);
  /// Throws std::out_of_range if absent.
  double get(const std::string& name) const;
  bool has(const std::string& name) const;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

// ---- metrics ----

double accuracy(const Eigen::VectorXi& y_true, const Eigen::VectorXi& y_pred);

/// Accuracy plus macro precision / recall / F1 over the union of labels seen in either
/// vector. A class with no predicted (or no true) members contributes 0 for that metric.
EvalReport classification_metrics(const Eigen::VectorXi& y_true, const Eigen::VectorXi& y_pred);

double mean_squared_error(const MatrixXd& y_true, const MatrixXd& y_pred);
double mean_absolute_error(const MatrixXd& y_true, const MatrixXd& y_pred);

/// Average precision: sum over distinct score thresholds (descending) of
/// (R_k - R_{k-1}) P_k. Labels are 0 / 1; requires at least one positive.
double auc_pr(const Eigen::VectorXi& y_true, const VectorXd& scores);

// ---- linear probe ----

struct ProbeConfig {
  int epochs = 10;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  Index batch_size = 64;
  double label_fraction = 1.0;
  int n_runs = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Softmax regression (zero-initialized) trained by minibatch AdamW on frozen embeddings.
EvalReport linear_probe(const MatrixXd& train_emb, const Eigen::VectorXi& train_labels, const MatrixXd& test_emb,
                        const Eigen::VectorXi& test_labels, const ProbeConfig& cfg);

inline constexpr int kSubsampleRetries = 100;

/// For every fraction and run: seeded uniform subsample of the training rows (kept in
/// original order), linear probe, then mean and std of each metric across runs.
/// Run r uses seed mix(cfg.seed, r) except run 0, which uses cfg.seed. Cells may run on
/// `threads` workers; results are merged by cell index.
std::vector<EvalReport> semi_supervised_eval(const MatrixXd& train_emb, const Eigen::VectorXi& train_labels,
                                             const MatrixXd& test_emb, const Eigen::VectorXi& test_labels,
                                             const std::vector<double>& fractions, int n_runs,
                                             const ProbeConfig& cfg, int threads = 1);

/// Folds per-fraction reports into one report with a row per fraction.
EvalReport summarize_semisup(const std::vector<double>& fractions, const std::vector<EvalReport>& cells);

// ---- ridge forecasting ----

struct ForecastConfig {
  std::vector<Index> horizons{24, 48, 168, 336, 720};
  std::vector<double> ridge_alpha_grid{0.1, 0.2, 0.5, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000};
  double validation_fraction = 0.2;

  void validate() const;
};

struct RidgeModel {
  MatrixXd weights;  // F x H
  VectorXd intercept;
};

/// Ridge regression with an unpenalized intercept.
RidgeModel ridge_fit(const MatrixXd& x, const MatrixXd& y, double alpha);
MatrixXd ridge_predict(const RidgeModel& model, const MatrixXd& x);

/// Rows i with i + h < n: row i of x paired with (series[i+1], ..., series[i+h]).
std::pair<MatrixXd, MatrixXd> horizon_targets(const MatrixXd& x, const VectorXd& series, Index h);

/// Forecasts the next H values of a target series from embeddings. Embedding row i is
/// aligned with series value i in each split. Targets are z-normalized with the training
/// series statistics; alpha is chosen per horizon on the trailing validation part of train.
EvalReport ridge_forecast(const MatrixXd& train_emb, const VectorXd& train_series, const MatrixXd& test_emb,
                          const VectorXd& test_series, const ForecastConfig& cfg);

// ---- PCA anomaly scoring ----

inline constexpr double kEigenvalueFloor = 1e-10;

struct AnomalyModel {
  VectorXd mean;
  MatrixXd eigenvectors;  // F x p
  VectorXd eigenvalues;   // p, descending
  VectorXd all_eigenvalues;
  Index p = 0;
};

/// Smallest p whose leading eigenvalues reach variance_retained of the total; 1.0 keeps all F.
AnomalyModel pca_anomaly_fit(const MatrixXd& normal_emb, double variance_retained);

/// Sum over retained components of y_i^2 / max(lambda_i, 1e-10).
VectorXd pca_anomaly_score(const AnomalyModel& model, const MatrixXd& emb);

}  // namespace catt

#endif  // CATT_EVAL_HPP
