#ifndef CATT_DATA_HPP
#define CATT_DATA_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "catt/types.hpp"

namespace catt {

/// L x C raw samples at a fixed rate, with optional per-sample integer labels.
struct RawSeries {
  MatrixXd samples;
  double sample_rate_hz = 1.0;
  std::vector<std::string> channel_names;
  std::optional<Eigen::VectorXi> sample_labels;

  Index length() const { return samples.rows(); }
  Index channels() const { return samples.cols(); }
  void validate() const;
};

/// Column mapping for CSV ingestion. Columns not named here are not parsed.
struct CsvSchema {
  std::optional<std::string> time_column;
  /// Empty means every column that is neither the time nor the label column.
  std::vector<std::string> channel_columns;
  std::optional<std::string> label_column;
  /// When unset, inferred from the time column as 1 / median spacing.
  std::optional<double> sample_rate_hz;
};

RawSeries load_csv(const std::string& path, const CsvSchema& schema);

enum class WindowKind { hann };

struct StftConfig {
  Index window_samples = 50;
  Index hop_samples = 25;
  WindowKind window_kind = WindowKind::hann;

  void validate() const;
};

/// T x D preprocessed instances, one row per instance.
struct InstanceSequence {
  MatrixXd instances;
  std::optional<Eigen::VectorXi> labels;
  double instance_duration_s = 1.0;

  Index length() const { return instances.rows(); }
  Index dim() const { return instances.cols(); }
  bool has_labels() const { return labels.has_value(); }
  /// Checks D >= 1, finiteness and label length. T >= 3 is enforced where the loss needs it.
  void validate() const;
  /// Rows [begin, begin + count).
  InstanceSequence slice(Index begin, Index count) const;
};

/// Periodic Hann window, w[n] = 0.5 (1 - cos(2 pi n / W)).
VectorXd hann_window(Index window_samples);

/// Per-channel magnitude STFT; each window's channel spectra are concatenated so that
/// D = C (W/2 + 1). Instance labels are the majority sample label inside the window
/// (ties go to the smaller label).
InstanceSequence stft_preprocess(const RawSeries& series, const StftConfig& cfg);

struct ZScoreStats {
  VectorXd mean;
  VectorXd std;
};

inline constexpr double kStdFloor = 1e-8;

/// Population z-score per feature. When `stats` is given it is applied as-is, otherwise
/// computed from `seq`. Returns the normalized sequence and the stats used.
std::pair<InstanceSequence, ZScoreStats> zscore_normalize(const InstanceSequence& seq,
                                                          const std::optional<ZScoreStats>& stats = {});

struct SequenceBatch {
  SequenceTensor<double> data;
  /// (series id, start index) of every sequence in the batch.
  std::vector<std::pair<std::int64_t, Index>> source_offsets;
};

/// Contiguous non-overlapping windows of `seq_len` instances in seeded random order,
/// grouped into batches of `batch_size`; the last batch may be smaller. Single consumer.
class BatchStream {
public:
  BatchStream(const InstanceSequence& seq, Index seq_len, Index batch_size, std::uint64_t shuffle_seed,
              std::int64_t series_id = 0);

  std::optional<SequenceBatch> next();
  Index windows() const { return static_cast<Index>(order_.size()); }
  Index batches() const { return (windows() + batch_size_ - 1) / batch_size_; }

private:
  const InstanceSequence* seq_;
  Index seq_len_;
  Index batch_size_;
  std::int64_t series_id_;
  std::vector<Index> order_;
  std::size_t cursor_ = 0;
};

BatchStream make_batches(const InstanceSequence& seq, Index seq_len, Index batch_size,
                         std::uint64_t shuffle_seed);

struct SynthConfig {
  int n_regimes = 4;
  Index instances_per_regime_mean = 100;
  Index n_channels = 256;
  double noise_std = 0.1;
  std::uint64_t seed = 0;
  Index n_instances = 20000;
  /// Peak amplitude of each regime's sinusoidal template along the channel axis.
  double template_amplitude = 0.024;

  void validate() const;
};

/// Labeled regime segments: regime r has template a sin(2 pi (r+1) c / C + phase_r)
/// over channels c, plus i.i.d. Gaussian noise. Segment lengths are uniform in
/// [mean/2, 3 mean/2]; consecutive segments always switch regime.
InstanceSequence synth_generate(const SynthConfig& cfg);

/// Points on a line in 3-D (label 0) with a fraction of off-line points (label 1).
/// The first `clean_prefix` rows are guaranteed on-line.
InstanceSequence synth_line_fixture(Index n, double anomaly_fraction, std::uint64_t seed,
                                    Index clean_prefix = 0);

/// Linear dynamics x_{t+1} = A x_t with A orthogonal; feature 0 is the forecast target,
/// so every future target value is an exact linear function of the current instance.
InstanceSequence synth_linear_dynamics(Index n, Index dim, std::uint64_t seed);

/// Chronological split: first ceil(fraction * T) rows train, remainder test.
std::pair<InstanceSequence, InstanceSequence> train_test_split(const InstanceSequence& seq,
                                                               double train_fraction);

// Binary cache: "CATT", u16 version, u64 T, u64 D, u8 has_labels, T*D f32 row-major,
// then T i32 labels when present. Little-endian.
inline constexpr std::uint16_t kCacheVersion = 1;
std::string encode_cache(const InstanceSequence& seq);
InstanceSequence decode_cache(const std::string& bytes);
void write_cache(const std::string& path, const InstanceSequence& seq);
InstanceSequence read_cache(const std::string& path);

}  // namespace catt

#endif  // CATT_DATA_HPP
