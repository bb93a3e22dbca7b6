#include "catt/data.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <complex>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "catt/io.hpp"

namespace catt {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '"')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '"')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      cells.push_back(trim(std::string_view(line).substr(start)));
      break;
    }
    cells.push_back(trim(std::string_view(line).substr(start, comma - start)));
    start = comma + 1;
  }
  return cells;
}

bool parse_double(const std::string& cell, double& out) {
  if (cell.empty()) return false;
  const char* first = cell.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, cell.data() + cell.size(), out);
  return ec == std::errc() && ptr == cell.data() + cell.size() && std::isfinite(out);
}

bool all_finite(const MatrixXd& m) { return m.allFinite(); }

}  // namespace

void RawSeries::validate() const {
  if (samples.rows() < 1 || samples.cols() < 1) throw DataError("RawSeries: need L >= 1 and C >= 1");
  if (!all_finite(samples)) throw DataError("RawSeries: non-finite sample");
  if (!(sample_rate_hz > 0) || !std::isfinite(sample_rate_hz))
    throw DataError("RawSeries: sample_rate_hz must be positive");
  if (!channel_names.empty() && static_cast<Index>(channel_names.size()) != samples.cols())
    throw DataError("RawSeries: channel name count does not match C");
  if (sample_labels && sample_labels->size() != samples.rows())
    throw DataError("RawSeries: label count does not match L");
}

RawSeries load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file: " + path);

  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_csv_line(line);
      break;
    }
  }
  if (header.empty()) throw DataError("empty file: " + path);

  auto column_index = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("column '" + name + "' not found in header of " + path);
    return static_cast<std::size_t>(it - header.begin());
  };

  std::optional<std::size_t> time_col, label_col;
  if (schema.time_column) time_col = column_index(*schema.time_column);
  if (schema.label_column) label_col = column_index(*schema.label_column);

  std::vector<std::size_t> channel_cols;
  std::vector<std::string> names;
  if (schema.channel_columns.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if ((time_col && c == *time_col) || (label_col && c == *label_col)) continue;
      channel_cols.push_back(c);
      names.push_back(header[c]);
    }
  } else {
    for (const auto& name : schema.channel_columns) {
      channel_cols.push_back(column_index(name));
      names.push_back(name);
    }
  }
  if (channel_cols.empty()) throw DataError("schema selects no channel columns in " + path);

  std::vector<double> values;
  std::vector<double> times;
  std::vector<int> labels;
  Index rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    auto cell_at = [&](std::size_t c) -> const std::string& {
      if (c >= cells.size())
        throw DataError(path + ": row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                        " cells, expected " + std::to_string(header.size()));
      return cells[c];
    };
    auto parse_cell = [&](std::size_t c) {
      double v;
      const std::string& cell = cell_at(c);
      if (!parse_double(cell, v))
        throw DataError(path + ": cannot parse cell at row " + std::to_string(line_no) + ", column '" +
                        header[c] + "': '" + cell + "'");
      return v;
    };
    for (std::size_t c : channel_cols) values.push_back(parse_cell(c));
    if (time_col) times.push_back(parse_cell(*time_col));
    if (label_col) {
      double v = parse_cell(*label_col);
      if (v != std::floor(v))
        throw DataError(path + ": non-integer label at row " + std::to_string(line_no));
      labels.push_back(static_cast<int>(v));
    }
    ++rows;
  }
  if (rows == 0) throw DataError("empty file (no data rows): " + path);

  RawSeries out;
  const Index channels = static_cast<Index>(channel_cols.size());
  out.samples = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), rows, channels);
  out.channel_names = std::move(names);
  if (label_col) out.sample_labels = Eigen::Map<const Eigen::VectorXi>(labels.data(), rows);

  if (schema.sample_rate_hz) {
    out.sample_rate_hz = *schema.sample_rate_hz;
  } else if (time_col && times.size() >= 2) {
    std::vector<double> dt(times.size() - 1);
    for (std::size_t i = 0; i + 1 < times.size(); ++i) dt[i] = times[i + 1] - times[i];
    std::nth_element(dt.begin(), dt.begin() + dt.size() / 2, dt.end());
    double median = dt[dt.size() / 2];
    if (!(median > 0)) throw DataError(path + ": time column is not increasing");
    out.sample_rate_hz = 1.0 / median;
  } else {
    throw DataError(path + ": sample rate unknown (set sample_rate_hz or a time column)");
  }
  out.validate();
  return out;
}

void StftConfig::validate() const {
  if (window_samples < 1 || hop_samples < 1 || hop_samples > window_samples)
    throw ConfigError("StftConfig: need 1 <= hop_samples <= window_samples");
}

VectorXd hann_window(Index window_samples) {
  VectorXd w(window_samples);
  for (Index n = 0; n < window_samples; ++n)
    w[n] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                 static_cast<double>(window_samples)));
  return w;
}

InstanceSequence stft_preprocess(const RawSeries& series, const StftConfig& cfg) {
  cfg.validate();
  series.validate();
  const Index W = cfg.window_samples;
  const Index L = series.length();
  const Index C = series.channels();
  if (L < W)
    throw DataError("stft_preprocess: series length " + std::to_string(L) + " shorter than window " +
                    std::to_string(W));
  const Index bins = W / 2 + 1;
  const Index T = (L - W) / cfg.hop_samples + 1;

  const VectorXd window = hann_window(W);
  InstanceSequence out;
  out.instances.resize(T, C * bins);
  out.instance_duration_s = static_cast<double>(W) / series.sample_rate_hz;

  Eigen::FFT<double> fft;
  std::vector<double> frame(static_cast<std::size_t>(W));
  std::vector<std::complex<double>> spectrum;
  for (Index t = 0; t < T; ++t) {
    const Index start = t * cfg.hop_samples;
    for (Index c = 0; c < C; ++c) {
      for (Index n = 0; n < W; ++n) frame[static_cast<std::size_t>(n)] = series.samples(start + n, c) * window[n];
      fft.fwd(spectrum, frame);
      for (Index k = 0; k < bins; ++k) out.instances(t, c * bins + k) = std::abs(spectrum[static_cast<std::size_t>(k)]);
    }
  }

  if (series.sample_labels) {
    Eigen::VectorXi labels(T);
    for (Index t = 0; t < T; ++t) {
      std::map<int, Index> counts;
      for (Index n = 0; n < W; ++n) ++counts[(*series.sample_labels)[t * cfg.hop_samples + n]];
      auto best = std::max_element(counts.begin(), counts.end(),
                                   [](const auto& a, const auto& b) { return a.second < b.second; });
      labels[t] = best->first;
    }
    out.labels = std::move(labels);
  }
  return out;
}

void InstanceSequence::validate() const {
  if (instances.cols() < 1) throw DataError("InstanceSequence: D must be >= 1");
  if (!instances.allFinite()) throw DataError("InstanceSequence: non-finite value");
  if (labels && labels->size() != instances.rows())
    throw DataError("InstanceSequence: labels must have length T");
  if (!(instance_duration_s > 0)) throw DataError("InstanceSequence: instance_duration_s must be positive");
}

InstanceSequence InstanceSequence::slice(Index begin, Index count) const {
  InstanceSequence out;
  out.instances = instances.middleRows(begin, count);
  if (labels) out.labels = labels->segment(begin, count);
  out.instance_duration_s = instance_duration_s;
  return out;
}

std::pair<InstanceSequence, ZScoreStats> zscore_normalize(const InstanceSequence& seq,
                                                          const std::optional<ZScoreStats>& stats) {
  ZScoreStats used;
  if (stats) {
    if (stats->mean.size() != seq.dim() || stats->std.size() != seq.dim())
      throw DataError("zscore_normalize: stats length " + std::to_string(stats->mean.size()) +
                      " does not match D = " + std::to_string(seq.dim()));
    used = *stats;
  } else {
    if (seq.length() < 1) throw DataError("zscore_normalize: cannot fit stats on an empty sequence");
    used.mean = seq.instances.colwise().mean().transpose();
    used.std = ((seq.instances.rowwise() - used.mean.transpose()).array().square().colwise().mean())
                   .sqrt()
                   .transpose();
  }
  const VectorXd denom = used.std.cwiseMax(kStdFloor);
  InstanceSequence out = seq;
  out.instances = ((seq.instances.rowwise() - used.mean.transpose()).array().rowwise() /
                   denom.transpose().array())
                      .matrix();
  return {std::move(out), std::move(used)};
}

BatchStream::BatchStream(const InstanceSequence& seq, Index seq_len, Index batch_size,
                         std::uint64_t shuffle_seed, std::int64_t series_id)
    : seq_(&seq), seq_len_(seq_len), batch_size_(batch_size), series_id_(series_id) {
  if (seq_len < 3) throw ConfigError("make_batches: seq_len must be >= 3");
  if (batch_size < 1) throw ConfigError("make_batches: batch_size must be >= 1");
  if (seq.length() < seq_len)
    throw DataError("make_batches: sequence has " + std::to_string(seq.length()) +
                    " instances, fewer than seq_len " + std::to_string(seq_len));
  const Index n_windows = seq.length() / seq_len;
  order_.resize(static_cast<std::size_t>(n_windows));
  for (Index w = 0; w < n_windows; ++w) order_[static_cast<std::size_t>(w)] = w;
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(order_.begin(), order_.end(), rng);
}

std::optional<SequenceBatch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(batch_size_), order_.size() - cursor_);
  SequenceBatch batch;
  Mat<double> rows(static_cast<Index>(count) * seq_len_, seq_->dim());
  for (std::size_t b = 0; b < count; ++b) {
    const Index start = order_[cursor_ + b] * seq_len_;
    rows.middleRows(static_cast<Index>(b) * seq_len_, seq_len_) = seq_->instances.middleRows(start, seq_len_);
    batch.source_offsets.emplace_back(series_id_, start);
  }
  batch.data = SequenceTensor<double>(static_cast<Index>(count), seq_len_, std::move(rows));
  cursor_ += count;
  return batch;
}

BatchStream make_batches(const InstanceSequence& seq, Index seq_len, Index batch_size,
                         std::uint64_t shuffle_seed) {
  return BatchStream(seq, seq_len, batch_size, shuffle_seed);
}

void SynthConfig::validate() const {
  if (n_regimes < 2) throw ConfigError("SynthConfig: n_regimes must be >= 2");
  if (instances_per_regime_mean < 1) throw ConfigError("SynthConfig: instances_per_regime_mean must be >= 1");
  if (n_channels < 1) throw ConfigError("SynthConfig: n_channels must be >= 1");
  if (n_instances < 1) throw ConfigError("SynthConfig: n_instances must be >= 1");
  if (!(noise_std >= 0)) throw ConfigError("SynthConfig: noise_std must be >= 0");
  if (!(template_amplitude > 0)) throw ConfigError("SynthConfig: template_amplitude must be > 0");
}

InstanceSequence synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);

  const Index C = cfg.n_channels;
  MatrixXd templates(cfg.n_regimes, C);
  for (int r = 0; r < cfg.n_regimes; ++r) {
    const double phase = phase_dist(rng);
    for (Index c = 0; c < C; ++c)
      templates(r, c) = cfg.template_amplitude *
                        std::sin(2.0 * std::numbers::pi * static_cast<double>(r + 1) * static_cast<double>(c) /
                                     static_cast<double>(C) +
                                 phase);
  }

  const Index mean = cfg.instances_per_regime_mean;
  std::uniform_int_distribution<Index> seg_len(std::max<Index>(1, mean / 2), mean + mean / 2);
  std::uniform_int_distribution<int> first_regime(0, cfg.n_regimes - 1);
  std::uniform_int_distribution<int> next_offset(1, cfg.n_regimes - 1);

  InstanceSequence out;
  out.instances.resize(cfg.n_instances, C);
  out.labels = Eigen::VectorXi(cfg.n_instances);
  int regime = first_regime(rng);
  Index row = 0;
  while (row < cfg.n_instances) {
    const Index len = std::min(seg_len(rng), cfg.n_instances - row);
    for (Index i = 0; i < len; ++i, ++row) {
      for (Index c = 0; c < C; ++c) out.instances(row, c) = templates(regime, c) + cfg.noise_std * noise(rng);
      (*out.labels)[row] = regime;
    }
    regime = (regime + next_offset(rng)) % cfg.n_regimes;
  }
  return out;
}

InstanceSequence synth_line_fixture(Index n, double anomaly_fraction, std::uint64_t seed, Index clean_prefix) {
  if (n < 2) throw ConfigError("synth_line_fixture: need n >= 2");
  if (!(anomaly_fraction >= 0 && anomaly_fraction < 1))
    throw ConfigError("synth_line_fixture: anomaly_fraction must be in [0, 1)");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const Eigen::Vector3d origin(0.5, -1.0, 2.0);
  const Eigen::Vector3d dir = Eigen::Vector3d(1.0, 2.0, 2.0).normalized();
  const Eigen::Vector3d ortho1 = Eigen::Vector3d(2.0, -1.0, 0.0).normalized();
  const Eigen::Vector3d ortho2 = dir.cross(ortho1).normalized();

  InstanceSequence out;
  out.instances.resize(n, 3);
  out.labels = Eigen::VectorXi::Zero(n);
  for (Index i = 0; i < n; ++i) {
    Eigen::Vector3d p = origin + 2.0 * gauss(rng) * dir;
    const bool anomalous = i >= clean_prefix && unit(rng) < anomaly_fraction;
    if (anomalous) {
      const double angle = 2.0 * std::numbers::pi * unit(rng);
      const double dist = 0.5 + unit(rng);
      p += dist * (std::cos(angle) * ortho1 + std::sin(angle) * ortho2);
      (*out.labels)[i] = 1;
    }
    out.instances.row(i) = p.transpose();
  }
  return out;
}

InstanceSequence synth_linear_dynamics(Index n, Index dim, std::uint64_t seed) {
  if (n < 2 || dim < 2 || dim % 2 != 0) throw ConfigError("synth_linear_dynamics: need n >= 2 and even dim >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> freq(0.05, 0.8);

  MatrixXd rot = MatrixXd::Zero(dim, dim);
  for (Index b = 0; b < dim; b += 2) {
    const double w = freq(rng);
    rot(b, b) = std::cos(w);
    rot(b, b + 1) = -std::sin(w);
    rot(b + 1, b) = std::sin(w);
    rot(b + 1, b + 1) = std::cos(w);
  }
  MatrixXd g(dim, dim);
  for (Index i = 0; i < dim; ++i)
    for (Index j = 0; j < dim; ++j) g(i, j) = gauss(rng);
  const MatrixXd q = Eigen::HouseholderQR<MatrixXd>(g).householderQ();
  const MatrixXd a = q * rot * q.transpose();

  VectorXd x(dim);
  for (Index i = 0; i < dim; ++i) x[i] = gauss(rng);
  InstanceSequence out;
  out.instances.resize(n, dim);
  for (Index t = 0; t < n; ++t) {
    out.instances.row(t) = x.transpose();
    x = a * x;
  }
  return out;
}

std::pair<InstanceSequence, InstanceSequence> train_test_split(const InstanceSequence& seq, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0))
    throw ConfigError("train_test_split: fraction must be in (0, 1]");
  if (seq.length() < 1) throw DataError("train_test_split: empty sequence");
  const Index n_train = std::min<Index>(
      seq.length(), static_cast<Index>(std::ceil(train_fraction * static_cast<double>(seq.length()) - 1e-9)));
  return {seq.slice(0, n_train), seq.slice(n_train, seq.length() - n_train)};
}

std::string encode_cache(const InstanceSequence& seq) {
  std::ostringstream os(std::ios::binary);
  os.write("CATT", 4);
  io::write_le<std::uint16_t>(os, kCacheVersion);
  io::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(seq.length()));
  io::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(seq.dim()));
  io::write_le<std::uint8_t>(os, seq.has_labels() ? 1 : 0);
  for (Index t = 0; t < seq.length(); ++t)
    for (Index d = 0; d < seq.dim(); ++d) io::write_le<float>(os, static_cast<float>(seq.instances(t, d)));
  if (seq.labels)
    for (Index t = 0; t < seq.length(); ++t) io::write_le<std::int32_t>(os, (*seq.labels)[t]);
  return os.str();
}

InstanceSequence decode_cache(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "CATT") throw DataError("corrupt cache: bad magic");
  const auto version = io::read_le<std::uint16_t>(is, "version");
  if (version != kCacheVersion)
    throw DataError("cache version mismatch: file has " + std::to_string(version) + ", expected " +
                    std::to_string(kCacheVersion));
  const auto T = io::read_le<std::uint64_t>(is, "T");
  const auto D = io::read_le<std::uint64_t>(is, "D");
  const auto flag = io::read_le<std::uint8_t>(is, "label flag");
  if (flag > 1) throw DataError("corrupt cache: bad label flag");
  const std::uint64_t expected = 23 + T * D * 4 + (flag ? T * 4 : 0);
  if (D == 0 || expected != bytes.size())
    throw DataError("corrupt cache: size " + std::to_string(bytes.size()) + " does not match header (" +
                    std::to_string(expected) + ")");
  InstanceSequence out;
  out.instances.resize(static_cast<Index>(T), static_cast<Index>(D));
  for (Index t = 0; t < static_cast<Index>(T); ++t)
    for (Index d = 0; d < static_cast<Index>(D); ++d) out.instances(t, d) = io::read_le<float>(is, "instances");
  if (flag) {
    Eigen::VectorXi labels(static_cast<Index>(T));
    for (Index t = 0; t < static_cast<Index>(T); ++t) labels[t] = io::read_le<std::int32_t>(is, "labels");
    out.labels = std::move(labels);
  }
  out.validate();
  return out;
}

void write_cache(const std::string& path, const InstanceSequence& seq) { io::write_file(path, encode_cache(seq)); }

InstanceSequence read_cache(const std::string& path) { return decode_cache(io::read_file(path)); }

}  // namespace catt
