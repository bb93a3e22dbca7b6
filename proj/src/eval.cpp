#include "catt/eval.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "catt/optim.hpp"

namespace catt {

// ---- EvalReport ----

void EvalReport::set(const std::string& name, double value) {
  for (auto& [k, v] : metrics)
    if (k == name) {
      v = value;
      return;
    }
  metrics.emplace_back(name, value);
}

double EvalReport::get(const std::string& name) const {
  for (const auto& [k, v] : metrics)
    if (k == name) return v;
  throw std::out_of_range("EvalReport: no metric '" + name + "'");
}

bool EvalReport::has(const std::string& name) const {
  for (const auto& kv : metrics)
    if (kv.first == name) return true;
  return false;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["kind"] = kind;
  nlohmann::json m = nlohmann::json::object();
  for (const auto& [k, v] : metrics) m[k] = v;
  j["metrics"] = std::move(m);
  if (!per_class.empty()) {
    nlohmann::json pc = nlohmann::json::object();
    for (const auto& [label, s] : per_class)
      pc[std::to_string(label)] = {
          {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}};
    j["per_class"] = std::move(pc);
  }
  if (!table_rows.empty()) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [label, values] : table_rows) {
      nlohmann::json r;
      r["row"] = label;
      for (std::size_t c = 0; c < table_columns.size() && c < values.size(); ++c) r[table_columns[c]] = values[c];
      rows.push_back(std::move(r));
    }
    j["rows"] = std::move(rows);
  }
  j["meta"] = meta;
  return j;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

std::string render(const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> width;
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (width.size() <= c) width.push_back(0);
      width[c] = std::max(width[c], row[c].size());
    }
  std::ostringstream os;
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      os << (c ? "  " : "") << row[c];
      if (c + 1 < row.size()) os << std::string(width[c] - row[c].size(), ' ');
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "# " << kind << '\n';
  if (!metrics.empty()) {
    std::vector<std::vector<std::string>> cells{{"metric", "value"}};
    for (const auto& [k, v] : metrics) cells.push_back({k, fmt(v)});
    os << render(cells);
  }
  if (!table_rows.empty()) {
    os << '\n';
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> head{""};
    head.insert(head.end(), table_columns.begin(), table_columns.end());
    cells.push_back(head);
    for (const auto& [label, values] : table_rows) {
      std::vector<std::string> r{label};
      for (double v : values) r.push_back(fmt(v));
      cells.push_back(std::move(r));
    }
    os << render(cells);
  }
  if (!per_class.empty()) {
    os << '\n';
    std::vector<std::vector<std::string>> cells{{"class", "precision", "recall", "f1", "support"}};
    for (const auto& [label, s] : per_class)
      cells.push_back({std::to_string(label), fmt(s.precision), fmt(s.recall), fmt(s.f1), std::to_string(s.support)});
    os << render(cells);
  }
  return os.str();
}

// ---- metrics ----

namespace {

void check_lengths(Index a, Index b, const char* what) {
  if (a != b)
    throw ConfigError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
}

}  // namespace

double accuracy(const Eigen::VectorXi& y_true, const Eigen::VectorXi& y_pred) {
  check_lengths(y_true.size(), y_pred.size(), "accuracy");
  if (y_true.size() == 0) throw ConfigError("accuracy: empty input");
  return static_cast<double>((y_true.array() == y_pred.array()).count()) / static_cast<double>(y_true.size());
}

EvalReport classification_metrics(const Eigen::VectorXi& y_true, const Eigen::VectorXi& y_pred) {
  EvalReport rep;
  rep.kind = "classification";
  rep.set("accuracy", accuracy(y_true, y_pred));
  std::set<int> classes(y_true.data(), y_true.data() + y_true.size());
  classes.insert(y_pred.data(), y_pred.data() + y_pred.size());
  double p_sum = 0, r_sum = 0, f_sum = 0;
  for (int c : classes) {
    Index tp = 0, fp = 0, fn = 0, support = 0;
    for (Index i = 0; i < y_true.size(); ++i) {
      const bool t = y_true[i] == c, p = y_pred[i] == c;
      tp += t && p;
      fp += !t && p;
      fn += t && !p;
      support += t;
    }
    ClassStats s;
    s.support = support;
    s.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    s.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    p_sum += s.precision;
    r_sum += s.recall;
    f_sum += s.f1;
    rep.per_class[c] = s;
  }
  const double k = static_cast<double>(classes.size());
  rep.set("f1_macro", f_sum / k);
  rep.set("precision_macro", p_sum / k);
  rep.set("recall_macro", r_sum / k);
  return rep;
}

double mean_squared_error(const MatrixXd& y_true, const MatrixXd& y_pred) {
  check_lengths(y_true.size(), y_pred.size(), "mean_squared_error");
  if (y_true.size() == 0) throw ConfigError("mean_squared_error: empty input");
  return (y_true - y_pred).squaredNorm() / static_cast<double>(y_true.size());
}

double mean_absolute_error(const MatrixXd& y_true, const MatrixXd& y_pred) {
  check_lengths(y_true.size(), y_pred.size(), "mean_absolute_error");
  if (y_true.size() == 0) throw ConfigError("mean_absolute_error: empty input");
  return (y_true - y_pred).cwiseAbs().sum() / static_cast<double>(y_true.size());
}

double auc_pr(const Eigen::VectorXi& y_true, const VectorXd& scores) {
  check_lengths(y_true.size(), scores.size(), "auc_pr");
  const Index positives = (y_true.array() != 0).count();
  if (positives == 0) throw ConfigError("auc_pr: at least one positive label is required");
  std::vector<Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), Index(0));
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return scores[a] > scores[b]; });
  double ap = 0, prev_recall = 0;
  Index tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (y_true[order[i]] != 0 ? tp : fp) += 1;
      ++i;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

// ---- linear probe ----

void ProbeConfig::validate() const {
  if (epochs < 1) throw ConfigError("ProbeConfig: epochs must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("ProbeConfig: learning_rate must be > 0");
  if (!(weight_decay >= 0)) throw ConfigError("ProbeConfig: weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("ProbeConfig: batch_size must be >= 1");
  if (!(label_fraction > 0 && label_fraction <= 1)) throw ConfigError("ProbeConfig: label_fraction must be in (0, 1]");
  if (n_runs < 1) throw ConfigError("ProbeConfig: n_runs must be >= 1");
}

namespace {

Index distinct_count(const Eigen::VectorXi& y) { return static_cast<Index>(std::set<int>(y.data(), y.data() + y.size()).size()); }

/// Sorted row indices of a seeded uniform subsample with at least two classes.
std::vector<Index> subsample(const Eigen::VectorXi& labels, double fraction, std::uint64_t seed) {
  const Index n = labels.size();
  std::vector<Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Index(0));
  if (fraction >= 1.0) return all;
  const Index k = std::max<Index>(2, static_cast<Index>(std::ceil(fraction * static_cast<double>(n))));
  if (k >= n) return all;
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < kSubsampleRetries; ++attempt) {
    std::vector<Index> pool = all;
    for (Index i = 0; i < k; ++i) {
      std::uniform_int_distribution<Index> pick(i, n - 1);
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
    }
    pool.resize(static_cast<std::size_t>(k));
    std::sort(pool.begin(), pool.end());
    std::set<int> seen;
    for (Index i : pool) seen.insert(labels[i]);
    if (seen.size() >= 2) return pool;
  }
  throw DataError("semi-supervised subsample: could not draw two classes at fraction " + std::to_string(fraction) +
                  " after " + std::to_string(kSubsampleRetries) + " attempts");
}

EvalReport probe_rows(const MatrixXd& train_emb, const Eigen::VectorXi& train_labels, const std::vector<Index>& rows,
                      const MatrixXd& test_emb, const Eigen::VectorXi& test_labels, const ProbeConfig& cfg) {
  std::vector<int> classes;
  {
    std::set<int> s;
    for (Index r : rows) s.insert(train_labels[r]);
    classes.assign(s.begin(), s.end());
  }
  if (classes.size() < 2) throw DataError("linear_probe: training labels contain a single class");
  const Index k = static_cast<Index>(classes.size());
  const Index f = train_emb.cols();
  std::map<int, Index> class_index;
  for (Index c = 0; c < k; ++c) class_index[classes[static_cast<std::size_t>(c)]] = c;

  MatrixXd w = MatrixXd::Zero(k, f);
  VectorXd b = VectorXd::Zero(k);
  MatrixXd mw = w, vw = w;
  VectorXd mb = b, vb = b;
  AdamWConfig opt{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay};
  std::mt19937_64 rng(derive_seed(cfg.seed, "probe"));
  std::vector<Index> order = rows;
  std::uint64_t step = 0;
  const Index n = static_cast<Index>(order.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Index s = 0; s < n; s += cfg.batch_size) {
      const Index nb = std::min(cfg.batch_size, n - s);
      MatrixXd xb(nb, f);
      MatrixXd target = MatrixXd::Zero(nb, k);
      for (Index i = 0; i < nb; ++i) {
        const Index r = order[static_cast<std::size_t>(s + i)];
        xb.row(i) = train_emb.row(r);
        target(i, class_index[train_labels[r]]) = 1.0;
      }
      MatrixXd logits = xb * w.transpose();
      logits.rowwise() += b.transpose();
      const VectorXd row_max = logits.rowwise().maxCoeff();
      MatrixXd p = (logits.colwise() - row_max).array().exp().matrix();
      p.array().colwise() /= p.rowwise().sum().array();
      const MatrixXd g = (p - target) / static_cast<double>(nb);
      const MatrixXd gw = g.transpose() * xb;
      const VectorXd gb = g.colwise().sum().transpose();
      if (!gw.allFinite() || !gb.allFinite()) throw NumericError("linear_probe: non-finite gradient", static_cast<std::int64_t>(step), NAN);
      ++step;
      adamw_update<double>(w, gw, mw, vw, step, opt);
      adamw_update<double>(b, gb, mb, vb, step, opt);
    }
  }

  MatrixXd logits = test_emb * w.transpose();
  logits.rowwise() += b.transpose();
  Eigen::VectorXi pred(test_emb.rows());
  for (Index i = 0; i < test_emb.rows(); ++i) {
    Index arg;
    logits.row(i).maxCoeff(&arg);
    pred[i] = classes[static_cast<std::size_t>(arg)];
  }
  EvalReport rep = classification_metrics(test_labels, pred);
  rep.kind = "linear_probe";
  rep.meta["seed"] = cfg.seed;
  rep.meta["epochs"] = cfg.epochs;
  rep.meta["learning_rate"] = cfg.learning_rate;
  rep.meta["batch_size"] = cfg.batch_size;
  rep.meta["train_rows"] = n;
  rep.meta["test_rows"] = test_emb.rows();
  return rep;
}

void check_probe_inputs(const MatrixXd& train_emb, const Eigen::VectorXi& train_labels, const MatrixXd& test_emb,
                        const Eigen::VectorXi& test_labels) {
  check_lengths(train_emb.rows(), train_labels.size(), "linear_probe train");
  check_lengths(test_emb.rows(), test_labels.size(), "linear_probe test");
  if (train_emb.cols() != test_emb.cols()) throw ConfigError("linear_probe: train and test embedding widths differ");
  if (test_emb.rows() == 0) throw DataError("linear_probe: empty test set");
  if (distinct_count(train_labels) < 2) throw DataError("linear_probe: training labels contain a single class");
}

}  // namespace

EvalReport linear_probe(const MatrixXd& train_emb, const Eigen::VectorXi& train_labels, const MatrixXd& test_emb,
                        const Eigen::VectorXi& test_labels, const ProbeConfig& cfg) {
  cfg.validate();
  check_probe_inputs(train_emb, train_labels, test_emb, test_labels);
  const auto rows = subsample(train_labels, cfg.label_fraction, derive_seed(cfg.seed, "subsample"));
  return probe_rows(train_emb, train_labels, rows, test_emb, test_labels, cfg);
}

std::vector<EvalReport> semi_supervised_eval(const MatrixXd& train_emb, const Eigen::VectorXi& train_labels,
                                             const MatrixXd& test_emb, const Eigen::VectorXi& test_labels,
                                             const std::vector<double>& fractions, int n_runs,
                                             const ProbeConfig& cfg, int threads) {
  cfg.validate();
  check_probe_inputs(train_emb, train_labels, test_emb, test_labels);
  if (fractions.empty()) throw ConfigError("semi_supervised_eval: no fractions given");
  for (double f : fractions)
    if (!(f > 0 && f <= 1)) throw ConfigError("semi_supervised_eval: fractions must be in (0, 1]");
  if (n_runs < 1) throw ConfigError("semi_supervised_eval: n_runs must be >= 1");

  const std::size_t n_cells = fractions.size() * static_cast<std::size_t>(n_runs);
  std::vector<EvalReport> cells(n_cells);
  std::vector<std::exception_ptr> errors(n_cells);
  auto run_cell = [&](std::size_t idx) {
    try {
      const double fraction = fractions[idx / static_cast<std::size_t>(n_runs)];
      const int run = static_cast<int>(idx % static_cast<std::size_t>(n_runs));
      ProbeConfig c = cfg;
      c.label_fraction = fraction;
      c.seed = run == 0 ? cfg.seed : mix_seed(cfg.seed + static_cast<std::uint64_t>(run));
      cells[idx] = linear_probe(train_emb, train_labels, test_emb, test_labels, c);
    } catch (...) {
      errors[idx] = std::current_exception();
    }
  };
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n_cells)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n_cells; ++i) run_cell(i);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = static_cast<std::size_t>(w); i < n_cells; i += static_cast<std::size_t>(workers)) run_cell(i);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<EvalReport> out;
  for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
    EvalReport rep;
    rep.kind = "semi_supervised";
    rep.meta["fraction"] = fractions[fi];
    rep.meta["n_runs"] = n_runs;
    rep.meta["seed"] = cfg.seed;
    const EvalReport& first = cells[fi * static_cast<std::size_t>(n_runs)];
    if (n_runs == 1) {
      rep.per_class = first.per_class;
      for (const auto& [name, v] : first.metrics) rep.set(name, v);
    }
    for (const auto& [name, v0] : first.metrics) {
      double sum = 0;
      for (int r = 0; r < n_runs; ++r) sum += cells[fi * static_cast<std::size_t>(n_runs) + static_cast<std::size_t>(r)].get(name);
      const double mean = sum / n_runs;
      double sq = 0;
      for (int r = 0; r < n_runs; ++r) {
        const double d = cells[fi * static_cast<std::size_t>(n_runs) + static_cast<std::size_t>(r)].get(name) - mean;
        sq += d * d;
      }
      rep.set(name + "_mean", n_runs == 1 ? v0 : mean);
      rep.set(name + "_std", n_runs > 1 ? std::sqrt(sq / (n_runs - 1)) : 0.0);
    }
    out.push_back(std::move(rep));
  }
  return out;
}

EvalReport summarize_semisup(const std::vector<double>& fractions, const std::vector<EvalReport>& cells) {
  if (fractions.size() != cells.size()) throw ConfigError("summarize_semisup: fraction and report counts differ");
  EvalReport rep;
  rep.kind = "semi_supervised";
  rep.table_columns = {"accuracy_mean", "accuracy_std", "f1_macro_mean", "f1_macro_std"};
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::vector<double> values;
    for (const auto& c : rep.table_columns) values.push_back(cells[i].get(c));
    std::ostringstream label;
    label << "fraction=" << fractions[i];
    rep.table_rows.emplace_back(label.str(), values);
    std::ostringstream key;
    key << "fraction_" << fractions[i] << ".";
    for (const auto& c : rep.table_columns) rep.set(key.str() + c, cells[i].get(c));
  }
  if (!cells.empty()) rep.meta = cells.front().meta;
  rep.meta.erase("fraction");
  rep.meta["fractions"] = fractions;
  return rep;
}

// ---- ridge forecasting ----

void ForecastConfig::validate() const {
  if (horizons.empty()) throw ConfigError("ForecastConfig: no horizons given");
  for (Index h : horizons)
    if (h < 1) throw ConfigError("ForecastConfig: every horizon must be >= 1");
  if (ridge_alpha_grid.empty()) throw ConfigError("ForecastConfig: empty ridge alpha grid");
  for (double a : ridge_alpha_grid)
    if (!(a > 0)) throw ConfigError("ForecastConfig: ridge alphas must be > 0");
  if (!(validation_fraction > 0 && validation_fraction < 1))
    throw ConfigError("ForecastConfig: validation_fraction must be in (0, 1)");
}

RidgeModel ridge_fit(const MatrixXd& x, const MatrixXd& y, double alpha) {
  check_lengths(x.rows(), y.rows(), "ridge_fit");
  if (x.rows() < 1) throw DataError("ridge_fit: no rows");
  if (!(alpha > 0)) throw ConfigError("ridge_fit: alpha must be > 0");
  const VectorXd x_mean = x.colwise().mean().transpose();
  const VectorXd y_mean = y.colwise().mean().transpose();
  const MatrixXd xc = x.rowwise() - x_mean.transpose();
  const MatrixXd yc = y.rowwise() - y_mean.transpose();
  MatrixXd gram = xc.transpose() * xc;
  gram.diagonal().array() += alpha;
  RidgeModel m;
  m.weights = gram.ldlt().solve(xc.transpose() * yc);
  m.intercept = y_mean - m.weights.transpose() * x_mean;
  return m;
}

MatrixXd ridge_predict(const RidgeModel& model, const MatrixXd& x) {
  MatrixXd out = x * model.weights;
  out.rowwise() += model.intercept.transpose();
  return out;
}

std::pair<MatrixXd, MatrixXd> horizon_targets(const MatrixXd& x, const VectorXd& series, Index h) {
  check_lengths(x.rows(), series.size(), "horizon_targets");
  const Index n = std::max<Index>(0, series.size() - h);
  MatrixXd y(n, h);
  for (Index i = 0; i < n; ++i) y.row(i) = series.segment(i + 1, h).transpose();
  return {x.topRows(n), y};
}

EvalReport ridge_forecast(const MatrixXd& train_emb, const VectorXd& train_series, const MatrixXd& test_emb,
                          const VectorXd& test_series, const ForecastConfig& cfg) {
  cfg.validate();
  check_lengths(train_emb.rows(), train_series.size(), "ridge_forecast train");
  check_lengths(test_emb.rows(), test_series.size(), "ridge_forecast test");
  if (train_series.size() < 1) throw DataError("ridge_forecast: empty training series");
  const double mean = train_series.mean();
  const double std =
      std::max(kStdFloor, std::sqrt((train_series.array() - mean).square().sum() / static_cast<double>(train_series.size())));
  const VectorXd train_norm = ((train_series.array() - mean) / std).matrix();
  const VectorXd test_norm = ((test_series.array() - mean) / std).matrix();

  EvalReport rep;
  rep.kind = "forecast";
  rep.table_columns = {"mse", "mae", "alpha"};
  rep.meta["target_mean"] = mean;
  rep.meta["target_std"] = std;
  rep.meta["validation_fraction"] = cfg.validation_fraction;
  for (Index h : cfg.horizons) {
    const auto [xtr, ytr] = horizon_targets(train_emb, train_norm, h);
    const auto [xte, yte] = horizon_targets(test_emb, test_norm, h);
    const Index n = xtr.rows();
    const Index n_val = static_cast<Index>(std::floor(cfg.validation_fraction * static_cast<double>(n)));
    if (n < 2 || n_val < 1 || n - n_val < 1)
      throw DataError("ridge_forecast: training split too short for horizon " + std::to_string(h));
    if (xte.rows() < 1) throw DataError("ridge_forecast: test split too short for horizon " + std::to_string(h));

    double best_alpha = cfg.ridge_alpha_grid.front();
    double best_mse = std::numeric_limits<double>::infinity();
    nlohmann::json val = nlohmann::json::array();
    for (double alpha : cfg.ridge_alpha_grid) {
      const RidgeModel m = ridge_fit(xtr.topRows(n - n_val), ytr.topRows(n - n_val), alpha);
      const double mse = mean_squared_error(ytr.bottomRows(n_val), ridge_predict(m, xtr.bottomRows(n_val)));
      val.push_back({{"alpha", alpha}, {"validation_mse", mse}});
      if (mse < best_mse) {
        best_mse = mse;
        best_alpha = alpha;
      }
    }
    const RidgeModel model = ridge_fit(xtr, ytr, best_alpha);
    const MatrixXd pred = ridge_predict(model, xte);
    const double mse = mean_squared_error(yte, pred);
    const double mae = mean_absolute_error(yte, pred);
    const std::string key = "H" + std::to_string(h);
    rep.set(key + ".mse", mse);
    rep.set(key + ".mae", mae);
    rep.set(key + ".alpha", best_alpha);
    rep.table_rows.emplace_back(key, std::vector<double>{mse, mae, best_alpha});
    rep.meta["validation"][key] = std::move(val);
  }
  return rep;
}

// ---- PCA anomaly scoring ----

AnomalyModel pca_anomaly_fit(const MatrixXd& normal_emb, double variance_retained) {
  if (!(variance_retained > 0 && variance_retained <= 1))
    throw ConfigError("pca_anomaly_fit: variance_retained must be in (0, 1]");
  if (normal_emb.rows() < 2) throw DataError("pca_anomaly_fit: need at least 2 rows");
  AnomalyModel m;
  m.mean = normal_emb.colwise().mean().transpose();
  const MatrixXd centered = normal_emb.rowwise() - m.mean.transpose();
  const MatrixXd cov = centered.transpose() * centered / static_cast<double>(normal_emb.rows() - 1);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("pca_anomaly_fit: eigendecomposition failed", -1, NAN);
  const Index f = cov.rows();
  m.all_eigenvalues = eig.eigenvalues().reverse().cwiseMax(0.0);
  const MatrixXd vectors = eig.eigenvectors().rowwise().reverse();

  VectorXd cumulative(f);
  double running = 0;
  for (Index i = 0; i < f; ++i) cumulative[i] = running += m.all_eigenvalues[i];
  const double total = cumulative[f - 1];
  m.p = f;
  if (total > 0 && variance_retained < 1.0)
    for (Index i = 0; i < f; ++i)
      if (cumulative[i] / total >= variance_retained) {
        m.p = i + 1;
        break;
      }
  m.eigenvalues = m.all_eigenvalues.head(m.p);
  m.eigenvectors = vectors.leftCols(m.p);
  return m;
}

VectorXd pca_anomaly_score(const AnomalyModel& model, const MatrixXd& emb) {
  if (emb.cols() != model.mean.size()) throw ConfigError("pca_anomaly_score: embedding width does not match model");
  const MatrixXd y = (emb.rowwise() - model.mean.transpose()) * model.eigenvectors;
  const VectorXd inv = model.eigenvalues.cwiseMax(kEigenvalueFloor).cwiseInverse();
  return y.array().square().matrix() * inv;
}

}  // namespace catt
