#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "catt/checkpoint.hpp"
#include "catt/cli.hpp"
#include "catt/io.hpp"

namespace catt::cli {

namespace fs = std::filesystem;

namespace {

struct Context {
  std::string command;
  Settings settings;
  RunConfig cfg;
  std::ostream& out;
  nlohmann::json artifacts = nlohmann::json::object();
  nlohmann::json inputs = nlohmann::json::object();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  std::string path(const std::string& name) const { return (fs::path(cfg.out_dir) / name).string(); }

  void record(const std::string& name) {
    artifacts[name] = {{"path", name}, {"sha256", io::sha256_file(path(name))}};
  }

  void record_input(const std::string& role, const std::string& p) {
    inputs[role] = {{"path", p}, {"sha256", io::sha256_file(p)}};
  }

  void write_text(const std::string& name, const std::string& text) {
    io::write_file(path(name), text);
    record(name);
  }
};

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory: " + dir);
}

void write_manifest(Context& ctx) {
  nlohmann::json m;
  m["command"] = ctx.command;
  m["seed"] = ctx.cfg.seed;
  m["deterministic"] = ctx.cfg.deterministic;
  m["config"] = ctx.settings.to_json(true);
  m["sub_seeds"] = {{"data", derive_seed(ctx.cfg.seed, "data")},
                    {"init", derive_seed(ctx.cfg.seed, "init")},
                    {"batch", derive_seed(ctx.cfg.seed, "batch")},
                    {"shuffle", derive_seed(ctx.cfg.seed, "shuffle")},
                    {"probe", derive_seed(ctx.cfg.seed, "probe")}};
  m["inputs"] = ctx.inputs;
  m["artifacts"] = ctx.artifacts;
  m["wall_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.start).count();
  io::write_file(ctx.path("manifest.json"), m.dump(2) + "\n");
}

void write_report(Context& ctx, const std::string& stem, EvalReport rep) {
  rep.meta["command"] = ctx.command;
  rep.meta["seed"] = ctx.cfg.seed;
  rep.meta["config"] = ctx.settings.to_json(false);
  ctx.write_text(stem + ".json", rep.to_json().dump(2) + "\n");
  const std::string text = rep.to_text();
  ctx.write_text(stem + ".txt", text);
  ctx.out << text;
}

struct Dataset {
  InstanceSequence train;
  InstanceSequence test;
};

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Dataset load_dataset(Context& ctx) {
  const RunConfig& c = ctx.cfg;
  if (c.input.empty()) throw ConfigError("no input dataset given (use --input)");
  if (!fs::exists(c.input)) throw DataError("missing file: " + c.input);
  ctx.record_input("dataset", c.input);
  InstanceSequence seq;
  bool normalize = c.normalize == "true";
  if (has_suffix(c.input, ".csv")) {
    seq = stft_preprocess(load_csv(c.input, c.csv), c.stft);
    normalize = c.normalize != "false";
  } else {
    seq = read_cache(c.input);
  }
  auto [train, test] = train_test_split(seq, c.train_fraction);
  if (normalize) {
    auto [train_n, stats] = zscore_normalize(train);
    train = std::move(train_n);
    test = zscore_normalize(test, stats).first;
  }
  return {std::move(train), std::move(test)};
}

EncoderConfig encoder_for(const RunConfig& c, Index input_dim) {
  EncoderConfig e = c.encoder;
  e.input_dim = input_dim;
  return e;
}

EncoderState<float> load_encoder(Context& ctx, Index input_dim) {
  const std::string& p = ctx.cfg.checkpoint;
  if (p.empty()) throw ConfigError("no checkpoint given (use --checkpoint)");
  if (!fs::exists(p)) throw DataError("missing checkpoint: " + p);
  ctx.record_input("checkpoint", p);
  const EncoderConfig expected = encoder_for(ctx.cfg, input_dim);
  EncoderState<float> state = load_checkpoint<float>(p, &expected).state;
  set_mode(state, EncoderMode::eval);
  return state;
}

const Eigen::VectorXi& require_labels(const Embedding& e, const char* split) {
  if (!e.labels)
    throw DataError(std::string("dataset has no labels (") + split + " split); this command needs a labeled dataset");
  return *e.labels;
}

// ---- commands ----

void cmd_synth(Context& ctx) {
  const RunConfig& c = ctx.cfg;
  InstanceSequence seq;
  if (c.data_kind == "regimes") {
    seq = synth_generate(c.synth);
  } else if (c.data_kind == "line") {
    seq = synth_line_fixture(c.synth.n_instances, c.anomaly_fraction, c.synth.seed);
  } else {
    seq = synth_linear_dynamics(c.synth.n_instances, c.ar_dim, c.synth.seed);
  }
  write_cache(ctx.path("dataset.catt"), seq);
  ctx.record("dataset.catt");
  ctx.out << "synth: wrote " << seq.length() << " x " << seq.dim() << " instances ("
          << c.data_kind << ") to " << ctx.path("dataset.catt") << "\n";
}

void cmd_pretrain(Context& ctx) {
  const Dataset ds = load_dataset(ctx);
  const EncoderConfig enc = encoder_for(ctx.cfg, ds.train.dim());
  PretrainResult<float> res;
  try {
    res = pretrain<float>(ds.train, enc, ctx.cfg.train);
  } catch (const NumericError& e) {
    ctx.out << "pretrain aborted: " << e.what() << "\n";
    throw;
  }
  save_checkpoint(ctx.path("checkpoint.ckpt"), res.state, &res.optimizer);
  ctx.record("checkpoint.ckpt");
  ctx.write_text("checkpoint.json",
                 checkpoint_sidecar(res.state, io::sha256_file(ctx.path("checkpoint.ckpt"))).dump(2) + "\n");
  std::ostringstream log;
  write_run_log(log, res.log);
  ctx.write_text("runlog.jsonl", log.str());
  const auto& r = res.log.records;
  ctx.out << "pretrain: " << r.size() << " iterations, variant " << res.log.variant << ", tau " << res.log.temperature;
  if (!r.empty()) ctx.out << ", loss " << r.front().loss << " -> " << r.back().loss;
  ctx.out << ", " << res.log.total_seconds << " s\n";
}

void cmd_embed(Context& ctx) {
  const Dataset ds = load_dataset(ctx);
  const EncoderState<float> state = load_encoder(ctx, ds.train.dim());
  const Index seq_len = ctx.cfg.train.seq_len;
  for (const auto& [name, part] : {std::pair{"train", &ds.train}, std::pair{"test", &ds.test}}) {
    const Embedding e = embed_dataset(state, *part, seq_len);
    InstanceSequence out;
    out.instances = e.rows;
    out.labels = e.labels;
    out.instance_duration_s = part->instance_duration_s;
    const std::string file = std::string("embeddings_") + name + ".catt";
    write_cache(ctx.path(file), out);
    ctx.record(file);
    ctx.out << "embed: " << name << " " << e.rows.rows() << " x " << e.rows.cols() << " -> " << ctx.path(file) << "\n";
  }
}

void probe_with(Context& ctx, const EncoderState<float>& state, const Dataset& ds, const std::string& stem,
                bool baseline) {
  const Index seq_len = ctx.cfg.train.seq_len;
  const Embedding tr = embed_dataset(state, ds.train, seq_len);
  const Embedding te = embed_dataset(state, ds.test, seq_len);
  EvalReport rep = linear_probe(tr.rows, require_labels(tr, "train"), te.rows, require_labels(te, "test"), ctx.cfg.probe);
  if (baseline) rep.meta["baseline"] = "random_init";
  write_report(ctx, stem, std::move(rep));
}

void cmd_probe(Context& ctx) {
  const Dataset ds = load_dataset(ctx);
  probe_with(ctx, load_encoder(ctx, ds.train.dim()), ds, "probe_report", false);
}

void cmd_baseline(Context& ctx) {
  const Dataset ds = load_dataset(ctx);
  EncoderState<float> state = init_params<float>(encoder_for(ctx.cfg, ds.train.dim()));
  set_mode(state, EncoderMode::eval);
  probe_with(ctx, state, ds, "baseline_report", true);
}

void cmd_semisup(Context& ctx) {
  const Dataset ds = load_dataset(ctx);
  const EncoderState<float> state = load_encoder(ctx, ds.train.dim());
  const Index seq_len = ctx.cfg.train.seq_len;
  const Embedding tr = embed_dataset(state, ds.train, seq_len);
  const Embedding te = embed_dataset(state, ds.test, seq_len);
  const auto cells = semi_supervised_eval(tr.rows, require_labels(tr, "train"), te.rows, require_labels(te, "test"),
                                          ctx.cfg.semisup_fractions, ctx.cfg.semisup_runs, ctx.cfg.probe,
                                          ctx.cfg.threads);
  write_report(ctx, "semisup_report", summarize_semisup(ctx.cfg.semisup_fractions, cells));
}

void cmd_forecast(Context& ctx) {
  const Dataset ds = load_dataset(ctx);
  const Index f = ctx.cfg.target_feature;
  if (f < 0 || f >= ds.train.dim())
    throw ConfigError("data.target_feature " + std::to_string(f) + " is outside the data dimension");
  const EncoderState<float> state = load_encoder(ctx, ds.train.dim());
  const Index seq_len = ctx.cfg.train.seq_len;
  const Embedding tr = embed_dataset(state, ds.train, seq_len);
  const Embedding te = embed_dataset(state, ds.test, seq_len);
  EvalReport rep = ridge_forecast(tr.rows, ds.train.instances.col(f).head(tr.used), te.rows,
                                  ds.test.instances.col(f).head(te.used), ctx.cfg.forecast);
  rep.meta["target_feature"] = f;
  write_report(ctx, "forecast_report", std::move(rep));
}

void cmd_anomaly(Context& ctx) {
  const Dataset ds = load_dataset(ctx);
  const EncoderState<float> state = load_encoder(ctx, ds.train.dim());
  const Index seq_len = ctx.cfg.train.seq_len;
  const Embedding tr = embed_dataset(state, ds.train, seq_len);
  const Embedding te = embed_dataset(state, ds.test, seq_len);
  const int normal = ctx.cfg.normal_label;

  std::vector<Index> normal_rows;
  for (Index i = 0; i < tr.rows.rows(); ++i)
    if (!tr.labels || (*tr.labels)[i] == normal) normal_rows.push_back(i);
  MatrixXd fit_rows(static_cast<Index>(normal_rows.size()), tr.rows.cols());
  for (std::size_t i = 0; i < normal_rows.size(); ++i) fit_rows.row(static_cast<Index>(i)) = tr.rows.row(normal_rows[i]);
  const AnomalyModel model = pca_anomaly_fit(fit_rows, ctx.cfg.variance_retained);
  const VectorXd train_scores = pca_anomaly_score(model, fit_rows);
  const VectorXd scores = pca_anomaly_score(model, te.rows);

  EvalReport rep;
  rep.kind = "anomaly";
  rep.set("components", static_cast<double>(model.p));
  rep.set("train_mean_score", train_scores.mean());
  rep.set("test_rows", static_cast<double>(scores.size()));
  if (te.labels) {
    const Eigen::VectorXi y = (te.labels->array() != normal).cast<int>();
    rep.set("anomalies", static_cast<double>(y.sum()));
    if (y.sum() > 0) rep.set("auc_pr", auc_pr(y, scores));
  }
  rep.meta["variance_retained"] = ctx.cfg.variance_retained;
  rep.meta["normal_label"] = normal;

  std::ostringstream csv;
  csv << "index,score" << (te.labels ? ",label" : "") << "\n";
  csv.precision(17);
  for (Index i = 0; i < scores.size(); ++i) {
    csv << i << "," << scores[i];
    if (te.labels) csv << "," << (*te.labels)[i];
    csv << "\n";
  }
  ctx.write_text("anomaly_scores.csv", csv.str());
  write_report(ctx, "anomaly_report", std::move(rep));
}

using Command = void (*)(Context&);

struct CommandSpec {
  const char* name;
  const char* help;
  Command fn;
};

constexpr CommandSpec kCommands[] = {
    {"synth", "Generate a synthetic dataset in the binary cache format", cmd_synth},
    {"pretrain", "Pretrain the encoder and write a checkpoint and run log", cmd_pretrain},
    {"embed", "Export per-instance embeddings for the train and test splits", cmd_embed},
    {"probe", "Linear-probe classification on frozen embeddings", cmd_probe},
    {"semisup", "Linear probes on random label fractions", cmd_semisup},
    {"forecast", "Ridge forecasting from embeddings", cmd_forecast},
    {"anomaly", "PCA anomaly scoring of embeddings", cmd_anomaly},
    {"baseline", "Linear probe on a randomly initialized encoder", cmd_baseline},
};

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive pretraining and evaluation for multivariate time series", "catt"};
  app.require_subcommand(1, 1);

  std::string config_path, manifest_path, input, checkpoint, out_dir, variant, horizons, iterations;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool deterministic = false;
  std::vector<std::string> assignments;
  app.add_option("--config", config_path, "Settings file (key = value, [section] headers)");
  app.add_option("--manifest", manifest_path, "Reuse the resolved settings of an earlier run");
  app.add_option("--set", assignments, "Override one setting, key=value (repeatable)");
  app.add_option("--seed", seed, "Root seed");
  app.add_option("--out-dir", out_dir, "Output directory");
  app.add_flag("--deterministic", deterministic, "Single-threaded fixed-order execution");
  app.add_option("--threads", threads, "Worker threads");
  app.add_option("--input", input, "Dataset (.catt cache or .csv)");
  app.add_option("--checkpoint", checkpoint, "Encoder checkpoint");
  app.add_option("--variant", variant, "Loss variant");
  app.add_option("--iterations", iterations, "Pretraining iterations or 'auto'");
  app.add_option("-H,--horizons", horizons, "Forecast horizons, comma separated");
  for (const auto& c : kCommands) app.add_subcommand(c.name, c.help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  std::string command;
  for (const auto& c : kCommands)
    if (app.got_subcommand(c.name)) command = c.name;

  try {
    Settings settings = Settings::defaults();
    if (!manifest_path.empty()) {
      if (!fs::exists(manifest_path)) throw ConfigError("manifest not found: " + manifest_path);
      nlohmann::json m;
      try {
        m = nlohmann::json::parse(io::read_file(manifest_path));
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("manifest is not valid JSON: " + std::string(e.what()));
      }
      if (!m.contains("config")) throw ConfigError("manifest has no config section: " + manifest_path);
      settings.merge_json(m["config"]);
    }
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) throw ConfigError("config file not found: " + config_path);
      settings.merge_text(io::read_file(config_path), config_path);
    }
    for (const auto& a : assignments) settings.merge_assignment(a);
    if (seed) settings.set("seed", std::to_string(*seed));
    if (deterministic) settings.set("deterministic", "true");
    if (threads) settings.set("threads", std::to_string(*threads));
    if (!out_dir.empty()) settings.set("out_dir", out_dir);
    if (!input.empty()) settings.set("input", input);
    if (!checkpoint.empty()) settings.set("checkpoint", checkpoint);
    if (!variant.empty()) settings.set("train.variant", variant);
    if (!iterations.empty()) settings.set("train.n_iterations", iterations);
    if (!horizons.empty()) settings.set("forecast.horizons", horizons);

    Context ctx{command, settings, RunConfig::resolve(settings), out};
    Eigen::setNbThreads(ctx.cfg.threads);
    ensure_out_dir(ctx.cfg.out_dir);
    for (const auto& c : kCommands)
      if (command == c.name) c.fn(ctx);
    write_manifest(ctx);
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "catt " << command << ": usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "catt " << command << ": numeric abort at iteration " << e.iteration() << ": " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "catt " << command << ": data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "catt " << command << ": data error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace catt::cli
