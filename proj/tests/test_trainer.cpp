#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "catt/checkpoint.hpp"
#include "catt/io.hpp"
#include "catt/trainer.hpp"

using namespace catt;

namespace {

EncoderConfig small_encoder(Index d) {
  EncoderConfig cfg;
  cfg.input_dim = d;
  cfg.hidden_dims = {16, 8};
  cfg.output_dim = 12;
  cfg.init_seed = 5;
  return cfg;
}

InstanceSequence fixture(Index n_instances = 4000, Index channels = 64) {
  SynthConfig s;
  s.n_instances = n_instances;
  s.n_channels = channels;
  return synth_generate(s);
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("catt_trainer_" + name)).string();
}

template <typename Scalar>
bool params_equal(const EncoderParams<Scalar>& a, const EncoderParams<Scalar>& b) {
  std::vector<Vec<Scalar>> xs, ys;
  a.for_each([&](const std::string&, const auto& v) { xs.emplace_back(v); });
  b.for_each([&](const std::string&, const auto& v) { ys.emplace_back(v); });
  if (xs.size() != ys.size()) return false;
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (xs[i].size() != ys[i].size() || !(xs[i] == ys[i])) return false;
  return true;
}

}  // namespace

TEST(Iterations, ThresholdRule) {
  EXPECT_EQ(resolve_iterations(50000, std::nullopt), 200);
  EXPECT_EQ(resolve_iterations(1270087, std::nullopt), 600);
  EXPECT_EQ(resolve_iterations(99999, std::nullopt), 200);
  EXPECT_EQ(resolve_iterations(100000, std::nullopt), 600);
  EXPECT_EQ(resolve_iterations(1, 42), 42);
  EXPECT_EQ(resolve_iterations(5000000, 42), 42);
  EXPECT_THROW(resolve_iterations(0, std::nullopt), ConfigError);
}

TEST(AdamW, FirstStepIsSignedLearningRate) {
  Vec<double> theta(1), g(1), m = Vec<double>::Zero(1), v = Vec<double>::Zero(1);
  theta << 1.0;
  g << 0.5;
  adamw_update<double>(theta, g, m, v, 1, AdamWConfig{1e-3, 0.9, 0.999, 1e-8, 0.0});
  EXPECT_NEAR(theta[0], 1.0 - 1e-3 * (0.5 / (0.5 + 1e-8)), 1e-15);
  EXPECT_NEAR(theta[0], 0.999, 1e-10);
}

TEST(AdamW, ZeroGradientWithoutDecayIsNoOp) {
  Vec<double> theta = Vec<double>::LinSpaced(5, -2, 2), g = Vec<double>::Zero(5);
  Vec<double> m = Vec<double>::Zero(5), v = Vec<double>::Zero(5);
  const Vec<double> before = theta;
  for (std::uint64_t t = 1; t <= 3; ++t) adamw_update<double>(theta, g, m, v, t, AdamWConfig{1e-3, 0.9, 0.999, 1e-8, 0.0});
  EXPECT_TRUE(theta == before);
}

TEST(AdamW, DecayOnlyStep) {
  Vec<double> theta = Vec<double>::Ones(1), g = Vec<double>::Zero(1);
  Vec<double> m = Vec<double>::Zero(1), v = Vec<double>::Zero(1);
  adamw_update<double>(theta, g, m, v, 1, AdamWConfig{1e-3, 0.9, 0.999, 1e-8, 0.01});
  EXPECT_NEAR(theta[0], 1.0 - 1e-5, 1e-16);
}

TEST(AdamW, OddSymmetryWithoutDecay) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  const AdamWConfig cfg{1e-2, 0.9, 0.999, 1e-8, 0.0};
  Vec<double> a(50), b(50), ma = Vec<double>::Zero(50), va = ma, mb = ma, vb = ma;
  for (Index i = 0; i < 50; ++i) a[i] = n(rng);
  b = -a;
  for (std::uint64_t t = 1; t <= 10; ++t) {
    Vec<double> g(50);
    for (Index i = 0; i < 50; ++i) g[i] = n(rng);
    adamw_update<double>(a, g, ma, va, t, cfg);
    const Vec<double> neg = -g;
    adamw_update<double>(b, neg, mb, vb, t, cfg);
    EXPECT_TRUE(a == -b);
  }
  EXPECT_GE(va.minCoeff(), 0.0);
}

TEST(AdamW, StepCounterAndNonFiniteGradient) {
  auto state = init_params<double>(small_encoder(4));
  auto opt = OptimizerState<double>::zeros_like(state.params);
  auto grads = state.params.zeros_like();
  adamw_step(state.params, grads, opt, AdamWConfig{}, 1);
  EXPECT_EQ(opt.step, 1u);
  grads.blocks[1].gamma[3] = NAN;
  try {
    adamw_step(state.params, grads, opt, AdamWConfig{}, 17);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.iteration(), 17);
    EXPECT_NE(std::string(e.what()).find("block1.gamma"), std::string::npos);
  }
  EXPECT_EQ(opt.step, 1u);
}

TEST(Pretrain, LossDecreasesOnRegimeFixture) {
  SynthConfig s;
  const auto seq = synth_generate(s);
  EncoderConfig enc;
  enc.input_dim = seq.dim();
  TrainConfig train;
  train.seq_len = 32;
  const auto res = pretrain<float>(seq, enc, train);
  ASSERT_EQ(res.log.records.size(), 200u);
  EXPECT_LT(res.log.records.back().loss, res.log.records.front().loss);
  double head = 0, tail = 0;
  for (int i = 0; i < 20; ++i) {
    head += res.log.records[static_cast<std::size_t>(i)].loss;
    tail += res.log.records[res.log.records.size() - 1 - static_cast<std::size_t>(i)].loss;
  }
  EXPECT_LT(tail, head);
  EXPECT_EQ(res.optimizer.step, 200u);
}

TEST(Pretrain, SameSeedIsBitIdentical) {
  const auto seq = fixture();
  TrainConfig train;
  train.seq_len = 16;
  train.n_iterations = 30;
  train.variant = LossVariant::mp_xent_shuffled;
  const auto a = pretrain<float>(seq, small_encoder(seq.dim()), train);
  const auto b = pretrain<float>(seq, small_encoder(seq.dim()), train);
  EXPECT_EQ(encode_checkpoint(a.state, &a.optimizer), encode_checkpoint(b.state, &b.optimizer));
  for (std::size_t i = 0; i < a.log.records.size(); ++i) EXPECT_EQ(a.log.records[i].loss, b.log.records[i].loss);
  train.seed = 1;
  const auto c = pretrain<float>(seq, small_encoder(seq.dim()), train);
  EXPECT_NE(encode_checkpoint(a.state, &a.optimizer), encode_checkpoint(c.state, &c.optimizer));
}

TEST(Pretrain, IterationsAreStrictlyIncreasingAndWrapEpochs) {
  const auto seq = fixture(400, 8);
  TrainConfig train;
  train.seq_len = 10;
  train.batch_size = 8;
  train.n_iterations = 25;
  const auto res = pretrain<double>(seq, small_encoder(8), train);
  ASSERT_EQ(res.log.records.size(), 25u);
  for (std::size_t i = 0; i < 25; ++i) EXPECT_EQ(res.log.records[i].iteration, static_cast<std::int64_t>(i + 1));
  EXPECT_EQ(res.log.variant, "mp_xent");
  std::ostringstream os;
  write_run_log(os, res.log);
  std::istringstream in(os.str());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("loss") && j.contains("wall_ms") && j.contains("iteration"));
    ++lines;
  }
  EXPECT_EQ(lines, 25);
}

TEST(Pretrain, DivergenceIsReportedWithIteration) {
  const auto seq = fixture(800, 16);
  TrainConfig train;
  train.seq_len = 16;
  train.n_iterations = 50;
  train.learning_rate = 1e30;
  train.variant = LossVariant::single_positive;
  try {
    pretrain<float>(seq, small_encoder(16), train);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_GE(e.iteration(), 1);
    EXPECT_LE(e.iteration(), 50);
    EXPECT_NE(std::string(e.what()).find("iteration"), std::string::npos);
  }
}

TEST(Pretrain, NonFiniteInputAbortsAtFirstIteration) {
  auto seq = fixture(200, 4);
  seq.instances.array() = NAN;
  TrainConfig train;
  train.seq_len = 8;
  train.n_iterations = 3;
  try {
    pretrain<double>(seq, small_encoder(4), train);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.iteration(), 1);
  }
}

TEST(Pretrain, ConfigErrors) {
  const auto seq = fixture(200, 4);
  TrainConfig train;
  train.seq_len = 8;
  EXPECT_THROW(pretrain<double>(seq, small_encoder(5), train), ConfigError);
  train.adam_beta1 = 1.0;
  EXPECT_THROW(pretrain<double>(seq, small_encoder(4), train), ConfigError);
  train.adam_beta1 = 0.9;
  train.temperature = 0.001;
  EXPECT_THROW(pretrain<double>(seq, small_encoder(4), train), ConfigError);
}

TEST(Checkpoint, RoundTripWithOptimizer) {
  const auto seq = fixture(400, 8);
  TrainConfig train;
  train.seq_len = 8;
  train.n_iterations = 5;
  const auto res = pretrain<float>(seq, small_encoder(8), train);
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, res.state, &res.optimizer);
  const auto back = load_checkpoint<float>(path);
  std::filesystem::remove(path);
  EXPECT_TRUE(back.state.config == res.state.config);
  EXPECT_TRUE(params_equal(back.state.params, res.state.params));
  for (std::size_t b = 0; b < res.state.bn.size(); ++b) {
    EXPECT_TRUE(back.state.bn[b].running_mean == res.state.bn[b].running_mean);
    EXPECT_TRUE(back.state.bn[b].running_var == res.state.bn[b].running_var);
  }
  ASSERT_TRUE(back.optimizer.has_value());
  EXPECT_EQ(back.optimizer->step, 5u);
  EXPECT_TRUE(params_equal(back.optimizer->m, res.optimizer.m));
  EXPECT_TRUE(params_equal(back.optimizer->v, res.optimizer.v));
  EXPECT_EQ(encode_checkpoint(back.state, &*back.optimizer), encode_checkpoint(res.state, &res.optimizer));
}

TEST(Checkpoint, FreshStateWithoutOptimizer) {
  const auto state = init_params<double>(small_encoder(3));
  const auto back = decode_checkpoint<double>(encode_checkpoint(state, static_cast<const OptimizerState<double>*>(nullptr)));
  EXPECT_TRUE(params_equal(back.state.params, state.params));
  EXPECT_FALSE(back.optimizer.has_value());
  EXPECT_EQ(back.state.mode, EncoderMode::train);
}

TEST(Checkpoint, HeaderIsLittleEndianF32) {
  const auto state = init_params<float>(small_encoder(3));
  const auto bytes = encode_checkpoint(state, static_cast<const OptimizerState<float>*>(nullptr));
  EXPECT_EQ(bytes.substr(0, 8), "CATTCKPT");
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), kCheckpointVersion);
  EXPECT_EQ(static_cast<unsigned char>(bytes[9]), 0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[10]), 4);
}

TEST(Checkpoint, CorruptionAndVersionErrors) {
  const auto state = init_params<float>(small_encoder(3));
  const auto bytes = encode_checkpoint(state, static_cast<const OptimizerState<float>*>(nullptr));
  try {
    decode_checkpoint<float>(bytes.substr(0, bytes.size() / 2));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("corrupt"), std::string::npos) << e.what();
  }
  EXPECT_THROW(decode_checkpoint<float>(bytes + "x"), DataError);
  std::string version = bytes;
  version[8] = 2;
  EXPECT_THROW(decode_checkpoint<float>(version), DataError);
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint<float>(magic), DataError);
  EXPECT_THROW(decode_checkpoint<double>(bytes), DataError);
  EXPECT_THROW(load_checkpoint<float>(temp_path("does_not_exist.ckpt")), DataError);
}

TEST(Checkpoint, ShapeMismatchNamesField) {
  const auto state = init_params<float>(small_encoder(3));
  const auto bytes = encode_checkpoint(state, static_cast<const OptimizerState<float>*>(nullptr));
  auto expect_field = [&](const EncoderConfig& other, const std::string& field) {
    try {
      decode_checkpoint<float>(bytes, &other);
      FAIL() << "expected DataError for " << field;
    } catch (const DataError& e) {
      EXPECT_NE(std::string(e.what()).find("'" + field + "'"), std::string::npos) << e.what();
    }
  };
  expect_field(small_encoder(7), "input_dim");
  auto hidden = small_encoder(3);
  hidden.hidden_dims = {16, 9};
  expect_field(hidden, "hidden_dims");
  auto out = small_encoder(3);
  out.output_dim = 320;
  expect_field(out, "output_dim");
  const auto same = small_encoder(3);
  EXPECT_NO_THROW(decode_checkpoint<float>(bytes, &same));
}

TEST(Checkpoint, SidecarListsShapesAndHashes) {
  const auto state = init_params<float>(small_encoder(3));
  const auto bytes = encode_checkpoint(state, static_cast<const OptimizerState<float>*>(nullptr));
  const auto j = checkpoint_sidecar(state, io::sha256_hex(bytes));
  EXPECT_EQ(j["config"]["input_dim"], 3);
  EXPECT_EQ(j["tensors"].size(), 2u * 6u + 2u);
  EXPECT_EQ(j["tensors"][0]["name"], "block0.weight");
  EXPECT_EQ(j["tensors"][0]["shape"], nlohmann::json({16, 3}));
  EXPECT_EQ(j["file_sha256"].get<std::string>().size(), 64u);
  EXPECT_EQ(j["scalar"], "f32");
}
