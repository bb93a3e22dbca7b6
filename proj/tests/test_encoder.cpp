#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "catt/encoder.hpp"
#include "catt/loss.hpp"

using namespace catt;

namespace {

EncoderConfig tiny_config(std::uint64_t seed = 7) {
  EncoderConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden_dims = {4};
  cfg.output_dim = 2;
  cfg.init_seed = seed;
  return cfg;
}

SequenceTensor<double> random_input(Index n, Index t, Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Mat<double> rows(n * t, d);
  for (Index i = 0; i < rows.size(); ++i) rows.data()[i] = g(rng);
  return {n, t, rows};
}

// Central differences of f(state) over every learnable parameter, compared with `analytic`.
// Biases feeding batch norm have an exactly zero gradient, so the denominator is floored at 1e-6.
template <typename F>
double max_param_rel_error(const EncoderState<double>& state, const EncoderParams<double>& analytic, F&& f,
                           double h) {
  std::vector<Eigen::Map<const Vec<double>>> grads;
  analytic.for_each([&](const std::string&, const auto& g) { grads.push_back(g); });
  double worst = 0;
  std::size_t tensor = 0;
  EncoderState<double> probe = state;
  probe.params.for_each([&](const std::string&, Eigen::Map<Vec<double>> p) {
    for (Index i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + h;
      const double up = f(probe);
      p[i] = orig - h;
      const double down = f(probe);
      p[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double exact = grads[tensor][i];
      worst = std::max(worst, std::abs(numeric - exact) / std::max({std::abs(numeric), std::abs(exact), 1e-6}));
    }
    ++tensor;
  });
  return worst;
}

}  // namespace

TEST(Encoder, ParameterCountAtHarthShape) {
  EncoderConfig cfg;
  cfg.input_dim = 156;
  const auto state = init_params<double>(cfg);
  EXPECT_EQ(state.params.size(), 41440);
}

TEST(Encoder, InitIsDeterministicAndBounded) {
  EncoderConfig cfg;
  cfg.input_dim = 20;
  const auto a = init_params<double>(cfg), b = init_params<double>(cfg);
  EXPECT_TRUE(a.params.blocks[0].weight == b.params.blocks[0].weight);
  EXPECT_TRUE(a.params.proj_weight == b.params.proj_weight);
  EXPECT_LE(a.params.blocks[0].weight.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(20.0));
  EXPECT_LE(a.params.blocks[1].weight.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(128.0));
  for (const auto& s : a.bn) {
    EXPECT_EQ(s.running_var, Vec<double>::Ones(s.running_var.size()));
    EXPECT_EQ(s.running_mean, Vec<double>::Zero(s.running_mean.size()));
  }
  EXPECT_EQ(a.params.blocks[2].gamma, Vec<double>::Ones(32));
  EXPECT_EQ(a.mode, EncoderMode::train);
  cfg.init_seed = 1;
  EXPECT_FALSE(init_params<double>(cfg).params.proj_weight == a.params.proj_weight);
}

TEST(Encoder, InvalidConfigRejected) {
  EncoderConfig cfg;
  cfg.input_dim = 0;
  EXPECT_THROW(init_params<double>(cfg), ConfigError);
  cfg.input_dim = 3;
  cfg.bn_eps = 0;
  EXPECT_THROW(init_params<double>(cfg), ConfigError);
}

TEST(Encoder, OutputShapeAtHarthBatch) {
  EncoderConfig cfg;
  cfg.input_dim = 156;
  auto state = init_params<float>(cfg);
  const auto x = random_input(8, 119, 156, 1).cast<float>();
  const auto [z, cache] = forward(state, x);
  EXPECT_EQ(z.n, 8);
  EXPECT_EQ(z.t, 119);
  EXPECT_EQ(z.features(), 320);
  EXPECT_TRUE(cache.valid);
}

TEST(Encoder, InputDimMismatchRejected) {
  auto state = init_params<double>(tiny_config());
  EXPECT_THROW(forward(state, random_input(2, 4, 5, 0)), ConfigError);
}

TEST(Encoder, IdentityBlockPassesNonnegativeInput) {
  EncoderConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_dims = {2};
  cfg.output_dim = 2;
  auto state = init_params<double>(cfg);
  state.params.blocks[0].weight.setIdentity();
  state.params.proj_weight.setIdentity();
  set_mode(state, EncoderMode::eval);
  Mat<double> rows(3, 2);
  rows << 0.5, 0.0, 1.5, 2.0, 0.25, 3.0;
  state.config.bn_eps = 1e-300;
  const auto z = forward_eval(state, SequenceTensor<double>(1, 3, rows));
  EXPECT_LT((z.rows - rows).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encoder, EvalForwardIsPure) {
  auto state = init_params<double>(tiny_config());
  const auto x = random_input(2, 4, 3, 2);
  forward(state, x);
  set_mode(state, EncoderMode::eval);
  const auto before = state.bn[0].running_mean;
  const auto [a, ca] = forward(state, x);
  const auto [b, cb] = forward(state, x);
  EXPECT_TRUE(a.rows == b.rows);
  EXPECT_TRUE(state.bn[0].running_mean == before);
  EXPECT_FALSE(ca.valid);
}

TEST(Encoder, ModeRoundTripPreservesParameters) {
  auto state = init_params<double>(tiny_config());
  const auto copy = state.params;
  set_mode(set_mode(state, EncoderMode::eval), EncoderMode::train);
  EXPECT_TRUE(state.params.proj_weight == copy.proj_weight);
  EXPECT_TRUE(state.params.blocks[0].weight == copy.blocks[0].weight);
  EXPECT_EQ(state.mode, EncoderMode::train);
}

TEST(Encoder, MomentumOneCopiesBatchStatistics) {
  auto cfg = tiny_config();
  cfg.bn_momentum = 1.0;
  auto state = init_params<double>(cfg);
  const auto x = random_input(3, 5, 3, 4);
  forward(state, x);
  Mat<double> a = x.rows * state.params.blocks[0].weight.transpose();
  a.rowwise() += state.params.blocks[0].bias.transpose();
  const Vec<double> mean = a.colwise().mean().transpose();
  const Vec<double> var = ((a.rowwise() - mean.transpose()).array().square().colwise().mean()).transpose();
  EXPECT_LT((state.bn[0].running_mean - mean).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((state.bn[0].running_var - var).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_GE(state.bn[0].running_var.minCoeff(), 0.0);
}

TEST(Encoder, TrainForwardNormalizesOverAllRows) {
  EncoderConfig cfg;
  cfg.input_dim = 5;
  cfg.hidden_dims = {6};
  auto state = init_params<double>(cfg);
  const auto x = random_input(3, 7, 5, 8);
  const auto [z, cache] = forward(state, x);
  const auto& xhat = cache.blocks[0].normalized;
  EXPECT_LT(xhat.colwise().mean().cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((xhat.array().square().colwise().mean() - 1.0).abs().maxCoeff(), 1e-3);
}

TEST(Encoder, TimestepEquivarianceInTrainMode) {
  EncoderConfig cfg;
  cfg.input_dim = 4;
  cfg.hidden_dims = {8, 5};
  cfg.output_dim = 6;
  auto a = init_params<double>(cfg);
  auto b = a;
  const auto x = random_input(2, 6, 4, 5);
  const std::vector<Index> perm{3, 0, 5, 1, 4, 2};
  Mat<double> permuted(x.rows.rows(), x.rows.cols());
  for (Index i = 0; i < 2; ++i)
    for (Index t = 0; t < 6; ++t) permuted.row(i * 6 + t) = x.rows.row(i * 6 + perm[static_cast<std::size_t>(t)]);
  const auto za = forward(a, x).first;
  const auto zb = forward(b, SequenceTensor<double>(2, 6, permuted)).first;
  for (Index i = 0; i < 2; ++i)
    for (Index t = 0; t < 6; ++t)
      EXPECT_LT((zb.rows.row(i * 6 + t) - za.rows.row(i * 6 + perm[static_cast<std::size_t>(t)])).cwiseAbs().maxCoeff(),
                1e-12);
}

TEST(Encoder, ZeroUpstreamGradientGivesZeroGradients) {
  auto state = init_params<double>(tiny_config());
  auto [z, cache] = forward(state, random_input(2, 4, 3, 1));
  const auto res = backward(state, cache, SequenceTensor<double>(2, 4, Mat<double>::Zero(8, 2)));
  res.param_grads.for_each([](const std::string& name, const auto& g) { EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0) << name; });
  EXPECT_EQ(res.grad_x.rows.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Encoder, DeadUnitHasZeroIncomingGradient) {
  auto state = init_params<double>(tiny_config());
  state.params.blocks[0].beta[1] = -100.0;
  auto [z, cache] = forward(state, random_input(2, 4, 3, 3));
  const auto res = backward(state, cache, SequenceTensor<double>(2, 4, Mat<double>::Ones(8, 2)));
  EXPECT_EQ(res.param_grads.blocks[0].weight.row(1).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(res.param_grads.blocks[0].bias[1], 0.0);
  EXPECT_EQ(res.param_grads.blocks[0].gamma[1], 0.0);
}

TEST(Encoder, CacheMisuseIsRejected) {
  auto state = init_params<double>(tiny_config());
  const auto x = random_input(2, 4, 3, 1);
  const SequenceTensor<double> g(2, 4, Mat<double>::Ones(8, 2));
  auto [z1, stale] = forward(state, x);
  auto [z2, fresh] = forward(state, x);
  EXPECT_THROW(backward(state, stale, g), ConfigError);
  backward(state, fresh, g);
  EXPECT_THROW(backward(state, fresh, g), ConfigError);
  ForwardCache<double> empty;
  EXPECT_THROW(backward(state, empty, g), ConfigError);
  auto [z3, wrong] = forward(state, x);
  EXPECT_THROW(backward(state, wrong, SequenceTensor<double>(2, 4, Mat<double>::Ones(8, 3))), ConfigError);
}

TEST(Encoder, LinearObjectiveGradientMatchesFiniteDifferences) {
  const auto state = init_params<double>(tiny_config());
  const auto x = random_input(2, 4, 3, 11);
  const auto w = random_input(2, 4, 2, 12);
  auto objective = [&](const EncoderState<double>& s) {
    EncoderState<double> copy = s;
    return forward(copy, x).first.rows.cwiseProduct(w.rows).sum();
  };
  EncoderState<double> s = state;
  auto [z, cache] = forward(s, x);
  const auto res = backward(s, cache, w);
  EXPECT_LT(max_param_rel_error(state, res.param_grads, objective, 1e-5), 1e-4);

  Mat<double> xr = x.rows;
  double worst = 0;
  for (Index i = 0; i < xr.size(); ++i) {
    const double orig = xr.data()[i];
    xr.data()[i] = orig + 1e-5;
    EncoderState<double> c1 = state;
    const double up = forward(c1, SequenceTensor<double>(2, 4, xr)).first.rows.cwiseProduct(w.rows).sum();
    xr.data()[i] = orig - 1e-5;
    EncoderState<double> c2 = state;
    const double down = forward(c2, SequenceTensor<double>(2, 4, xr)).first.rows.cwiseProduct(w.rows).sum();
    xr.data()[i] = orig;
    const double numeric = (up - down) / 2e-5;
    const double exact = res.grad_x.rows.data()[i];
    worst = std::max(worst, std::abs(numeric - exact) / std::max({std::abs(numeric), std::abs(exact), 1e-8}));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Encoder, EncoderPlusLossGradientMatchesFiniteDifferences) {
  EncoderConfig cfg;
  cfg.input_dim = 4;
  cfg.hidden_dims = {6, 5};
  cfg.output_dim = 3;
  cfg.init_seed = 3;
  auto state = init_params<double>(cfg);
  state.params.proj_bias << 0.3, -0.2, 0.1;
  const auto x = random_input(2, 5, 4, 21);
  for (LossVariant v : {LossVariant::mp_xent, LossVariant::mp_xent_shuffled, LossVariant::single_positive,
                        LossVariant::single_positive_no_neg}) {
    const LossConfig loss{0.5, v, 99, false};
    auto objective = [&](const EncoderState<double>& s) {
      EncoderState<double> copy = s;
      return compute_loss(forward(copy, x).first, loss).value;
    };
    EncoderState<double> s = state;
    auto [z, cache] = forward(s, x);
    const auto res = backward(s, cache, compute_loss(z, loss).grad);
    EXPECT_LT(max_param_rel_error(state, res.param_grads, objective, 1e-5), 1e-3) << to_string(v);
  }
}

TEST(Encoder, FloatAndDoubleForwardsAgree) {
  EncoderConfig cfg;
  cfg.input_dim = 10;
  auto d = init_params<double>(cfg);
  auto f = d.cast<float>();
  const auto x = random_input(2, 9, 10, 6);
  const auto zd = forward(d, x).first;
  const auto zf = forward(f, x.cast<float>()).first;
  EXPECT_LT((zf.rows.cast<double>() - zd.rows).cwiseAbs().maxCoeff(), 1e-4);
}
