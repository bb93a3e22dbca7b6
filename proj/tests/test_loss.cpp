#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>

#include "catt/gradcheck.hpp"
#include "catt/loss.hpp"
#include "catt/loss_oracle.hpp"

using namespace catt;

namespace {

SequenceTensor<double> fixed_batch() {
  const Index n = 2, t = 8, f = 4;
  MatrixXd z(n * t, f);
  for (Index i = 0; i < n * t; ++i)
    for (Index c = 0; c < f; ++c) z(i, c) = std::sin(0.7 * i + 1.3 * c + 0.25) + 0.05 * c;
  return {n, t, z};
}

SequenceTensor<double> random_batch(Index n, Index t, Index f, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  MatrixXd z(n * t, f);
  for (Index i = 0; i < z.size(); ++i) z.data()[i] = g(rng);
  return {n, t, z};
}

LossConfig config(LossVariant v, double tau, bool per_sequence = false) {
  LossConfig c;
  c.variant = v;
  c.temperature = tau;
  c.per_sequence_mask = per_sequence;
  return c;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

double grad_rel(const MatrixXd& a, const MatrixXd& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

const std::vector<Index> kFixedPerm{3, 14, 0, 9, 6, 11, 1, 15, 8, 2, 13, 5, 10, 7, 12, 4};

struct Frozen {
  const char* name;
  LossConfig cfg;
  const std::vector<Index>* perm;
  double value, g00, g52, g153;
};

// Reference values from an independent double-precision autograd evaluation of the
// loss definitions on fixed_batch().
const Frozen kFrozen[] = {
    {"mp_xent", config(LossVariant::mp_xent, 0.5), nullptr, 1.623165337392233, -0.006308989245238993,
     0.006940208791400075, -0.006342692837033478},
    {"mp_xent_masked", config(LossVariant::mp_xent, 0.5, true), nullptr, 1.6576433164978202, 0.004197294646185274,
     -0.008408160025630653, -0.000608690387996982},
    {"mp_xent_perm", config(LossVariant::mp_xent_shuffled, 0.5), &kFixedPerm, 1.9595513653614205,
     -0.01606767318275166, 0.00679381984104567, -0.0017758301895126408},
    {"single_positive", config(LossVariant::single_positive, 0.5), nullptr, 1.8790501013503496,
     -0.016670895406025538, 0.005919624549689714, -0.011255419763318774},
    {"single_positive_no_neg", config(LossVariant::single_positive_no_neg, 0.5), nullptr, -1.527838930241991,
     -0.04086286915359072, 0.0075652603878231155, -0.015944705227229433},
    {"mp_xent_tau_0_1", config(LossVariant::mp_xent, 0.1), nullptr, 2.330938981998561, -0.0769463642765333,
     0.036465131124560665, -0.08797195190886276},
};

LossOutput<double> fast(const SequenceTensor<double>& z, const Frozen& f) {
  if (f.perm) return mpxent_loss_shuffled(z, f.cfg, *f.perm);
  return compute_loss(z, f.cfg);
}

LossOutput<double> slow(const SequenceTensor<double>& z, const Frozen& f) {
  if (f.perm) return oracle::mpxent_loss_oracle(z, f.cfg, f.perm);
  return oracle::loss_oracle(z, f.cfg);
}

}  // namespace

TEST(LossRegression, MatrixFormMatchesFrozenValues) {
  const auto z = fixed_batch();
  for (const auto& f : kFrozen) {
    SCOPED_TRACE(f.name);
    const auto out = fast(z, f);
    EXPECT_NEAR(out.value, f.value, 1e-12);
    EXPECT_NEAR(out.grad.rows(0, 0), f.g00, 1e-12);
    EXPECT_NEAR(out.grad.rows(5, 2), f.g52, 1e-12);
    EXPECT_NEAR(out.grad.rows(15, 3), f.g153, 1e-12);
  }
}

TEST(LossRegression, LoopOracleMatchesFrozenValues) {
  const auto z = fixed_batch();
  for (const auto& f : kFrozen) {
    SCOPED_TRACE(f.name);
    const auto out = slow(z, f);
    EXPECT_NEAR(out.value, f.value, 1e-12);
    EXPECT_NEAR(out.grad.rows(0, 0), f.g00, 1e-12);
    EXPECT_NEAR(out.grad.rows(5, 2), f.g52, 1e-12);
    EXPECT_NEAR(out.grad.rows(15, 3), f.g153, 1e-12);
  }
}

TEST(LossEquivalence, RandomConfigurationsAllVariants) {
  std::mt19937_64 rng(7);
  const double taus[] = {0.05, 0.1, 0.5, 1.0};
  const LossVariant variants[] = {LossVariant::mp_xent, LossVariant::mp_xent_shuffled, LossVariant::single_positive,
                                  LossVariant::single_positive_no_neg};
  for (int trial = 0; trial < 120; ++trial) {
    const Index n = 2 + static_cast<Index>(rng() % 3);
    const Index t = 4 + static_cast<Index>(rng() % 13);
    const Index f = 2 + static_cast<Index>(rng() % 7);
    const auto z = random_batch(n, t, f, rng());
    for (bool masked : {false, true}) {
      LossConfig cfg = config(variants[trial % 4], taus[(trial / 4) % 4], masked);
      cfg.shuffle_seed = rng();
      const auto a = compute_loss(z, cfg);
      const auto b = oracle::loss_oracle(z, cfg);
      ASSERT_LT(rel(a.value, b.value), 1e-9) << "trial " << trial;
      ASSERT_LT(grad_rel(a.grad.rows, b.grad.rows), 1e-9) << "trial " << trial;
      ASSERT_EQ(a.per_anchor.size(), b.per_anchor.size());
    }
  }
}

TEST(LossProperties, IdenticalRowsClosedForm) {
  for (Index m : {4, 5, 9, 16, 33, 64})
    for (double tau : {0.05, 0.5, 2.0}) {
      MatrixXd z = MatrixXd::Ones(m, 3);
      const auto out = mpxent_loss_matrix(SequenceTensor<double>(1, m, z), config(LossVariant::mp_xent, tau));
      EXPECT_NEAR(out.value, std::log((2.0 * m - 5.0) / 2.0), 1e-9) << "M=" << m << " tau=" << tau;
    }
}

TEST(LossProperties, ScaleInvarianceAndRadialGradient) {
  const auto z = random_batch(3, 6, 5, 11);
  for (auto v : {LossVariant::mp_xent, LossVariant::single_positive}) {
    const auto base = compute_loss(z, config(v, 0.5));
    for (double alpha : {0.1, 3.0}) {
      const auto scaled = compute_loss(SequenceTensor<double>(z.n, z.t, alpha * z.rows), config(v, 0.5));
      EXPECT_NEAR(scaled.value, base.value, 1e-10);
      const VectorXd radial = (scaled.grad.rows.array() * (alpha * z.rows).array()).rowwise().sum();
      EXPECT_LT(radial.cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(LossProperties, PermutationOfFeatureAxisLeavesLossUnchanged) {
  const auto z = random_batch(2, 7, 6, 3);
  MatrixXd swapped = z.rows;
  swapped.col(0).swap(swapped.col(4));
  const auto a = mpxent_loss_matrix(z, config(LossVariant::mp_xent, 0.3));
  const auto b = mpxent_loss_matrix(SequenceTensor<double>(z.n, z.t, swapped), config(LossVariant::mp_xent, 0.3));
  EXPECT_NEAR(a.value, b.value, 1e-12);
}

TEST(LossProperties, IdentityPermutationGivesPlainLossBitForBit) {
  const auto z = random_batch(3, 5, 4, 5);
  std::vector<Index> identity(15);
  for (Index i = 0; i < 15; ++i) identity[static_cast<std::size_t>(i)] = i;
  const auto cfg = config(LossVariant::mp_xent_shuffled, 0.5);
  const auto a = mpxent_loss_shuffled(z, cfg, identity);
  const auto b = mpxent_loss_matrix(z, config(LossVariant::mp_xent, 0.5));
  EXPECT_EQ(a.value, b.value);
  EXPECT_TRUE(a.grad.rows == b.grad.rows);
}

TEST(LossProperties, TemperatureBelowMinimumIsRejected) {
  const auto z = random_batch(2, 4, 3, 1);
  EXPECT_THROW(compute_loss(z, config(LossVariant::mp_xent, 0.005)), ConfigError);
  EXPECT_NO_THROW(compute_loss(z, config(LossVariant::mp_xent, 0.01)));
}

TEST(LossProperties, TooFewRowsIsRejected) {
  EXPECT_THROW(mpxent_loss_matrix(random_batch(1, 3, 2, 1), config(LossVariant::mp_xent, 0.5)), ConfigError);
}

TEST(LossProperties, NonFiniteEmbeddingRaisesNumericError) {
  auto z = random_batch(2, 4, 3, 1);
  z.rows(3, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(compute_loss(z, config(LossVariant::mp_xent, 0.5)), NumericError);
}

TEST(LossProperties, ZeroRowIsFlooredNotNaN) {
  auto z = random_batch(2, 4, 3, 1);
  z.rows.row(2).setZero();
  const auto out = compute_loss(z, config(LossVariant::mp_xent, 0.5));
  EXPECT_EQ(out.floored_rows, 1);
  EXPECT_TRUE(std::isfinite(out.value));
  EXPECT_TRUE(out.grad.rows.allFinite());
}

TEST(LossProperties, SimilarityMatrixIsSymmetricWithUnitDiagonalExponent) {
  const auto z = random_batch(2, 5, 4, 9);
  const MatrixXd s = cosine_similarity_matrix(z.rows, 0.5);
  EXPECT_LT((s - s.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  for (Index i = 0; i < s.rows(); ++i) EXPECT_NEAR(s(i, i), std::exp(2.0), 1e-12);
}

TEST(LossProperties, AnchorCounts) {
  const auto z = random_batch(3, 6, 4, 2);
  EXPECT_EQ(compute_loss(z, config(LossVariant::mp_xent, 0.5)).per_anchor.size(), 18 - 2);
  EXPECT_EQ(compute_loss(z, config(LossVariant::mp_xent, 0.5, true)).per_anchor.size(), 3 * 4);
  EXPECT_EQ(compute_loss(z, config(LossVariant::single_positive, 0.5)).per_anchor.size(), 18 - 1);
}

TEST(LossGradient, FiniteDifferenceAllVariants) {
  for (auto v : {LossVariant::mp_xent, LossVariant::mp_xent_shuffled, LossVariant::single_positive,
                 LossVariant::single_positive_no_neg}) {
    for (double tau : {0.1, 0.5}) {
      LossConfig cfg = config(v, tau);
      cfg.shuffle_seed = 42;
      const auto res = loss_gradient_check(random_batch(2, 5, 3, 17), cfg, 1e-5);
      EXPECT_LT(res.max_rel_error, 1e-4) << to_string(v) << " tau " << tau;
      EXPECT_EQ(res.coordinates, 30);
    }
  }
}

TEST(LossGradient, StepSizeOutsideRangeIsRejected) {
  EXPECT_THROW(loss_gradient_check(random_batch(2, 4, 2, 1), LossConfig{}, 1e-2), ConfigError);
}

TEST(LossVariants, NamesRoundTrip) {
  for (auto v : {LossVariant::mp_xent, LossVariant::mp_xent_shuffled, LossVariant::single_positive,
                 LossVariant::single_positive_no_neg})
    EXPECT_EQ(parse_loss_variant(to_string(v)), v);
  EXPECT_THROW(parse_loss_variant("triplet"), ConfigError);
}

TEST(LossVariants, ShuffledDependsOnSeedOnlyThroughPermutation) {
  const auto z = random_batch(2, 6, 4, 4);
  LossConfig cfg = config(LossVariant::mp_xent_shuffled, 0.5);
  cfg.shuffle_seed = 99;
  const auto a = compute_loss(z, cfg);
  const auto b = mpxent_loss_shuffled(z, cfg, shuffle_permutation(12, 99));
  EXPECT_EQ(a.value, b.value);
}

TEST(LossVariants, FloatMatchesDouble) {
  const auto z = random_batch(2, 8, 6, 21);
  const auto d = compute_loss(z, config(LossVariant::mp_xent, 0.5));
  const auto f = compute_loss(z.cast<float>(), config(LossVariant::mp_xent, 0.5));
  EXPECT_NEAR(f.value, d.value, 1e-5);
  EXPECT_LT(grad_rel(f.grad.rows.cast<double>(), d.grad.rows), 1e-4);
}

TEST(LossPerformance, MatrixFormBeatsLoopOracle) {
  const auto z = random_batch(8, 200, 320, 8);
  const auto cfg = config(LossVariant::mp_xent, 0.5);
  auto time = [&](auto&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  LossOutput<double> a, b;
  const double t_fast = time([&] { a = mpxent_loss_matrix(z, cfg); });
  const double t_slow = time([&] { b = oracle::mpxent_loss_oracle(z, cfg); });
  EXPECT_LT(t_fast, t_slow);
  EXPECT_LT(rel(a.value, b.value), 1e-9);
}

TEST(LossExamples, SimilarityEntries) {
  MatrixXd same(2, 2);
  same << 0.6, 0.8, 0.6, 0.8;
  EXPECT_NEAR(cosine_similarity_matrix(same, 1.0)(0, 1), std::exp(1.0), 1e-12);
  MatrixXd ortho(2, 2);
  ortho << 1, 0, 0, 1;
  EXPECT_NEAR(cosine_similarity_matrix(ortho, 0.5)(0, 1), 1.0, 1e-12);
  MatrixXd tilted(2, 2);
  tilted << 3, 4, 4, 3;
  EXPECT_NEAR(cosine_similarity_matrix(tilted, 1.0)(0, 1), std::exp(0.96), 1e-12);
}

TEST(LossExamples, ZeroRowIsCountedBySimilarityMatrix) {
  MatrixXd z(3, 2);
  z << 1, 0, 0, 0, 0, 1;
  Index floored = -1;
  const MatrixXd s = cosine_similarity_matrix(z, 1.0, &floored);
  EXPECT_EQ(floored, 1);
  EXPECT_TRUE(s.allFinite());
}

TEST(LossExamples, IdenticalRowsSmallBatches) {
  const auto ones = [](Index m) { return SequenceTensor<double>(1, m, MatrixXd::Ones(m, 2)); };
  EXPECT_NEAR(oracle::mpxent_loss_oracle(ones(5), config(LossVariant::mp_xent, 0.7)).value, 0.91629073187415511,
              1e-12);
  EXPECT_NEAR(oracle::mpxent_loss_oracle(ones(10), config(LossVariant::mp_xent, 0.2)).value, 2.0149030205422647,
              1e-12);
  const auto sp = ntxent_single_positive(ones(4), config(LossVariant::single_positive, 0.5));
  for (Index j = 0; j < sp.per_anchor.size(); ++j) EXPECT_NEAR(sp.per_anchor[j], std::log(3.0), 1e-12);
  EXPECT_NEAR(ntxent_single_positive(ones(6), config(LossVariant::single_positive_no_neg, 0.5)).value, -2.0, 1e-12);
  LossConfig shuffled = config(LossVariant::mp_xent_shuffled, 0.5);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    shuffled.shuffle_seed = seed;
    EXPECT_NEAR(compute_loss(ones(5), shuffled).value, std::log(2.5), 1e-12);
  }
}

TEST(LossExamples, AlignmentOnlyGradientAtIdenticalRows) {
  const auto res = loss_gradient_check(SequenceTensor<double>(1, 5, MatrixXd::Ones(5, 3)),
                                       config(LossVariant::single_positive_no_neg, 0.5), 1e-5);
  EXPECT_LT(res.max_abs_error, 1e-9);
}

TEST(LossExamples, GradientCheckSeededSmallBatch) {
  const auto z = random_batch(2, 5, 3, 0);
  EXPECT_LT(loss_gradient_check(z, config(LossVariant::mp_xent, 0.5), 1e-5).max_rel_error, 1e-4);
  EXPECT_LT(loss_gradient_check(z, config(LossVariant::mp_xent, 0.1), 1e-5).max_rel_error, 1e-3);
}

TEST(LossExamples, MeanLossPositiveOnGaussianBatch) {
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    EXPECT_GT(mpxent_loss_matrix(random_batch(2, 8, 4, seed), config(LossVariant::mp_xent, 0.5)).value, 0.0);
}
