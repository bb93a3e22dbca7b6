#ifndef CATT_LOSS_ORACLE_HPP
#define CATT_LOSS_ORACLE_HPP

// Literal per-anchor loop evaluation of the contrastive losses. O(M^2 F) with no
// matrix products; ground truth for the matrix forms in loss.hpp.

#include <cmath>
#include <vector>

#include "catt/loss.hpp"

namespace catt::oracle {

namespace detail {

template <typename Scalar>
struct PairTerms {
  const Mat<Scalar>& z;
  Vec<Scalar> norm;
  std::vector<bool> floored;
  Scalar tau;
  Mat<Scalar>& grad;

  PairTerms(const Mat<Scalar>& z_, Scalar tau_, Mat<Scalar>& grad_) : z(z_), tau(tau_), grad(grad_) {
    norm.resize(z.rows());
    floored.assign(static_cast<std::size_t>(z.rows()), false);
    for (Index a = 0; a < z.rows(); ++a) {
      Scalar sq = 0;
      for (Index f = 0; f < z.cols(); ++f) sq += z(a, f) * z(a, f);
      norm[a] = std::sqrt(sq);
      if (norm[a] < Scalar(kNormFloor)) {
        norm[a] = Scalar(kNormFloor);
        floored[static_cast<std::size_t>(a)] = true;
      }
    }
  }

  Scalar cos(Index a, Index b) const {
    Scalar dot = 0;
    for (Index f = 0; f < z.cols(); ++f) dot += z(a, f) * z(b, f);
    return dot / (norm[a] * norm[b]);
  }

  Scalar sim(Index a, Index b) const { return std::exp(cos(a, b) / tau); }

  // Accumulates coef * d cos(z_a, z_b) / d z into grad.
  void add_cos_grad(Index a, Index b, Scalar coef) {
    const Scalar c = cos(a, b);
    const Scalar inv_ab = Scalar(1) / (norm[a] * norm[b]);
    for (Index f = 0; f < z.cols(); ++f) {
      Scalar ga = z(b, f) * inv_ab;
      Scalar gb = z(a, f) * inv_ab;
      if (!floored[static_cast<std::size_t>(a)]) ga -= c * z(a, f) / (norm[a] * norm[a]);
      if (!floored[static_cast<std::size_t>(b)]) gb -= c * z(b, f) / (norm[b] * norm[b]);
      grad(a, f) += coef * ga;
      grad(b, f) += coef * gb;
    }
  }

  // d/dz of coef * exp(cos(a,b)/tau)
  void add_sim_grad(Index a, Index b, Scalar coef) { add_cos_grad(a, b, coef * sim(a, b) / tau); }
};

template <typename Scalar>
std::vector<Index> anchors(Index n, Index t, bool per_sequence, bool interior) {
  std::vector<Index> out;
  const Index m = n * t;
  for (Index j = 0; j < m; ++j) {
    const Index step = per_sequence ? j % t : j;
    const Index len = per_sequence ? t : m;
    if ((!interior || step >= 1) && step + 1 < len) out.push_back(j);
  }
  return out;
}

}  // namespace detail

/// MP-Xent by explicit loops. `perm` (optional) routes denominator terms through z_{perm[k]}.
template <typename Scalar>
LossOutput<Scalar> mpxent_loss_oracle(const SequenceTensor<Scalar>& z, const LossConfig& cfg,
                                      const std::vector<Index>* perm = nullptr) {
  cfg.validate();
  if (cfg.variant != LossVariant::mp_xent && cfg.variant != LossVariant::mp_xent_shuffled)
    throw ConfigError("mpxent_loss_oracle: variant must be mp_xent or mp_xent_shuffled");
  const Index m = z.flat_size();
  if (m < 4) throw ConfigError("mpxent_loss_oracle: need M >= 4");
  auto pk = [&](Index k) { return perm ? (*perm)[static_cast<std::size_t>(k)] : k; };

  Mat<Scalar> grad = Mat<Scalar>::Zero(m, z.features());
  detail::PairTerms<Scalar> terms(z.rows, static_cast<Scalar>(cfg.temperature), grad);
  const auto anchor_list = detail::anchors<Scalar>(z.n, z.t, cfg.per_sequence_mask, true);
  const Scalar weight = Scalar(1) / static_cast<Scalar>(anchor_list.size());

  LossOutput<Scalar> out;
  out.per_anchor.resize(static_cast<Index>(anchor_list.size()));
  for (std::size_t idx = 0; idx < anchor_list.size(); ++idx) {
    const Index j = anchor_list[idx];
    const Scalar num = terms.sim(j, j - 1) + terms.sim(j, j + 1);
    Scalar d1 = 0, d2 = 0;
    for (Index k = 0; k < m; ++k)
      if (k != j - 1 && k != j && k != j + 1) d1 += terms.sim(j, pk(k));
    for (Index l = 0; l < m; ++l)
      if (l != j - 1 && l != j) d2 += terms.sim(j - 1, pk(l));
    const Scalar den = d1 + d2;
    out.per_anchor[static_cast<Index>(idx)] = -std::log(num / den);

    terms.add_sim_grad(j, j - 1, -weight / num);
    terms.add_sim_grad(j, j + 1, -weight / num);
    for (Index k = 0; k < m; ++k)
      if (k != j - 1 && k != j && k != j + 1) terms.add_sim_grad(j, pk(k), weight / den);
    for (Index l = 0; l < m; ++l)
      if (l != j - 1 && l != j) terms.add_sim_grad(j - 1, pk(l), weight / den);
  }
  out.value = out.per_anchor.mean();
  out.grad = SequenceTensor<Scalar>(z.n, z.t, std::move(grad));
  return out;
}

template <typename Scalar>
LossOutput<Scalar> ntxent_oracle(const SequenceTensor<Scalar>& z, const LossConfig& cfg) {
  cfg.validate();
  const Index m = z.flat_size();
  if (m < 3) throw ConfigError("ntxent_oracle: need M >= 3");
  const bool with_negatives = cfg.variant == LossVariant::single_positive;
  const Scalar tau = static_cast<Scalar>(cfg.temperature);

  Mat<Scalar> grad = Mat<Scalar>::Zero(m, z.features());
  detail::PairTerms<Scalar> terms(z.rows, tau, grad);
  const auto anchor_list = detail::anchors<Scalar>(z.n, z.t, cfg.per_sequence_mask, false);
  const Scalar weight = Scalar(1) / static_cast<Scalar>(anchor_list.size());

  LossOutput<Scalar> out;
  out.per_anchor.resize(static_cast<Index>(anchor_list.size()));
  for (std::size_t idx = 0; idx < anchor_list.size(); ++idx) {
    const Index j = anchor_list[idx];
    if (!with_negatives) {
      out.per_anchor[static_cast<Index>(idx)] = -terms.cos(j, j + 1) / tau;
      terms.add_cos_grad(j, j + 1, -weight / tau);
      continue;
    }
    Scalar den = 0;
    for (Index k = 0; k < m; ++k)
      if (k != j) den += terms.sim(j, k);
    out.per_anchor[static_cast<Index>(idx)] = -std::log(terms.sim(j, j + 1) / den);
    terms.add_sim_grad(j, j + 1, -weight / terms.sim(j, j + 1));
    for (Index k = 0; k < m; ++k)
      if (k != j) terms.add_sim_grad(j, k, weight / den);
  }
  out.value = out.per_anchor.mean();
  out.grad = SequenceTensor<Scalar>(z.n, z.t, std::move(grad));
  return out;
}

/// Loop oracle for any variant; the shuffled variant uses shuffle_permutation(M, cfg.shuffle_seed).
template <typename Scalar>
LossOutput<Scalar> loss_oracle(const SequenceTensor<Scalar>& z, const LossConfig& cfg) {
  switch (cfg.variant) {
    case LossVariant::mp_xent:
      return mpxent_loss_oracle(z, cfg);
    case LossVariant::mp_xent_shuffled: {
      const auto perm = shuffle_permutation(z.flat_size(), cfg.shuffle_seed);
      return mpxent_loss_oracle(z, cfg, &perm);
    }
    default:
      return ntxent_oracle(z, cfg);
  }
}

}  // namespace catt::oracle

#endif  // CATT_LOSS_ORACLE_HPP
