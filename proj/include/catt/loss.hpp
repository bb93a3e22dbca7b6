#ifndef CATT_LOSS_HPP
#define CATT_LOSS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "catt/types.hpp"

namespace catt {

enum class LossVariant { single_positive_no_neg, single_positive, mp_xent, mp_xent_shuffled };

inline std::string to_string(LossVariant v);
inline LossVariant parse_loss_variant(const std::string& name);

inline constexpr double kMinTemperature = 0.01;
inline constexpr double kNormFloor = 1e-12;

struct LossConfig {
  double temperature = 0.5;
  LossVariant variant = LossVariant::mp_xent;
  std::uint64_t shuffle_seed = 0;
  /// Restrict anchors (and thus positives) to within-sequence indices instead of the
  /// flattened N*T row sequence.
  bool per_sequence_mask = false;

  void validate() const {
    if (!(temperature >= kMinTemperature) || !std::isfinite(temperature))
      throw ConfigError("LossConfig: temperature must be >= " + std::to_string(kMinTemperature));
  }
};

template <typename Scalar>
struct LossOutput {
  Scalar value = 0;
  SequenceTensor<Scalar> grad;
  Vec<Scalar> per_anchor;
  /// Rows whose norm fell below the floor before the cosine.
  Index floored_rows = 0;
};

namespace detail {

template <typename Scalar>
struct NormalizedRows {
  Mat<Scalar> unit;
  Vec<Scalar> norm;  // floored
  std::vector<bool> floored;
  Index floored_count = 0;
};

template <typename Derived>
NormalizedRows<typename Derived::Scalar> normalize_rows(const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  NormalizedRows<Scalar> out;
  out.norm = z.rowwise().norm();
  out.floored.assign(static_cast<std::size_t>(z.rows()), false);
  for (Index a = 0; a < z.rows(); ++a) {
    if (out.norm[a] < Scalar(kNormFloor)) {
      out.norm[a] = Scalar(kNormFloor);
      out.floored[static_cast<std::size_t>(a)] = true;
      ++out.floored_count;
    }
  }
  out.unit = out.norm.cwiseInverse().asDiagonal() * z;
  return out;
}

/// Pulls a gradient w.r.t. normalized rows back through z / max(|z|, floor).
template <typename Scalar>
Mat<Scalar> unnormalize_grad(const NormalizedRows<Scalar>& nr, const Mat<Scalar>& d_unit) {
  Mat<Scalar> dz = d_unit;
  const Vec<Scalar> radial = (nr.unit.array() * d_unit.array()).rowwise().sum();
  for (Index a = 0; a < dz.rows(); ++a)
    if (!nr.floored[static_cast<std::size_t>(a)]) dz.row(a) -= radial[a] * nr.unit.row(a);
  return nr.norm.cwiseInverse().asDiagonal() * dz;
}

/// 0/1 indicator over flattened rows. Interior anchors skip the first and last row
/// (or, masked, the first and last step of every sequence); forward anchors skip the last.
template <typename Scalar>
Vec<Scalar> anchor_mask(Index n, Index t, bool per_sequence, bool interior) {
  const Index m = n * t;
  Vec<Scalar> mask = Vec<Scalar>::Zero(m);
  if (per_sequence) {
    for (Index i = 0; i < n; ++i)
      for (Index s = interior ? 1 : 0; s + 1 < t; ++s) mask[i * t + s] = 1;
  } else {
    for (Index j = interior ? 1 : 0; j + 1 < m; ++j) mask[j] = 1;
  }
  return mask;
}

template <typename Scalar>
Vec<Scalar> gather(const Vec<Scalar>& values, const Vec<Scalar>& mask) {
  Vec<Scalar> out(static_cast<Index>(mask.sum()));
  Index k = 0;
  for (Index j = 0; j < mask.size(); ++j)
    if (mask[j] != 0) out[k++] = values[j];
  return out;
}

// Shared MP-Xent kernel. Positives always come from U U^T; the denominators come from
// U V^T with V = P U (P the row permutation `perm`, identity when null).
template <typename Scalar>
LossOutput<Scalar> mp_xent_kernel(const SequenceTensor<Scalar>& z, const LossConfig& cfg,
                                  const std::vector<Index>* perm) {
  const Index m = z.flat_size();
  const Scalar tau = static_cast<Scalar>(cfg.temperature);
  const NormalizedRows<Scalar> nr = normalize_rows(z.rows);
  const Mat<Scalar>& u = nr.unit;

  const Mat<Scalar> s = ((u * u.transpose()).array() / tau).exp().matrix();
  Mat<Scalar> v;
  Mat<Scalar> r;
  if (perm) {
    v.resize(m, u.cols());
    for (Index k = 0; k < m; ++k) v.row(k) = u.row((*perm)[static_cast<std::size_t>(k)]);
    r = ((u * v.transpose()).array() / tau).exp().matrix();
  } else {
    r = s;
  }

  // Positive bands of S: sub[k] = S(k+1, k), sup[k] = S(k, k+1).
  const Vec<Scalar> sub = s.diagonal(-1);
  const Vec<Scalar> sup = s.diagonal(1);
  // Strip the tridiagonal band from R so row sums need no cancellation.
  const Vec<Scalar> r_sub = r.diagonal(-1);
  r.diagonal().setZero();
  r.diagonal(-1).setZero();
  r.diagonal(1).setZero();
  const Vec<Scalar> row_neg = r.rowwise().sum();  // sum_{k not in {a-1,a,a+1}} R(a, k)

  const Vec<Scalar> mask = anchor_mask<Scalar>(z.n, z.t, cfg.per_sequence_mask, true);
  const Index n_anchors = static_cast<Index>(mask.sum());

  // Anchor j in 1..M-2: num = S(j,j-1) + S(j,j+1); D1 = row_neg(j);
  // D2 = row_neg(j-1) + R(j-1, j-2).
  Vec<Scalar> num = Vec<Scalar>::Ones(m);
  Vec<Scalar> den = Vec<Scalar>::Ones(m);
  num.segment(1, m - 2) = sub.head(m - 2) + sup.tail(m - 2);
  den.segment(1, m - 2) = row_neg.segment(1, m - 2) + row_neg.head(m - 2);
  den.segment(2, m - 3) += r_sub.head(m - 3);
  const Vec<Scalar> ell = (den.array().log() - num.array().log()).matrix().cwiseProduct(mask);

  LossOutput<Scalar> out;
  out.per_anchor = gather(ell, mask);
  out.value = out.per_anchor.mean();
  out.floored_rows = nr.floored_count;

  const Scalar scale = Scalar(1) / (static_cast<Scalar>(n_anchors) * tau);
  const Vec<Scalar> inv_den = mask.cwiseQuotient(den);
  const Vec<Scalar> inv_num = mask.cwiseQuotient(num);

  // Row a of the stripped R carries D1 of anchor a and D2 of anchor a+1.
  Vec<Scalar> row_coef = inv_den;
  row_coef.head(m - 1) += inv_den.tail(m - 1);
  Mat<Scalar> w_r = (scale * row_coef).asDiagonal() * r;
  // D2 of anchor a+1 also keeps R(a, a-1).
  w_r.diagonal(-1).head(m - 2) = scale * inv_den.tail(m - 2).cwiseProduct(r_sub.head(m - 2));
  w_r.diagonal(-1)[m - 2] = Scalar(0);

  // Numerator weights on the S bands.
  Vec<Scalar> w_band = Vec<Scalar>::Zero(m - 1);
  w_band -= scale * inv_num.tail(m - 1).cwiseProduct(sub);
  w_band -= scale * inv_num.head(m - 1).cwiseProduct(sup);

  Mat<Scalar> du = w_r * (perm ? v : u);
  du.bottomRows(m - 1) += w_band.asDiagonal() * u.topRows(m - 1);
  du.topRows(m - 1) += w_band.asDiagonal() * u.bottomRows(m - 1);
  const Mat<Scalar> dv = w_r.transpose() * u;
  if (perm) {
    for (Index k = 0; k < m; ++k) du.row((*perm)[static_cast<std::size_t>(k)]) += dv.row(k);
  } else {
    du += dv;
  }

  out.grad = SequenceTensor<Scalar>(z.n, z.t, unnormalize_grad(nr, du));
  return out;
}

template <typename Scalar>
void check_embedding(const SequenceTensor<Scalar>& z, Index min_rows, const char* who) {
  if (z.flat_size() < min_rows)
    throw ConfigError(std::string(who) + ": need at least " + std::to_string(min_rows) +
                      " flattened rows, got " + std::to_string(z.flat_size()));
  if (z.features() < 1) throw ConfigError(std::string(who) + ": need F >= 1");
  if (!z.rows.allFinite()) throw NumericError(std::string(who) + ": non-finite embedding", -1, NAN);
}

}  // namespace detail

/// S(a, b) = exp(cos(z_a, z_b) / tau) over the rows of z.
template <typename Derived>
Mat<typename Derived::Scalar> cosine_similarity_matrix(const Eigen::MatrixBase<Derived>& z, double tau,
                                                       Index* floored_rows = nullptr) {
  using Scalar = typename Derived::Scalar;
  const auto nr = detail::normalize_rows(z);
  if (floored_rows) *floored_rows = nr.floored_count;
  return ((nr.unit * nr.unit.transpose()).array() / static_cast<Scalar>(tau)).exp().matrix();
}

/// Seeded permutation of 0..m-1.
inline std::vector<Index> shuffle_permutation(Index m, std::uint64_t seed) {
  std::vector<Index> perm(static_cast<std::size_t>(m));
  std::iota(perm.begin(), perm.end(), Index(0));
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

/// Multiple-positive loss over the flattened batch: every interior row is an anchor
/// with its two neighbours as positives.
template <typename Scalar>
LossOutput<Scalar> mpxent_loss_matrix(const SequenceTensor<Scalar>& z, const LossConfig& cfg) {
  cfg.validate();
  detail::check_embedding(z, 4, "mpxent_loss_matrix");
  return detail::mp_xent_kernel<Scalar>(z, cfg, nullptr);
}

/// MP-Xent with denominators taken against a permuted copy of the batch.
template <typename Scalar>
LossOutput<Scalar> mpxent_loss_shuffled(const SequenceTensor<Scalar>& z, const LossConfig& cfg,
                                        const std::vector<Index>& perm) {
  cfg.validate();
  detail::check_embedding(z, 4, "mpxent_loss_shuffled");
  if (static_cast<Index>(perm.size()) != z.flat_size())
    throw ConfigError("mpxent_loss_shuffled: permutation length does not match N*T");
  return detail::mp_xent_kernel<Scalar>(z, cfg, &perm);
}

template <typename Scalar>
LossOutput<Scalar> mpxent_loss_shuffled(const SequenceTensor<Scalar>& z, const LossConfig& cfg) {
  return mpxent_loss_shuffled(z, cfg, shuffle_permutation(z.flat_size(), cfg.shuffle_seed));
}

/// Single-positive NT-Xent (row j against row j+1), or its alignment-only form.
template <typename Scalar>
LossOutput<Scalar> ntxent_single_positive(const SequenceTensor<Scalar>& z, const LossConfig& cfg) {
  cfg.validate();
  if (cfg.variant != LossVariant::single_positive && cfg.variant != LossVariant::single_positive_no_neg)
    throw ConfigError("ntxent_single_positive: variant must be a single-positive variant");
  detail::check_embedding(z, 3, "ntxent_single_positive");

  const Index m = z.flat_size();
  const Scalar tau = static_cast<Scalar>(cfg.temperature);
  const auto nr = detail::normalize_rows(z.rows);
  const Mat<Scalar>& u = nr.unit;
  const Vec<Scalar> mask = detail::anchor_mask<Scalar>(z.n, z.t, cfg.per_sequence_mask, false);
  const Index n_anchors = static_cast<Index>(mask.sum());
  const Scalar scale = Scalar(1) / (static_cast<Scalar>(n_anchors) * tau);

  // cos(z_j, z_{j+1}) for j = 0..M-2
  const Vec<Scalar> adjacent = (u.topRows(m - 1).array() * u.bottomRows(m - 1).array()).rowwise().sum();

  LossOutput<Scalar> out;
  out.floored_rows = nr.floored_count;
  Vec<Scalar> ell = Vec<Scalar>::Zero(m);
  Mat<Scalar> du;
  const Vec<Scalar> w_band = -scale * mask.head(m - 1);

  if (cfg.variant == LossVariant::single_positive_no_neg) {
    ell.head(m - 1) = -adjacent / tau;
    du = Mat<Scalar>::Zero(m, u.cols());
  } else {
    Mat<Scalar> s = ((u * u.transpose()).array() / tau).exp().matrix();
    s.diagonal().setZero();
    const Vec<Scalar> den = s.rowwise().sum();
    ell.head(m - 1) = den.head(m - 1).array().log() - adjacent.array() / tau;
    const Vec<Scalar> row_coef = scale * mask.cwiseQuotient(den);
    const Mat<Scalar> w = row_coef.asDiagonal() * s;
    du = w * u + w.transpose() * u;
  }
  du.bottomRows(m - 1) += w_band.asDiagonal() * u.topRows(m - 1);
  du.topRows(m - 1) += w_band.asDiagonal() * u.bottomRows(m - 1);

  ell = ell.cwiseProduct(mask);
  out.per_anchor = detail::gather(ell, mask);
  out.value = out.per_anchor.mean();
  out.grad = SequenceTensor<Scalar>(z.n, z.t, detail::unnormalize_grad(nr, du));
  return out;
}

/// Dispatches on cfg.variant.
template <typename Scalar>
LossOutput<Scalar> compute_loss(const SequenceTensor<Scalar>& z, const LossConfig& cfg) {
  switch (cfg.variant) {
    case LossVariant::mp_xent:
      return mpxent_loss_matrix(z, cfg);
    case LossVariant::mp_xent_shuffled:
      return mpxent_loss_shuffled(z, cfg);
    case LossVariant::single_positive:
    case LossVariant::single_positive_no_neg:
      return ntxent_single_positive(z, cfg);
  }
  throw ConfigError("compute_loss: unknown variant");
}

inline std::string to_string(LossVariant v) {
  switch (v) {
    case LossVariant::single_positive_no_neg:
      return "single_positive_no_neg";
    case LossVariant::single_positive:
      return "single_positive";
    case LossVariant::mp_xent:
      return "mp_xent";
    case LossVariant::mp_xent_shuffled:
      return "mp_xent_shuffled";
  }
  return "unknown";
}

inline LossVariant parse_loss_variant(const std::string& name) {
  for (auto v : {LossVariant::single_positive_no_neg, LossVariant::single_positive, LossVariant::mp_xent,
                 LossVariant::mp_xent_shuffled})
    if (to_string(v) == name) return v;
  throw ConfigError("unknown loss variant '" + name + "'");
}

}  // namespace catt

#endif  // CATT_LOSS_HPP
