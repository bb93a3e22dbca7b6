#ifndef CATT_ENCODER_HPP
#define CATT_ENCODER_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "catt/types.hpp"

namespace catt {

struct EncoderConfig {
  Index input_dim = 1;
  std::vector<Index> hidden_dims{128, 64, 32};
  Index output_dim = 320;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  std::uint64_t init_seed = 0;

  void validate() const {
    if (input_dim < 1 || output_dim < 1) throw ConfigError("EncoderConfig: dims must be >= 1");
    for (Index h : hidden_dims)
      if (h < 1) throw ConfigError("EncoderConfig: hidden dims must be >= 1");
    if (!(bn_momentum > 0 && bn_momentum <= 1)) throw ConfigError("EncoderConfig: bn_momentum must be in (0, 1]");
    if (!(bn_eps > 0)) throw ConfigError("EncoderConfig: bn_eps must be > 0");
  }
  bool operator==(const EncoderConfig&) const = default;
};

enum class EncoderMode : std::uint8_t { train = 0, eval = 1 };

template <typename Scalar>
struct BlockParams {
  Mat<Scalar> weight;  // out x in
  Vec<Scalar> bias;
  Vec<Scalar> gamma;
  Vec<Scalar> beta;
};

/// Learnable parameters; also used as the shape of their gradients and optimizer moments.
template <typename Scalar>
struct EncoderParams {
  std::vector<BlockParams<Scalar>> blocks;
  Mat<Scalar> proj_weight;  // F x last_hidden
  Vec<Scalar> proj_bias;

  /// Visits every tensor in declaration order as (name, flat mutable view).
  template <typename F>
  void for_each(F&& f) {
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const std::string p = "block" + std::to_string(b) + ".";
      f(p + "weight", flat(blocks[b].weight));
      f(p + "bias", flat(blocks[b].bias));
      f(p + "gamma", flat(blocks[b].gamma));
      f(p + "beta", flat(blocks[b].beta));
    }
    f(std::string("proj.weight"), flat(proj_weight));
    f(std::string("proj.bias"), flat(proj_bias));
  }

  template <typename F>
  void for_each(F&& f) const {
    const_cast<EncoderParams*>(this)->for_each(
        [&](const std::string& name, Eigen::Map<Vec<Scalar>> v) { f(name, Eigen::Map<const Vec<Scalar>>(v.data(), v.size())); });
  }

  Index size() const {
    Index n = 0;
    for_each([&](const std::string&, const auto& v) { n += v.size(); });
    return n;
  }

  EncoderParams zeros_like() const {
    EncoderParams out = *this;
    out.for_each([](const std::string&, Eigen::Map<Vec<Scalar>> v) { v.setZero(); });
    return out;
  }

  template <typename Other>
  EncoderParams<Other> cast() const {
    EncoderParams<Other> out;
    for (const auto& b : blocks)
      out.blocks.push_back({b.weight.template cast<Other>(), b.bias.template cast<Other>(),
                            b.gamma.template cast<Other>(), b.beta.template cast<Other>()});
    out.proj_weight = proj_weight.template cast<Other>();
    out.proj_bias = proj_bias.template cast<Other>();
    return out;
  }

private:
  template <typename Derived>
  static Eigen::Map<Vec<Scalar>> flat(Eigen::PlainObjectBase<Derived>& m) {
    return Eigen::Map<Vec<Scalar>>(m.data(), m.size());
  }
};

template <typename Scalar>
struct BnStats {
  Vec<Scalar> running_mean;
  Vec<Scalar> running_var;
};

template <typename Scalar>
struct EncoderState {
  EncoderConfig config;
  EncoderParams<Scalar> params;
  std::vector<BnStats<Scalar>> bn;
  EncoderMode mode = EncoderMode::train;
  /// Number of train-mode forwards so far; ties a ForwardCache to its forward.
  std::uint64_t train_forwards = 0;

  template <typename Other>
  EncoderState<Other> cast() const {
    EncoderState<Other> out;
    out.config = config;
    out.params = params.template cast<Other>();
    for (const auto& s : bn) out.bn.push_back({s.running_mean.template cast<Other>(), s.running_var.template cast<Other>()});
    out.mode = mode;
    out.train_forwards = train_forwards;
    return out;
  }
};

template <typename Scalar>
struct ForwardCache {
  struct Block {
    Mat<Scalar> input;   // block input
    Mat<Scalar> pre_bn;  // affine output
    Vec<Scalar> mean;    // batch statistics used
    Vec<Scalar> inv_std;
    Mat<Scalar> normalized;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> active;  // post-ReLU mask
  };
  std::vector<Block> blocks;
  Mat<Scalar> proj_input;
  Index n = 0, t = 0;
  std::uint64_t serial = 0;
  bool valid = false;
};

template <typename Scalar>
EncoderState<Scalar> init_params(const EncoderConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.init_seed);
  auto uniform_fill = [&](Index rows, Index cols) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Mat<Scalar> m(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) m(r, c) = static_cast<Scalar>(dist(rng));
    return m;
  };

  EncoderState<Scalar> state;
  state.config = cfg;
  Index in = cfg.input_dim;
  for (Index out : cfg.hidden_dims) {
    state.params.blocks.push_back(
        {uniform_fill(out, in), Vec<Scalar>::Zero(out), Vec<Scalar>::Ones(out), Vec<Scalar>::Zero(out)});
    state.bn.push_back({Vec<Scalar>::Zero(out), Vec<Scalar>::Ones(out)});
    in = out;
  }
  state.params.proj_weight = uniform_fill(cfg.output_dim, in);
  state.params.proj_bias = Vec<Scalar>::Zero(cfg.output_dim);
  state.mode = EncoderMode::train;
  return state;
}

template <typename Scalar>
EncoderState<Scalar>& set_mode(EncoderState<Scalar>& state, EncoderMode mode) {
  state.mode = mode;
  return state;
}

namespace detail {

template <typename Scalar>
void check_input(const EncoderState<Scalar>& state, const SequenceTensor<Scalar>& x) {
  if (x.features() != state.config.input_dim)
    throw ConfigError("encoder forward: input dim " + std::to_string(x.features()) + " does not match configured " +
                      std::to_string(state.config.input_dim));
  if (x.flat_size() < 1) throw ConfigError("encoder forward: empty batch");
}

}  // namespace detail

/// Eval-mode forward using running statistics. Never mutates the state, and each output row
/// is bit-identical regardless of the batch it is computed in.
template <typename Scalar>
SequenceTensor<Scalar> forward_eval(const EncoderState<Scalar>& state, const SequenceTensor<Scalar>& x) {
  detail::check_input(state, x);
  const Scalar eps = static_cast<Scalar>(state.config.bn_eps);
  Mat<Scalar> h = x.rows;
  for (std::size_t b = 0; b < state.params.blocks.size(); ++b) {
    const auto& p = state.params.blocks[b];
    const auto& s = state.bn[b];
    const Vec<Scalar> scale = p.gamma.cwiseQuotient((s.running_var.array() + eps).sqrt().matrix());
    Mat<Scalar> a = h.lazyProduct(p.weight.transpose());
    a.rowwise() += p.bias.transpose();
    a = ((a.rowwise() - s.running_mean.transpose()).array().rowwise() * scale.transpose().array()).matrix();
    a.rowwise() += p.beta.transpose();
    h = a.cwiseMax(Scalar(0));
  }
  Mat<Scalar> z = h.lazyProduct(state.params.proj_weight.transpose());
  z.rowwise() += state.params.proj_bias.transpose();
  return SequenceTensor<Scalar>(x.n, x.t, std::move(z));
}

/// Forward pass. Train mode normalizes with batch statistics over all N*T rows, updates the
/// running statistics and returns a cache for backward; eval mode returns an invalid cache.
template <typename Scalar>
std::pair<SequenceTensor<Scalar>, ForwardCache<Scalar>> forward(EncoderState<Scalar>& state,
                                                               const SequenceTensor<Scalar>& x) {
  if (state.mode == EncoderMode::eval) return {forward_eval(state, x), ForwardCache<Scalar>{}};
  detail::check_input(state, x);

  const Scalar eps = static_cast<Scalar>(state.config.bn_eps);
  const Scalar momentum = static_cast<Scalar>(state.config.bn_momentum);
  const Scalar m = static_cast<Scalar>(x.flat_size());

  ForwardCache<Scalar> cache;
  cache.n = x.n;
  cache.t = x.t;
  Mat<Scalar> h = x.rows;
  for (std::size_t b = 0; b < state.params.blocks.size(); ++b) {
    const auto& p = state.params.blocks[b];
    typename ForwardCache<Scalar>::Block blk;
    blk.input = h;
    blk.pre_bn = h * p.weight.transpose();
    blk.pre_bn.rowwise() += p.bias.transpose();
    blk.mean = blk.pre_bn.colwise().mean().transpose();
    const Mat<Scalar> centered = blk.pre_bn.rowwise() - blk.mean.transpose();
    const Vec<Scalar> var = (centered.array().square().colwise().sum() / m).transpose();
    blk.inv_std = (var.array() + eps).rsqrt().matrix();
    blk.normalized = (centered.array().rowwise() * blk.inv_std.transpose().array()).matrix();
    Mat<Scalar> y = (blk.normalized.array().rowwise() * p.gamma.transpose().array()).matrix();
    y.rowwise() += p.beta.transpose();
    blk.active = y.array() > Scalar(0);
    h = y.cwiseMax(Scalar(0));

    auto& s = state.bn[b];
    s.running_mean = (Scalar(1) - momentum) * s.running_mean + momentum * blk.mean;
    s.running_var = (Scalar(1) - momentum) * s.running_var + momentum * var;
    cache.blocks.push_back(std::move(blk));
  }
  cache.proj_input = h;
  Mat<Scalar> z = h * state.params.proj_weight.transpose();
  z.rowwise() += state.params.proj_bias.transpose();

  cache.serial = ++state.train_forwards;
  cache.valid = true;
  return {SequenceTensor<Scalar>(x.n, x.t, std::move(z)), std::move(cache)};
}

template <typename Scalar>
struct BackwardResult {
  EncoderParams<Scalar> param_grads;
  SequenceTensor<Scalar> grad_x;
};

/// Reverse pass through projection, ReLU, batch norm (with batch-statistic dependence) and
/// affine maps. Consumes the cache; throws if it is stale, missing or already used.
template <typename Scalar>
BackwardResult<Scalar> backward(const EncoderState<Scalar>& state, ForwardCache<Scalar>& cache,
                                const SequenceTensor<Scalar>& grad_z) {
  if (!cache.valid) throw ConfigError("encoder backward: missing or already consumed forward cache");
  if (cache.serial != state.train_forwards)
    throw ConfigError("encoder backward: stale forward cache (another train forward ran since)");
  if (grad_z.n != cache.n || grad_z.t != cache.t || grad_z.features() != state.config.output_dim)
    throw ConfigError("encoder backward: grad_z shape does not match the forward output");
  cache.valid = false;

  const Index m = grad_z.flat_size();
  BackwardResult<Scalar> out;
  out.param_grads.blocks.resize(state.params.blocks.size());
  const Mat<Scalar>& dz = grad_z.rows;
  out.param_grads.proj_weight = dz.transpose() * cache.proj_input;
  out.param_grads.proj_bias = dz.colwise().sum().transpose();
  Mat<Scalar> dh = dz * state.params.proj_weight;

  for (std::size_t bi = state.params.blocks.size(); bi-- > 0;) {
    const auto& p = state.params.blocks[bi];
    const auto& blk = cache.blocks[bi];
    auto& g = out.param_grads.blocks[bi];
    const Mat<Scalar> dy = blk.active.select(dh, Mat<Scalar>::Zero(dh.rows(), dh.cols()));
    g.gamma = (dy.array() * blk.normalized.array()).colwise().sum().transpose();
    g.beta = dy.colwise().sum().transpose();
    const Mat<Scalar> dxhat = (dy.array().rowwise() * p.gamma.transpose().array()).matrix();
    const Vec<Scalar> sum_dxhat = dxhat.colwise().sum().transpose();
    const Vec<Scalar> sum_dxhat_xhat = (dxhat.array() * blk.normalized.array()).colwise().sum().transpose();
    Mat<Scalar> da = static_cast<Scalar>(m) * dxhat;
    da.rowwise() -= sum_dxhat.transpose();
    da -= (blk.normalized.array().rowwise() * sum_dxhat_xhat.transpose().array()).matrix();
    da = (da.array().rowwise() * (blk.inv_std / static_cast<Scalar>(m)).transpose().array()).matrix();
    g.weight = da.transpose() * blk.input;
    g.bias = da.colwise().sum().transpose();
    dh = da * p.weight;
  }
  out.grad_x = SequenceTensor<Scalar>(cache.n, cache.t, std::move(dh));
  return out;
}

}  // namespace catt

#endif  // CATT_ENCODER_HPP
