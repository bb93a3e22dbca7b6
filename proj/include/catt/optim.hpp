#ifndef CATT_OPTIM_HPP
#define CATT_OPTIM_HPP

#include <cmath>
#include <cstdint>
#include <string>

#include "catt/encoder.hpp"

namespace catt {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("AdamW: learning_rate must be > 0");
    if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) throw ConfigError("AdamW: betas must be in (0, 1)");
    if (!(eps > 0)) throw ConfigError("AdamW: eps must be > 0");
    if (!(weight_decay >= 0)) throw ConfigError("AdamW: weight_decay must be >= 0");
  }
};

/// One AdamW update of a flat tensor at step t >= 1 (decoupled decay on the pre-update value).
template <typename Scalar, typename P, typename G, typename M, typename V>
void adamw_update(P&& theta, const G& grad, M&& m, V&& v, std::uint64_t t, const AdamWConfig& cfg) {
  const Scalar b1 = static_cast<Scalar>(cfg.beta1);
  const Scalar b2 = static_cast<Scalar>(cfg.beta2);
  const Scalar lr = static_cast<Scalar>(cfg.learning_rate);
  const Scalar wd = static_cast<Scalar>(cfg.weight_decay);
  const Scalar eps = static_cast<Scalar>(cfg.eps);
  const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(cfg.beta1, static_cast<double>(t)));
  const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(cfg.beta2, static_cast<double>(t)));
  m = b1 * m + (Scalar(1) - b1) * grad;
  v = b2 * v + (Scalar(1) - b2) * grad.cwiseAbs2();
  const auto m_hat = m.array() / c1;
  const auto v_hat = v.array() / c2;
  theta.array() -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * theta.array());
}

template <typename Scalar>
struct OptimizerState {
  EncoderParams<Scalar> m;
  EncoderParams<Scalar> v;
  std::uint64_t step = 0;

  static OptimizerState zeros_like(const EncoderParams<Scalar>& params) {
    return {params.zeros_like(), params.zeros_like(), 0};
  }
};

/// AdamW over every encoder parameter. A non-finite gradient aborts before any update
/// with a NumericError carrying `iteration`.
template <typename Scalar>
void adamw_step(EncoderParams<Scalar>& params, const EncoderParams<Scalar>& grads, OptimizerState<Scalar>& opt,
                const AdamWConfig& cfg, std::int64_t iteration = -1) {
  cfg.validate();
  grads.for_each([&](const std::string& name, const auto& g) {
    if (!g.allFinite())
      throw NumericError("non-finite gradient in " + name + " at iteration " + std::to_string(iteration), iteration,
                         NAN);
  });
  const std::uint64_t t = ++opt.step;
  std::vector<Eigen::Map<const Vec<Scalar>>> g_views;
  grads.for_each([&](const std::string&, const auto& g) { g_views.push_back(g); });
  std::vector<Eigen::Map<Vec<Scalar>>> m_views, v_views;
  opt.m.for_each([&](const std::string&, Eigen::Map<Vec<Scalar>> x) { m_views.push_back(x); });
  opt.v.for_each([&](const std::string&, Eigen::Map<Vec<Scalar>> x) { v_views.push_back(x); });
  std::size_t i = 0;
  params.for_each([&](const std::string& name, Eigen::Map<Vec<Scalar>> p) {
    if (g_views[i].size() != p.size()) throw ConfigError("adamw_step: gradient shape mismatch for " + name);
    adamw_update<Scalar>(p, g_views[i], m_views[i], v_views[i], t, cfg);
    ++i;
  });
}

}  // namespace catt

#endif  // CATT_OPTIM_HPP
