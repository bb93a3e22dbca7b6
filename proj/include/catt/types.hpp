#ifndef CATT_TYPES_HPP
#define CATT_TYPES_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace catt {

using Index = Eigen::Index;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Mat<double>;
using VectorXd = Vec<double>;

/// Bad configuration or arguments. Maps to CLI exit code 1.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Unreadable, malformed or inconsistent data. Maps to CLI exit code 2.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A non-finite value surfaced during optimization. Maps to CLI exit code 3.
class NumericError : public std::runtime_error {
public:
  NumericError(const std::string& what, std::int64_t iteration, double loss)
      : std::runtime_error(what), iteration_(iteration), loss_(loss) {}
  std::int64_t iteration() const noexcept { return iteration_; }
  double loss() const noexcept { return loss_; }

private:
  std::int64_t iteration_;
  double loss_;
};

/// An N x T x K tensor stored as its flattened (N*T) x K row view.
/// Row j = i*T + t holds sequence i, time step t.
template <typename Scalar>
struct SequenceTensor {
  Index n = 0;
  Index t = 0;
  Mat<Scalar> rows;

  SequenceTensor() = default;
  SequenceTensor(Index n_, Index t_, Mat<Scalar> rows_) : n(n_), t(t_), rows(std::move(rows_)) {
    if (n < 0 || t < 0 || rows.rows() != n * t)
      throw ConfigError("SequenceTensor: row count " + std::to_string(rows.rows()) +
                        " does not equal N*T = " + std::to_string(n * t));
  }

  Index flat_size() const { return n * t; }
  Index features() const { return rows.cols(); }

  template <typename Other>
  SequenceTensor<Other> cast() const {
    return SequenceTensor<Other>(n, t, rows.template cast<Other>());
  }
};

/// splitmix64 finalizer; used to derive named sub-seeds from a root seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, const std::string& name) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return mix_seed(root ^ mix_seed(h));
}

}  // namespace catt

#endif  // CATT_TYPES_HPP
