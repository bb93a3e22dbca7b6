#ifndef CATT_CHECKPOINT_HPP
#define CATT_CHECKPOINT_HPP

// Binary layout (little-endian):
//   "CATTCKPT" | u16 version | u8 scalar bytes (4 or 8)
//   config: u64 input_dim, u64 n_hidden, u64 hidden[n_hidden], u64 output_dim,
//           f64 bn_momentum, f64 bn_eps, u64 init_seed
//   u8 mode
//   per block: weight (row-major), bias, gamma, beta, running_mean, running_var
//   proj.weight (row-major), proj.bias
//   u8 has_optimizer [u64 step, first moments, second moments in parameter order]

#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "catt/encoder.hpp"
#include "catt/io.hpp"
#include "catt/optim.hpp"

namespace catt {

inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename Scalar>
struct Checkpoint {
  EncoderState<Scalar> state;
  std::optional<OptimizerState<Scalar>> optimizer;
};

namespace detail {

template <typename Scalar, typename Derived>
void write_tensor(std::ostream& os, const Eigen::MatrixBase<Derived>& m) {
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) io::write_le<Scalar>(os, m(r, c));
}

template <typename Scalar, typename Derived>
void read_tensor(std::istream& is, Eigen::PlainObjectBase<Derived>& m, Index rows, Index cols, const std::string& name) {
  m.resize(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = io::read_le<Scalar>(is, name.c_str());
}

template <typename Scalar>
void write_params(std::ostream& os, const EncoderParams<Scalar>& p, const std::vector<BnStats<Scalar>>* bn) {
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    write_tensor<Scalar>(os, p.blocks[b].weight);
    write_tensor<Scalar>(os, p.blocks[b].bias);
    write_tensor<Scalar>(os, p.blocks[b].gamma);
    write_tensor<Scalar>(os, p.blocks[b].beta);
    if (bn) {
      write_tensor<Scalar>(os, (*bn)[b].running_mean);
      write_tensor<Scalar>(os, (*bn)[b].running_var);
    }
  }
  write_tensor<Scalar>(os, p.proj_weight);
  write_tensor<Scalar>(os, p.proj_bias);
}

template <typename Scalar>
void read_params(std::istream& is, const EncoderConfig& cfg, EncoderParams<Scalar>& p,
                 std::vector<BnStats<Scalar>>* bn) {
  p.blocks.resize(cfg.hidden_dims.size());
  if (bn) bn->resize(cfg.hidden_dims.size());
  Index in = cfg.input_dim;
  for (std::size_t b = 0; b < cfg.hidden_dims.size(); ++b) {
    const Index out = cfg.hidden_dims[b];
    const std::string pre = "block" + std::to_string(b) + ".";
    read_tensor<Scalar>(is, p.blocks[b].weight, out, in, pre + "weight");
    read_tensor<Scalar>(is, p.blocks[b].bias, out, 1, pre + "bias");
    read_tensor<Scalar>(is, p.blocks[b].gamma, out, 1, pre + "gamma");
    read_tensor<Scalar>(is, p.blocks[b].beta, out, 1, pre + "beta");
    if (bn) {
      read_tensor<Scalar>(is, (*bn)[b].running_mean, out, 1, pre + "running_mean");
      read_tensor<Scalar>(is, (*bn)[b].running_var, out, 1, pre + "running_var");
    }
    in = out;
  }
  read_tensor<Scalar>(is, p.proj_weight, cfg.output_dim, in, "proj.weight");
  read_tensor<Scalar>(is, p.proj_bias, cfg.output_dim, 1, "proj.bias");
}

}  // namespace detail

template <typename Scalar>
std::string encode_checkpoint(const EncoderState<Scalar>& state, const OptimizerState<Scalar>* opt) {
  static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>);
  std::ostringstream os(std::ios::binary);
  os.write("CATTCKPT", 8);
  io::write_le<std::uint16_t>(os, kCheckpointVersion);
  io::write_le<std::uint8_t>(os, sizeof(Scalar));
  const auto& cfg = state.config;
  io::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(cfg.input_dim));
  io::write_le<std::uint64_t>(os, cfg.hidden_dims.size());
  for (Index h : cfg.hidden_dims) io::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(h));
  io::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(cfg.output_dim));
  io::write_le<double>(os, cfg.bn_momentum);
  io::write_le<double>(os, cfg.bn_eps);
  io::write_le<std::uint64_t>(os, cfg.init_seed);
  io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(state.mode));
  detail::write_params(os, state.params, &state.bn);
  io::write_le<std::uint8_t>(os, opt ? 1 : 0);
  if (opt) {
    io::write_le<std::uint64_t>(os, opt->step);
    detail::write_params<Scalar>(os, opt->m, nullptr);
    detail::write_params<Scalar>(os, opt->v, nullptr);
  }
  return os.str();
}

/// Decodes a checkpoint. With `expected`, any configuration difference is reported by field name.
template <typename Scalar>
Checkpoint<Scalar> decode_checkpoint(const std::string& bytes, const EncoderConfig* expected = nullptr) {
  std::istringstream is(bytes, std::ios::binary);
  char magic[8];
  if (!is.read(magic, 8) || std::string(magic, 8) != "CATTCKPT") throw DataError("corrupt checkpoint: bad magic");
  const auto version = io::read_le<std::uint16_t>(is, "version");
  if (version != kCheckpointVersion)
    throw DataError("checkpoint version mismatch: file has " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  const auto width = io::read_le<std::uint8_t>(is, "scalar width");
  if (width != sizeof(Scalar))
    throw DataError("checkpoint scalar width " + std::to_string(width) + " does not match reader (" +
                    std::to_string(sizeof(Scalar)) + ")");

  EncoderConfig cfg;
  cfg.input_dim = static_cast<Index>(io::read_le<std::uint64_t>(is, "input_dim"));
  const auto n_hidden = io::read_le<std::uint64_t>(is, "n_hidden");
  if (n_hidden > 1024) throw DataError("corrupt checkpoint: implausible hidden layer count");
  cfg.hidden_dims.resize(n_hidden);
  for (auto& h : cfg.hidden_dims) h = static_cast<Index>(io::read_le<std::uint64_t>(is, "hidden_dims"));
  cfg.output_dim = static_cast<Index>(io::read_le<std::uint64_t>(is, "output_dim"));
  cfg.bn_momentum = io::read_le<double>(is, "bn_momentum");
  cfg.bn_eps = io::read_le<double>(is, "bn_eps");
  cfg.init_seed = io::read_le<std::uint64_t>(is, "init_seed");
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("corrupt checkpoint: ") + e.what());
  }

  if (expected) {
    auto mismatch = [](const std::string& field, const std::string& file, const std::string& want) {
      throw DataError("checkpoint shape mismatch in field '" + field + "': file has " + file + ", expected " + want);
    };
    auto dims = [](const std::vector<Index>& v) {
      std::string s = "[";
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
      return s + "]";
    };
    if (cfg.input_dim != expected->input_dim)
      mismatch("input_dim", std::to_string(cfg.input_dim), std::to_string(expected->input_dim));
    if (cfg.hidden_dims != expected->hidden_dims)
      mismatch("hidden_dims", dims(cfg.hidden_dims), dims(expected->hidden_dims));
    if (cfg.output_dim != expected->output_dim)
      mismatch("output_dim", std::to_string(cfg.output_dim), std::to_string(expected->output_dim));
  }

  Checkpoint<Scalar> ck;
  ck.state.config = cfg;
  const auto mode = io::read_le<std::uint8_t>(is, "mode");
  if (mode > 1) throw DataError("corrupt checkpoint: bad mode byte");
  ck.state.mode = static_cast<EncoderMode>(mode);
  detail::read_params<Scalar>(is, cfg, ck.state.params, &ck.state.bn);
  const auto has_opt = io::read_le<std::uint8_t>(is, "optimizer flag");
  if (has_opt > 1) throw DataError("corrupt checkpoint: bad optimizer flag");
  if (has_opt) {
    OptimizerState<Scalar> opt;
    opt.step = io::read_le<std::uint64_t>(is, "optimizer step");
    detail::read_params<Scalar>(is, cfg, opt.m, nullptr);
    detail::read_params<Scalar>(is, cfg, opt.v, nullptr);
    ck.optimizer = std::move(opt);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("corrupt checkpoint: trailing bytes");
  return ck;
}

template <typename Scalar>
void save_checkpoint(const std::string& path, const EncoderState<Scalar>& state,
                     const OptimizerState<Scalar>* opt = nullptr) {
  io::write_file(path, encode_checkpoint(state, opt));
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path, const EncoderConfig* expected = nullptr) {
  return decode_checkpoint<Scalar>(io::read_file(path), expected);
}

/// Human-readable sidecar: configuration, tensor shapes and SHA-256 of each tensor's bytes.
template <typename Scalar>
nlohmann::json checkpoint_sidecar(const EncoderState<Scalar>& state, const std::string& file_sha256) {
  nlohmann::json j;
  j["format"] = "CATTCKPT";
  j["version"] = kCheckpointVersion;
  j["scalar"] = sizeof(Scalar) == 4 ? "f32" : "f64";
  j["config"] = {{"input_dim", state.config.input_dim},
                 {"hidden_dims", state.config.hidden_dims},
                 {"output_dim", state.config.output_dim},
                 {"bn_momentum", state.config.bn_momentum},
                 {"bn_eps", state.config.bn_eps},
                 {"init_seed", state.config.init_seed}};
  j["mode"] = state.mode == EncoderMode::train ? "train" : "eval";
  auto tensor_entry = [](const std::string& name, Index rows, Index cols, const auto& m) {
    std::ostringstream os(std::ios::binary);
    detail::write_tensor<Scalar>(os, m);
    return nlohmann::json{{"name", name}, {"shape", {rows, cols}}, {"sha256", io::sha256_hex(os.str())}};
  };
  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t b = 0; b < state.params.blocks.size(); ++b) {
    const auto& p = state.params.blocks[b];
    const std::string pre = "block" + std::to_string(b) + ".";
    tensors.push_back(tensor_entry(pre + "weight", p.weight.rows(), p.weight.cols(), p.weight));
    tensors.push_back(tensor_entry(pre + "bias", p.bias.size(), 1, p.bias));
    tensors.push_back(tensor_entry(pre + "gamma", p.gamma.size(), 1, p.gamma));
    tensors.push_back(tensor_entry(pre + "beta", p.beta.size(), 1, p.beta));
    tensors.push_back(tensor_entry(pre + "running_mean", p.bias.size(), 1, state.bn[b].running_mean));
    tensors.push_back(tensor_entry(pre + "running_var", p.bias.size(), 1, state.bn[b].running_var));
  }
  const auto& pw = state.params.proj_weight;
  tensors.push_back(tensor_entry("proj.weight", pw.rows(), pw.cols(), pw));
  tensors.push_back(tensor_entry("proj.bias", state.params.proj_bias.size(), 1, state.params.proj_bias));
  j["tensors"] = std::move(tensors);
  j["file_sha256"] = file_sha256;
  return j;
}

}  // namespace catt

#endif  // CATT_CHECKPOINT_HPP
