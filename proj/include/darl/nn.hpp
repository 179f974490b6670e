// Fixed-shape multilayer perceptron with hand-written reverse mode and Adam.
//
// Parameters live in one flat vector (layer by layer: W column-major, then b)
// so that optimizers, checkpoints and gradient checks all see the same layout.

#ifndef DARL_NN_HPP_
#define DARL_NN_HPP_

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "darl/common.hpp"

namespace darl::nn {

enum class Activation { kTanh, kRelu, kIdentity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kIdentity: return "identity";
  }
  return "tanh";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  if (s == "identity" || s == "linear") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + s + "'");
}

class Mlp {
 public:
  Mlp() = default;

  // Glorot-uniform weights, zero biases.
  Mlp(std::vector<Eigen::Index> sizes, Activation activation, std::uint64_t seed)
      : sizes_(std::move(sizes)), activation_(activation), seed_(seed) {
    if (sizes_.size() < 2) throw ConfigError("an MLP needs at least input and output sizes");
    for (auto s : sizes_)
      if (s <= 0) throw ConfigError("MLP layer sizes must be positive");
    Eigen::Index total = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      offsets_.push_back(total);
      total += sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
    }
    params_ = Vector::Zero(total);
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const double a = std::sqrt(6.0 / static_cast<double>(sizes_[l] + sizes_[l + 1]));
      std::uniform_real_distribution<double> u(-a, a);
      auto w = weight(l);
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = u(rng);
    }
  }

  const std::vector<Eigen::Index>& sizes() const { return sizes_; }
  Activation activation() const { return activation_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t layers() const { return sizes_.size() - 1; }
  Eigen::Index input_size() const { return sizes_.front(); }
  Eigen::Index output_size() const { return sizes_.back(); }
  Eigen::Index parameter_count() const { return params_.size(); }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  Eigen::Map<Matrix> weight(std::size_t l) {
    return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<const Matrix> weight(std::size_t l) const {
    return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<Vector> bias(std::size_t l) {
    return {params_.data() + offsets_[l] + sizes_[l] * sizes_[l + 1], sizes_[l + 1]};
  }
  Eigen::Map<const Vector> bias(std::size_t l) const {
    return {params_.data() + offsets_[l] + sizes_[l] * sizes_[l + 1], sizes_[l + 1]};
  }
  Eigen::Index offset(std::size_t l) const { return offsets_[l]; }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    return a.sizes_ == b.sizes_ && a.activation_ == b.activation_ && a.seed_ == b.seed_ &&
           a.params_.size() == b.params_.size() && a.params_ == b.params_;
  }

 private:
  std::vector<Eigen::Index> sizes_;
  Activation activation_ = Activation::kTanh;
  std::uint64_t seed_ = 0;
  std::vector<Eigen::Index> offsets_;
  Vector params_;
};

// Cached layer outputs from a forward pass over a batch (one column per sample).
struct Tape {
  std::vector<Matrix> activations;  // activations[0] = input, back() = output
  const Mlp* net = nullptr;
};

namespace detail {

inline void activate(Activation a, Matrix& z) {
  switch (a) {
    case Activation::kTanh: z = z.array().tanh().matrix(); break;
    case Activation::kRelu: z = z.cwiseMax(0.0); break;
    case Activation::kIdentity: break;
  }
}

// d activation / d preactivation, expressed through the activation output.
inline Matrix activation_slope(Activation a, const Matrix& out) {
  switch (a) {
    case Activation::kTanh: return (1.0 - out.array().square()).matrix();
    case Activation::kRelu: return (out.array() > 0.0).cast<double>().matrix();
    case Activation::kIdentity: return Matrix::Ones(out.rows(), out.cols());
  }
  return Matrix::Ones(out.rows(), out.cols());
}

}  // namespace detail

// Hidden layers use the net's activation; the output layer is linear.
inline Tape forward(const Mlp& net, const Eigen::Ref<const Matrix>& input) {
  if (input.rows() != net.input_size()) {
    throw DataError("MLP input has " + std::to_string(input.rows()) + " rows, expected " +
                    std::to_string(net.input_size()));
  }
  Tape tape;
  tape.net = &net;
  tape.activations.reserve(net.layers() + 1);
  tape.activations.emplace_back(input);
  for (std::size_t l = 0; l < net.layers(); ++l) {
    Matrix z = net.weight(l) * tape.activations.back();
    z.colwise() += net.bias(l);
    if (l + 1 < net.layers()) detail::activate(net.activation(), z);
    tape.activations.push_back(std::move(z));
  }
  return tape;
}

inline Vector predict(const Mlp& net, const Eigen::Ref<const Vector>& input) {
  return forward(net, input).activations.back().col(0);
}

inline Matrix predict_batch(const Mlp& net, const Eigen::Ref<const Matrix>& input) {
  return std::move(forward(net, input).activations.back());
}

struct Gradients {
  Vector params;  // same layout as Mlp::params()
  Matrix input;   // d/d input, one column per sample
};

// Gradient of sum(output .* output_gradient) over the batch.
inline Gradients backward(const Mlp& net, const Tape& tape, const Eigen::Ref<const Matrix>& output_gradient) {
  if (tape.net != &net || tape.activations.size() != net.layers() + 1) {
    throw DataError("tape does not come from this network");
  }
  const Matrix& out = tape.activations.back();
  if (output_gradient.rows() != out.rows() || output_gradient.cols() != out.cols()) {
    throw DataError("output gradient shape does not match the forward pass");
  }
  Gradients g;
  g.params = Vector::Zero(net.parameter_count());
  Matrix delta = output_gradient;
  for (std::size_t l = net.layers(); l-- > 0;) {
    const Matrix& a_in = tape.activations[l];
    Eigen::Map<Matrix> gw(g.params.data() + net.offset(l), net.sizes()[l + 1], net.sizes()[l]);
    Eigen::Map<Vector> gb(g.params.data() + net.offset(l) + net.sizes()[l] * net.sizes()[l + 1],
                          net.sizes()[l + 1]);
    gw.noalias() = delta * a_in.transpose();
    gb = delta.rowwise().sum();
    Matrix upstream = net.weight(l).transpose() * delta;
    if (l > 0) {
      delta = upstream.cwiseProduct(detail::activation_slope(net.activation(), a_in));
    } else {
      g.input = std::move(upstream);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  Vector m;
  Vector v;
  std::int64_t step = 0;

  AdamState() = default;
  AdamState(Eigen::Index size, AdamConfig cfg)
      : config(cfg), m(Vector::Zero(size)), v(Vector::Zero(size)) {}
};

// Bias-corrected Adam update in place. Returns false, leaving everything
// untouched, when the gradient contains NaN or Inf.
[[nodiscard]] inline bool adam_update(Eigen::Ref<Vector> params, const Eigen::Ref<const Vector>& grad,
                                      AdamState& state) {
  if (grad.size() != params.size() || state.m.size() != params.size()) {
    throw DataError("Adam state, gradient and parameter sizes differ");
  }
  if (!grad.allFinite()) return false;
  const auto& c = state.config;
  ++state.step;
  state.m = c.beta1 * state.m + (1.0 - c.beta1) * grad;
  state.v = c.beta2 * state.v + (1.0 - c.beta2) * grad.cwiseAbs2();
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  params.array() -= c.lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + c.eps);
  return true;
}

[[nodiscard]] inline bool adam_step(Mlp& net, const Vector& grad, AdamState& state) {
  return adam_update(net.params(), grad, state);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json to_json(const Mlp& net) {
  return {{"format_version", kCheckpointVersion},
          {"sizes", net.sizes()},
          {"activation", to_string(net.activation())},
          {"seed", net.seed()},
          {"params", std::vector<double>(net.params().data(),
                                         net.params().data() + net.params().size())}};
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  if (j.at("format_version").get<int>() != kCheckpointVersion) {
    throw DataError("unsupported MLP checkpoint version");
  }
  Mlp net(j.at("sizes").get<std::vector<Eigen::Index>>(),
          activation_from_string(j.at("activation").get<std::string>()),
          j.at("seed").get<std::uint64_t>());
  const auto p = j.at("params").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(p.size()) != net.parameter_count()) {
    throw DataError("MLP checkpoint parameter count does not match its sizes");
  }
  net.params() = Eigen::Map<const Vector>(p.data(), static_cast<Eigen::Index>(p.size()));
  if (!net.params().allFinite()) throw NumericalError("MLP checkpoint holds non-finite parameters");
  return net;
}

}  // namespace darl::nn

#endif  // DARL_NN_HPP_
