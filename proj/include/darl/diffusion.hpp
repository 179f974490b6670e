/*
 * Conditional DDPM over standardized return windows.
 *
 * Forward corruption uses the closed-form marginal
 *   x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps,
 * the network predicts eps from (x_t, embed(t), c), and sampling runs the
 * ancestral chain x_T ~ N(0, I) -> x_0 with posterior variance tilde_beta_t.
 * Steps are 1-based throughout; index 0 of each schedule array holds the
 * abar_0 = 1 convention.
 */

#ifndef DARL_DIFFUSION_HPP_
#define DARL_DIFFUSION_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "darl/common.hpp"
#include "darl/market_data.hpp"
#include "darl/nn.hpp"

namespace darl::diffusion {

inline constexpr double kBetaStart = 1e-4;
inline constexpr double kBetaEnd = 0.02;
inline constexpr Eigen::Index kTimeEmbeddingDim = 16;
inline constexpr double kMinReturn = -0.5;
inline constexpr double kMaxReturn = 1.0;

class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  explicit NoiseSchedule(int steps, double beta_start = kBetaStart, double beta_end = kBetaEnd)
      : steps_(steps), beta_start_(beta_start), beta_end_(beta_end) {
    if (steps < 1) throw ConfigError("diffusion needs at least one step");
    const auto n = static_cast<std::size_t>(steps) + 1;
    beta_.assign(n, 0.0);
    alpha_.assign(n, 1.0);
    alpha_bar_.assign(n, 1.0);
    tilde_beta_.assign(n, 0.0);
    for (int t = 1; t <= steps; ++t) {
      const double b = steps == 1 ? beta_start
                                  : beta_start + static_cast<double>(t - 1) /
                                                     static_cast<double>(steps - 1) *
                                                     (beta_end - beta_start);
      beta_[t] = b;
      alpha_[t] = 1.0 - b;
      alpha_bar_[t] = alpha_bar_[t - 1] * alpha_[t];
      tilde_beta_[t] = b * (1.0 - alpha_bar_[t - 1]) / (1.0 - alpha_bar_[t]);
    }
  }

  int steps() const { return steps_; }
  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }
  double beta(int t) const { return beta_.at(check(t)); }
  double alpha(int t) const { return alpha_.at(check(t)); }
  double tilde_beta(int t) const { return tilde_beta_.at(check(t)); }
  // Defined for t = 0 as well (== 1).
  double alpha_bar(int t) const {
    if (t < 0 || t > steps_) throw DataError("diffusion step " + std::to_string(t) + " out of range");
    return alpha_bar_[static_cast<std::size_t>(t)];
  }

 private:
  std::size_t check(int t) const {
    if (t < 1 || t > steps_) {
      throw DataError("diffusion step " + std::to_string(t) + " outside 1.." + std::to_string(steps_));
    }
    return static_cast<std::size_t>(t);
  }

  int steps_ = 0;
  double beta_start_ = kBetaStart;
  double beta_end_ = kBetaEnd;
  std::vector<double> beta_, alpha_, alpha_bar_, tilde_beta_;
};

inline NoiseSchedule make_schedule(int steps = 100) { return NoiseSchedule(steps); }

inline Matrix forward_diffuse(const Eigen::Ref<const Matrix>& x0, int t, const Eigen::Ref<const Matrix>& eps,
                              const NoiseSchedule& schedule) {
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) {
    throw DataError("noise shape does not match the clean window");
  }
  if (t < 1 || t > schedule.steps()) throw DataError("diffusion step out of range");
  const double ab = schedule.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

// One step of the forward Markov chain q(x_t | x_{t-1}).
inline Matrix forward_step(const Eigen::Ref<const Matrix>& x_prev, int t, const Eigen::Ref<const Matrix>& noise,
                           const NoiseSchedule& schedule) {
  return std::sqrt(schedule.alpha(t)) * x_prev + std::sqrt(schedule.beta(t)) * noise;
}

// Sinusoidal embedding: [sin(t w_0..w_7), cos(t w_0..w_7)], w_i = 10000^(-i/8).
inline Vector time_embedding(int t) {
  constexpr Eigen::Index half = kTimeEmbeddingDim / 2;
  Vector e(kTimeEmbeddingDim);
  for (Eigen::Index i = 0; i < half; ++i) {
    const double w = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    e(i) = std::sin(static_cast<double>(t) * w);
    e(half + i) = std::cos(static_cast<double>(t) * w);
  }
  return e;
}

struct TrainingMetadata {
  std::uint64_t seed = 0;
  int epochs = 0;
  std::string dataset_hash;
  std::vector<double> epoch_loss;
};

struct DdpmModel {
  nn::Mlp net;
  NoiseSchedule schedule;
  Eigen::Index length = 0;  // L
  Eigen::Index assets = 0;  // N
  StandardizationStats stats;
  TrainingMetadata meta;

  Eigen::Index window_size() const { return length * assets; }
};

inline DdpmModel make_model(Eigen::Index length, Eigen::Index assets, int steps,
                            const std::vector<Eigen::Index>& hidden, std::uint64_t seed) {
  if (length <= 0 || assets <= 0) throw ConfigError("window shape must be positive");
  std::vector<Eigen::Index> sizes{length * assets + kTimeEmbeddingDim + 1};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(length * assets);
  DdpmModel m;
  m.net = nn::Mlp(sizes, nn::Activation::kTanh, seed);
  // Zero output layer: an untrained model predicts eps = 0.
  m.net.weight(m.net.layers() - 1).setZero();
  m.schedule = make_schedule(steps);
  m.length = length;
  m.assets = assets;
  m.meta.seed = seed;
  return m;
}

namespace detail {

// Row-major flattening of an L x N window into a column.
inline Vector flatten(const Eigen::Ref<const Matrix>& w) {
  Vector v(w.size());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < w.rows(); ++r)
    for (Eigen::Index c = 0; c < w.cols(); ++c) v(k++) = w(r, c);
  return v;
}

inline Matrix unflatten(const Eigen::Ref<const Vector>& v, Eigen::Index rows, Eigen::Index cols) {
  Matrix w(rows, cols);
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = v(k++);
  return w;
}

inline Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = n01(rng);
  return m;
}

}  // namespace detail

// Network input columns for flattened noisy windows (one column each).
inline Matrix network_input(const DdpmModel& model, const Eigen::Ref<const Matrix>& x_flat,
                            const std::vector<int>& steps, const std::vector<double>& intensity) {
  const Eigen::Index d = model.window_size();
  Matrix in(d + kTimeEmbeddingDim + 1, x_flat.cols());
  for (Eigen::Index b = 0; b < x_flat.cols(); ++b) {
    in.col(b).head(d) = x_flat.col(b);
    in.col(b).segment(d, kTimeEmbeddingDim) = time_embedding(steps[static_cast<std::size_t>(b)]);
    in(d + kTimeEmbeddingDim, b) = intensity[static_cast<std::size_t>(b)];
  }
  return in;
}

inline Matrix predict_noise(const DdpmModel& model, const Eigen::Ref<const Matrix>& x_flat,
                            const std::vector<int>& steps, const std::vector<double>& intensity) {
  return nn::predict_batch(model.net, network_input(model, x_flat, steps, intensity));
}

// The random part of one training evaluation: timesteps, noise, noisy inputs.
struct NoisingDraw {
  std::vector<int> steps;
  std::vector<double> intensity;
  Matrix eps;  // window_size x batch
  Matrix x_t;  // window_size x batch
};

inline NoisingDraw draw_noising(const DdpmModel& model, const std::vector<const WindowSample*>& batch,
                                std::mt19937_64& rng) {
  if (batch.empty()) throw DataError("training batch is empty");
  const Eigen::Index d = model.window_size();
  const auto b = static_cast<Eigen::Index>(batch.size());
  std::uniform_int_distribution<int> pick_t(1, model.schedule.steps());
  std::normal_distribution<double> n01;
  NoisingDraw draw;
  draw.eps.resize(d, b);
  draw.x_t.resize(d, b);
  for (Eigen::Index k = 0; k < b; ++k) {
    const WindowSample& s = *batch[static_cast<std::size_t>(k)];
    if (s.window.rows() != model.length || s.window.cols() != model.assets) {
      throw DataError("window shape " + std::to_string(s.window.rows()) + "x" +
                      std::to_string(s.window.cols()) + " does not match model " +
                      std::to_string(model.length) + "x" + std::to_string(model.assets));
    }
    const int t = pick_t(rng);
    for (Eigen::Index i = 0; i < d; ++i) draw.eps(i, k) = n01(rng);
    const double ab = model.schedule.alpha_bar(t);
    draw.x_t.col(k) = std::sqrt(ab) * detail::flatten(s.window) + std::sqrt(1.0 - ab) * draw.eps.col(k);
    draw.steps.push_back(t);
    draw.intensity.push_back(s.intensity);
  }
  return draw;
}

struct LossAndGrad {
  double loss = 0.0;
  Matrix d_prediction;  // dL/dprediction
};

// Mean squared error over all elements of the batch.
inline LossAndGrad noise_mse(const Eigen::Ref<const Matrix>& prediction, const Eigen::Ref<const Matrix>& eps) {
  const Matrix diff = prediction - eps;
  const double count = static_cast<double>(diff.size());
  return {diff.squaredNorm() / count, (2.0 / count) * diff};
}

struct TrainingLoss {
  double loss = 0.0;
  Vector gradients;
};

inline TrainingLoss training_loss(const DdpmModel& model, const std::vector<const WindowSample*>& batch,
                                  std::mt19937_64& rng) {
  const NoisingDraw draw = draw_noising(model, batch, rng);
  const nn::Tape tape = nn::forward(model.net, network_input(model, draw.x_t, draw.steps, draw.intensity));
  const LossAndGrad lg = noise_mse(tape.activations.back(), draw.eps);
  return {lg.loss, nn::backward(model.net, tape, lg.d_prediction).params};
}

struct TrainConfig {
  int epochs = 200;
  Eigen::Index batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int steps = 100;
  std::vector<Eigen::Index> hidden{128, 128};
};

inline std::string dataset_hash(const std::vector<WindowSample>& data) {
  Fnv1a h;
  for (const auto& s : data) h.update(s.window).update(s.intensity);
  return h.hex();
}

// Adam over shuffled minibatches; epoch mean losses land in meta.epoch_loss.
inline DdpmModel train(const std::vector<WindowSample>& data, const TrainConfig& cfg,
                       const StandardizationStats& stats = {}) {
  if (data.empty()) throw DataError("diffusion training set is empty");
  if (cfg.batch_size <= 0) throw ConfigError("batch size must be positive");
  const Eigen::Index length = data.front().window.rows();
  const Eigen::Index assets = data.front().window.cols();
  for (const auto& s : data) {
    if (s.window.rows() != length || s.window.cols() != assets) {
      throw DataError("diffusion training windows have inconsistent shapes");
    }
  }
  DdpmModel model = make_model(length, assets, cfg.steps, cfg.hidden, cfg.seed);
  model.stats = stats;
  model.meta.epochs = cfg.epochs;
  model.meta.dataset_hash = dataset_hash(data);

  std::mt19937_64 rng(derive_seed(cfg.seed, 1));
  nn::AdamState adam(model.net.parameter_count(), {.lr = cfg.lr});
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const WindowSample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data[order[i]]);
      const TrainingLoss tl = training_loss(model, batch, rng);
      if (!std::isfinite(tl.loss) || !nn::adam_step(model.net, tl.gradients, adam)) {
        throw NumericalError("diffusion training diverged at epoch " + std::to_string(epoch));
      }
      total += tl.loss;
      ++batches;
    }
    model.meta.epoch_loss.push_back(total / static_cast<double>(batches));
  }
  return model;
}

// x_{t-1} = mu_theta(x_t, t, c) + sqrt(tilde_beta_t) z, with z ignored at t = 1.
// x_t and z are flattened windows, one column per sample.
inline Matrix reverse_step(const DdpmModel& model, const Eigen::Ref<const Matrix>& x_t, int t,
                           const std::vector<double>& intensity, const Eigen::Ref<const Matrix>& z) {
  const auto& s = model.schedule;
  if (t < 1 || t > s.steps()) throw DataError("reverse step " + std::to_string(t) + " out of range");
  if (z.rows() != x_t.rows() || z.cols() != x_t.cols()) throw DataError("noise shape mismatch in reverse step");
  const Matrix eps = predict_noise(model, x_t, std::vector<int>(static_cast<std::size_t>(x_t.cols()), t), intensity);
  Matrix mean = (x_t - (s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t))) * eps) / std::sqrt(s.alpha(t));
  if (t > 1) mean += std::sqrt(s.tilde_beta(t)) * z;
  return mean;
}

// Single-window convenience overload.
inline Matrix reverse_step(const DdpmModel& model, const Eigen::Ref<const Matrix>& x_t_window, int t, double c,
                           const Eigen::Ref<const Matrix>& z_window) {
  const Matrix next = reverse_step(model, detail::flatten(x_t_window), t, std::vector<double>{c}, detail::flatten(z_window));
  return detail::unflatten(next.col(0), x_t_window.rows(), x_t_window.cols());
}

// Ancestral sampling. Sample k draws all of its noise from its own stream
// seeded with derive_seed(seed, k), so results do not depend on batch size.
inline std::vector<Matrix> sample(const DdpmModel& model, Eigen::Index count, double intensity,
                                  std::uint64_t seed) {
  if (!(intensity >= 0.0 && intensity <= 1.0)) throw ConfigError("crash intensity must lie in [0, 1]");
  if (count < 0) throw ConfigError("sample count must be non-negative");
  const Eigen::Index d = model.window_size();
  std::vector<std::mt19937_64> streams;
  for (Eigen::Index k = 0; k < count; ++k) streams.emplace_back(derive_seed(seed, static_cast<std::uint64_t>(k)));
  const std::vector<double> c(static_cast<std::size_t>(count), intensity);
  Matrix x(d, count);
  std::normal_distribution<double> n01;
  for (Eigen::Index k = 0; k < count; ++k)
    for (Eigen::Index i = 0; i < d; ++i) x(i, k) = n01(streams[static_cast<std::size_t>(k)]);
  Matrix z(d, count);
  for (int t = model.schedule.steps(); t >= 1; --t) {
    if (t > 1) {
      for (Eigen::Index k = 0; k < count; ++k)
        for (Eigen::Index i = 0; i < d; ++i) z(i, k) = n01(streams[static_cast<std::size_t>(k)]);
    } else {
      z.setZero();
    }
    x = reverse_step(model, x, t, c, z);
    if (!x.allFinite()) {
      throw NumericalError("non-finite values in reverse diffusion at step " + std::to_string(t));
    }
  }
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Eigen::Index k = 0; k < count; ++k) out.push_back(detail::unflatten(x.col(k), model.length, model.assets));
  return out;
}

// Destandardize, clip returns to [-0.5, 1.0] and compound from base prices.
inline Matrix synthetic_to_prices(const Eigen::Ref<const Matrix>& window, const StandardizationStats& stats,
                                  const Eigen::Ref<const Vector>& base) {
  if ((base.array() <= 0.0).any()) throw DataError("base prices must be positive");
  if (base.size() != window.cols()) throw DataError("base price count does not match window assets");
  const Matrix r = destandardize(window, stats).cwiseMax(kMinReturn).cwiseMin(kMaxReturn);
  Matrix prices(r.rows(), r.cols());
  Vector p = base;
  for (Eigen::Index t = 0; t < r.rows(); ++t) {
    p = p.cwiseProduct((1.0 + r.row(t).transpose().array()).matrix());
    prices.row(t) = p.transpose();
  }
  return prices;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const DdpmModel& m) {
  return {{"format_version", 1},
          {"net", nn::to_json(m.net)},
          {"schedule", {{"steps", m.schedule.steps()},
                        {"beta_start", m.schedule.beta_start()},
                        {"beta_end", m.schedule.beta_end()}}},
          {"window", {{"length", m.length}, {"assets", m.assets}}},
          {"stats", stats_to_json(m.stats)},
          {"metadata", {{"seed", m.meta.seed},
                        {"epochs", m.meta.epochs},
                        {"dataset_hash", m.meta.dataset_hash},
                        {"epoch_loss", m.meta.epoch_loss}}}};
}

inline DdpmModel ddpm_from_json(const nlohmann::json& j) {
  DdpmModel m;
  m.net = nn::mlp_from_json(j.at("net"));
  const auto& s = j.at("schedule");
  m.schedule = NoiseSchedule(s.at("steps").get<int>(), s.at("beta_start").get<double>(),
                             s.at("beta_end").get<double>());
  m.length = j.at("window").at("length").get<Eigen::Index>();
  m.assets = j.at("window").at("assets").get<Eigen::Index>();
  if (j.contains("stats") && !j.at("stats").at("mean").empty()) m.stats = stats_from_json(j.at("stats"));
  const auto& md = j.at("metadata");
  m.meta.seed = md.at("seed").get<std::uint64_t>();
  m.meta.epochs = md.at("epochs").get<int>();
  m.meta.dataset_hash = md.at("dataset_hash").get<std::string>();
  m.meta.epoch_loss = md.at("epoch_loss").get<std::vector<double>>();
  if (m.net.input_size() != m.window_size() + kTimeEmbeddingDim + 1 || m.net.output_size() != m.window_size()) {
    throw DataError("diffusion checkpoint network does not match its window shape");
  }
  return m;
}

// One row per (sample id, step-in-window, asset, value).
inline std::string samples_to_csv(const std::vector<Matrix>& samples, double intensity) {
  std::ostringstream os;
  os << "sample_id,step,asset,value,intensity\n";
  for (std::size_t k = 0; k < samples.size(); ++k)
    for (Eigen::Index t = 0; t < samples[k].rows(); ++t)
      for (Eigen::Index a = 0; a < samples[k].cols(); ++a)
        os << k << ',' << t << ',' << a << ',' << format_double(samples[k](t, a)) << ','
           << format_double(intensity) << '\n';
  return os.str();
}

}  // namespace darl::diffusion

#endif  // DARL_DIFFUSION_HPP_
