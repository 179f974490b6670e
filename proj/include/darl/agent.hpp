/*
 * PPO with a clipped surrogate, diagonal-Gaussian policy over raw
 * (pre-softmax) action vectors, a separate value network, and GAE.
 */

#ifndef DARL_AGENT_HPP_
#define DARL_AGENT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "darl/common.hpp"
#include "darl/env.hpp"
#include "darl/nn.hpp"
#include "darl/simplex.hpp"

namespace darl::agent {

inline constexpr double kMinLogStd = -5.0;
inline constexpr double kMaxLogStd = 1.0;

struct PpoConfig {
  double clip = 0.2;
  double gamma = 0.99;
  double lambda = 0.95;
  int epochs = 10;
  Eigen::Index minibatch = 64;
  double lr = 3e-4;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  Eigen::Index horizon = 512;
  double target_kl = 0.02;
  std::vector<Eigen::Index> hidden{64, 64};
  double initial_log_std = 0.0;

  void validate() const {
    if (!(clip > 0.0 && clip < 1.0)) throw ConfigError("PPO clip must lie in (0, 1)");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("discount must lie in [0, 1]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("GAE lambda must lie in [0, 1]");
    if (epochs < 1 || minibatch < 1 || horizon < 1) throw ConfigError("PPO epochs, minibatch and horizon must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  }
};

inline void to_json(nlohmann::json& j, const PpoConfig& c) {
  j = {{"clip", c.clip}, {"gamma", c.gamma}, {"lambda", c.lambda}, {"epochs", c.epochs},
       {"minibatch", c.minibatch}, {"lr", c.lr}, {"entropy_coef", c.entropy_coef},
       {"value_coef", c.value_coef}, {"horizon", c.horizon}, {"target_kl", c.target_kl},
       {"hidden", c.hidden}, {"initial_log_std", c.initial_log_std}};
}

inline void from_json(const nlohmann::json& j, PpoConfig& c) {
  c.clip = j.value("clip", c.clip);
  c.gamma = j.value("gamma", c.gamma);
  c.lambda = j.value("lambda", c.lambda);
  c.epochs = j.value("epochs", c.epochs);
  c.minibatch = j.value("minibatch", c.minibatch);
  c.lr = j.value("lr", c.lr);
  c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
  c.value_coef = j.value("value_coef", c.value_coef);
  c.horizon = j.value("horizon", c.horizon);
  c.target_kl = j.value("target_kl", c.target_kl);
  c.hidden = j.value("hidden", c.hidden);
  c.initial_log_std = j.value("initial_log_std", c.initial_log_std);
}

struct Policy {
  nn::Mlp mean;
  Vector log_std;

  Eigen::Index action_size() const { return mean.output_size(); }
  friend bool operator==(const Policy&, const Policy&) = default;
};

struct ValueFunction {
  nn::Mlp net;
  friend bool operator==(const ValueFunction&, const ValueFunction&) = default;
};

struct Agent {
  Policy policy;
  ValueFunction value;
  friend bool operator==(const Agent&, const Agent&) = default;
};

inline Agent make_agent(Eigen::Index observation_size, Eigen::Index assets, const PpoConfig& cfg,
                        std::uint64_t seed) {
  auto sizes = [&](Eigen::Index out) {
    std::vector<Eigen::Index> s{observation_size};
    s.insert(s.end(), cfg.hidden.begin(), cfg.hidden.end());
    s.push_back(out);
    return s;
  };
  Agent a;
  a.policy.mean = nn::Mlp(sizes(assets), nn::Activation::kTanh, derive_seed(seed, 11));
  a.policy.log_std = Vector::Constant(assets, std::clamp(cfg.initial_log_std, kMinLogStd, kMaxLogStd));
  a.value.net = nn::Mlp(sizes(1), nn::Activation::kTanh, derive_seed(seed, 12));
  return a;
}

// log N(a; mu, diag(exp(log_std))^2)
inline double gaussian_log_density(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& mu,
                                   const Eigen::Ref<const Vector>& log_std) {
  const Eigen::ArrayXd z = (a - mu).array() / log_std.array().exp();
  return -0.5 * z.square().sum() - log_std.sum() -
         0.5 * static_cast<double>(a.size()) * std::log(2.0 * std::numbers::pi);
}

enum class ActMode { kStochastic, kDeterministic };

struct ActionSample {
  Vector raw;
  double log_prob = 0.0;
};

inline ActionSample act(const Policy& policy, const Eigen::Ref<const Vector>& obs, ActMode mode,
                        std::mt19937_64& rng) {
  const Vector mu = nn::predict(policy.mean, obs);
  ActionSample s;
  if (mode == ActMode::kDeterministic) {
    s.raw = mu;
  } else {
    std::normal_distribution<double> n01;
    s.raw.resize(mu.size());
    for (Eigen::Index i = 0; i < mu.size(); ++i) s.raw(i) = mu(i) + std::exp(policy.log_std(i)) * n01(rng);
  }
  s.log_prob = gaussian_log_density(s.raw, mu, policy.log_std);
  return s;
}

// Portfolio weights from the policy mean.
inline WeightPolicy deterministic_weights(const Policy& policy) {
  return [&policy](const Observation& obs) { return softmax(nn::predict(policy.mean, obs.features)); };
}

struct GaeResult {
  Vector advantages;
  Vector returns;
};

// values[t] = V(s_t); `bootstrap` = V(s_n) after the last step (ignored if
// dones[n-1]). dones[t] cuts the recursion after step t.
inline GaeResult compute_gae(const Eigen::Ref<const Vector>& rewards, const Eigen::Ref<const Vector>& values,
                             const std::vector<bool>& dones, double bootstrap, double gamma, double lambda) {
  const auto n = rewards.size();
  if (values.size() != n || static_cast<Eigen::Index>(dones.size()) != n) {
    throw DataError("GAE inputs have different lengths");
  }
  GaeResult g{Vector::Zero(n), Vector::Zero(n)};
  double next_adv = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double live = dones[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
    const double next_value = t + 1 < n ? values(t + 1) : bootstrap;
    const double delta = rewards(t) + gamma * next_value * live - values(t);
    next_adv = delta + gamma * lambda * live * next_adv;
    g.advantages(t) = next_adv;
  }
  g.returns = g.advantages + values;
  return g;
}

inline Vector normalize_advantages(const Eigen::Ref<const Vector>& a) {
  const double mean = a.mean();
  const Vector centered = (a.array() - mean).matrix();
  const double sd = a.size() > 1 ? std::sqrt(centered.squaredNorm() / static_cast<double>(a.size() - 1)) : 0.0;
  return sd > 1e-12 ? Vector(centered / sd) : centered;
}

// One horizon of experience, one column per step.
struct RolloutBatch {
  Matrix observations;
  Matrix actions;
  Vector log_probs;
  Vector rewards;
  Vector values;
  std::vector<bool> dones;
  Vector advantages;
  Vector returns;

  Eigen::Index size() const { return rewards.size(); }
};

struct TrainerState {
  Agent agent;
  nn::AdamState policy_opt;
  nn::AdamState value_opt;

  TrainerState() = default;
  TrainerState(Agent a, double lr)
      : agent(std::move(a)),
        policy_opt(agent.policy.mean.parameter_count() + agent.policy.log_std.size(), {.lr = lr}),
        value_opt(agent.value.net.parameter_count(), {.lr = lr}) {}
};

struct UpdateStats {
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  int epochs_run = 0;
};

// Per-sample clipped objective min(rho A, clip(rho, 1-eps, 1+eps) A).
inline double clipped_objective(double ratio, double advantage, double clip) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - clip, 1.0 + clip) * advantage);
}

// On any non-finite loss or gradient the state is left as it was and
// NumericalError is thrown.
inline UpdateStats ppo_update(TrainerState& state, const RolloutBatch& batch, const PpoConfig& cfg,
                              std::mt19937_64& rng) {
  const Eigen::Index n = batch.size();
  if (n == 0) throw DataError("PPO update on an empty batch");
  if (batch.advantages.size() != n || batch.returns.size() != n) {
    throw DataError("PPO batch is missing advantages");
  }
  TrainerState work = state;
  Policy& pol = work.agent.policy;
  nn::Mlp& vnet = work.agent.value.net;
  const Eigen::Index na = pol.action_size();
  const Eigen::Index np = pol.mean.parameter_count();
  const Vector adv = normalize_advantages(batch.advantages);
  const double log_2pi = std::log(2.0 * std::numbers::pi);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  UpdateStats stats;
  double clipped_total = 0.0, samples_total = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double kl_sum = 0.0, pl_sum = 0.0, vl_sum = 0.0;
    for (Eigen::Index start = 0; start < n; start += cfg.minibatch) {
      const Eigen::Index b = std::min(cfg.minibatch, n - start);
      Matrix obs(batch.observations.rows(), b), act(na, b);
      Vector old_lp(b), a_mb(b), ret(b);
      for (Eigen::Index k = 0; k < b; ++k) {
        const Eigen::Index i = order[static_cast<std::size_t>(start + k)];
        obs.col(k) = batch.observations.col(i);
        act.col(k) = batch.actions.col(i);
        old_lp(k) = batch.log_probs(i);
        a_mb(k) = adv(i);
        ret(k) = batch.returns(i);
      }
      const nn::Tape ptape = nn::forward(pol.mean, obs);
      const Matrix& mu = ptape.activations.back();
      const Eigen::ArrayXd sigma = pol.log_std.array().exp();
      Matrix d_mu(na, b);
      Vector d_log_std = Vector::Zero(na);
      double policy_loss = 0.0;
      for (Eigen::Index k = 0; k < b; ++k) {
        const Eigen::ArrayXd z = (act.col(k) - mu.col(k)).array() / sigma;
        const double lp = -0.5 * z.square().sum() - pol.log_std.sum() - 0.5 * static_cast<double>(na) * log_2pi;
        const double ratio = std::exp(lp - old_lp(k));
        const double unclipped = ratio * a_mb(k);
        const double obj = clipped_objective(ratio, a_mb(k), cfg.clip);
        policy_loss -= obj / static_cast<double>(b);
        kl_sum += old_lp(k) - lp;
        if (std::abs(ratio - 1.0) > cfg.clip) clipped_total += 1.0;
        // Gradient flows only through the unclipped branch when it is the minimum.
        const double d_lp = unclipped <= obj ? -unclipped / static_cast<double>(b) : 0.0;
        d_mu.col(k) = (d_lp * (z / sigma)).matrix();
        d_log_std += (d_lp * (z.square() - 1.0)).matrix();
      }
      samples_total += static_cast<double>(b);
      const double entropy = pol.log_std.sum() + 0.5 * static_cast<double>(na) * (1.0 + log_2pi);
      d_log_std.array() -= cfg.entropy_coef;

      const nn::Tape vtape = nn::forward(vnet, obs);
      const Eigen::RowVectorXd verr = vtape.activations.back().row(0) - ret.transpose();
      const double value_loss = verr.squaredNorm() / static_cast<double>(b);
      const Matrix d_v = (cfg.value_coef * 2.0 / static_cast<double>(b)) * verr;

      const double total = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy;
      if (!std::isfinite(total)) {
        throw NumericalError("PPO loss became non-finite in epoch " + std::to_string(epoch));
      }
      Vector pgrad(np + na);
      pgrad.head(np) = nn::backward(pol.mean, ptape, d_mu).params;
      pgrad.tail(na) = d_log_std;
      Vector pparams(np + na);
      pparams.head(np) = pol.mean.params();
      pparams.tail(na) = pol.log_std;
      if (!nn::adam_update(pparams, pgrad, work.policy_opt) ||
          !nn::adam_step(vnet, nn::backward(vnet, vtape, d_v).params, work.value_opt)) {
        throw NumericalError("PPO gradient became non-finite in epoch " + std::to_string(epoch));
      }
      pol.mean.params() = pparams.head(np);
      pol.log_std = pparams.tail(na).cwiseMax(kMinLogStd).cwiseMin(kMaxLogStd);
      pl_sum += policy_loss * static_cast<double>(b);
      vl_sum += value_loss * static_cast<double>(b);
      stats.entropy = entropy;
    }
    stats.approx_kl = kl_sum / static_cast<double>(n);
    stats.policy_loss = pl_sum / static_cast<double>(n);
    stats.value_loss = vl_sum / static_cast<double>(n);
    stats.epochs_run = epoch + 1;
    if (stats.approx_kl > cfg.target_kl) break;
  }
  stats.clip_fraction = samples_total > 0.0 ? clipped_total / samples_total : 0.0;
  state = std::move(work);
  return stats;
}

// Where the next training episode runs: market data, start row, length.
struct EpisodeSpec {
  std::shared_ptr<const MarketFeatures> market;
  Eigen::Index start = 0;
  Eigen::Index length = 0;
};

using EpisodeSource = std::function<EpisodeSpec(std::size_t episode_index)>;

struct CurvePoint {
  std::size_t update = 0;
  double mean_reward = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  std::size_t episodes = 0;
};

struct TrainResult {
  Agent agent;
  std::vector<CurvePoint> curve;
  std::size_t episodes_used = 0;
};

// Alternates horizon-length rollouts and PPO updates. Runs
// floor(total_steps / horizon) updates; episodes end at their spec length.
inline TrainResult train_agent(const EpisodeSource& source, Agent agent, const EnvConfig& env_cfg,
                               const PpoConfig& cfg, std::int64_t total_steps, std::uint64_t seed) {
  cfg.validate();
  TrainResult result;
  const std::int64_t updates = total_steps / cfg.horizon;
  if (updates <= 0) {
    result.agent = std::move(agent);
    return result;
  }
  TrainerState state(std::move(agent), cfg.lr);
  std::mt19937_64 act_rng(derive_seed(seed, 21));
  std::mt19937_64 update_rng(derive_seed(seed, 22));
  PortfolioEnv env(env_cfg);
  std::size_t episode = 0;
  auto start_episode = [&]() {
    EpisodeSpec spec = source(episode++);
    return env.reset(spec.market, spec.start, spec.length);
  };
  Observation obs = start_episode();
  const Eigen::Index obs_dim = obs.features.size();
  const Eigen::Index na = state.agent.policy.action_size();

  for (std::int64_t u = 0; u < updates; ++u) {
    RolloutBatch batch;
    batch.observations.resize(obs_dim, cfg.horizon);
    batch.actions.resize(na, cfg.horizon);
    batch.log_probs.resize(cfg.horizon);
    batch.rewards.resize(cfg.horizon);
    batch.values.resize(cfg.horizon);
    batch.dones.assign(static_cast<std::size_t>(cfg.horizon), false);
    const std::size_t episodes_before = episode;
    for (Eigen::Index t = 0; t < cfg.horizon; ++t) {
      const ActionSample a = act(state.agent.policy, obs.features, ActMode::kStochastic, act_rng);
      batch.observations.col(t) = obs.features;
      batch.actions.col(t) = a.raw;
      batch.log_probs(t) = a.log_prob;
      batch.values(t) = nn::predict(state.agent.value.net, obs.features)(0);
      StepResult s = env.step(softmax(a.raw));
      batch.rewards(t) = s.reward;
      batch.dones[static_cast<std::size_t>(t)] = s.done;
      obs = s.done ? start_episode() : std::move(s.observation);
    }
    const double bootstrap = nn::predict(state.agent.value.net, obs.features)(0);
    const GaeResult g = compute_gae(batch.rewards, batch.values, batch.dones, bootstrap, cfg.gamma, cfg.lambda);
    batch.advantages = g.advantages;
    batch.returns = g.returns;
    const UpdateStats st = ppo_update(state, batch, cfg, update_rng);
    result.curve.push_back({static_cast<std::size_t>(u), batch.rewards.mean(), st.clip_fraction, st.approx_kl,
                            st.policy_loss, st.value_loss, episode - episodes_before});
  }
  result.agent = std::move(state.agent);
  result.episodes_used = episode;
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const Agent& a, const PpoConfig& cfg, std::uint64_t seed) {
  return {{"format_version", 1},
          {"policy_mean", nn::to_json(a.policy.mean)},
          {"log_std", std::vector<double>(a.policy.log_std.data(), a.policy.log_std.data() + a.policy.log_std.size())},
          {"value", nn::to_json(a.value.net)},
          {"config", cfg},
          {"seed", seed}};
}

inline Agent agent_from_json(const nlohmann::json& j) {
  Agent a;
  a.policy.mean = nn::mlp_from_json(j.at("policy_mean"));
  const auto ls = j.at("log_std").get<std::vector<double>>();
  a.policy.log_std = Eigen::Map<const Vector>(ls.data(), static_cast<Eigen::Index>(ls.size()));
  a.value.net = nn::mlp_from_json(j.at("value"));
  if (a.policy.log_std.size() != a.policy.mean.output_size()) {
    throw DataError("agent checkpoint log_std does not match the policy output size");
  }
  return a;
}

inline std::string curve_to_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream os;
  os << "update,mean_reward,clip_fraction,approx_kl,policy_loss,value_loss,episodes\n";
  for (const auto& p : curve) {
    os << p.update << ',' << format_double(p.mean_reward) << ',' << format_double(p.clip_fraction) << ','
       << format_double(p.approx_kl) << ',' << format_double(p.policy_loss) << ','
       << format_double(p.value_loss) << ',' << p.episodes << '\n';
  }
  return os.str();
}

}  // namespace darl::agent

#endif  // DARL_AGENT_HPP_
