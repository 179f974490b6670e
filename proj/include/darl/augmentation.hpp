/*
 * Diffusion-augmented agent training.
 *
 * Pipeline: label windows -> train the conditional DDPM -> build a schedule
 * mixing real episodes with synthetic crash episodes -> train PPO over that
 * schedule. A synthetic episode is a real price history (enough rows for
 * the environment's lookbacks) followed by one generated window compounded
 * from the last real close.
 */

#ifndef DARL_AUGMENTATION_HPP_
#define DARL_AUGMENTATION_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "darl/agent.hpp"
#include "darl/common.hpp"
#include "darl/diffusion.hpp"
#include "darl/env.hpp"
#include "darl/market_data.hpp"

namespace darl::augmentation {

struct AugmentationPlan {
  double synthetic_fraction = 0.3;
  std::vector<double> intensities{0.25, 0.5, 0.75, 1.0};
  int scenarios_per_intensity = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(synthetic_fraction >= 0.0 && synthetic_fraction <= 1.0)) {
      throw ConfigError("synthetic fraction must lie in [0, 1]");
    }
    if (synthetic_fraction > 0.0 && intensities.empty()) throw ConfigError("intensity menu is empty");
    for (double c : intensities)
      if (!(c >= 0.0 && c <= 1.0)) throw ConfigError("intensities must lie in [0, 1]");
    if (scenarios_per_intensity < 1) throw ConfigError("scenarios per intensity must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const AugmentationPlan& p) {
  j = {{"synthetic_fraction", p.synthetic_fraction},
       {"intensities", p.intensities},
       {"scenarios_per_intensity", p.scenarios_per_intensity},
       {"base_price_policy", "last_real_close_of_random_start"},
       {"seed", p.seed}};
}

inline void from_json(const nlohmann::json& j, AugmentationPlan& p) {
  p.synthetic_fraction = j.value("synthetic_fraction", p.synthetic_fraction);
  p.intensities = j.value("intensities", p.intensities);
  p.scenarios_per_intensity = j.value("scenarios_per_intensity", p.scenarios_per_intensity);
  p.seed = j.value("seed", p.seed);
}

enum class EpisodeKind { kReal, kSynthetic };

struct ScheduledEpisode {
  EpisodeKind kind = EpisodeKind::kReal;
  Eigen::Index start = 0;  // real start row, or base row for synthetic episodes
  double intensity = 0.0;
  std::uint64_t seed = 0;
};

// Every entry draws its start row from one stream, in order, so an all-real
// schedule matches a plain uniform draw of real starts. Synthetic positions
// and their (intensity, seed) come from a second stream.
inline std::vector<ScheduledEpisode> build_episode_schedule(const AugmentationPlan& plan, std::size_t count,
                                                            Eigen::Index first_start, Eigen::Index last_start,
                                                            std::uint64_t seed) {
  plan.validate();
  if (count < 1) throw ConfigError("episode schedule needs at least one episode");
  if (first_start > last_start) throw DataError("no legal episode start rows");
  std::mt19937_64 start_rng(derive_seed(seed, 31));
  std::uniform_int_distribution<Eigen::Index> pick_start(first_start, last_start);
  std::vector<ScheduledEpisode> schedule(count);
  for (auto& e : schedule) e.start = pick_start(start_rng);

  const auto synthetic = static_cast<std::size_t>(std::llround(plan.synthetic_fraction * static_cast<double>(count)));
  if (synthetic == 0) return schedule;
  std::mt19937_64 mix_rng(derive_seed(seed, 32));
  std::vector<std::size_t> positions(count);
  std::iota(positions.begin(), positions.end(), 0);
  std::shuffle(positions.begin(), positions.end(), mix_rng);
  std::uniform_int_distribution<std::size_t> pick_level(0, plan.intensities.size() - 1);
  std::uniform_int_distribution<int> pick_scenario(0, plan.scenarios_per_intensity - 1);
  for (std::size_t k = 0; k < synthetic; ++k) {
    auto& e = schedule[positions[k]];
    const std::size_t level = pick_level(mix_rng);
    const int scenario = pick_scenario(mix_rng);
    e.kind = EpisodeKind::kSynthetic;
    e.intensity = plan.intensities[level];
    e.seed = derive_seed(plan.seed, level * 1'000'003ULL + static_cast<std::uint64_t>(scenario));
  }
  return schedule;
}

// One generated window turned into prices, dated base_date + 1.. day by day.
inline PriceTable realize_synthetic_episode(const diffusion::DdpmModel& ddpm, double intensity, std::uint64_t seed,
                                            const StandardizationStats& stats, const Eigen::Ref<const Vector>& base_prices,
                                            const Date& base_date, const std::vector<std::string>& tickers) {
  const auto windows = diffusion::sample(ddpm, 1, intensity, seed);
  PriceTable t;
  t.closes = diffusion::synthetic_to_prices(windows.front(), stats, base_prices);
  for (Eigen::Index i = 0; i < t.closes.rows(); ++i) t.dates.push_back(base_date.plus_days(i + 1));
  t.tickers = tickers;
  t.origin = Origin::kSynthetic;
  return t;
}

// Real rows [base - history + 1, base] followed by the synthetic fragment.
inline PriceTable splice_episode(const PriceTable& real, Eigen::Index base, Eigen::Index history,
                                 const PriceTable& fragment) {
  if (base + 1 < history) throw DataError("not enough real history before the synthetic base row");
  PriceTable t = real.slice(base + 1 - history, base + 1);
  const auto hist_rows = t.rows();
  t.closes.conservativeResize(hist_rows + fragment.rows(), Eigen::NoChange);
  t.closes.bottomRows(fragment.rows()) = fragment.closes;
  t.dates.insert(t.dates.end(), fragment.dates.begin(), fragment.dates.end());
  t.origin = Origin::kSynthetic;
  return t;
}

struct DarlConfig {
  Eigen::Index window_length = 32;
  Eigen::Index window_stride = 4;
  diffusion::TrainConfig diffusion;
  EnvConfig env;
  agent::PpoConfig ppo;
  std::int64_t total_steps = 51'200;
  Eigen::Index episode_length = 64;
  AugmentationPlan plan;
};

inline Eigen::Index first_legal_start(const EnvConfig& env) {
  return std::max<Eigen::Index>({env.covariance_lookback, env.observation_window, kMinIndicatorRows});
}

// Real-data-only episode source: start rows drawn uniformly on demand.
inline agent::EpisodeSource real_episode_source(std::shared_ptr<const MarketFeatures> market, const EnvConfig& env,
                                                Eigen::Index episode_length, std::uint64_t seed) {
  const Eigen::Index lo = first_legal_start(env);
  const Eigen::Index hi = market->rows() - 1 - episode_length;
  if (hi < lo) throw DataError("training data too short for the configured episode length");
  auto rng = std::make_shared<std::mt19937_64>(derive_seed(seed, 31));
  return [market, lo, hi, episode_length, rng](std::size_t) {
    std::uniform_int_distribution<Eigen::Index> pick(lo, hi);
    return agent::EpisodeSpec{market, pick(*rng), episode_length};
  };
}

inline agent::Agent initial_agent(const MarketFeatures& market, const DarlConfig& cfg, std::uint64_t seed) {
  return agent::make_agent(observation_size(market.assets(), cfg.env), market.assets(), cfg.ppo, derive_seed(seed, 41));
}

// The no-augmentation training path.
inline agent::TrainResult train_plain_agent(std::shared_ptr<const MarketFeatures> market, const DarlConfig& cfg,
                                            std::uint64_t seed) {
  auto source = real_episode_source(market, cfg.env, cfg.episode_length, seed);
  return agent::train_agent(source, initial_agent(*market, cfg, seed), cfg.env, cfg.ppo, cfg.total_steps,
                            derive_seed(seed, 42));
}

inline std::size_t schedule_length(const DarlConfig& cfg) {
  const auto updates = std::max<std::int64_t>(0, cfg.total_steps / cfg.ppo.horizon);
  const auto steps = updates * cfg.ppo.horizon;
  const auto shortest = std::max<Eigen::Index>(1, std::min(cfg.episode_length, cfg.window_length));
  return static_cast<std::size_t>(steps / shortest + 2);
}

struct AgentStageResult {
  agent::TrainResult training;
  std::vector<ScheduledEpisode> schedule;
};

// Stages 3-4: schedule real/synthetic episodes and train PPO over them.
// `ddpm` may be null only when the plan has no synthetic episodes.
inline AgentStageResult train_agent_stage(std::shared_ptr<const MarketFeatures> market,
                                          const diffusion::DdpmModel* ddpm, const DarlConfig& cfg,
                                          std::uint64_t seed) {
  if (market->prices->origin != Origin::kReal) throw LeakError("agent training base data must be real");
  const Eigen::Index lo = first_legal_start(cfg.env);
  const Eigen::Index hi = market->rows() - 1 - cfg.episode_length;
  if (hi < lo) throw DataError("training data too short for the configured episode length");
  AgentStageResult out;
  out.schedule = build_episode_schedule(cfg.plan, schedule_length(cfg), lo, hi, seed);
  const bool any_synthetic = std::any_of(out.schedule.begin(), out.schedule.end(),
                                         [](const auto& e) { return e.kind == EpisodeKind::kSynthetic; });
  if (any_synthetic && ddpm == nullptr) throw MissingPrerequisite("augmented training needs a diffusion model");
  if (ddpm != nullptr && any_synthetic && ddpm->assets != market->assets()) {
    throw DataError("diffusion model asset count does not match the training data");
  }
  const Eigen::Index history = lo + 1;
  const auto& schedule = out.schedule;
  agent::EpisodeSource source = [&, market, history](std::size_t i) -> agent::EpisodeSpec {
    if (i >= schedule.size()) throw DataError("episode schedule exhausted");
    const auto& e = schedule[i];
    if (e.kind == EpisodeKind::kReal) return {market, e.start, cfg.episode_length};
    const PriceTable& real = *market->prices;
    const PriceTable fragment =
        realize_synthetic_episode(*ddpm, e.intensity, e.seed, ddpm->stats, real.closes.row(e.start).transpose(),
                                  real.dates[static_cast<std::size_t>(e.start)], real.tickers);
    auto features = make_features(splice_episode(real, e.start, history, fragment));
    return {features, history - 1, fragment.rows()};
  };
  out.training = agent::train_agent(source, initial_agent(*market, cfg, seed), cfg.env, cfg.ppo, cfg.total_steps,
                                    derive_seed(seed, 42));
  return out;
}

// Stages 1-2: window dataset and DDPM.
struct DiffusionStageResult {
  WindowDataset dataset;
  diffusion::DdpmModel model;
};

inline DiffusionStageResult train_diffusion_stage(const PriceTable& prices, const DarlConfig& cfg, std::uint64_t seed) {
  if (prices.origin != Origin::kReal) throw LeakError("diffusion training data must be real");
  DiffusionStageResult out;
  out.dataset = extract_windows(compute_returns(prices), cfg.window_length, cfg.window_stride, prices.tickers);
  diffusion::TrainConfig dc = cfg.diffusion;
  dc.seed = derive_seed(seed, 51);
  out.model = diffusion::train(out.dataset.samples, dc, out.dataset.stats);
  return out;
}

struct DarlResult {
  DiffusionStageResult diffusion;
  AgentStageResult agent;
};

inline DarlResult darl_train(const PriceTable& train_prices, const DarlConfig& cfg, std::uint64_t seed) {
  DarlResult r;
  r.diffusion = train_diffusion_stage(train_prices, cfg, seed);
  r.agent = train_agent_stage(make_features(train_prices), &r.diffusion.model, cfg, seed);
  return r;
}

inline std::string schedule_to_csv(const std::vector<ScheduledEpisode>& schedule) {
  std::ostringstream os;
  os << "episode,kind,start_row,intensity,seed\n";
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const auto& e = schedule[i];
    os << i << ',' << (e.kind == EpisodeKind::kReal ? "REAL" : "SYNTHETIC") << ',' << e.start << ','
       << format_double(e.intensity) << ',' << e.seed << '\n';
  }
  return os.str();
}

}  // namespace darl::augmentation

#endif  // DARL_AUGMENTATION_HPP_
