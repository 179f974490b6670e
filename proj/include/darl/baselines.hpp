/*
 * Comparison strategies: mean-variance (Markowitz), OLMAR, a genetic
 * algorithm with local refinement, price-weighted index, equal weight.
 * All of them trade through PortfolioEnv so costs match the agent's.
 */

#ifndef DARL_BASELINES_HPP_
#define DARL_BASELINES_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "darl/backtest.hpp"
#include "darl/common.hpp"
#include "darl/env.hpp"
#include "darl/market_data.hpp"
#include "darl/simplex.hpp"

namespace darl::baselines {

enum class Variant { kMarkowitz, kOlmar, kHybridGa, kIndex, kEqualWeight };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kMarkowitz: return "markowitz";
    case Variant::kOlmar: return "olmar";
    case Variant::kHybridGa: return "hybrid_ga";
    case Variant::kIndex: return "index";
    case Variant::kEqualWeight: return "equal_weight";
  }
  return "equal_weight";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "markowitz") return Variant::kMarkowitz;
  if (s == "olmar") return Variant::kOlmar;
  if (s == "hybrid_ga") return Variant::kHybridGa;
  if (s == "index") return Variant::kIndex;
  if (s == "equal_weight") return Variant::kEqualWeight;
  throw ConfigError("unknown strategy '" + s + "'");
}

struct GaParams {
  int population = 50;
  int generations = 30;
  double mutation_sigma = 0.05;
  int tournament = 3;
  int refine_steps = 100;
  double refine_step_size = 0.01;
};

struct StrategyConfig {
  Variant variant = Variant::kEqualWeight;
  Eigen::Index lookback = 60;
  double olmar_epsilon = 10.0;
  Eigen::Index olmar_window = 5;
  GaParams ga;
  double risk_aversion = 10.0;
  // Scale applied to mean and covariance of daily returns before the
  // mean-variance solve (252 = annualized moments).
  double markowitz_annualization = 252.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (lookback < 2) throw ConfigError("strategy lookback must be >= 2");
    if (ga.population < 4) throw ConfigError("GA population must be >= 4");
    if (ga.tournament < 1) throw ConfigError("GA tournament size must be >= 1");
    if (olmar_window < 1) throw ConfigError("OLMAR window must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Markowitz

// Projected gradient ascent on mu'w - lambda w'Sigma w from equal weights.
inline Vector markowitz_weights(const Eigen::Ref<const Matrix>& returns_block, double risk_aversion,
                                double annualization = 1.0, int iterations = 500, double step = 0.01) {
  if (returns_block.rows() < 2) throw DataError("Markowitz needs at least 2 return rows");
  const auto n = returns_block.cols();
  const Vector mu = annualization * returns_block.colwise().mean().transpose();
  const Matrix sigma = annualization * sample_covariance(returns_block) + 1e-6 * Matrix::Identity(n, n);
  Vector w = equal_weights(n);
  for (int i = 0; i < iterations; ++i) {
    const Vector grad = mu - 2.0 * risk_aversion * sigma * w;
    w = project_simplex(w + step * grad);
  }
  return w;
}

// ---------------------------------------------------------------------------
// OLMAR

// Passive-aggressive step toward predicted price relatives.
inline Vector olmar_update(const Eigen::Ref<const Vector>& weights, const Eigen::Ref<const Vector>& predicted,
                           double epsilon) {
  const double mean = predicted.mean();
  const Vector dev = (predicted.array() - mean).matrix();
  const double denom = dev.squaredNorm();
  const double tau = denom < 1e-12 ? 0.0 : std::max(0.0, (epsilon - weights.dot(predicted)) / denom);
  if (tau == 0.0) return weights;
  return project_simplex(weights + tau * dev);
}

// price_block holds at least `window` rows ending at the decision date.
inline Vector olmar_weights(const Eigen::Ref<const Vector>& weights, const Eigen::Ref<const Matrix>& price_block,
                            double epsilon = 10.0, Eigen::Index window = 5) {
  if (window > price_block.rows()) throw DataError("OLMAR moving-average window exceeds available history");
  const Vector last = price_block.row(price_block.rows() - 1).transpose();
  const Vector ma = price_block.bottomRows(window).colwise().mean().transpose();
  return olmar_update(weights, ma.cwiseQuotient(last), epsilon);
}

// ---------------------------------------------------------------------------
// Hybrid GA

// Annualized in-sample Sharpe of a fixed-weight portfolio; 0 if zero variance.
inline double in_sample_sharpe(const Eigen::Ref<const Matrix>& returns_block, const Eigen::Ref<const Vector>& w) {
  const Vector p = returns_block * w;
  const double mean = p.mean();
  const double var = (p.array() - mean).square().sum() / static_cast<double>(p.size() - 1);
  if (!(var > 0.0)) return 0.0;
  return mean / std::sqrt(var) * std::sqrt(backtest::kTradingDays);
}

inline Vector sharpe_gradient(const Vector& mu, const Matrix& sigma, const Vector& w) {
  const double m = mu.dot(w);
  const Vector sw = sigma * w;
  const double s2 = w.dot(sw);
  if (!(s2 > 0.0)) return Vector::Zero(w.size());
  const double s = std::sqrt(s2);
  return std::sqrt(backtest::kTradingDays) * (mu / s - (m / (s2 * s)) * sw);
}

namespace detail {

inline Vector random_simplex(Eigen::Index n, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = e(rng);
  return v / v.sum();
}

}  // namespace detail

// GA over simplex vectors maximizing in-sample Sharpe: tournament selection,
// arithmetic crossover, Gaussian mutation with re-projection, elitism of one,
// then `refine_steps` projected-gradient steps (best point seen is kept).
inline Vector evolve(const Eigen::Ref<const Matrix>& returns_block, std::vector<Vector> population,
                     const GaParams& params, std::mt19937_64& rng) {
  if (returns_block.rows() < 2) throw DataError("GA needs at least 2 return rows");
  if (population.empty()) throw ConfigError("GA population is empty");
  auto fitness_of = [&](const std::vector<Vector>& pop) {
    std::vector<double> f;
    for (const auto& w : pop) f.push_back(in_sample_sharpe(returns_block, w));
    return f;
  };
  auto best_index = [](const std::vector<double>& f) {
    return static_cast<std::size_t>(std::max_element(f.begin(), f.end()) - f.begin());
  };
  std::uniform_int_distribution<std::size_t> pick(0, population.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> n01;
  auto tournament = [&](const std::vector<double>& f) {
    std::size_t best = pick(rng);
    for (int k = 1; k < params.tournament; ++k) {
      const std::size_t c = pick(rng);
      if (f[c] > f[best]) best = c;
    }
    return best;
  };

  std::vector<double> fit = fitness_of(population);
  for (int g = 0; g < params.generations; ++g) {
    std::vector<Vector> next;
    next.reserve(population.size());
    next.push_back(population[best_index(fit)]);
    while (next.size() < population.size()) {
      const Vector& a = population[tournament(fit)];
      const Vector& b = population[tournament(fit)];
      const double beta = unit(rng);
      Vector child = beta * a + (1.0 - beta) * b;
      if (params.mutation_sigma > 0.0) {
        for (Eigen::Index i = 0; i < child.size(); ++i) child(i) += params.mutation_sigma * n01(rng);
      }
      next.push_back(project_simplex(child));
    }
    population = std::move(next);
    fit = fitness_of(population);
  }
  Vector best = population[best_index(fit)];
  if (params.refine_steps > 0) {
    const Vector mu = returns_block.colwise().mean().transpose();
    const Matrix sigma = sample_covariance(returns_block);
    double best_fit = in_sample_sharpe(returns_block, best);
    Vector w = best;
    for (int s = 0; s < params.refine_steps; ++s) {
      w = project_simplex(w + params.refine_step_size * sharpe_gradient(mu, sigma, w));
      const double f = in_sample_sharpe(returns_block, w);
      if (f > best_fit) {
        best_fit = f;
        best = w;
      }
    }
  }
  return best;
}

inline Vector hybrid_ga_weights(const Eigen::Ref<const Matrix>& returns_block, const GaParams& params,
                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto n = returns_block.cols();
  std::vector<Vector> population{equal_weights(n)};
  while (static_cast<int>(population.size()) < params.population) population.push_back(detail::random_simplex(n, rng));
  return evolve(returns_block, std::move(population), params, rng);
}

// ---------------------------------------------------------------------------
// Index and strategy driver

// Buy-and-hold of an index series when given, else a price-weighted basket
// (one share of each constituent), scaled to `capital`.
inline backtest::EquityCurve index_curve(const PriceTable& prices, double capital = 1'000'000.0,
                                         const std::optional<Vector>& index_series = std::nullopt) {
  if (prices.origin != Origin::kReal) throw LeakError("index curve requested on synthetic prices");
  backtest::EquityCurve c;
  c.dates = prices.dates;
  const Vector level = index_series ? *index_series : Vector(prices.closes.rowwise().sum());
  if (level.size() != prices.rows()) throw DataError("index series length does not match the price table");
  for (Eigen::Index i = 0; i < level.size(); ++i) c.values.push_back(capital * level(i) / level(0));
  return c;
}

struct Split {
  Eigen::Index start = 0;  // first decision row
  Eigen::Index end = 0;    // last valued row (inclusive)
};

inline void require_real(const MarketFeatures& market) {
  if (market.prices->origin != Origin::kReal) {
    throw LeakError("backtests accept only real market data; got a synthetic price table");
  }
}

inline backtest::EquityCurve curve_from(const EpisodeTrajectory& tr, const PriceTable& prices) {
  backtest::EquityCurve c;
  for (std::size_t k = 0; k < tr.values.size(); ++k) {
    c.dates.push_back(prices.dates[static_cast<std::size_t>(tr.rows[k])]);
    c.values.push_back(tr.values[k]);
  }
  return c;
}

// Runs a policy over [split.start, split.end] through the shared cost model.
inline backtest::EquityCurve run_policy(const WeightPolicy& policy, std::shared_ptr<const MarketFeatures> market,
                                        const Split& split, const EnvConfig& env_cfg) {
  require_real(*market);
  PortfolioEnv env(env_cfg);
  const auto tr = run_episode(env, policy, market, split.start, split.end - split.start);
  return curve_from(tr, *market->prices);
}

inline backtest::EquityCurve run_strategy(const StrategyConfig& cfg, std::shared_ptr<const MarketFeatures> market,
                                          const Split& split, const EnvConfig& env_cfg = {}) {
  cfg.validate();
  require_real(*market);
  if (split.start < std::max(cfg.lookback, env_cfg.covariance_lookback) || split.end >= market->rows() ||
      split.end <= split.start) {
    throw DataError("strategy split [" + std::to_string(split.start) + ", " + std::to_string(split.end) +
                    "] lacks history or lies outside the data");
  }
  if (cfg.variant == Variant::kIndex) {
    return index_curve(market->prices->slice(split.start, split.end + 1), env_cfg.initial_capital);
  }
  const MarketFeatures& m = *market;
  const auto n = m.assets();
  Vector last = equal_weights(n);
  std::uint64_t day = 0;
  // Return rows (t - lookback, t - 1] are known at price row t.
  auto returns_block = [&](Eigen::Index t) { return m.returns.values.middleRows(t - cfg.lookback, cfg.lookback); };
  PortfolioEnv* env_ptr = nullptr;
  WeightPolicy policy = [&](const Observation&) -> Vector {
    const Eigen::Index t = env_ptr->row();
    Vector w;
    switch (cfg.variant) {
      case Variant::kMarkowitz:
        w = markowitz_weights(returns_block(t), cfg.risk_aversion, cfg.markowitz_annualization);
        break;
      case Variant::kOlmar:
        w = olmar_weights(last, m.prices->closes.middleRows(t + 1 - cfg.olmar_window, cfg.olmar_window),
                          cfg.olmar_epsilon, cfg.olmar_window);
        break;
      case Variant::kHybridGa:
        w = hybrid_ga_weights(returns_block(t), cfg.ga, derive_seed(cfg.seed, day));
        break;
      default:
        w = equal_weights(n);
    }
    ++day;
    last = w;
    return w;
  };
  PortfolioEnv env(env_cfg);
  env_ptr = &env;
  const auto tr = run_episode(env, policy, market, split.start, split.end - split.start);
  return curve_from(tr, *m.prices);
}

inline void to_json(nlohmann::json& j, const StrategyConfig& c) {
  j = {{"variant", to_string(c.variant)},
       {"lookback", c.lookback},
       {"olmar_epsilon", c.olmar_epsilon},
       {"olmar_window", c.olmar_window},
       {"ga", {{"population", c.ga.population}, {"generations", c.ga.generations},
               {"mutation_sigma", c.ga.mutation_sigma}, {"tournament", c.ga.tournament},
               {"refine_steps", c.ga.refine_steps}, {"refine_step_size", c.ga.refine_step_size}}},
       {"risk_aversion", c.risk_aversion},
       {"markowitz_annualization", c.markowitz_annualization},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, StrategyConfig& c) {
  c.variant = variant_from_string(j.at("variant").get<std::string>());
  c.lookback = j.value("lookback", c.lookback);
  c.olmar_epsilon = j.value("olmar_epsilon", c.olmar_epsilon);
  c.olmar_window = j.value("olmar_window", c.olmar_window);
  if (j.contains("ga")) {
    const auto& g = j.at("ga");
    c.ga.population = g.value("population", c.ga.population);
    c.ga.generations = g.value("generations", c.ga.generations);
    c.ga.mutation_sigma = g.value("mutation_sigma", c.ga.mutation_sigma);
    c.ga.tournament = g.value("tournament", c.ga.tournament);
    c.ga.refine_steps = g.value("refine_steps", c.ga.refine_steps);
    c.ga.refine_step_size = g.value("refine_step_size", c.ga.refine_step_size);
  }
  c.risk_aversion = j.value("risk_aversion", c.risk_aversion);
  c.markowitz_annualization = j.value("markowitz_annualization", c.markowitz_annualization);
  c.seed = j.value("seed", c.seed);
}

}  // namespace darl::baselines

#endif  // DARL_BASELINES_HPP_
