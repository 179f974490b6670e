/*
 * Portfolio MDP with proportional transaction costs.
 *
 * Decisions are taken at the close of price row t using data up to row t
 * only; the chosen weights then earn the return of row t -> t+1. Costs are
 * charged on turnover against the holdings drifted by the last return.
 */

#ifndef DARL_ENV_HPP_
#define DARL_ENV_HPP_

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "darl/common.hpp"
#include "darl/market_data.hpp"
#include "darl/simplex.hpp"

namespace darl {

struct EnvConfig {
  double initial_capital = 1'000'000.0;
  double cost_rate = 0.0005;
  Eigen::Index covariance_lookback = 60;
  Eigen::Index observation_window = 8;

  void validate() const {
    if (!(initial_capital > 0.0)) throw ConfigError("initial capital must be positive");
    if (!(cost_rate >= 0.0 && cost_rate < 1.0)) throw ConfigError("cost rate must lie in [0, 1)");
    if (covariance_lookback < 2) throw ConfigError("covariance lookback must be >= 2");
    if (observation_window < 1) throw ConfigError("observation window must be >= 1");
  }
};

// Returns and indicators precomputed once per price table. Every derived
// series is causal, so reading row t never touches rows > t.
struct MarketFeatures {
  std::shared_ptr<const PriceTable> prices;
  ReturnMatrix returns;
  IndicatorSet indicators;

  Eigen::Index rows() const { return prices->rows(); }
  Eigen::Index assets() const { return prices->assets(); }
};

inline std::shared_ptr<const MarketFeatures> make_features(PriceTable prices) {
  validate(prices);
  auto f = std::make_shared<MarketFeatures>();
  f->prices = std::make_shared<const PriceTable>(std::move(prices));
  f->returns = compute_returns(*f->prices);
  f->indicators = compute_indicators(*f->prices);
  return f;
}

// Flat observation: [recent returns (window x N, oldest first) | covariance
// upper triangle | MACD/close, RSI/100, CCI/100, ADX/100 (4 x N) | weights].
struct Observation {
  Vector features;
};

inline Eigen::Index observation_size(Eigen::Index assets, const EnvConfig& cfg) {
  return cfg.observation_window * assets + assets * (assets + 1) / 2 + 4 * assets + assets;
}

struct StepInfo {
  double portfolio_value = 0.0;
  double turnover = 0.0;
  double cost = 0.0;
  Eigen::Index row = 0;  // price row after the step
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

class PortfolioEnv {
 public:
  explicit PortfolioEnv(EnvConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const EnvConfig& config() const { return cfg_; }

  // Smallest legal start row for the configured lookbacks.
  Eigen::Index min_start() const { return std::max(cfg_.covariance_lookback, cfg_.observation_window); }

  Observation reset(std::shared_ptr<const MarketFeatures> market, Eigen::Index start,
                    std::optional<Eigen::Index> length = std::nullopt,
                    std::optional<Vector> initial_weights = std::nullopt) {
    if (!market) throw DataError("environment reset without market data");
    if (start < min_start()) {
      throw DataError("episode start row " + std::to_string(start) + " needs " +
                      std::to_string(min_start()) + " rows of history (covariance lookback " +
                      std::to_string(cfg_.covariance_lookback) + ")");
    }
    if (start + 1 >= market->rows()) {
      throw DataError("episode start row " + std::to_string(start) + " leaves no step ahead");
    }
    market_ = std::move(market);
    row_ = start;
    end_ = market_->rows() - 1;
    if (length) {
      if (*length < 1) throw DataError("episode length must be positive");
      end_ = std::min(end_, start + *length);
    }
    value_ = cfg_.initial_capital;
    holdings_ = initial_weights ? *initial_weights : equal_weights(market_->assets());
    if (holdings_.size() != market_->assets() || !on_simplex(holdings_)) {
      throw DataError("initial weights must lie on the simplex");
    }
    done_ = false;
    return observe();
  }

  StepResult step(const Eigen::Ref<const Vector>& weights) {
    if (!market_) throw DataError("step before reset");
    if (done_) throw DataError("step after the episode finished");
    if (weights.size() != market_->assets() || !on_simplex(weights)) {
      throw DataError("action is not a simplex weight vector");
    }
    const auto r = market_->returns.values.row(row_).transpose();
    StepInfo info;
    info.turnover = (weights - holdings_).cwiseAbs().sum();
    info.cost = cfg_.cost_rate * value_ * info.turnover;
    const double gross = 1.0 + weights.dot(r);
    const double next_value = (value_ - info.cost) * gross;
    const double reward = (next_value - value_) / value_;
    const Vector grown = weights.cwiseProduct((1.0 + r.array()).matrix());
    holdings_ = grown / grown.sum();
    value_ = next_value;
    ++row_;
    done_ = row_ >= end_;
    info.portfolio_value = value_;
    info.row = row_;
    if (!(value_ > 0.0) || !std::isfinite(value_)) {
      throw NumericalError("portfolio value left (0, inf) at row " + std::to_string(row_));
    }
    return {observe(), reward, done_, info};
  }

  Observation observe() const {
    const auto n = market_->assets();
    const auto w = cfg_.observation_window;
    Observation obs;
    obs.features.resize(observation_size(n, cfg_));
    Eigen::Index k = 0;
    // Return row j is the transition j -> j+1, known at price row j+1.
    for (Eigen::Index j = row_ - w; j < row_; ++j)
      for (Eigen::Index a = 0; a < n; ++a) obs.features(k++) = market_->returns.values(j, a);
    const Matrix cov = covariance_at(market_->returns, row_ - 1, cfg_.covariance_lookback);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i; j < n; ++j) obs.features(k++) = cov(i, j);
    const auto& ind = market_->indicators;
    for (Eigen::Index a = 0; a < n; ++a) {
      obs.features(k++) = ind.macd(row_, a) / market_->prices->closes(row_, a);
      obs.features(k++) = ind.rsi(row_, a) / 100.0;
      obs.features(k++) = ind.cci(row_, a) / 100.0;
      obs.features(k++) = ind.adx(row_, a) / 100.0;
    }
    for (Eigen::Index a = 0; a < n; ++a) obs.features(k++) = holdings_(a);
    return obs;
  }

  bool done() const { return done_; }
  double value() const { return value_; }
  Eigen::Index row() const { return row_; }
  const Vector& holdings() const { return holdings_; }
  const MarketFeatures& market() const { return *market_; }

 private:
  EnvConfig cfg_;
  std::shared_ptr<const MarketFeatures> market_;
  Eigen::Index row_ = 0;
  Eigen::Index end_ = 0;
  double value_ = 0.0;
  Vector holdings_;
  bool done_ = true;
};

using WeightPolicy = std::function<Vector(const Observation&)>;

struct EpisodeTrajectory {
  std::vector<Observation> observations;  // observation before each action
  std::vector<Vector> actions;
  std::vector<double> rewards;
  std::vector<double> turnovers;
  std::vector<double> costs;
  std::vector<double> values;             // values[0] = initial capital
  std::vector<Eigen::Index> rows;         // price row of each value
};

inline EpisodeTrajectory run_episode(PortfolioEnv& env, const WeightPolicy& policy,
                                     std::shared_ptr<const MarketFeatures> market, Eigen::Index start,
                                     std::optional<Eigen::Index> length = std::nullopt) {
  EpisodeTrajectory tr;
  Observation obs = env.reset(std::move(market), start, length);
  tr.values.push_back(env.value());
  tr.rows.push_back(env.row());
  while (!env.done()) {
    Vector w = policy(obs);
    StepResult s = env.step(w);
    tr.observations.push_back(std::move(obs));
    tr.actions.push_back(std::move(w));
    tr.rewards.push_back(s.reward);
    tr.turnovers.push_back(s.info.turnover);
    tr.costs.push_back(s.info.cost);
    tr.values.push_back(s.info.portfolio_value);
    tr.rows.push_back(s.info.row);
    obs = std::move(s.observation);
  }
  return tr;
}

inline std::string trajectory_to_csv(const EpisodeTrajectory& tr, const PriceTable& prices) {
  std::ostringstream os;
  os << "date_index,date,value,reward,turnover,cost";
  for (const auto& t : prices.tickers) os << ",w_" << t;
  os << '\n';
  for (std::size_t k = 0; k < tr.values.size(); ++k) {
    const auto row = tr.rows[k];
    os << row << ',' << prices.dates[static_cast<std::size_t>(row)].iso() << ','
       << format_double(tr.values[k]);
    if (k == 0) {
      os << ",0,0,0";
      for (Eigen::Index a = 0; a < prices.assets(); ++a) os << ',';
    } else {
      os << ',' << format_double(tr.rewards[k - 1]) << ',' << format_double(tr.turnovers[k - 1]) << ','
         << format_double(tr.costs[k - 1]);
      for (Eigen::Index a = 0; a < prices.assets(); ++a) os << ',' << format_double(tr.actions[k - 1](a));
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace darl

#endif  // DARL_ENV_HPP_
