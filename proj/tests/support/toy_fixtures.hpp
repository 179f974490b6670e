// Small synthetic markets and models shared by unit and acceptance tests.

#ifndef DARL_TESTS_TOY_FIXTURES_HPP_
#define DARL_TESTS_TOY_FIXTURES_HPP_

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "darl/diffusion.hpp"
#include "darl/env.hpp"
#include "darl/market_data.hpp"

namespace darl::testing {

// A price table built from a return matrix, starting at 100 for every asset.
inline PriceTable prices_from_returns(const Matrix& returns, Date first = Date(2020, 1, 1)) {
  PriceTable t;
  t.closes.resize(returns.rows() + 1, returns.cols());
  t.closes.row(0).setConstant(100.0);
  for (Eigen::Index i = 0; i < returns.rows(); ++i)
    t.closes.row(i + 1) = t.closes.row(i).cwiseProduct((1.0 + returns.row(i).array()).matrix());
  for (Eigen::Index i = 0; i < t.closes.rows(); ++i) t.dates.push_back(first.plus_days(i));
  for (Eigen::Index j = 0; j < returns.cols(); ++j) t.tickers.push_back("A" + std::to_string(j));
  return t;
}

// Asset 0 gains 1% a day, asset 1 is flat.
inline std::shared_ptr<const MarketFeatures> dominant_asset_market(Eigen::Index rows = 400) {
  Matrix r = Matrix::Zero(rows - 1, 2);
  r.col(0).setConstant(0.01);
  return make_features(prices_from_returns(r));
}

struct TwoRegimeData {
  std::vector<WindowSample> samples;
  StandardizationStats stats;
};

// Calm windows (c = 0): N(+0.2%, 1%) daily. Crash windows (c = 1): N(-1.5%, 2%).
inline TwoRegimeData two_regime_dataset(Eigen::Index length = 8, Eigen::Index assets = 2, int per_regime = 64,
                                        std::uint64_t seed = 17) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::vector<Matrix> raw;
  std::vector<double> labels;
  for (int regime = 0; regime < 2; ++regime) {
    const double mu = regime == 0 ? 0.002 : -0.015;
    const double sd = regime == 0 ? 0.01 : 0.02;
    for (int k = 0; k < per_regime; ++k) {
      Matrix w(length, assets);
      for (auto& v : w.reshaped()) v = mu + sd * n01(rng);
      raw.push_back(w);
      labels.push_back(regime);
    }
  }
  ReturnMatrix all;
  all.values.resize(static_cast<Eigen::Index>(raw.size()) * length, assets);
  for (std::size_t k = 0; k < raw.size(); ++k) all.values.middleRows(static_cast<Eigen::Index>(k) * length, length) = raw[k];
  TwoRegimeData d;
  d.stats = fit_standardization(all);
  for (std::size_t k = 0; k < raw.size(); ++k) {
    WindowSample s;
    s.window = standardize(raw[k], d.stats);
    s.intensity = labels[k];
    d.samples.push_back(std::move(s));
  }
  return d;
}

inline diffusion::DdpmModel train_two_regime_model(const TwoRegimeData& d, std::uint64_t seed = 5) {
  diffusion::TrainConfig cfg;
  cfg.epochs = 300;
  cfg.steps = 100;
  cfg.hidden = {64, 64};
  cfg.seed = seed;
  return diffusion::train(d.samples, cfg, d.stats);
}

// Equal-weight cumulative return of a standardized window in return space.
inline double window_cumulative_return(const Matrix& standardized, const StandardizationStats& stats) {
  const Matrix r = destandardize(standardized, stats);
  double total = 0.0;
  for (Eigen::Index j = 0; j < r.cols(); ++j) total += (1.0 + r.col(j).array()).prod() - 1.0;
  return total / static_cast<double>(r.cols());
}

struct SampleStats {
  double mean = 0.0;
  double var = 0.0;  // sample variance
  std::size_t n = 0;
};

inline SampleStats describe(const std::vector<double>& x) {
  SampleStats s;
  s.n = x.size();
  for (double v : x) s.mean += v;
  s.mean /= static_cast<double>(s.n);
  for (double v : x) s.var += (v - s.mean) * (v - s.mean);
  s.var /= static_cast<double>(s.n - 1);
  return s;
}

// One-sided Welch test of H1: mean(a) < mean(b). Returns the p-value.
inline double welch_less_p_value(const std::vector<double>& a, const std::vector<double>& b) {
  const auto sa = describe(a), sb = describe(b);
  const double va = sa.var / static_cast<double>(sa.n), vb = sb.var / static_cast<double>(sb.n);
  const double t = (sa.mean - sb.mean) / std::sqrt(va + vb);
  const double df = (va + vb) * (va + vb) /
                    (va * va / static_cast<double>(sa.n - 1) + vb * vb / static_cast<double>(sb.n - 1));
  return boost::math::cdf(boost::math::students_t(df), t);
}

}  // namespace darl::testing

#endif  // DARL_TESTS_TOY_FIXTURES_HPP_
