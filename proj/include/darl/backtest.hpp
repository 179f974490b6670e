/*
 * Equity-curve evaluation and comparison tables.
 *
 * Conventions: 252 trading days per year, zero risk-free rate, sample (n-1)
 * standard deviation of daily simple returns. Percent-valued fields are
 * stored in percent (34.71 means 34.71%).
 */

#ifndef DARL_BACKTEST_HPP_
#define DARL_BACKTEST_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "darl/common.hpp"

namespace darl::backtest {

inline constexpr double kTradingDays = 252.0;

struct EquityCurve {
  std::vector<Date> dates;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }

  std::vector<double> daily_returns() const {
    std::vector<double> d;
    for (std::size_t i = 1; i < values.size(); ++i) d.push_back(values[i] / values[i - 1] - 1.0);
    return d;
  }
};

inline void validate(const EquityCurve& c) {
  if (!c.dates.empty() && c.dates.size() != c.values.size()) throw DataError("equity curve dates and values differ in length");
  for (double v : c.values)
    if (!(v > 0.0) || !std::isfinite(v)) throw DataError("equity curve values must be positive and finite");
  for (std::size_t i = 1; i < c.dates.size(); ++i)
    if (!(c.dates[i - 1] < c.dates[i])) throw DataError("equity curve dates must increase");
}

struct PerfReport {
  double cumulative_return = 0.0;  // %
  double annualized_return = 0.0;  // %
  double sharpe = 0.0;
  double calmar = 0.0;             // +inf when there is no drawdown
  double annual_volatility = 0.0;  // %
  double max_drawdown = 0.0;       // %, in [-100, 0]
  bool sharpe_defined = true;      // false when daily returns have zero variance
};

// Calmar from percent-valued annualized return and max drawdown.
inline double calmar_ratio(double annualized_pct, double max_drawdown_pct) {
  if (max_drawdown_pct == 0.0) return std::numeric_limits<double>::infinity();
  return annualized_pct / std::abs(max_drawdown_pct);
}

// min_t (V_t / max_{s<=t} V_s - 1), as a fraction.
inline double max_drawdown(const std::vector<double>& values) {
  double peak = -std::numeric_limits<double>::infinity(), mdd = 0.0;
  for (double v : values) {
    peak = std::max(peak, v);
    mdd = std::min(mdd, v / peak - 1.0);
  }
  return mdd;
}

inline PerfReport evaluate(const EquityCurve& curve, double trading_days = kTradingDays) {
  if (curve.size() < 2) throw DataError("evaluation needs at least 2 equity points");
  validate(curve);
  const auto& v = curve.values;
  PerfReport r;
  const double cum = v.back() / v.front() - 1.0;
  const double ann = std::pow(1.0 + cum, trading_days / static_cast<double>(v.size() - 1)) - 1.0;
  const auto d = curve.daily_returns();
  double mean = 0.0;
  for (double x : d) mean += x;
  mean /= static_cast<double>(d.size());
  double var = 0.0;
  for (double x : d) var += (x - mean) * (x - mean);
  const double sd = d.size() > 1 ? std::sqrt(var / static_cast<double>(d.size() - 1)) : 0.0;
  r.cumulative_return = 100.0 * cum;
  r.annualized_return = 100.0 * ann;
  r.annual_volatility = 100.0 * sd * std::sqrt(trading_days);
  if (sd > 0.0) {
    r.sharpe = mean / sd * std::sqrt(trading_days);
  } else {
    r.sharpe = 0.0;
    r.sharpe_defined = false;
  }
  r.max_drawdown = 100.0 * max_drawdown(v);
  r.calmar = calmar_ratio(r.annualized_return, r.max_drawdown);
  return r;
}

inline std::vector<std::pair<Date, double>> cumulative_series(const EquityCurve& curve) {
  validate(curve);
  std::vector<std::pair<Date, double>> out;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    out.emplace_back(curve.dates.empty() ? Date{} : curve.dates[i], curve.values[i] / curve.values.front() - 1.0);
  }
  return out;
}

// Row ordering in comparison tables.
enum class Role { kProposed = 0, kAblation = 1, kBaseline = 2, kIndex = 3 };

struct NamedReport {
  std::string name;
  Role role = Role::kBaseline;
  PerfReport report;
};

inline constexpr std::size_t kIndicatorCount = 6;
inline constexpr std::array<const char*, kIndicatorCount> kIndicatorNames{
    "Cumulative Return (%)", "Annualized Return (%)", "Sharpe Ratio",
    "Calmar Ratio", "Annual Volatility (%)", "Maximum Drawdown (%)"};

struct ComparisonRow {
  NamedReport entry;
  std::array<bool, kIndicatorCount> best{};
};

inline std::array<double, kIndicatorCount> indicator_values(const PerfReport& r) {
  return {r.cumulative_return, r.annualized_return, r.sharpe, r.calmar, r.annual_volatility, r.max_drawdown};
}

// Best per column: highest for returns/Sharpe/Calmar/drawdown (closest to
// zero), lowest for volatility. Ties flag every tied row.
inline std::vector<ComparisonRow> compare(std::vector<NamedReport> reports) {
  if (reports.empty()) throw DataError("comparison needs at least one report");
  std::stable_sort(reports.begin(), reports.end(),
                   [](const NamedReport& a, const NamedReport& b) { return a.role < b.role; });
  std::vector<ComparisonRow> rows;
  for (auto& r : reports) rows.push_back({std::move(r), {}});
  for (std::size_t c = 0; c < kIndicatorCount; ++c) {
    const bool lower_is_better = c == 4;
    double best = lower_is_better ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    for (const auto& row : rows) {
      const double v = indicator_values(row.entry.report)[c];
      best = lower_is_better ? std::min(best, v) : std::max(best, v);
    }
    for (auto& row : rows) row.best[c] = indicator_values(row.entry.report)[c] == best;
  }
  return rows;
}

inline std::string role_name(Role r) {
  switch (r) {
    case Role::kProposed: return "proposed";
    case Role::kAblation: return "ablation";
    case Role::kBaseline: return "baseline";
    case Role::kIndex: return "index";
  }
  return "baseline";
}

inline Role role_from_name(const std::string& s) {
  if (s == "proposed") return Role::kProposed;
  if (s == "ablation") return Role::kAblation;
  if (s == "index") return Role::kIndex;
  return Role::kBaseline;
}

namespace detail {
// JSON has no infinity; unbounded Calmar is written as the string "inf".
inline nlohmann::json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}
inline double number_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw DataError("unexpected report value '" + s + "'");
  }
  return j.get<double>();
}
}  // namespace detail

inline nlohmann::json to_json(const PerfReport& r) {
  return {{"cumulative_return_pct", r.cumulative_return},
          {"annualized_return_pct", r.annualized_return},
          {"sharpe", r.sharpe},
          {"calmar", detail::number_or_inf(r.calmar)},
          {"annual_volatility_pct", r.annual_volatility},
          {"max_drawdown_pct", r.max_drawdown},
          {"sharpe_defined", r.sharpe_defined}};
}

inline PerfReport report_from_json(const nlohmann::json& j) {
  PerfReport r;
  r.cumulative_return = j.at("cumulative_return_pct").get<double>();
  r.annualized_return = j.at("annualized_return_pct").get<double>();
  r.sharpe = j.at("sharpe").get<double>();
  r.calmar = detail::number_from_json(j.at("calmar"));
  r.annual_volatility = j.at("annual_volatility_pct").get<double>();
  r.max_drawdown = j.at("max_drawdown_pct").get<double>();
  r.sharpe_defined = j.value("sharpe_defined", true);
  return r;
}

inline nlohmann::json comparison_to_json(const std::vector<ComparisonRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json best = nlohmann::json::object();
    static constexpr std::array<const char*, kIndicatorCount> keys{
        "cumulative_return_pct", "annualized_return_pct", "sharpe",
        "calmar", "annual_volatility_pct", "max_drawdown_pct"};
    for (std::size_t c = 0; c < kIndicatorCount; ++c) best[keys[c]] = row.best[c];
    out.push_back({{"name", row.entry.name},
                   {"role", role_name(row.entry.role)},
                   {"report", to_json(row.entry.report)},
                   {"best", best}});
  }
  return out;
}

// Fixed-width text table; '*' marks the best value in each column.
inline std::string comparison_to_text(const std::vector<ComparisonRow>& rows) {
  std::size_t name_width = 16;
  for (const auto& r : rows) name_width = std::max(name_width, r.entry.name.size() + 2);
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_width)) << "Model/Benchmark";
  for (const char* h : kIndicatorNames) os << std::right << std::setw(24) << h;
  os << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(name_width)) << r.entry.name;
    const auto v = indicator_values(r.entry.report);
    for (std::size_t c = 0; c < kIndicatorCount; ++c) {
      std::ostringstream cell;
      if (std::isinf(v[c])) {
        cell << (v[c] > 0 ? "inf" : "-inf");
      } else {
        cell << std::fixed << std::setprecision(4) << v[c];
      }
      if (r.best[c]) cell << '*';
      os << std::right << std::setw(24) << cell.str();
    }
    os << '\n';
  }
  return os.str();
}

// date,value,cumulative
inline std::string curve_to_csv(const EquityCurve& curve) {
  std::ostringstream os;
  os << "date,value,cumulative\n";
  const auto cum = cumulative_series(curve);
  for (std::size_t i = 0; i < curve.size(); ++i) {
    os << (curve.dates.empty() ? std::to_string(i) : curve.dates[i].iso()) << ','
       << format_double(curve.values[i]) << ',' << format_double(cum[i].second) << '\n';
  }
  return os.str();
}

}  // namespace darl::backtest

#endif  // DARL_BACKTEST_HPP_
