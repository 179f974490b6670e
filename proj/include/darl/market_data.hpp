/*
 * Market data ingestion and derived series.
 *
 * PriceTable is the single source of market truth: a dates x assets matrix of
 * daily closes. Everything else here (returns, rolling covariances, technical
 * indicators, labeled diffusion windows) is a pure function of a PriceTable.
 */

#ifndef DARL_MARKET_DATA_HPP_
#define DARL_MARKET_DATA_HPP_

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "darl/common.hpp"

namespace darl {

// Whether a table holds observed market data or a generated scenario.
enum class Origin { kReal, kSynthetic };

struct PriceTable {
  std::vector<Date> dates;
  std::vector<std::string> tickers;
  Matrix closes;  // dates x tickers, all > 0
  Origin origin = Origin::kReal;

  Eigen::Index rows() const { return closes.rows(); }
  Eigen::Index assets() const { return closes.cols(); }

  // Rows [begin, end).
  PriceTable slice(Eigen::Index begin, Eigen::Index end) const {
    if (begin < 0 || end > rows() || begin >= end) throw DataError("invalid price table slice");
    PriceTable out;
    out.dates.assign(dates.begin() + begin, dates.begin() + end);
    out.tickers = tickers;
    out.closes = closes.middleRows(begin, end - begin);
    out.origin = origin;
    return out;
  }

  // First row whose date is >= d (rows() if none).
  Eigen::Index lower_bound(const Date& d) const {
    return std::lower_bound(dates.begin(), dates.end(), d) - dates.begin();
  }
};

inline void validate(const PriceTable& t) {
  if (t.assets() < 2) throw DataError("price table needs at least 2 tickers");
  if (static_cast<Eigen::Index>(t.dates.size()) != t.rows() ||
      static_cast<Eigen::Index>(t.tickers.size()) != t.assets()) {
    throw DataError("price table shape does not match its labels");
  }
  for (std::size_t i = 1; i < t.dates.size(); ++i) {
    if (!(t.dates[i - 1] < t.dates[i])) throw DataError("price table dates not strictly increasing");
  }
  if (!t.closes.allFinite() || (t.closes.array() <= 0.0).any()) {
    throw DataError("price table holds non-positive or non-finite closes");
  }
}

struct ReturnMatrix {
  std::vector<Date> dates;  // date of the later price in each transition
  Matrix values;            // (M-1) x N simple returns
};

struct CovarianceMatrix {
  Matrix values;
  Date as_of;
};

// Raw indicator values per date (row) and asset (column).
struct IndicatorSet {
  Matrix macd;
  Matrix rsi;
  Matrix cci;
  Matrix adx;
};

struct StandardizationStats {
  Vector mean;
  Vector stddev;
};

struct WindowSample {
  Matrix window;  // L x N standardized returns
  double intensity = 0.0;
  // Empty dates mean the window is synthetic.
  std::optional<std::pair<Date, Date>> origin;
  Eigen::Index start_row = -1;
};

struct WindowDataset {
  std::vector<WindowSample> samples;
  StandardizationStats stats;
  Eigen::Index length = 0;
  Eigen::Index assets = 0;
  std::vector<std::string> tickers;

  std::string hash() const {
    Fnv1a h;
    for (const auto& s : samples) {
      h.update(s.window);
      h.update(s.intensity);
    }
    h.update(stats.mean).update(stats.stddev);
    return h.hex();
  }
};

// ---------------------------------------------------------------------------
// CSV ingestion

enum class RejectPolicy {
  kError,  // throw naming the first rejected ticker
  kDrop,   // drop the ticker and report it
};

struct IngestOptions {
  double max_missing_fraction = 0.10;
  Eigen::Index min_rows = 300;
  Eigen::Index min_tickers = 2;
  RejectPolicy reject = RejectPolicy::kError;
};

struct IngestReport {
  PriceTable table;
  std::vector<std::string> rejected;
  Eigen::Index dropped_leading_rows = 0;
  Eigen::Index filled_cells = 0;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  for (auto& c : cells) {
    while (!c.empty() && (c.back() == '\r' || c.back() == ' ')) c.pop_back();
    while (!c.empty() && c.front() == ' ') c.erase(c.begin());
  }
  return cells;
}

}  // namespace detail

// Parses `date,T1,...,TN` text. Missing cells (empty, "nan", non-positive)
// are forward-filled; a date row with a leading gap in any kept ticker is dropped.
inline IngestReport ingest_csv_text(const std::string& text, const IngestOptions& opt = {},
                                    const std::string& source = "<memory>") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": empty file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);
  auto header = detail::split_csv_line(line);
  if (header.empty() || header[0] != "date") {
    throw DataError(source + ": header must start with 'date'");
  }
  const std::vector<std::string> tickers(header.begin() + 1, header.end());
  const auto n = static_cast<Eigen::Index>(tickers.size());
  if (n < opt.min_tickers) {
    throw DataError(source + ": need at least " + std::to_string(opt.min_tickers) +
                    " tickers, found " + std::to_string(n));
  }

  std::vector<std::pair<Date, std::vector<double>>> rows;  // NaN marks missing
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = detail::split_csv_line(line);
    if (static_cast<Eigen::Index>(cells.size()) != n + 1) {
      throw DataError(source + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(n + 1) + " fields, found " + std::to_string(cells.size()));
    }
    Date d;
    try {
      d = Date::parse(cells[0]);
    } catch (const DataError& e) {
      throw DataError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
    std::vector<double> values(static_cast<std::size_t>(n), std::nan(""));
    for (Eigen::Index j = 0; j < n; ++j) {
      const std::string& c = cells[static_cast<std::size_t>(j + 1)];
      if (c.empty() || c == "nan" || c == "NaN" || c == "null" || c == "NA") continue;
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      if (end == c.c_str() || *end != '\0') {
        throw DataError(source + ":" + std::to_string(line_no) + ": unparseable price '" + c + "'");
      }
      if (std::isfinite(v) && v > 0.0) values[static_cast<std::size_t>(j)] = v;
    }
    rows.emplace_back(d, std::move(values));
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i - 1].first == rows[i].first) {
      throw DataError(source + ": duplicate date " + rows[i].first.iso());
    }
  }

  IngestReport report;
  std::vector<Eigen::Index> kept;
  for (Eigen::Index j = 0; j < n; ++j) {
    std::size_t missing = 0;
    for (const auto& r : rows) missing += std::isnan(r.second[static_cast<std::size_t>(j)]);
    const double frac = rows.empty() ? 1.0 : static_cast<double>(missing) / rows.size();
    if (frac > opt.max_missing_fraction) {
      const auto& t = tickers[static_cast<std::size_t>(j)];
      if (opt.reject == RejectPolicy::kError) {
        std::ostringstream os;
        os << source << ": ticker " << t << " rejected: " << std::fixed << std::setprecision(1)
           << 100.0 * frac << "% missing exceeds " << 100.0 * opt.max_missing_fraction << "%";
        throw DataError(os.str());
      }
      report.rejected.push_back(t);
    } else {
      kept.push_back(j);
    }
  }
  if (static_cast<Eigen::Index>(kept.size()) < opt.min_tickers) {
    throw DataError(source + ": fewer than " + std::to_string(opt.min_tickers) +
                    " tickers survive the missing-data policy");
  }

  std::vector<Date> dates;
  std::vector<std::vector<double>> filled;
  std::vector<double> last(kept.size(), std::nan(""));
  for (const auto& [d, values] : rows) {
    std::vector<double> row(kept.size());
    bool leading_gap = false;
    for (std::size_t k = 0; k < kept.size(); ++k) {
      double v = values[static_cast<std::size_t>(kept[k])];
      if (std::isnan(v)) {
        if (std::isnan(last[k])) {
          leading_gap = true;
        } else {
          v = last[k];
          ++report.filled_cells;
        }
      }
      row[k] = v;
    }
    if (leading_gap) {
      // Keep forward-fill state from cells that were present.
      for (std::size_t k = 0; k < kept.size(); ++k)
        if (!std::isnan(row[k])) last[k] = row[k];
      ++report.dropped_leading_rows;
      continue;
    }
    last = row;
    dates.push_back(d);
    filled.push_back(std::move(row));
  }
  if (static_cast<Eigen::Index>(dates.size()) < opt.min_rows) {
    throw DataError(source + ": need at least " + std::to_string(opt.min_rows) +
                    " date rows, found " + std::to_string(dates.size()));
  }

  PriceTable& t = report.table;
  t.dates = std::move(dates);
  for (auto j : kept) t.tickers.push_back(tickers[static_cast<std::size_t>(j)]);
  t.closes.resize(static_cast<Eigen::Index>(filled.size()), static_cast<Eigen::Index>(kept.size()));
  for (std::size_t i = 0; i < filled.size(); ++i)
    for (std::size_t k = 0; k < kept.size(); ++k)
      t.closes(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = filled[i][k];
  validate(t);
  return report;
}

inline IngestReport ingest_csv(const std::string& path, const IngestOptions& opt = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingPrerequisite("cannot open price file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return ingest_csv_text(os.str(), opt, path);
}

inline PriceTable load_csv(const std::string& path, const IngestOptions& opt = {}) {
  return ingest_csv(path, opt).table;
}

inline std::string to_csv(const PriceTable& t) {
  std::ostringstream os;
  os << "date";
  for (const auto& s : t.tickers) os << ',' << s;
  os << '\n';
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    os << t.dates[static_cast<std::size_t>(i)].iso();
    for (Eigen::Index j = 0; j < t.assets(); ++j) os << ',' << format_double(t.closes(i, j));
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Returns and covariances

inline ReturnMatrix compute_returns(const PriceTable& prices) {
  ReturnMatrix r;
  const auto m = prices.rows();
  if (m < 2) return r;
  r.dates.assign(prices.dates.begin() + 1, prices.dates.end());
  r.values = (prices.closes.bottomRows(m - 1).array() / prices.closes.topRows(m - 1).array() - 1.0)
                 .matrix();
  return r;
}

// Sample covariance (denominator rows-1) of a block of return rows, symmetrized.
inline Matrix sample_covariance(const Eigen::Ref<const Matrix>& block) {
  const auto rows = block.rows();
  if (rows < 2) throw DataError("covariance needs at least 2 rows");
  const Eigen::RowVectorXd mean = block.colwise().mean();
  const Matrix centered = block.rowwise() - mean;
  Matrix s = (centered.transpose() * centered) / static_cast<double>(rows - 1);
  return 0.5 * (s + s.transpose());
}

// Covariance of return rows (end_row - lookback, end_row].
inline Matrix covariance_at(const ReturnMatrix& returns, Eigen::Index end_row, Eigen::Index lookback) {
  if (lookback < 2) throw DataError("covariance lookback must be >= 2");
  if (end_row + 1 < lookback || end_row >= returns.values.rows()) {
    throw DataError("covariance window exceeds available return rows");
  }
  return sample_covariance(returns.values.middleRows(end_row + 1 - lookback, lookback));
}

// One matrix per return row from lookback-1 onward.
inline std::vector<CovarianceMatrix> rolling_covariance(const ReturnMatrix& returns,
                                                        Eigen::Index lookback = 60) {
  if (lookback < 2) throw DataError("covariance lookback must be >= 2");
  if (lookback > returns.values.rows()) {
    throw DataError("covariance lookback " + std::to_string(lookback) + " exceeds " +
                    std::to_string(returns.values.rows()) + " return rows");
  }
  std::vector<CovarianceMatrix> out;
  for (Eigen::Index t = lookback - 1; t < returns.values.rows(); ++t) {
    out.push_back({covariance_at(returns, t, lookback), returns.dates[static_cast<std::size_t>(t)]});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Technical indicators (close-only)

inline constexpr double kNeutralMacd = 0.0;
inline constexpr double kNeutralRsi = 50.0;
inline constexpr double kNeutralCci = 0.0;
inline constexpr double kNeutralAdx = 25.0;
inline constexpr Eigen::Index kIndicatorPeriod = 14;
inline constexpr Eigen::Index kMinIndicatorRows = 30;

namespace detail {

inline Vector ema(const Eigen::Ref<const Vector>& x, Eigen::Index span) {
  const double a = 2.0 / (static_cast<double>(span) + 1.0);
  Vector out(x.size());
  out(0) = x(0);
  for (Eigen::Index i = 1; i < x.size(); ++i) out(i) = a * x(i) + (1.0 - a) * out(i - 1);
  return out;
}

// RSI with Wilder smoothing; first value at index `period`.
inline Vector rsi(const Eigen::Ref<const Vector>& p, Eigen::Index period) {
  Vector out = Vector::Constant(p.size(), kNeutralRsi);
  if (p.size() <= period) return out;
  double gain = 0.0, loss = 0.0;
  for (Eigen::Index k = 1; k <= period; ++k) {
    const double d = p(k) - p(k - 1);
    gain += std::max(d, 0.0);
    loss += std::max(-d, 0.0);
  }
  gain /= static_cast<double>(period);
  loss /= static_cast<double>(period);
  const auto value = [](double g, double l) {
    if (l == 0.0) return g > 0.0 ? 100.0 : kNeutralRsi;
    return 100.0 - 100.0 / (1.0 + g / l);
  };
  out(period) = value(gain, loss);
  const double n = static_cast<double>(period);
  for (Eigen::Index k = period + 1; k < p.size(); ++k) {
    const double d = p(k) - p(k - 1);
    gain = (gain * (n - 1.0) + std::max(d, 0.0)) / n;
    loss = (loss * (n - 1.0) + std::max(-d, 0.0)) / n;
    out(k) = value(gain, loss);
  }
  return out;
}

// CCI with typical price = close.
inline Vector cci(const Eigen::Ref<const Vector>& p, Eigen::Index period) {
  Vector out = Vector::Constant(p.size(), kNeutralCci);
  for (Eigen::Index k = period - 1; k < p.size(); ++k) {
    const auto w = p.segment(k + 1 - period, period);
    const double sma = w.mean();
    const double md = (w.array() - sma).abs().mean();
    out(k) = md > 0.0 ? (p(k) - sma) / (0.015 * md) : 0.0;
  }
  return out;
}

// ADX with true range |dclose|, +DM = max(dclose, 0), -DM = max(-dclose, 0).
inline Vector adx(const Eigen::Ref<const Vector>& p, Eigen::Index period) {
  Vector out = Vector::Constant(p.size(), kNeutralAdx);
  if (p.size() < 2 * period) return out;
  const double n = static_cast<double>(period);
  double tr = 0.0, up = 0.0, down = 0.0;
  for (Eigen::Index k = 1; k <= period; ++k) {
    const double d = p(k) - p(k - 1);
    tr += std::abs(d);
    up += std::max(d, 0.0);
    down += std::max(-d, 0.0);
  }
  const auto dx = [](double tr_s, double up_s, double down_s) {
    if (tr_s <= 0.0) return 0.0;
    const double pdi = 100.0 * up_s / tr_s;
    const double mdi = 100.0 * down_s / tr_s;
    return pdi + mdi > 0.0 ? 100.0 * std::abs(pdi - mdi) / (pdi + mdi) : 0.0;
  };
  Vector dxs = Vector::Zero(p.size());
  dxs(period) = dx(tr, up, down);
  for (Eigen::Index k = period + 1; k < p.size(); ++k) {
    const double d = p(k) - p(k - 1);
    tr = tr - tr / n + std::abs(d);
    up = up - up / n + std::max(d, 0.0);
    down = down - down / n + std::max(-d, 0.0);
    dxs(k) = dx(tr, up, down);
  }
  const Eigen::Index first = 2 * period - 1;
  double a = dxs.segment(period, period).mean();
  out(first) = a;
  for (Eigen::Index k = first + 1; k < p.size(); ++k) {
    a = (a * (n - 1.0) + dxs(k)) / n;
    out(k) = a;
  }
  return out;
}

}  // namespace detail

inline IndicatorSet compute_indicators(const PriceTable& prices) {
  const auto m = prices.rows();
  if (m < kMinIndicatorRows) {
    throw DataError("indicators need at least " + std::to_string(kMinIndicatorRows) +
                    " date rows, found " + std::to_string(m));
  }
  const auto n = prices.assets();
  IndicatorSet s{Matrix(m, n), Matrix(m, n), Matrix(m, n), Matrix(m, n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    const Vector p = prices.closes.col(j);
    Vector macd = detail::ema(p, 12) - detail::ema(p, 26);
    macd.head(25).setConstant(kNeutralMacd);
    s.macd.col(j) = macd;
    s.rsi.col(j) = detail::rsi(p, kIndicatorPeriod);
    s.cci.col(j) = detail::cci(p, kIndicatorPeriod);
    s.adx.col(j) = detail::adx(p, kIndicatorPeriod);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Crash-intensity labels and diffusion windows

inline constexpr double kReferenceDrawdown = 0.20;

// Max drawdown of an equal-weight buy-and-hold portfolio over the window.
inline double equal_weight_drawdown(const Eigen::Ref<const Matrix>& window) {
  const auto n = window.cols();
  Eigen::ArrayXd growth = Eigen::ArrayXd::Ones(n);
  double peak = 1.0, worst = 0.0;
  for (Eigen::Index t = 0; t < window.rows(); ++t) {
    growth *= 1.0 + window.row(t).transpose().array();
    const double v = growth.mean();
    peak = std::max(peak, v);
    worst = std::max(worst, 1.0 - v / peak);
  }
  return worst;
}

inline double label_crash_intensity(const Eigen::Ref<const Matrix>& window) {
  if (window.size() == 0) throw DataError("cannot label an empty window");
  return std::min(1.0, equal_weight_drawdown(window) / kReferenceDrawdown);
}

inline StandardizationStats fit_standardization(const ReturnMatrix& returns,
                                                const std::vector<std::string>& tickers = {}) {
  const Matrix& v = returns.values;
  if (v.rows() < 2) throw DataError("standardization needs at least 2 return rows");
  StandardizationStats s;
  s.mean = v.colwise().mean().transpose();
  s.stddev.resize(v.cols());
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    const double var = (v.col(j).array() - s.mean(j)).square().sum() / static_cast<double>(v.rows() - 1);
    s.stddev(j) = std::sqrt(var);
    if (!(s.stddev(j) > 0.0)) {
      const std::string name = j < static_cast<Eigen::Index>(tickers.size())
                                   ? tickers[static_cast<std::size_t>(j)]
                                   : "#" + std::to_string(j);
      throw DataError("asset " + name + " has zero return variance");
    }
  }
  return s;
}

inline Matrix standardize(const Eigen::Ref<const Matrix>& raw, const StandardizationStats& s) {
  return ((raw.rowwise() - s.mean.transpose()).array().rowwise() / s.stddev.transpose().array())
      .matrix();
}

inline Matrix destandardize(const Eigen::Ref<const Matrix>& z, const StandardizationStats& s) {
  return ((z.array().rowwise() * s.stddev.transpose().array()).matrix().rowwise() +
          s.mean.transpose());
}

inline WindowDataset extract_windows(const ReturnMatrix& returns, Eigen::Index length = 32,
                                     Eigen::Index stride = 4,
                                     const std::vector<std::string>& tickers = {}) {
  if (length <= 0 || stride <= 0) throw DataError("window length and stride must be positive");
  const auto rows = returns.values.rows();
  if (length > rows) {
    throw DataError("window length " + std::to_string(length) + " exceeds " +
                    std::to_string(rows) + " return rows");
  }
  WindowDataset ds;
  ds.stats = fit_standardization(returns, tickers);
  ds.length = length;
  ds.assets = returns.values.cols();
  ds.tickers = tickers;
  for (Eigen::Index start = 0; start + length <= rows; start += stride) {
    const auto raw = returns.values.middleRows(start, length);
    WindowSample s;
    s.window = standardize(raw, ds.stats);
    s.intensity = label_crash_intensity(raw);
    s.origin = std::make_pair(returns.dates[static_cast<std::size_t>(start)],
                              returns.dates[static_cast<std::size_t>(start + length - 1)]);
    s.start_row = start;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

inline nlohmann::json stats_to_json(const StandardizationStats& s) {
  return {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
          {"stddev", std::vector<double>(s.stddev.data(), s.stddev.data() + s.stddev.size())}};
}

inline StandardizationStats stats_from_json(const nlohmann::json& j) {
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto s = j.at("stddev").get<std::vector<double>>();
  if (m.size() != s.size()) throw DataError("standardization stats size mismatch");
  StandardizationStats out;
  out.mean = Eigen::Map<const Vector>(m.data(), static_cast<Eigen::Index>(m.size()));
  out.stddev = Eigen::Map<const Vector>(s.data(), static_cast<Eigen::Index>(s.size()));
  return out;
}

// Dataset cache: stats plus the window index (no window payloads).
inline nlohmann::json dataset_to_json(const WindowDataset& ds) {
  nlohmann::json windows = nlohmann::json::array();
  for (const auto& s : ds.samples) {
    nlohmann::json w{{"start_row", s.start_row}, {"intensity", s.intensity}};
    if (s.origin) {
      w["start"] = s.origin->first.iso();
      w["end"] = s.origin->second.iso();
    } else {
      w["origin"] = "SYNTHETIC";
    }
    windows.push_back(std::move(w));
  }
  return {{"format_version", 1},
          {"window_length", ds.length},
          {"assets", ds.assets},
          {"tickers", ds.tickers},
          {"stats", stats_to_json(ds.stats)},
          {"windows", std::move(windows)},
          {"dataset_hash", ds.hash()}};
}

}  // namespace darl

#endif  // DARL_MARKET_DATA_HPP_
