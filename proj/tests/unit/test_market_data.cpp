#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "darl/market_data.hpp"

using namespace darl;
using Catch::Approx;

namespace {

std::string csv_with_gaps(int rows, int blanks_in_c) {
  std::ostringstream os;
  os << "date,A,B,C\n";
  for (int i = 0; i < rows; ++i) {
    os << Date(2024, 1, 1).plus_days(i).iso() << ',' << 100 + i << ',' << 50 + i << ',';
    // Blanks in C land after the first row so forward-fill has a source.
    if (!(i >= 1 && i <= blanks_in_c)) os << 20 + i;
    os << '\n';
  }
  return os.str();
}

IngestOptions small(Eigen::Index min_rows = 2) {
  IngestOptions o;
  o.min_rows = min_rows;
  return o;
}

// Tiny fixtures where a single blank exceeds the 10% threshold.
IngestOptions lenient() {
  IngestOptions o = small();
  o.max_missing_fraction = 0.5;
  return o;
}

ReturnMatrix make_returns(const Matrix& values) {
  ReturnMatrix r;
  r.values = values;
  for (Eigen::Index i = 0; i < values.rows(); ++i) r.dates.push_back(Date(2020, 1, 1).plus_days(i));
  return r;
}

// Two-pass sample covariance written out element by element.
double two_pass_cov(const Matrix& m, Eigen::Index a, Eigen::Index b) {
  const auto n = m.rows();
  double ma = 0, mb = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    ma += m(i, a);
    mb += m(i, b);
  }
  ma /= n;
  mb /= n;
  double s = 0;
  for (Eigen::Index i = 0; i < n; ++i) s += (m(i, a) - ma) * (m(i, b) - mb);
  return s / (n - 1);
}

// Wilder RSI written with the incremental-average form avg += (x - avg)/n.
std::vector<double> wilder_rsi_oracle(const std::vector<double>& p, int n) {
  std::vector<double> out(p.size(), 50.0);
  double g = 0, l = 0;
  for (int k = 1; k <= n; ++k) {
    const double d = p[k] - p[k - 1];
    if (d > 0) g += d; else l -= d;
  }
  g /= n;
  l /= n;
  auto rsi = [](double g, double l) { return l == 0 ? (g > 0 ? 100.0 : 50.0) : 100.0 * g / (g + l); };
  out[n] = rsi(g, l);
  for (std::size_t k = n + 1; k < p.size(); ++k) {
    const double d = p[k] - p[k - 1];
    g += ((d > 0 ? d : 0.0) - g) / n;
    l += ((d < 0 ? -d : 0.0) - l) / n;
    out[k] = rsi(g, l);
  }
  return out;
}

}  // namespace

TEST_CASE("load_csv ingests a clean file as is", "[market_data]") {
  const auto r = ingest_csv_text("date,A,B\n2024-01-02,10,20\n2024-01-03,11,21\n2024-01-04,12,22\n", small());
  REQUIRE(r.table.rows() == 3);
  REQUIRE(r.table.assets() == 2);
  CHECK(r.table.tickers == std::vector<std::string>{"A", "B"});
  CHECK(r.table.closes(2, 1) == 22.0);
  CHECK(r.table.origin == Origin::kReal);
}

TEST_CASE("load_csv sorts rows by date", "[market_data]") {
  const auto r = ingest_csv_text("date,A,B\n2024-01-04,12,22\n2024-01-02,10,20\n2024-01-03,11,21\n", small());
  CHECK(r.table.dates.front() == Date(2024, 1, 2));
  CHECK(r.table.closes(0, 0) == 10.0);
}

TEST_CASE("empty cells are forward-filled from the previous close", "[market_data]") {
  const auto r = ingest_csv_text("date,A,B\n2024-01-02,10,20\n2024-01-03,,21\n2024-01-04,12,-1\n", lenient());
  CHECK(r.table.closes(1, 0) == 10.0);
  CHECK(r.table.closes(2, 1) == 21.0);  // non-positive counts as missing
  CHECK(r.filled_cells == 2);
}

TEST_CASE("leading gaps drop the date row", "[market_data]") {
  const auto r = ingest_csv_text("date,A,B\n2024-01-02,10,\n2024-01-03,11,21\n2024-01-04,12,22\n", lenient());
  CHECK(r.table.rows() == 2);
  CHECK(r.table.dates.front() == Date(2024, 1, 3));
  CHECK(r.dropped_leading_rows == 1);
}

TEST_CASE("a ticker with 15% blanks is rejected by name", "[market_data]") {
  // 3 of 20 rows blank = 15% > 10%.
  const std::string text = csv_with_gaps(20, 3);
  REQUIRE_THROWS_WITH(ingest_csv_text(text, small()), Catch::Matchers::ContainsSubstring("ticker C"));

  IngestOptions drop = small();
  drop.reject = RejectPolicy::kDrop;
  const auto r = ingest_csv_text(text, drop);
  CHECK(r.rejected == std::vector<std::string>{"C"});
  CHECK(r.table.tickers == std::vector<std::string>{"A", "B"});
}

TEST_CASE("a ticker with 10% blanks survives", "[market_data]") {
  const auto r = ingest_csv_text(csv_with_gaps(20, 2), small());
  CHECK(r.table.assets() == 3);
}

TEST_CASE("ingestion errors", "[market_data]") {
  CHECK_THROWS_AS(ingest_csv_text("date,A\n2024-01-02,1\n2024-01-03,2\n", small()), DataError);
  CHECK_THROWS_AS(ingest_csv_text("date,A,B\n2024-01-02,1,x\n2024-01-03,2,2\n", small()), DataError);
  CHECK_THROWS_AS(ingest_csv_text("date,A,B\n2024/01/02,1,1\n", small()), DataError);
  CHECK_THROWS_AS(ingest_csv_text("date,A,B\n2024-01-02,1,1\n2024-01-02,2,2\n", small()), DataError);
  CHECK_THROWS_WITH(ingest_csv_text("date,A,B\n2024-01-02,1,1\n2024-01-03,2,2\n"),
                    Catch::Matchers::ContainsSubstring("300"));
  CHECK_THROWS_WITH(load_csv("/nonexistent/prices.csv"), Catch::Matchers::ContainsSubstring("/nonexistent/prices.csv"));
}

TEST_CASE("compute_returns examples", "[market_data]") {
  PriceTable t;
  t.dates = {Date(2024, 1, 1), Date(2024, 1, 2), Date(2024, 1, 3)};
  t.tickers = {"FLAT", "MOVE", "DOUBLE"};
  t.closes.resize(3, 3);
  t.closes << 100, 100, 1,
              100, 110, 2,
              100, 99, 4;
  const auto r = compute_returns(t);
  REQUIRE(r.values.rows() == 2);
  CHECK(r.dates.front() == Date(2024, 1, 2));
  CHECK(r.values(0, 0) == 0.0);
  CHECK(r.values(1, 0) == 0.0);
  CHECK(r.values(0, 1) == Approx(0.10).margin(1e-15));
  CHECK(r.values(1, 1) == Approx(-0.10).margin(1e-15));
  CHECK(r.values(0, 2) == 1.0);
  CHECK(r.values(1, 2) == 1.0);
}

TEST_CASE("bundled five-row fixture reproduces hand-computed returns exactly", "[market_data]") {
  const auto t = load_csv(std::string(DARL_TEST_DATA_DIR) + "/five_rows.csv", small(5));
  const auto r = compute_returns(t);
  const Matrix expected = (Matrix(4, 2) << 0.25, 0.5,
                                            0.25, -0.5,
                                            -0.5, 0.25,
                                            0.5, 0.5).finished();
  CHECK(r.values == expected);
}

TEST_CASE("rolling covariance of identical columns has correlation one", "[market_data]") {
  Matrix v(10, 2);
  for (int i = 0; i < 10; ++i) v(i, 0) = v(i, 1) = std::sin(i * 0.7) * 0.01;
  const auto covs = rolling_covariance(make_returns(v), 5);
  REQUIRE(covs.size() == 6);
  for (const auto& c : covs) CHECK(c.values(0, 1) == Approx(c.values(0, 0)).epsilon(1e-12));
  CHECK(covs.front().as_of == Date(2020, 1, 1).plus_days(4));
}

TEST_CASE("covariance against a near-constant column vanishes", "[market_data]") {
  Matrix v(60, 2);
  for (int i = 0; i < 60; ++i) {
    v(i, 0) = i % 2 == 0 ? 1.0 : -1.0;
    v(i, 1) = 1e-9 * std::cos(1.3 * i);
  }
  for (const auto& c : rolling_covariance(make_returns(v), 20)) CHECK(std::abs(c.values(0, 1)) < 1e-6);
}

TEST_CASE("covariance matches the two-pass oracle", "[market_data]") {
  Matrix v(5, 2);
  v << 0.01, -0.02,
       0.03, 0.01,
      -0.01, 0.02,
       0.02, -0.01,
       0.00, 0.03;
  const auto c = rolling_covariance(make_returns(v), 5).front().values;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) CHECK(std::abs(c(a, b) - two_pass_cov(v, a, b)) < 1e-12);
  CHECK_THROWS_AS(rolling_covariance(make_returns(v), 1), DataError);
  CHECK_THROWS_AS(rolling_covariance(make_returns(v), 6), DataError);
}

TEST_CASE("covariances are symmetric positive semidefinite", "[market_data][property]") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 50; ++trial) {
    const int assets = 2 + trial % 6;
    const int rows = 3 + trial % 20;
    Matrix v(rows, assets);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < assets; ++j) v(i, j) = 0.01 * n01(rng);
    const Matrix c = rolling_covariance(make_returns(v), rows).front().values;
    CHECK((c - c.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(c);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-9);
  }
}

TEST_CASE("indicators on rising and constant prices", "[market_data]") {
  PriceTable rising;
  rising.tickers = {"UP", "FLAT"};
  rising.closes.resize(50, 2);
  for (int i = 0; i < 50; ++i) {
    rising.dates.push_back(Date(2024, 1, 1).plus_days(i));
    rising.closes(i, 0) = 100.0 + i;
    rising.closes(i, 1) = 42.0;
  }
  const auto ind = compute_indicators(rising);
  CHECK(ind.rsi(49, 0) == 100.0);
  for (int i = 0; i < 50; ++i) {
    CHECK(ind.macd(i, 1) == 0.0);
    CHECK(ind.cci(i, 1) == 0.0);
  }
  // Neutral fill before the lookbacks are available.
  CHECK(ind.rsi(13, 0) == kNeutralRsi);
  CHECK(ind.adx(26, 0) == kNeutralAdx);
  CHECK(ind.macd(24, 0) == kNeutralMacd);
  // Pure uptrend: all directional movement is upward.
  CHECK(ind.adx(49, 0) == Approx(100.0));
  CHECK(ind.cci(49, 0) > 0.0);

  CHECK_THROWS_AS(compute_indicators(rising.slice(0, 29)), DataError);
}

TEST_CASE("RSI matches an independent Wilder recursion", "[market_data]") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> step(0.0, 1.0);
  PriceTable t;
  t.tickers = {"A", "B"};
  t.closes.resize(60, 2);
  std::vector<double> p;
  double x = 100.0;
  for (int i = 0; i < 60; ++i) {
    x = std::max(1.0, x + step(rng));
    p.push_back(x);
    t.dates.push_back(Date(2024, 1, 1).plus_days(i));
    t.closes(i, 0) = x;
    t.closes(i, 1) = 50.0 + i % 3;
  }
  const auto oracle = wilder_rsi_oracle(p, 14);
  const auto ind = compute_indicators(t);
  for (int i = 0; i < 60; ++i) {
    CHECK(std::abs(ind.rsi(i, 0) - oracle[static_cast<std::size_t>(i)]) < 1e-9);
    CHECK(ind.rsi(i, 0) >= 0.0);
    CHECK(ind.rsi(i, 0) <= 100.0);
  }
}

TEST_CASE("crash intensity labels", "[market_data]") {
  CHECK(label_crash_intensity(Matrix::Zero(5, 3)) == 0.0);
  CHECK(label_crash_intensity((Matrix(1, 1) << -0.25).finished()) == 1.0);
  CHECK(label_crash_intensity((Matrix(2, 1) << 0.10, -0.10).finished()) == Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(label_crash_intensity(Matrix(0, 2)), DataError);

  // -2% a day for 15 days: drawdown 1 - 0.98^15 ~ 26%.
  Matrix crash = Matrix::Constant(15, 2, -0.02);
  CHECK(label_crash_intensity(crash) == 1.0);
}

TEST_CASE("appending a negative return never lowers crash intensity", "[market_data][property]") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> neg(-0.05, -1e-6);
  for (int trial = 0; trial < 200; ++trial) {
    const int rows = 1 + trial % 20, assets = 1 + trial % 4;
    Matrix w(rows, assets);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < assets; ++j) w(i, j) = 0.02 * n01(rng);
    Matrix longer(rows + 1, assets);
    longer.topRows(rows) = w;
    for (int j = 0; j < assets; ++j) longer(rows, j) = neg(rng);
    CHECK(label_crash_intensity(longer) >= label_crash_intensity(w));
  }
}

TEST_CASE("extract_windows geometry and labels", "[market_data]") {
  Matrix v(40, 2);
  for (int i = 0; i < 40; ++i) {
    v(i, 0) = 0.01 * std::sin(i);
    v(i, 1) = 0.01 * std::cos(2 * i);
  }
  const auto ds = extract_windows(make_returns(v), 32, 4);
  REQUIRE(ds.samples.size() == 3);
  CHECK(ds.samples[0].start_row == 0);
  CHECK(ds.samples[1].start_row == 4);
  CHECK(ds.samples[2].start_row == 8);
  CHECK(ds.samples[1].origin->first == Date(2020, 1, 1).plus_days(4));
  CHECK(ds.samples[1].origin->second == Date(2020, 1, 1).plus_days(35));
  // Labels come from raw returns.
  CHECK(ds.samples[0].intensity == label_crash_intensity(v.topRows(32)));

  CHECK_THROWS_AS(extract_windows(make_returns(v), 0, 4), DataError);
  CHECK_THROWS_AS(extract_windows(make_returns(v), 8, 0), DataError);
  CHECK_THROWS_AS(extract_windows(make_returns(v), 41, 1), DataError);
}

TEST_CASE("standardized windows have zero mean and unit std", "[market_data]") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n01;
  Matrix v(64, 3);
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 3; ++j) v(i, j) = 0.001 * (j + 1) + 0.01 * (j + 1) * n01(rng);
  // Non-overlapping windows that tile the range exactly.
  const auto ds = extract_windows(make_returns(v), 16, 16);
  Matrix all(64, 3);
  for (std::size_t k = 0; k < ds.samples.size(); ++k) all.middleRows(16 * k, 16) = ds.samples[k].window;
  for (int j = 0; j < 3; ++j) {
    CHECK(std::abs(all.col(j).mean()) < 1e-12);
    const double sd = std::sqrt((all.col(j).array() - all.col(j).mean()).square().sum() / 63.0);
    CHECK(sd == Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("crash fixture window saturates intensity", "[market_data]") {
  Matrix v = Matrix::Constant(40, 2, 0.001);
  v.middleRows(0, 15).setConstant(-0.02);
  v(20, 0) = 0.002;  // keep variance nonzero
  const auto ds = extract_windows(make_returns(v), 32, 4);
  CHECK(ds.samples[0].intensity == 1.0);
}

TEST_CASE("zero-variance assets are rejected at standardization", "[market_data]") {
  Matrix v = Matrix::Zero(10, 2);
  v(3, 0) = 0.01;
  CHECK_THROWS_WITH(fit_standardization(make_returns(v), {"X", "Y"}), Catch::Matchers::ContainsSubstring("Y"));
}

TEST_CASE("destandardize inverts standardize", "[market_data][property]") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 20; ++trial) {
    Matrix v(30, 4);
    for (int i = 0; i < 30; ++i)
      for (int j = 0; j < 4; ++j) v(i, j) = 0.02 * n01(rng) + 0.001 * j;
    const auto stats = fit_standardization(make_returns(v));
    CHECK((destandardize(standardize(v, stats), stats) - v).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("dataset cache JSON carries stats and the window index", "[market_data]") {
  Matrix v(40, 2);
  for (int i = 0; i < 40; ++i) v.row(i) << 0.01 * std::sin(i), 0.01 * std::cos(i);
  const auto ds = extract_windows(make_returns(v), 32, 4, {"A", "B"});
  const auto j = dataset_to_json(ds);
  CHECK(j.at("windows").size() == 3);
  CHECK(j.at("windows")[1].at("start") == "2020-01-05");
  CHECK(j.at("dataset_hash") == ds.hash());
  const auto stats = stats_from_json(j.at("stats"));
  CHECK(stats.mean == ds.stats.mean);
  CHECK(stats.stddev == ds.stats.stddev);
}

TEST_CASE("dates round-trip through ISO text", "[market_data]") {
  for (const char* s : {"2011-01-03", "2024-02-29", "2025-07-31", "1999-12-31"}) CHECK(Date::parse(s).iso() == s);
  CHECK(Date(2024, 3, 1).days() - Date(2024, 2, 28).days() == 2);
  CHECK_THROWS_AS(Date::parse("2023-02-29"), DataError);
}
