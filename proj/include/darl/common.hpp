// Shared vocabulary: error types, calendar dates, content hashing, seeding.

#ifndef DARL_COMMON_HPP_
#define DARL_COMMON_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace darl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// Row-major storage so that flattening a window (L x N) walks time first.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Bad input data (CSV contents, shapes, ranges).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration values or flag combinations.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A required upstream artifact is absent or stale.
class MissingPrerequisite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf appeared where finite values are required.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Synthetic data reached a code path reserved for real market data.
class LeakError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Proleptic Gregorian calendar date, totally ordered by day number.
class Date {
 public:
  Date() = default;
  Date(int year, unsigned month, unsigned day) : days_(to_days(year, month, day)) {
    if (month < 1 || month > 12 || day < 1 || day > days_in_month(year, month)) {
      throw DataError("invalid calendar date " + std::to_string(year) + "-" +
                      std::to_string(month) + "-" + std::to_string(day));
    }
  }

  // Parses YYYY-MM-DD.
  static Date parse(std::string_view text) {
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
      throw DataError("not an ISO-8601 date: '" + std::string(text) + "'");
    }
    auto digits = [&](std::size_t from, std::size_t len) {
      int v = 0;
      for (std::size_t i = from; i < from + len; ++i) {
        if (text[i] < '0' || text[i] > '9') {
          throw DataError("not an ISO-8601 date: '" + std::string(text) + "'");
        }
        v = v * 10 + (text[i] - '0');
      }
      return v;
    };
    return Date(digits(0, 4), static_cast<unsigned>(digits(5, 2)),
                static_cast<unsigned>(digits(8, 2)));
  }

  static Date from_days(std::int64_t days) {
    Date d;
    d.days_ = days;
    return d;
  }

  std::int64_t days() const { return days_; }
  Date plus_days(std::int64_t n) const { return from_days(days_ + n); }

  std::string iso() const {
    // Inverse of to_days (Howard Hinnant's civil_from_days).
    std::int64_t z = days_ + 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const auto doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp < 10 ? mp + 3 : mp - 9;
    if (m <= 2) ++y;
    std::ostringstream os;
    os << std::setfill('0') << std::setw(4) << y << '-' << std::setw(2) << m << '-'
       << std::setw(2) << d;
    return os.str();
  }

  friend auto operator<=>(const Date&, const Date&) = default;

 private:
  static bool leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }
  static unsigned days_in_month(int y, unsigned m) {
    static constexpr unsigned kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (m < 1 || m > 12) return 0;
    return m == 2 && leap(y) ? 29 : kDays[m - 1];
  }
  static std::int64_t to_days(int y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
  }

  std::int64_t days_ = 0;
};

// 64-bit FNV-1a. Used for manifest content hashes and dataset fingerprints.
class Fnv1a {
 public:
  Fnv1a& update(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      state_ ^= bytes[i];
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv1a& update(std::string_view s) { return update(s.data(), s.size()); }
  Fnv1a& update(double v) { return update(&v, sizeof v); }
  Fnv1a& update(const Eigen::Ref<const Matrix>& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) update(m(r, c));
    return *this;
  }

  std::uint64_t value() const { return state_; }
  std::string hex() const {
    std::ostringstream os;
    os << std::hex << std::setfill('0') << std::setw(16) << state_;
    return os.str();
  }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string hash_bytes(std::string_view s) { return Fnv1a{}.update(s).hex(); }

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingPrerequisite("cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::string hash_file(const std::string& path) { return hash_bytes(read_file(path)); }

inline void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write file: " + path);
  out << contents;
}

// Independent per-stage / per-stream seed derivation (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

// Shortest round-trip text for a double, used in CSV emission.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace darl

#endif  // DARL_COMMON_HPP_
