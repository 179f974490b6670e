// Reference indicator table used as a consistency fixture.

#ifndef DARL_TESTS_REFERENCE_TABLE_HPP_
#define DARL_TESTS_REFERENCE_TABLE_HPP_

#include <vector>

#include "darl/backtest.hpp"

namespace darl::testing {

inline std::vector<backtest::NamedReport> reference_reports() {
  using backtest::Role;
  auto row = [](const char* name, Role role, double cum, double ann, double sharpe, double calmar, double vol,
                double mdd) {
    return backtest::NamedReport{name, role, {cum, ann, sharpe, calmar, vol, mdd, true}};
  };
  // Listed out of order on purpose; compare() sorts by role.
  return {row("Index", Role::kIndex, 17.8874, 11.0694, 0.7717, 0.6762, 15.0674, -16.3692),
          row("Markowitz", Role::kBaseline, 24.6485, 15.1333, 1.1246, 1.2754, 13.3178, -11.8651),
          row("Proposed", Role::kProposed, 59.5253, 34.7101, 1.9096, 2.2024, 16.3058, -15.7598),
          row("Without Augmentation", Role::kAblation, 49.4439, 29.2149, 1.5172, 1.4385, 17.9649, -20.3080),
          row("FinRL-PPO", Role::kBaseline, 46.2286, 27.4344, 1.5411, 1.3961, 16.6335, -19.6496),
          row("OLMAR", Role::kBaseline, 11.8773, 7.5214, 0.4097, 0.2455, 25.6876, -30.6370),
          row("Hybrid-GA", Role::kBaseline, 34.5056, 20.8184, 1.2623, 1.2403, 15.9922, -16.7852)};
}

}  // namespace darl::testing

#endif  // DARL_TESTS_REFERENCE_TABLE_HPP_
