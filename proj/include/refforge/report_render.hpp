#pragma once

#include <string>
#include <vector>

#include "refforge/eval_harness.hpp"

namespace refforge {

// Two-decimal inputs are averaged in exact decimal hundredths and rounded
// half away from zero, so 84.285 renders as "84.29" the way a by-hand
// average would, not as binary-float printf would.
long long to_cents(double value);
std::string cents_to_string(long long cents);
std::string render_mean_2dp(const std::vector<double>& values);

// 100 * sum(numerators) / sum(denominators), two decimals, half-up.
std::string render_ratio_percent(const std::vector<double>& numerators,
                                 const std::vector<double>& denominators);

// Plain-text tables mirroring the report schema; the reference lines quote
// full-scale (7b-15b model) averages for orientation only.
std::string render_overview_table(const AttackReport& report);
std::string render_transfer_table(const TransferReport& report);

}  // namespace refforge
