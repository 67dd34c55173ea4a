#include "refforge/report_render.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "refforge/errors.hpp"

namespace refforge {

long long to_cents(double value) { return llround(value * 100.0); }

std::string cents_to_string(long long cents) {
  const bool neg = cents < 0;
  long long c = neg ? -cents : cents;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%lld.%02lld", neg ? "-" : "", c / 100, c % 100);
  return buf;
}

namespace {

// Half away from zero on an exact rational p/q, q > 0.
long long div_round_half_up(long long p, long long q) {
  if (p >= 0) return (2 * p + q) / (2 * q);
  return -((-2 * p + q) / (2 * q));
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::string render_mean_2dp(const std::vector<double>& values) {
  if (values.empty()) raise("validation-failure", "cannot average an empty list");
  long long sum = 0;
  for (double v : values) sum += to_cents(v);
  return cents_to_string(div_round_half_up(sum, static_cast<long long>(values.size())));
}

std::string render_ratio_percent(const std::vector<double>& numerators,
                                 const std::vector<double>& denominators) {
  long long num = 0, den = 0;
  for (double v : numerators) num += to_cents(v);
  for (double v : denominators) den += to_cents(v);
  if (den == 0) raise("validation-failure", "ratio denominator is zero");
  return cents_to_string(div_round_half_up(num * 10000, den));
}

std::string render_overview_table(const AttackReport& report) {
  const SuiteAggregates agg = report.aggregates();
  std::ostringstream out;
  out << "vulnerability        ASR      Iter     Input    Res      Seq\n";

  std::map<std::string, double> sum_iter, sum_input, sum_res, sum_seq;
  std::map<std::string, int> ran;
  for (const auto& r : report.rows) {
    if (!r.error.empty()) continue;
    const std::string cls = to_string(r.vuln_class);
    ++ran[cls];
    sum_iter[cls] += r.iterations;
    sum_input[cls] += r.input_tokens;
    sum_res[cls] += r.res_tokens;
    sum_seq[cls] += r.seq_tokens;
  }
  auto row = [&](const std::string& name, double asr, double it, double in, double re, double se) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-20s %-8s %-8s %-8s %-8s %-8s\n", name.c_str(),
                  (fixed2(asr * 100.0) + "%").c_str(), fixed2(it).c_str(), fixed2(in).c_str(),
                  fixed2(re).c_str(), fixed2(se).c_str());
    out << buf;
  };
  for (const auto& [cls, asr] : agg.asr_by_class) {
    const int n = std::max(1, ran.count(cls) ? ran[cls] : 0);
    row(cls, asr, sum_iter[cls] / n, sum_input[cls] / n, sum_res[cls] / n, sum_seq[cls] / n);
  }
  if (agg.asr_defined) {
    row("Average", agg.asr, agg.mean_iterations, agg.mean_input, agg.mean_res, agg.mean_seq);
  } else {
    out << "Average              (no records)\n";
  }
  out << "\nreference (full-scale 7b-15b runs): per-model ASR 77.14/80.00/94.29/85.71 -> "
      << render_mean_2dp({77.14, 80.00, 94.29, 85.71}) << "% overall; seq/input length ratio "
      << render_ratio_percent({33.27, 33.30, 33.72, 32.13}, {923.66, 975.22, 986.23, 965.39})
      << "%\n";
  return out.str();
}

std::string render_transfer_table(const TransferReport& report) {
  std::ostringstream out;
  const auto fractions = report.fraction_at_least();
  out << "pass threshold   fraction of records\n";
  for (int j = report.n; j >= 1; --j) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%d/%d              %s%%\n", j, report.n,
                  fixed2(fractions[j - 1] * 100.0).c_str());
    out << buf;
  }
  out << "\nreference (full-scale 7b-15b runs): 37.85% at 5/5, 83.58% at 1/5\n";
  return out.str();
}

}  // namespace refforge
