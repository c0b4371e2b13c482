#pragma once

// Paired Wilcoxon signed-rank test and win/loss/draw summaries.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "apg/exchange_io.hpp"

namespace apg {

enum class TestMethod { kExact, kNormalApprox };
enum class Verdict { kWin, kLoss, kDraw };

inline std::string_view to_string(TestMethod m) { return m == TestMethod::kExact ? "exact" : "normal_approx"; }

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::kWin: return "win";
    case Verdict::kLoss: return "loss";
    case Verdict::kDraw: return "draw";
  }
  return "draw";
}

struct TestResult {
  std::size_t n_effective = 0;
  double w_plus = 0.0;
  double w_minus = 0.0;
  /// min(W+, W−)
  double w_statistic = 0.0;
  double p_value = 1.0;
  TestMethod method = TestMethod::kExact;
  Verdict verdict = Verdict::kDraw;
};

/// Largest sample for which the exact null distribution is used.
inline constexpr std::size_t kExactMaxN = 25;

/// Number of sign assignments of ranks 1..n whose positive-rank sum equals s,
/// for s = 0..n(n+1)/2. Entries sum to 2^n.
inline std::vector<double> signed_rank_counts(std::size_t n) {
  const std::size_t max_sum = n * (n + 1) / 2;
  std::vector<double> counts(max_sum + 1, 0.0);
  counts[0] = 1.0;
  for (std::size_t r = 1; r <= n; ++r) {
    for (std::size_t s = max_sum; s >= r; --s) counts[s] += counts[s - r];
  }
  return counts;
}

/// Two-sided test of the per-pair differences a − b. Zero differences are
/// dropped; |d| ranked with midranks. The exact null distribution is used for
/// n ≤ 25 without tied magnitudes, the tie-corrected normal approximation with
/// 0.5 continuity correction otherwise. Verdict: draw iff p ≥ alpha, else win
/// when W+ > W− (a scores higher).
inline TestResult wilcoxon_signed_rank(const std::vector<double>& diffs, double alpha = 0.05) {
  std::vector<double> nz;
  for (double d : diffs) {
    if (d != 0.0) nz.push_back(d);
  }
  if (nz.empty()) throw Error(ErrorCode::kAllZeroDiffs, "every paired difference is zero");

  const std::size_t n = nz.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::abs(nz[a]) < std::abs(nz[b]); });

  std::vector<double> rank(n);
  bool ties = false;
  double tie_term = 0.0;  // Σ (t³ − t)
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(nz[order[j + 1]]) == std::abs(nz[order[i]])) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    const double t = static_cast<double>(j - i + 1);
    if (j > i) {
      ties = true;
      tie_term += t * t * t - t;
    }
    i = j + 1;
  }

  TestResult res;
  res.n_effective = n;
  for (std::size_t i = 0; i < n; ++i) (nz[i] > 0 ? res.w_plus : res.w_minus) += rank[i];
  res.w_statistic = std::min(res.w_plus, res.w_minus);

  if (n <= kExactMaxN && !ties) {
    res.method = TestMethod::kExact;
    const auto counts = signed_rank_counts(n);
    const auto w = static_cast<std::size_t>(res.w_statistic);
    double tail = 0.0;
    for (std::size_t s = 0; s <= w; ++s) tail += counts[s];
    res.p_value = std::min(1.0, 2.0 * tail / std::ldexp(1.0, static_cast<int>(n)));
  } else {
    res.method = TestMethod::kNormalApprox;
    const double nd = static_cast<double>(n);
    const double mean = nd * (nd + 1.0) / 4.0;
    const double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_term / 48.0;
    const double dev = std::max(0.0, std::abs(res.w_plus - mean) - 0.5);
    const double z = var > 0.0 ? dev / std::sqrt(var) : 0.0;
    res.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  }

  if (res.p_value >= alpha || res.w_plus == res.w_minus) {
    res.verdict = Verdict::kDraw;
  } else {
    res.verdict = res.w_plus > res.w_minus ? Verdict::kWin : Verdict::kLoss;
  }
  return res;
}

struct PairwiseCell {
  std::string method_a;
  std::string method_b;
  std::size_t n_images = 0;
  TestResult result;  // all-zero differences are reported as a draw with p = 1
};

/// dataset → ordered pair (a, b), a ≠ b or a == b → test of a − b.
using WinLossMatrix = std::map<std::string, std::map<std::pair<std::string, std::string>, PairwiseCell>>;

/// Differences a − b over image ids scored by both methods within one dataset.
inline std::vector<double> paired_differences(const ScoreTable& table, const std::string& dataset,
                                              const std::string& a, const std::string& b) {
  std::map<std::string, double> sa, sb;
  for (const auto& r : table.rows) {
    if (r.dataset != dataset) continue;
    if (r.method == a) sa[r.image_id] = r.msa;
    if (r.method == b) sb[r.image_id] = r.msa;
  }
  std::vector<double> diffs;
  for (const auto& [id, v] : sa) {
    auto it = sb.find(id);
    if (it != sb.end()) diffs.push_back(v - it->second);
  }
  return diffs;
}

/// One test per ordered method pair (including a method with itself) per dataset.
inline WinLossMatrix win_loss_draw(const ScoreTable& table, double alpha = 0.05) {
  std::map<std::string, std::set<std::string>> methods_by_dataset;
  for (const auto& r : table.rows) methods_by_dataset[r.dataset].insert(r.method);

  WinLossMatrix out;
  for (const auto& [dataset, methods] : methods_by_dataset) {
    for (const auto& a : methods) {
      for (const auto& b : methods) {
        const auto diffs = paired_differences(table, dataset, a, b);
        if (diffs.empty()) {
          throw Error(ErrorCode::kMissingCell, a + " and " + b + " share no images on " + dataset);
        }
        PairwiseCell cell{a, b, diffs.size(), {}};
        const bool all_zero = std::all_of(diffs.begin(), diffs.end(), [](double d) { return d == 0.0; });
        if (!all_zero) cell.result = wilcoxon_signed_rank(diffs, alpha);
        out[dataset][{a, b}] = cell;
      }
    }
  }
  return out;
}

/// {dataset → {"a vs b" → {w, p, verdict, ...}}} over ordered pairs a ≠ b.
inline nlohmann::json win_loss_to_json(const WinLossMatrix& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [dataset, cells] : m) {
    nlohmann::json d = nlohmann::json::object();
    for (const auto& [pair, cell] : cells) {
      if (pair.first == pair.second) continue;
      d[pair.first + " vs " + pair.second] = {
          {"method_a", cell.method_a},
          {"method_b", cell.method_b},
          {"n_images", cell.n_images},
          {"n_effective", cell.result.n_effective},
          {"w", cell.result.w_statistic},
          {"w_plus", cell.result.w_plus},
          {"w_minus", cell.result.w_minus},
          {"p", cell.result.p_value},
          {"test", std::string(to_string(cell.result.method))},
          {"verdict", std::string(to_string(cell.result.verdict))},
      };
    }
    j[dataset] = d;
  }
  return j;
}

}  // namespace apg
