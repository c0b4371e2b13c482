#pragma once

// Mean segmentation accuracy: mean over IoU thresholds t of
// TP(t) / (TP(t) + FP(t) + FN(t)), plus aggregation and cross-method ranks.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "apg/exchange_io.hpp"
#include "apg/raster.hpp"

namespace apg {

struct IouEntry {
  std::int32_t pred_label;
  std::int32_t gt_label;
  std::int64_t intersection;
  double iou;
};

/// Sparse IoU matrix over nonzero labels; only overlapping pairs are stored.
struct IouTable {
  std::map<std::int32_t, std::int64_t> pred_areas;
  std::map<std::int32_t, std::int64_t> gt_areas;
  std::vector<IouEntry> entries;  // sorted by (pred_label, gt_label)

  std::size_t pred_count() const { return pred_areas.size(); }
  std::size_t gt_count() const { return gt_areas.size(); }
};

/// One joint contingency pass over both maps.
inline IouTable iou_table(const LabelMap& pred, const LabelMap& gt) {
  require_same_shape(pred.shape(), gt.shape(), "iou_table");
  IouTable t;
  std::unordered_map<std::uint64_t, std::int64_t> joint;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::int32_t p = pred[i], g = gt[i];
    if (p != 0) ++t.pred_areas[p];
    if (g != 0) ++t.gt_areas[g];
    if (p != 0 && g != 0) {
      ++joint[(static_cast<std::uint64_t>(static_cast<std::uint32_t>(p)) << 32) | static_cast<std::uint32_t>(g)];
    }
  }
  t.entries.reserve(joint.size());
  for (const auto& [key, n] : joint) {
    const auto p = static_cast<std::int32_t>(key >> 32);
    const auto g = static_cast<std::int32_t>(key & 0xFFFFFFFFu);
    const std::int64_t uni = t.pred_areas[p] + t.gt_areas[g] - n;
    t.entries.push_back({p, g, n, static_cast<double>(n) / static_cast<double>(uni)});
  }
  std::sort(t.entries.begin(), t.entries.end(), [](const IouEntry& a, const IouEntry& b) {
    return a.pred_label != b.pred_label ? a.pred_label < b.pred_label : a.gt_label < b.gt_label;
  });
  return t;
}

struct Match {
  std::int32_t pred_label;
  std::int32_t gt_label;
  double iou;
};

struct MatchResult {
  double threshold = 0.0;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::vector<Match> matches;

  /// TP / (TP + FP + FN), with the empty-vs-empty case scored 1.
  double accuracy() const {
    const std::int64_t denom = tp + fp + fn;
    return denom == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(denom);
  }
};

/// Pairs with IoU strictly above `t`. For t ≥ 0.5 no object can exceed the
/// threshold with two partners, so these pairs already form a matching.
inline MatchResult match_at(const IouTable& table, double t) {
  if (!(t >= 0.5)) {
    throw Error(ErrorCode::kThresholdBelowHalf, "threshold " + std::to_string(t) + " needs an explicit assignment");
  }
  MatchResult r;
  r.threshold = t;
  for (const auto& e : table.entries) {
    if (e.iou > t) r.matches.push_back({e.pred_label, e.gt_label, e.iou});
  }
  r.tp = static_cast<std::int64_t>(r.matches.size());
  r.fp = static_cast<std::int64_t>(table.pred_count()) - r.tp;
  r.fn = static_cast<std::int64_t>(table.gt_count()) - r.tp;
  return r;
}

using ThresholdSchedule = std::vector<double>;

inline ThresholdSchedule default_schedule() { return {0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95}; }

inline void validate_schedule(const ThresholdSchedule& s) {
  if (s.empty()) throw Error(ErrorCode::kInvalidArgument, "threshold schedule is empty");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!(s[i] >= 0.5)) throw Error(ErrorCode::kThresholdBelowHalf, "threshold " + std::to_string(s[i]));
    if (s[i] > 1.0) throw Error(ErrorCode::kInvalidArgument, "threshold above 1");
    if (i > 0 && !(s[i] > s[i - 1])) throw Error(ErrorCode::kInvalidArgument, "thresholds must strictly increase");
  }
}

inline double msa(const IouTable& table, const ThresholdSchedule& schedule) {
  validate_schedule(schedule);
  double sum = 0.0;
  for (double t : schedule) sum += match_at(table, t).accuracy();
  return sum / static_cast<double>(schedule.size());
}

inline double msa(const LabelMap& pred, const LabelMap& gt, const ThresholdSchedule& schedule = default_schedule()) {
  return msa(iou_table(pred, gt), schedule);
}

// ---------------------------------------------------------------------------
// Aggregation and ranking

struct AggregateRow {
  std::string dataset;
  std::string method;
  double mean_msa = 0.0;
  std::size_t images = 0;
};

/// Unweighted per-(dataset, method) mean over images, sorted by key.
inline std::vector<AggregateRow> aggregate(const ScoreTable& table) {
  if (table.rows.empty()) throw Error(ErrorCode::kEmptyGroup, "score table has no rows");
  std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> acc;
  for (const auto& r : table.rows) {
    auto& [sum, n] = acc[{r.dataset, r.method}];
    sum += r.msa;
    ++n;
  }
  std::vector<AggregateRow> out;
  for (const auto& [key, v] : acc) {
    if (v.second == 0) throw Error(ErrorCode::kEmptyGroup, key.first + "/" + key.second);
    out.push_back({key.first, key.second, v.first / static_cast<double>(v.second), v.second});
  }
  return out;
}

/// method → dataset → score
using ScoreMatrix = std::map<std::string, std::map<std::string, double>>;

inline ScoreMatrix to_matrix(const std::vector<AggregateRow>& rows) {
  ScoreMatrix m;
  for (const auto& r : rows) m[r.method][r.dataset] = r.mean_msa;
  return m;
}

/// Ranks with 1 = highest score; tied scores share the mean of their positions.
inline std::vector<double> midranks_descending(const std::vector<double>& scores) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Per-dataset midranks averaged over datasets.
inline std::map<std::string, double> average_rank(const ScoreMatrix& m) {
  std::set<std::string> datasets;
  for (const auto& [method, row] : m) {
    for (const auto& [d, v] : row) datasets.insert(d);
  }
  std::map<std::string, double> out;
  for (const auto& [method, row] : m) out[method] = 0.0;
  if (datasets.empty()) return out;
  for (const auto& d : datasets) {
    std::vector<std::string> methods;
    std::vector<double> scores;
    for (const auto& [method, row] : m) {
      auto it = row.find(d);
      if (it == row.end()) throw Error(ErrorCode::kMissingCell, method + " has no score on " + d);
      methods.push_back(method);
      scores.push_back(it->second);
    }
    const auto ranks = midranks_descending(scores);
    for (std::size_t i = 0; i < methods.size(); ++i) out[methods[i]] += ranks[i];
  }
  for (auto& [method, r] : out) r /= static_cast<double>(datasets.size());
  return out;
}

}  // namespace apg
