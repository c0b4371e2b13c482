#pragma once

// Complete instance segmentation pipelines: APG (prompt derivation → mask
// prediction → size filter → NMS → rasterization), the AIS watershed
// baseline and the AMG grid baseline.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "apg/geometry.hpp"
#include "apg/mask_backends.hpp"
#include "apg/prompting.hpp"

namespace apg {

struct AMGParams {
  int n_per_side = 32;
  double min_quality = 0.7;
  double min_stability = 0.8;
  double t_nms = 0.9;
  int min_area = 25;
  OverlapMeasure overlap_measure = OverlapMeasure::kIou;

  void validate() const {
    if (n_per_side < 1) throw Error(ErrorCode::kInvalidArgument, "n_per_side must be ≥ 1");
    for (double v : {min_quality, min_stability, t_nms}) {
      if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "AMG thresholds must lie in [0,1]");
    }
    if (min_area < 0) throw Error(ErrorCode::kInvalidArgument, "min_area must be nonnegative");
  }
};

struct NmsDecision {
  /// Indices into the input, in acceptance order (descending quality).
  std::vector<std::size_t> kept;
  /// Suppressed index → the kept index that suppressed it.
  std::map<std::size_t, std::size_t> suppressed_by;
};

/// Keeps candidates whose binarized area is at least `min_area`; order is preserved.
inline std::vector<MaskCandidate> size_filter(std::vector<MaskCandidate> candidates, std::int64_t min_area) {
  std::erase_if(candidates, [&](const MaskCandidate& c) { return c.area() < min_area; });
  return candidates;
}

inline double overlap(const MaskCandidate& a, const MaskCandidate& b, OverlapMeasure measure) {
  const std::int64_t inter = intersection_area(a, b);
  if (measure == OverlapMeasure::kIou) {
    const std::int64_t uni = a.area() + b.area() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  const std::int64_t smaller = std::min(a.area(), b.area());
  return smaller == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(smaller);
}

/// Greedy NMS. Candidates are visited by descending quality, ties broken by
/// the row-major index of the source prompt, then by input position. A
/// candidate is kept iff its overlap with every kept candidate is < t_nms.
inline NmsDecision nms(std::span<const MaskCandidate> candidates, double t_nms,
                       OverlapMeasure measure = OverlapMeasure::kIou) {
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto prompt_key = [&](std::size_t i) {
    const auto& p = candidates[i].source_prompt();
    return static_cast<std::int64_t>(p.row) * candidates[i].image_shape().width + p.col;
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (candidates[a].quality() != candidates[b].quality()) return candidates[a].quality() > candidates[b].quality();
    return prompt_key(a) < prompt_key(b);
  });

  NmsDecision out;
  for (std::size_t i : order) {
    bool keep = true;
    for (std::size_t k : out.kept) {
      if (overlap(candidates[i], candidates[k], measure) >= t_nms) {
        out.suppressed_by.emplace(i, k);
        keep = false;
        break;
      }
    }
    if (keep) out.kept.push_back(i);
  }
  return out;
}

/// Paints candidates into a label map. A pixel claimed by several masks goes
/// to the highest-quality claimant (ties to the earlier one); labels are 1..N
/// in input order.
inline LabelMap rasterize(std::span<const MaskCandidate> candidates, Shape shape) {
  LabelMap out(shape, 0);
  std::vector<double> owner_quality(shape.size(), -1.0);
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto& c = candidates[k];
    require_same_shape(c.image_shape(), shape, "rasterize");
    const Box& b = c.mask_box();
    for (int y = b.row0; y < b.row1(); ++y) {
      for (int x = b.col0; x < b.col1(); ++x) {
        if (!c.contains(y, x)) continue;
        const std::size_t i = out.index(y, x);
        if (c.quality() > owner_quality[i]) {
          owner_quality[i] = c.quality();
          out[i] = static_cast<std::int32_t>(k + 1);
        }
      }
    }
  }
  return out;
}

/// Drops instances smaller than `min_area` and renumbers the survivors
/// 1..N, preserving the relative order of their original labels.
inline LabelMap remove_small_instances(const LabelMap& labels, std::int64_t min_area) {
  std::map<std::int32_t, std::int64_t> areas;
  for (auto v : labels.values()) {
    if (v != 0) ++areas[v];
  }
  std::map<std::int32_t, std::int32_t> remap;
  std::int32_t next = 0;
  for (const auto& [label, a] : areas) {
    if (a >= min_area) remap[label] = ++next;
  }
  LabelMap out(labels.shape(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 0) continue;
    auto it = remap.find(labels[i]);
    if (it != remap.end()) out[i] = it->second;
  }
  return out;
}

/// Segmentation plus the bookkeeping the batch runner logs.
struct SegmentationResult {
  LabelMap labels;
  std::size_t prompt_count = 0;
  std::size_t candidate_count = 0;  // after quality/size filtering
  std::size_t kept_count = 0;       // after NMS
  int instance_count = 0;
};

inline int count_instances(const LabelMap& labels) {
  std::int32_t m = 0;
  for (auto v : labels.values()) m = std::max(m, v);
  return m;
}

/// Steps shared by APG variants and AMG once prompts exist.
inline SegmentationResult segment_from_prompts(Shape shape, const std::vector<PointPrompt>& prompts,
                                               const MaskPredictor& predictor, std::int64_t min_area, double t_nms,
                                               OverlapMeasure measure, double min_quality = 0.0,
                                               double min_stability = 0.0) {
  SegmentationResult r;
  r.prompt_count = prompts.size();
  std::vector<MaskCandidate> candidates;
  candidates.reserve(prompts.size());
  for (const auto& p : prompts) {
    MaskCandidate c = predictor.predict(p);
    if (c.quality() < min_quality) continue;
    if (min_stability > 0.0 && c.stability() < min_stability) continue;
    candidates.push_back(std::move(c));
  }
  candidates = size_filter(std::move(candidates), min_area);
  r.candidate_count = candidates.size();

  const NmsDecision decision = nms(candidates, t_nms, measure);
  std::vector<MaskCandidate> kept;
  kept.reserve(decision.kept.size());
  for (std::size_t i : decision.kept) kept.push_back(candidates[i]);
  r.kept_count = kept.size();

  r.labels = remove_small_instances(rasterize(kept, shape), min_area);
  r.instance_count = count_instances(r.labels);
  return r;
}

/// APG with one prompt per seed-mask component.
inline SegmentationResult run_apg(const PredictionBundle& bundle, const MaskPredictor& predictor,
                                  const APGParams& p = {}) {
  p.validate();
  return segment_from_prompts(bundle.shape(), derive_prompts_components(bundle, p), predictor, p.s, p.t_nms,
                              p.overlap_measure);
}

/// APG variant prompting at foreground-restricted boundary-distance maxima.
inline SegmentationResult run_apg_boundary(const PredictionBundle& bundle, const MaskPredictor& predictor,
                                           const APGParams& p = {}) {
  p.validate();
  return segment_from_prompts(bundle.shape(), derive_prompts_boundary_maxima(bundle, p, p.min_separation), predictor,
                              p.s, p.t_nms, p.overlap_measure);
}

/// Seeded watershed on 1 − boundary_dist from the seed-mask components,
/// flooding {fg ≥ t_fg}, followed by the size sweep.
inline SegmentationResult run_ais(const PredictionBundle& bundle, const APGParams& p = {}) {
  p.validate();
  const auto seeds = connected_components(derive_seed_mask(bundle, p), p.connectivity);
  FloatMap elevation(bundle.shape(), 0.0f);
  BinaryMask region(bundle.shape(), 0);
  for (std::size_t i = 0; i < elevation.size(); ++i) {
    elevation[i] = 1.0f - bundle.boundary_dist[i];
    region[i] = bundle.fg[i] >= p.t_fg;
  }
  SegmentationResult r;
  r.prompt_count = static_cast<std::size_t>(seeds.count);
  r.candidate_count = r.kept_count = static_cast<std::size_t>(seeds.count);
  r.labels = remove_small_instances(seeded_watershed(elevation, seeds.labels, region, p.connectivity), p.s);
  r.instance_count = count_instances(r.labels);
  return r;
}

inline SegmentationResult run_amg(const PredictionBundle& bundle, const MaskPredictor& predictor,
                                  const AMGParams& p = {}) {
  p.validate();
  const Shape shape = bundle.shape();
  return segment_from_prompts(shape, grid_prompts(shape.height, shape.width, p.n_per_side), predictor, p.min_area,
                              p.t_nms, p.overlap_measure, p.min_quality, p.min_stability);
}

}  // namespace apg
