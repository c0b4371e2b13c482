#pragma once

// Point-prompt derivation from decoder prediction maps.
//
// Map conventions (shared with the phantom generator):
//   center_dist   0 at the object center, rising to 1 at its boundary
//   boundary_dist 0 at the boundary, rising to 1 at the innermost pixel
// Both are 0 on background.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "apg/exchange_io.hpp"
#include "apg/geometry.hpp"

namespace apg {

enum class OverlapMeasure { kIou, kIoMin };

struct APGParams {
  double t_fg = 0.5;
  double t_b = 0.5;
  double t_c = 0.5;
  int s = 25;
  double t_nms = 0.9;
  Connectivity connectivity = Connectivity::k8;
  OverlapMeasure overlap_measure = OverlapMeasure::kIou;
  /// Chebyshev suppression radius for the boundary-maxima prompt variant.
  int min_separation = 3;

  void validate() const {
    auto unit = [](double v, const char* name) {
      if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::kInvalidArgument, std::string(name) + " must lie in [0,1]");
    };
    unit(t_fg, "t_fg");
    unit(t_b, "t_b");
    unit(t_c, "t_c");
    unit(t_nms, "t_nms");
    if (s < 0) throw Error(ErrorCode::kInvalidArgument, "s must be nonnegative");
    if (min_separation < 0) throw Error(ErrorCode::kInvalidArgument, "min_separation must be nonnegative");
  }
};

struct PointPrompt {
  int row = 0;
  int col = 0;
  bool positive = true;
  friend bool operator==(const PointPrompt&, const PointPrompt&) = default;
};

/// (fg ≥ t_fg) ∧ (center_dist ≤ t_c) ∧ (boundary_dist ≥ t_b)
inline BinaryMask derive_seed_mask(const PredictionBundle& bundle, const APGParams& p) {
  BinaryMask mask(bundle.shape(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = bundle.fg[i] >= p.t_fg && bundle.center_dist[i] <= p.t_c && bundle.boundary_dist[i] >= p.t_b;
  }
  return mask;
}

/// Pixel maximizing the distance to the nearest non-component pixel; ties go
/// to the smallest row-major index. The EDT runs on the component's bounding
/// box grown by one pixel (clipped to the image), which is exact because every
/// pixel outside the box is farther than its projection onto the ring.
inline PointPrompt component_center(const LabelMap& labels, std::int32_t label, const Box& bbox) {
  const Shape shape = labels.shape();
  const Box grown = intersect(Box{bbox.row0 - 1, bbox.col0 - 1, bbox.height + 2, bbox.width + 2},
                              Box{0, 0, shape.height, shape.width});
  BinaryMask local(grown.height, grown.width, 0);
  for (int y = 0; y < grown.height; ++y) {
    for (int x = 0; x < grown.width; ++x) local(y, x) = labels(grown.row0 + y, grown.col0 + x) == label;
  }
  const auto dist = edt_squared(local);
  double best = -1.0;
  PointPrompt out;
  for (int y = 0; y < grown.height; ++y) {
    for (int x = 0; x < grown.width; ++x) {
      if (!local(y, x)) continue;
      if (dist(y, x) > best) {
        best = dist(y, x);
        out = {grown.row0 + y, grown.col0 + x, true};
      }
    }
  }
  return out;
}

/// Per-label bounding boxes, indexed by label (entry 0 unused).
inline std::vector<Box> label_boxes(const LabelMap& labels, int count) {
  std::vector<int> r0(count + 1, labels.height()), c0(count + 1, labels.width()), r1(count + 1, -1), c1(count + 1, -1);
  for (int y = 0; y < labels.height(); ++y) {
    for (int x = 0; x < labels.width(); ++x) {
      const int l = labels(y, x);
      if (l <= 0 || l > count) continue;
      r0[l] = std::min(r0[l], y);
      c0[l] = std::min(c0[l], x);
      r1[l] = std::max(r1[l], y);
      c1[l] = std::max(c1[l], x);
    }
  }
  std::vector<Box> boxes(count + 1);
  for (int l = 1; l <= count; ++l) {
    if (r1[l] >= 0) boxes[l] = {r0[l], c0[l], r1[l] - r0[l] + 1, c1[l] - c0[l] + 1};
  }
  return boxes;
}

/// One prompt per connected component of the seed mask, at the component's
/// distance-transform maximum. Prompts are ordered by component label.
inline std::vector<PointPrompt> derive_prompts_components(const PredictionBundle& bundle, const APGParams& p) {
  const auto comps = connected_components(derive_seed_mask(bundle, p), p.connectivity);
  const auto boxes = label_boxes(comps.labels, comps.count);
  std::vector<PointPrompt> prompts;
  prompts.reserve(comps.count);
  for (int l = 1; l <= comps.count; ++l) prompts.push_back(component_center(comps.labels, l, boxes[l]));
  return prompts;
}

/// Foreground-restricted local maxima of boundary_dist. A pixel qualifies when
/// it is ≥ every 8-neighbor inside the foreground; 8-connected equal-valued
/// plateaus of qualifying pixels collapse to their first row-major pixel.
/// Survivors are visited by descending value (then row-major) and dropped if
/// an already-emitted maximum lies within Chebyshev distance < min_separation.
inline std::vector<PointPrompt> derive_prompts_boundary_maxima(const PredictionBundle& bundle, const APGParams& p,
                                                               int min_separation) {
  const Shape shape = bundle.shape();
  const FloatMap& bd = bundle.boundary_dist;
  BinaryMask fg(shape, 0);
  for (std::size_t i = 0; i < fg.size(); ++i) fg[i] = bundle.fg[i] >= p.t_fg;

  BinaryMask is_max(shape, 0);
  for (int y = 0; y < shape.height; ++y) {
    for (int x = 0; x < shape.width; ++x) {
      if (!fg(y, x)) continue;
      bool ok = true;
      for (const auto& o : detail::kNeighbors8) {
        const int ny = y + o.dr, nx = x + o.dc;
        if (!shape.contains(ny, nx) || !fg(ny, nx)) continue;
        if (bd(ny, nx) > bd(y, x)) {
          ok = false;
          break;
        }
      }
      is_max(y, x) = ok;
    }
  }

  // Plateau collapse: flood equal-valued local maxima from each unvisited one.
  struct Peak {
    float value;
    int row;
    int col;
  };
  std::vector<Peak> peaks;
  BinaryMask visited(shape, 0);
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < shape.height; ++y) {
    for (int x = 0; x < shape.width; ++x) {
      if (!is_max(y, x) || visited(y, x)) continue;
      const float v = bd(y, x);
      peaks.push_back({v, y, x});
      visited(y, x) = 1;
      stack.assign(1, {y, x});
      while (!stack.empty()) {
        const auto [cy, cx] = stack.back();
        stack.pop_back();
        for (const auto& o : detail::kNeighbors8) {
          const int ny = cy + o.dr, nx = cx + o.dc;
          if (!shape.contains(ny, nx) || visited(ny, nx) || !is_max(ny, nx) || bd(ny, nx) != v) continue;
          visited(ny, nx) = 1;
          stack.emplace_back(ny, nx);
        }
      }
    }
  }

  std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) { return a.value > b.value; });
  std::vector<PointPrompt> prompts;
  for (const auto& pk : peaks) {
    const bool suppressed = std::any_of(prompts.begin(), prompts.end(), [&](const PointPrompt& q) {
      return std::max(std::abs(q.row - pk.row), std::abs(q.col - pk.col)) < min_separation;
    });
    if (!suppressed) prompts.push_back({pk.row, pk.col, true});
  }
  return prompts;
}

/// n×n prompts at cell centers: row_i = floor((i + 0.5)·H / n), same for columns.
inline std::vector<PointPrompt> grid_prompts(int height, int width, int n_per_side) {
  if (n_per_side < 1) throw Error(ErrorCode::kInvalidArgument, "n_per_side must be ≥ 1");
  std::vector<PointPrompt> prompts;
  prompts.reserve(static_cast<std::size_t>(n_per_side) * n_per_side);
  for (int i = 0; i < n_per_side; ++i) {
    const int row = static_cast<int>(std::floor((i + 0.5) * height / n_per_side));
    for (int j = 0; j < n_per_side; ++j) {
      const int col = static_cast<int>(std::floor((j + 0.5) * width / n_per_side));
      prompts.push_back({row, col, true});
    }
  }
  return prompts;
}

}  // namespace apg
