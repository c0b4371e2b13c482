#pragma once

// Synthetic ground truth and analytically consistent decoder outputs.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "apg/exchange_io.hpp"
#include "apg/geometry.hpp"
#include "apg/prompting.hpp"

namespace apg {

enum class ShapeKind { kDisk, kEllipse, kBlob };

struct PhantomSpec {
  std::uint64_t seed = 0;
  Shape image_size{256, 256};
  int n_objects = 20;
  ShapeKind shape_kind = ShapeKind::kDisk;
  double min_radius = 6.0;
  double max_radius = 12.0;
  /// Minimum background gap (Chebyshev pixels) between instances.
  int min_gap = 2;
  /// When set, instances may share a border (gap 0) but never overlap.
  bool allow_touching = false;
  double noise_sigma = 0.0;
  double blur_radius = 0.0;
  int max_attempts_per_object = 2000;

  void validate() const {
    if (image_size.height <= 0 || image_size.width <= 0) throw Error(ErrorCode::kInvalidArgument, "empty image");
    if (n_objects < 0) throw Error(ErrorCode::kInvalidArgument, "n_objects must be nonnegative");
    if (!(min_radius > 0.0) || max_radius < min_radius) throw Error(ErrorCode::kInvalidArgument, "bad radius range");
    if (min_gap < 0) throw Error(ErrorCode::kInvalidArgument, "min_gap must be nonnegative");
    if (noise_sigma < 0.0 || blur_radius < 0.0) throw Error(ErrorCode::kInvalidArgument, "negative corruption");
  }
};

namespace phantom_detail {

/// Platform-independent draws on top of mt19937_64 (the std distributions
/// are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

struct ObjectShape {
  double cy, cx;
  double a, b;     // semi-axes (disk: a == b)
  double angle;
  double harmonics[3][2];  // blob: amplitude, phase for k = 2, 3, 4
  bool blob;

  double extent() const {
    double amp = 0.0;
    if (blob) {
      for (const auto& h : harmonics) amp += std::abs(h[0]);
    }
    return std::max(a, b) * (1.0 + amp);
  }

  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    if (!blob) return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    const double theta = std::atan2(v, u);
    double r = a;
    for (int k = 0; k < 3; ++k) r += a * harmonics[k][0] * std::cos((k + 2) * theta + harmonics[k][1]);
    return u * u + v * v <= r * r;
  }
};

}  // namespace phantom_detail

/// Rejection-samples non-overlapping objects; deterministic for a fixed seed.
inline LabelMap generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const Shape shape = spec.image_size;
  LabelMap labels(shape, 0);
  // Pixels that a new object may not touch: every placed object dilated by the gap.
  BinaryMask forbidden(shape, 0);
  const int gap = spec.allow_touching ? 0 : spec.min_gap;
  phantom_detail::Rng rng(spec.seed);

  for (int k = 1; k <= spec.n_objects; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_attempts_per_object && !placed; ++attempt) {
      phantom_detail::ObjectShape obj{};
      const double r = rng.uniform(spec.min_radius, spec.max_radius);
      obj.a = r;
      obj.b = r;
      obj.angle = 0.0;
      obj.blob = spec.shape_kind == ShapeKind::kBlob;
      if (spec.shape_kind == ShapeKind::kEllipse) {
        obj.b = r * rng.uniform(0.5, 0.9);
        obj.angle = rng.uniform(0.0, std::numbers::pi);
      }
      if (obj.blob) {
        for (auto& h : obj.harmonics) {
          h[0] = rng.uniform(0.0, 0.08);
          h[1] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        }
      }
      const double ext = obj.extent();
      if (2.0 * ext + 2.0 > shape.height || 2.0 * ext + 2.0 > shape.width) continue;
      obj.cy = rng.uniform(ext, shape.height - 1 - ext);
      obj.cx = rng.uniform(ext, shape.width - 1 - ext);

      const int y0 = std::max(0, static_cast<int>(std::floor(obj.cy - ext)));
      const int y1 = std::min(shape.height - 1, static_cast<int>(std::ceil(obj.cy + ext)));
      const int x0 = std::max(0, static_cast<int>(std::floor(obj.cx - ext)));
      const int x1 = std::min(shape.width - 1, static_cast<int>(std::ceil(obj.cx + ext)));
      std::vector<std::pair<int, int>> pixels;
      bool clash = false;
      for (int y = y0; y <= y1 && !clash; ++y) {
        for (int x = x0; x <= x1; ++x) {
          if (!obj.contains(y, x)) continue;
          if (forbidden(y, x)) {
            clash = true;
            break;
          }
          pixels.emplace_back(y, x);
        }
      }
      if (clash || pixels.empty()) continue;
      for (auto [y, x] : pixels) {
        labels(y, x) = k;
        for (int dy = -gap; dy <= gap; ++dy) {
          for (int dx = -gap; dx <= gap; ++dx) {
            if (shape.contains(y + dy, x + dx)) forbidden(y + dy, x + dx) = 1;
          }
        }
      }
      placed = true;
    }
    if (!placed) {
      throw Error(ErrorCode::kPlacementFailure, "could not place object " + std::to_string(k) + " of " +
                                                    std::to_string(spec.n_objects) + " after " +
                                                    std::to_string(spec.max_attempts_per_object) + " attempts");
    }
  }
  return labels;
}

/// Ideal decoder outputs for a label map, per instance k:
///   fg            = 1 on the instance
///   boundary_dist = edt(instance) / max edt(instance)
///   center_dist   = |pixel − centroid| / max over the instance of that distance
/// Background is 0 in every map.
inline PredictionBundle analytic_maps(const LabelMap& gt) {
  const Shape shape = gt.shape();
  PredictionBundle b;
  b.fg = FloatMap(shape, 0.0f);
  b.center_dist = FloatMap(shape, 0.0f);
  b.boundary_dist = FloatMap(shape, 0.0f);

  std::map<std::int32_t, Box> boxes;
  for (int y = 0; y < shape.height; ++y) {
    for (int x = 0; x < shape.width; ++x) {
      const std::int32_t l = gt(y, x);
      if (l == 0) continue;
      b.fg(y, x) = 1.0f;
      auto [it, inserted] = boxes.try_emplace(l, Box{y, x, 1, 1});
      if (inserted) continue;
      Box& bx = it->second;
      const int r0 = std::min(bx.row0, y), c0 = std::min(bx.col0, x);
      const int r1 = std::max(bx.row1(), y + 1), c1 = std::max(bx.col1(), x + 1);
      bx = {r0, c0, r1 - r0, c1 - c0};
    }
  }

  for (const auto& [label, box] : boxes) {
    const Box grown = intersect(Box{box.row0 - 1, box.col0 - 1, box.height + 2, box.width + 2},
                                Box{0, 0, shape.height, shape.width});
    BinaryMask local(grown.height, grown.width, 0);
    double sy = 0.0, sx = 0.0;
    std::int64_t n = 0;
    for (int y = 0; y < grown.height; ++y) {
      for (int x = 0; x < grown.width; ++x) {
        if (gt(grown.row0 + y, grown.col0 + x) != label) continue;
        local(y, x) = 1;
        sy += grown.row0 + y;
        sx += grown.col0 + x;
        ++n;
      }
    }
    const double cy = sy / static_cast<double>(n), cx = sx / static_cast<double>(n);
    const auto sq = edt_squared(local);
    double max_edt = 0.0, max_center = 0.0;
    for (int y = 0; y < grown.height; ++y) {
      for (int x = 0; x < grown.width; ++x) {
        if (!local(y, x)) continue;
        if (std::isfinite(sq(y, x))) max_edt = std::max(max_edt, std::sqrt(sq(y, x)));
        max_center = std::max(max_center, std::hypot(grown.row0 + y - cy, grown.col0 + x - cx));
      }
    }
    for (int y = 0; y < grown.height; ++y) {
      for (int x = 0; x < grown.width; ++x) {
        if (!local(y, x)) continue;
        const int gy = grown.row0 + y, gx = grown.col0 + x;
        const double d = std::isfinite(sq(y, x)) ? std::sqrt(sq(y, x)) : max_edt;
        b.boundary_dist(gy, gx) = max_edt > 0.0 ? static_cast<float>(d / max_edt) : 1.0f;
        b.center_dist(gy, gx) =
            max_center > 0.0 ? static_cast<float>(std::hypot(gy - cy, gx - cx) / max_center) : 0.0f;
      }
    }
  }
  return b;
}

namespace phantom_detail {

inline FloatMap box_blur(const FloatMap& in, int radius) {
  if (radius <= 0) return in;
  const Shape s = in.shape();
  auto clampi = [](int v, int lo, int hi) { return std::min(std::max(v, lo), hi); };
  FloatMap tmp(s, 0.0f), out(s, 0.0f);
  const double norm = 1.0 / (2 * radius + 1);
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x) {
      double acc = 0.0;
      for (int d = -radius; d <= radius; ++d) acc += in(y, clampi(x + d, 0, s.width - 1));
      tmp(y, x) = static_cast<float>(acc * norm);
    }
  }
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x) {
      double acc = 0.0;
      for (int d = -radius; d <= radius; ++d) acc += tmp(clampi(y + d, 0, s.height - 1), x);
      out(y, x) = static_cast<float>(acc * norm);
    }
  }
  return out;
}

}  // namespace phantom_detail

/// Gaussian noise, then a (2r+1)² box blur with edge clamping (r = round(blur_radius)),
/// then clamping to [0,1]. Applied independently to all three maps.
inline PredictionBundle corrupt(const PredictionBundle& in, double noise_sigma, double blur_radius,
                                std::uint64_t seed) {
  PredictionBundle out = in;
  phantom_detail::Rng rng(seed);
  const int radius = static_cast<int>(std::lround(blur_radius));
  for (FloatMap* m : {&out.fg, &out.center_dist, &out.boundary_dist}) {
    if (noise_sigma > 0.0) {
      for (auto& v : m->values()) v = static_cast<float>(v + noise_sigma * rng.normal());
    }
    *m = phantom_detail::box_blur(*m, radius);
    for (auto& v : m->values()) v = std::clamp(v, 0.0f, 1.0f);
  }
  return out;
}

/// Ground truth plus its (optionally corrupted) analytic bundle.
struct Phantom {
  LabelMap gt;
  PredictionBundle bundle;
};

inline Phantom make_phantom(const PhantomSpec& spec) {
  Phantom p;
  p.gt = generate_phantom(spec);
  p.bundle = analytic_maps(p.gt);
  if (spec.noise_sigma > 0.0 || spec.blur_radius > 0.0) {
    p.bundle = corrupt(p.bundle, spec.noise_sigma, spec.blur_radius, spec.seed ^ 0x9E3779B97F4A7C15ull);
  }
  return p;
}

}  // namespace apg
