#pragma once

// Prompt → mask predictors. Every backend maps one point prompt to exactly
// one MaskCandidate and is deterministic for a fixed context.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "apg/exchange_io.hpp"
#include "apg/geometry.hpp"
#include "apg/prompting.hpp"

namespace apg {

/// Soft values at or above this binarize to foreground.
inline constexpr float kBinarizeThreshold = 0.5f;
/// Soft values are retained over the bounding box of pixels at or above this
/// level; the widest level set any downstream stage inspects.
inline constexpr float kSoftRetainThreshold = 0.45f;
inline constexpr double kStabilityHalfWidth = 0.05;

/// One predicted mask. The soft mask is conceptually H×W; only the box that
/// covers every pixel ≥ kSoftRetainThreshold is stored, zero outside it.
class MaskCandidate {
 public:
  MaskCandidate() = default;

  static MaskCandidate from_dense(const FloatMap& soft, double quality, PointPrompt source) {
    return from_crop(soft.shape(), Box{0, 0, soft.height(), soft.width()}, soft, quality, source);
  }

  /// `soft` covers `box` of an image of `image_shape`; zero is implied elsewhere.
  static MaskCandidate from_crop(Shape image_shape, Box box, const FloatMap& soft, double quality,
                                 PointPrompt source) {
    MaskCandidate c;
    c.image_shape_ = image_shape;
    c.quality_ = std::clamp(quality, 0.0, 1.0);
    c.source_ = source;
    const Box keep = bounding_box(soft, [](float v) { return v >= kSoftRetainThreshold; });
    c.box_ = keep.empty() ? Box{} : Box{box.row0 + keep.row0, box.col0 + keep.col0, keep.height, keep.width};
    c.soft_ = crop(soft, keep);
    c.finish();
    return c;
  }

  /// Binary candidate covering `box` where `bits` is set (bits is box-sized).
  static MaskCandidate from_binary(Shape image_shape, Box box, const BinaryMask& bits, double quality,
                                   PointPrompt source) {
    MaskCandidate c;
    c.image_shape_ = image_shape;
    c.quality_ = std::clamp(quality, 0.0, 1.0);
    c.source_ = source;
    c.box_ = box;
    c.soft_ = FloatMap(box.height, box.width, 0.0f);
    for (std::size_t i = 0; i < bits.size(); ++i) c.soft_[i] = bits[i] ? 1.0f : 0.0f;
    c.finish();
    return c;
  }

  Shape image_shape() const { return image_shape_; }
  const Box& box() const { return box_; }
  /// Tight box of the binarized pixels.
  const Box& mask_box() const { return mask_box_; }
  double quality() const { return quality_; }
  void set_quality(double q) { quality_ = std::clamp(q, 0.0, 1.0); }
  const PointPrompt& source_prompt() const { return source_; }
  std::int64_t area() const { return area_; }

  float soft_at(int row, int col) const {
    return box_.contains(row, col) ? soft_(row - box_.row0, col - box_.col0) : 0.0f;
  }
  bool contains(int row, int col) const { return soft_at(row, col) >= kBinarizeThreshold; }

  FloatMap dense_soft() const {
    FloatMap out(image_shape_, 0.0f);
    for (int y = 0; y < box_.height; ++y) {
      for (int x = 0; x < box_.width; ++x) out(box_.row0 + y, box_.col0 + x) = soft_(y, x);
    }
    return out;
  }

  BinaryMask binary() const {
    BinaryMask out(image_shape_, 0);
    for (int y = 0; y < box_.height; ++y) {
      for (int x = 0; x < box_.width; ++x) out(box_.row0 + y, box_.col0 + x) = soft_(y, x) >= kBinarizeThreshold;
    }
    return out;
  }

  /// IoU of the level sets {soft ≥ 0.5 + h} and {soft ≥ 0.5 − h}; 0 if the
  /// lower set is empty.
  double stability(double half_width = kStabilityHalfWidth) const {
    const double hi = kBinarizeThreshold + half_width;
    const double lo = kBinarizeThreshold - half_width;
    std::int64_t n_hi = 0, n_lo = 0;
    for (auto v : soft_.values()) {
      n_hi += v >= hi;
      n_lo += v >= lo;
    }
    return n_lo == 0 ? 0.0 : static_cast<double>(n_hi) / static_cast<double>(n_lo);
  }

  /// |a ∩ b| over binarized pixels, restricted to the overlap of the two boxes.
  friend std::int64_t intersection_area(const MaskCandidate& a, const MaskCandidate& b) {
    const Box common = intersect(a.mask_box_, b.mask_box_);
    std::int64_t n = 0;
    for (int y = common.row0; y < common.row1(); ++y) {
      for (int x = common.col0; x < common.col1(); ++x) n += a.contains(y, x) && b.contains(y, x);
    }
    return n;
  }

 private:
  void finish() {
    area_ = 0;
    int r0 = box_.height, c0 = box_.width, r1 = -1, c1 = -1;
    for (int y = 0; y < box_.height; ++y) {
      for (int x = 0; x < box_.width; ++x) {
        if (soft_(y, x) < kBinarizeThreshold) continue;
        ++area_;
        r0 = std::min(r0, y);
        c0 = std::min(c0, x);
        r1 = std::max(r1, y);
        c1 = std::max(c1, x);
      }
    }
    mask_box_ = r1 < 0 ? Box{} : Box{box_.row0 + r0, box_.col0 + c0, r1 - r0 + 1, c1 - c0 + 1};
  }

  Shape image_shape_;
  Box box_;
  Box mask_box_;
  FloatMap soft_;
  double quality_ = 0.0;
  PointPrompt source_;
  std::int64_t area_ = 0;
};

inline void require_in_bounds(Shape shape, const PointPrompt& p) {
  if (!shape.contains(p.row, p.col)) {
    throw Error(ErrorCode::kInvalidArgument, "prompt (" + std::to_string(p.row) + ", " + std::to_string(p.col) +
                                                 ") outside image " + to_string(shape));
  }
}

/// The predictor contract. Implementations are immutable after construction,
/// so `predict` may be called concurrently.
class MaskPredictor {
 public:
  virtual ~MaskPredictor() = default;
  virtual MaskCandidate predict(const PointPrompt& prompt) const = 0;
  virtual std::string_view name() const = 0;
};

/// Test oracle: returns the ground-truth instance under the prompt.
class OraclePredictor final : public MaskPredictor {
 public:
  explicit OraclePredictor(LabelMap ground_truth) : gt_(std::move(ground_truth)) {
    for (int y = 0; y < gt_.height(); ++y) {
      for (int x = 0; x < gt_.width(); ++x) {
        const std::int32_t l = gt_(y, x);
        if (l == 0) continue;
        auto [it, inserted] = boxes_.try_emplace(l, Box{y, x, 1, 1});
        if (inserted) continue;
        Box& b = it->second;
        const int r0 = std::min(b.row0, y), c0 = std::min(b.col0, x);
        const int r1 = std::max(b.row1(), y + 1), c1 = std::max(b.col1(), x + 1);
        b = {r0, c0, r1 - r0, c1 - c0};
      }
    }
  }

  MaskCandidate predict(const PointPrompt& prompt) const override {
    require_in_bounds(gt_.shape(), prompt);
    const std::int32_t label = gt_(prompt.row, prompt.col);
    if (label == 0) return MaskCandidate::from_binary(gt_.shape(), Box{}, BinaryMask{}, 0.0, prompt);
    const Box& box = boxes_.at(label);
    BinaryMask bits(box.height, box.width, 0);
    for (int y = 0; y < box.height; ++y) {
      for (int x = 0; x < box.width; ++x) bits(y, x) = gt_(box.row0 + y, box.col0 + x) == label;
    }
    return MaskCandidate::from_binary(gt_.shape(), box, bits, 1.0, prompt);
  }

  std::string_view name() const override { return "oracle"; }

 private:
  LabelMap gt_;
  std::unordered_map<std::int32_t, Box> boxes_;
};

/// Model-free stand-in for the mask decoder: grows the 8-connected component
/// of {fg ≥ threshold} under the prompt. Quality is the stability of that
/// component under a ±kStabilityHalfWidth shift of the threshold.
class RegionGrowPredictor final : public MaskPredictor {
 public:
  RegionGrowPredictor(FloatMap fg, double grow_threshold) : fg_(std::move(fg)), threshold_(grow_threshold) {}

  MaskCandidate predict(const PointPrompt& prompt) const override {
    const Shape shape = fg_.shape();
    require_in_bounds(shape, prompt);
    if (!(fg_(prompt.row, prompt.col) >= threshold_)) {
      return MaskCandidate::from_binary(shape, Box{}, BinaryMask{}, 0.0, prompt);
    }

    std::vector<std::uint32_t> members;
    BinaryMask seen(shape, 0);
    std::vector<std::uint32_t> stack{static_cast<std::uint32_t>(fg_.index(prompt.row, prompt.col))};
    seen[stack.front()] = 1;
    int r0 = prompt.row, r1 = prompt.row, c0 = prompt.col, c1 = prompt.col;
    while (!stack.empty()) {
      const std::uint32_t idx = stack.back();
      stack.pop_back();
      members.push_back(idx);
      const int y = static_cast<int>(idx / shape.width), x = static_cast<int>(idx % shape.width);
      r0 = std::min(r0, y);
      r1 = std::max(r1, y);
      c0 = std::min(c0, x);
      c1 = std::max(c1, x);
      for (const auto& o : detail::kNeighbors8) {
        const int ny = y + o.dr, nx = x + o.dc;
        if (!shape.contains(ny, nx)) continue;
        const std::size_t n = fg_.index(ny, nx);
        if (seen[n] || !(fg_[n] >= threshold_)) continue;
        seen[n] = 1;
        stack.push_back(static_cast<std::uint32_t>(n));
      }
    }

    const double hi = threshold_ + kStabilityHalfWidth;
    const double lo = threshold_ - kStabilityHalfWidth;
    std::int64_t inter = 0, uni = 0;
    const Box box{r0, c0, r1 - r0 + 1, c1 - c0 + 1};
    FloatMap soft(box.height, box.width, 0.0f);
    for (auto idx : members) {
      const float v = fg_[idx];
      const bool in_hi = v >= hi, in_lo = v >= lo;
      inter += in_hi && in_lo;
      uni += in_hi || in_lo;
      soft(static_cast<int>(idx / shape.width) - r0, static_cast<int>(idx % shape.width) - c0) = v;
    }
    const double quality = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    return MaskCandidate::from_crop(shape, box, soft, quality, prompt);
  }

  std::string_view name() const override { return "regiongrow"; }

 private:
  FloatMap fg_;
  double threshold_;
};

enum class BackendKind { kOracle, kRegionGrow, kExternal };

inline std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::kOracle: return "oracle";
    case BackendKind::kRegionGrow: return "regiongrow";
    case BackendKind::kExternal: return "external";
  }
  return "unknown";
}

}  // namespace apg
