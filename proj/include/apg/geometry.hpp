#pragma once

// Raster kernels shared by all pipelines: component labeling, exact EDT,
// seeded watershed, mask IoU and run-length coding.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "apg/raster.hpp"

namespace apg {

enum class Connectivity { k4 = 4, k8 = 8 };

inline Connectivity connectivity_from_int(int n) {
  if (n == 4) return Connectivity::k4;
  if (n == 8) return Connectivity::k8;
  throw Error(ErrorCode::kInvalidArgument, "connectivity must be 4 or 8, got " + std::to_string(n));
}

namespace detail {

struct Offset {
  int dr;
  int dc;
};

inline constexpr Offset kNeighbors8[8] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}};
inline constexpr Offset kNeighbors4[4] = {{-1, 0}, {0, -1}, {0, 1}, {1, 0}};

inline std::span<const Offset> neighbors(Connectivity c) {
  if (c == Connectivity::k4) return kNeighbors4;
  return kNeighbors8;
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n = 0) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0u); }

  std::uint32_t add() {
    parent_.push_back(static_cast<std::uint32_t>(parent_.size()));
    return parent_.back();
  }

  std::uint32_t find(std::uint32_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent_[a] = b;
  }

 private:
  std::vector<std::uint32_t> parent_;
};

}  // namespace detail

struct Components {
  LabelMap labels;
  int count = 0;
};

/// Two-pass union-find labeling. Labels 1..count follow the row-major
/// position of each component's first pixel.
inline Components connected_components(const BinaryMask& mask, Connectivity connectivity = Connectivity::k8) {
  const int h = mask.height();
  const int w = mask.width();
  Raster<std::uint32_t> provisional(mask.shape(), 0);
  detail::UnionFind uf(1);  // slot 0 unused

  // Only already-visited neighbors (previous row, left) matter in the first pass.
  const bool diag = connectivity == Connectivity::k8;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask(y, x)) continue;
      std::uint32_t current = 0;
      auto join = [&](int ny, int nx) {
        if (ny < 0 || nx < 0 || nx >= w) return;
        const std::uint32_t other = provisional(ny, nx);
        if (other == 0) return;
        if (current == 0) {
          current = other;
        } else {
          uf.unite(current, other);
        }
      };
      join(y, x - 1);
      join(y - 1, x);
      if (diag) {
        join(y - 1, x - 1);
        join(y - 1, x + 1);
      }
      provisional(y, x) = current != 0 ? current : uf.add();
    }
  }

  Components out{LabelMap(mask.shape(), 0), 0};
  std::vector<std::int32_t> final_label;
  for (std::size_t i = 0; i < provisional.size(); ++i) {
    const std::uint32_t p = provisional[i];
    if (p == 0) continue;
    const std::uint32_t root = uf.find(p);
    if (root >= final_label.size()) final_label.resize(root + 1, 0);
    if (final_label[root] == 0) final_label[root] = ++out.count;
    out.labels[i] = final_label[root];
  }
  return out;
}

/// Sentinel used by `edt` where no background pixel exists.
inline constexpr float kEdtInfinity = std::numeric_limits<float>::max();

namespace detail {

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) over one line.
// `f` holds squared distances with +inf for "no site"; result written to `d`.
inline void edt_1d(std::span<const double> f, std::span<double> d, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  const double inf = std::numeric_limits<double>::infinity();
  v.resize(n);
  z.resize(n + 1);
  int k = -1;
  double s = 0.0;
  for (int q = 0; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    while (k >= 0) {
      const int p = v[k];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
      if (s > z[k]) break;
      --k;
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
    } else {
      ++k;
      v[k] = q;
      z[k] = s;
    }
    z[k + 1] = inf;
  }
  if (k < 0) {
    for (int q = 0; q < n; ++q) d[q] = inf;
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double diff = double(q) - v[j];
    d[q] = diff * diff + f[v[j]];
  }
}

}  // namespace detail

/// Squared Euclidean distance from each pixel to the nearest false pixel,
/// +inf where the mask has no false pixel at all. Values are exact integers.
inline Raster<double> edt_squared(const BinaryMask& mask) {
  const int h = mask.height();
  const int w = mask.width();
  const double inf = std::numeric_limits<double>::infinity();
  Raster<double> out(mask.shape(), 0.0);
  std::vector<double> f(std::max(h, w)), d(std::max(h, w));
  std::vector<int> v;
  std::vector<double> z;

  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = mask(y, x) ? inf : 0.0;
    detail::edt_1d(std::span<const double>(f.data(), h), std::span<double>(d.data(), h), v, z);
    for (int y = 0; y < h; ++y) out(y, x) = d[y];
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[x] = out(y, x);
    detail::edt_1d(std::span<const double>(f.data(), w), std::span<double>(d.data(), w), v, z);
    for (int x = 0; x < w; ++x) out(y, x) = d[x];
  }
  return out;
}

/// Euclidean distance (pixel centers) from each true pixel to the nearest
/// false pixel; 0 on false pixels; kEdtInfinity everywhere if no false pixel exists.
inline FloatMap edt(const BinaryMask& mask) {
  const Raster<double> sq = edt_squared(mask);
  FloatMap out(mask.shape(), 0.0f);
  for (std::size_t i = 0; i < sq.size(); ++i) {
    out[i] = std::isfinite(sq[i]) ? static_cast<float>(std::sqrt(sq[i])) : kEdtInfinity;
  }
  return out;
}

/// Priority-flood from labeled seeds over `region`. Pixels are expanded in
/// ascending (elevation, insertion order); a pixel takes the label of the
/// pixel that first reaches it. Region pixels unreachable from any seed stay 0.
inline LabelMap seeded_watershed(const FloatMap& elevation, const LabelMap& seeds, const BinaryMask& region,
                                 Connectivity connectivity = Connectivity::k8) {
  require_same_shape(elevation.shape(), seeds.shape(), "seeded_watershed elevation/seeds");
  require_same_shape(elevation.shape(), region.shape(), "seeded_watershed elevation/region");
  const Shape shape = elevation.shape();

  using Entry = std::tuple<float, std::uint64_t, std::uint32_t>;  // elevation, order, pixel index
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  std::uint64_t order = 0;

  LabelMap out(shape, 0);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (seeds[i] == 0) continue;
    if (!region[i]) {
      throw Error(ErrorCode::kSeedOutsideRegion, "seed label " + std::to_string(seeds[i]) + " at pixel " +
                                                     std::to_string(i) + " lies outside the flood region");
    }
    if (seeds[i] < 0) throw Error(ErrorCode::kNegativeLabel, "negative seed label");
    out[i] = seeds[i];
    heap.emplace(elevation[i], order++, static_cast<std::uint32_t>(i));
  }

  const auto offsets = detail::neighbors(connectivity);
  while (!heap.empty()) {
    const auto [elev, ord, idx] = heap.top();
    heap.pop();
    const int row = static_cast<int>(idx / static_cast<std::uint32_t>(shape.width));
    const int col = static_cast<int>(idx % static_cast<std::uint32_t>(shape.width));
    const std::int32_t label = out[idx];
    for (const auto& o : offsets) {
      const int nr = row + o.dr;
      const int nc = col + o.dc;
      if (!shape.contains(nr, nc)) continue;
      const std::size_t n = out.index(nr, nc);
      if (!region[n] || out[n] != 0) continue;
      out[n] = label;
      heap.emplace(elevation[n], order++, static_cast<std::uint32_t>(n));
    }
  }
  return out;
}

/// |a∩b| / |a∪b|, 0 when both are empty.
inline double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a.shape(), b.shape(), "mask_iou");
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Symmetric IoU matrix (row-major n×n). Diagonal is 1 for nonempty masks.
inline std::vector<double> pairwise_iou(std::span<const BinaryMask> masks) {
  const std::size_t n = masks.size();
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    m[i * n + i] = mask_iou(masks[i], masks[i]);
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = mask_iou(masks[i], masks[j]);
      m[i * n + j] = v;
      m[j * n + i] = v;
    }
  }
  return m;
}

/// Row-major run lengths alternating background/foreground, starting with a
/// (possibly zero-length) background run.
struct Rle {
  Shape shape;
  std::vector<std::uint32_t> runs;
  friend bool operator==(const Rle&, const Rle&) = default;
};

inline Rle rle_encode(const BinaryMask& mask) {
  Rle rle{mask.shape(), {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (auto v : mask.values()) {
    const std::uint8_t bit = v != 0;
    if (bit != current) {
      rle.runs.push_back(run);
      run = 0;
      current = bit;
    }
    ++run;
  }
  rle.runs.push_back(run);
  return rle;
}

inline BinaryMask rle_decode(const Rle& rle) {
  std::uint64_t total = 0;
  for (auto r : rle.runs) total += r;
  if (total != rle.shape.size()) {
    throw Error(ErrorCode::kMalformedRle, "run lengths sum to " + std::to_string(total) + ", expected " +
                                              std::to_string(rle.shape.size()));
  }
  BinaryMask mask(rle.shape, 0);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (auto r : rle.runs) {
    std::fill_n(mask.storage().begin() + static_cast<std::ptrdiff_t>(pos), r, value);
    pos += r;
    value ^= 1u;
  }
  return mask;
}

/// Indicator of one label.
inline BinaryMask label_mask(const LabelMap& labels, std::int32_t label) {
  BinaryMask m(labels.shape(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] == label;
  return m;
}

/// Renumbers nonzero labels to 1..N in order of first appearance (row-major).
inline LabelMap relabel_sequential(const LabelMap& labels) {
  LabelMap out(labels.shape(), 0);
  std::unordered_map<std::int32_t, std::int32_t> mapping;
  std::int32_t next = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::int32_t l = labels[i];
    if (l == 0) continue;
    auto [it, inserted] = mapping.try_emplace(l, 0);
    if (inserted) it->second = ++next;
    out[i] = it->second;
  }
  return out;
}

}  // namespace apg
