#pragma once

// Slow reference implementations used to check the library kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "apg/raster.hpp"

namespace oracle {

using apg::BinaryMask;
using apg::FloatMap;
using apg::LabelMap;
using apg::Shape;

inline std::vector<std::pair<int, int>> offsets(int connectivity) {
  std::vector<std::pair<int, int>> out;
  for (int dr = -1; dr <= 1; ++dr) {
    for (int dc = -1; dc <= 1; ++dc) {
      if (dr == 0 && dc == 0) continue;
      if (connectivity == 4 && dr != 0 && dc != 0) continue;
      out.emplace_back(dr, dc);
    }
  }
  return out;
}

/// BFS flood fill, labels in row-major first-encounter order.
inline LabelMap bfs_components(const BinaryMask& m, int connectivity, int* count = nullptr) {
  const Shape s = m.shape();
  LabelMap out(s, 0);
  int next = 0;
  for (int r = 0; r < s.height; ++r) {
    for (int c = 0; c < s.width; ++c) {
      if (!m(r, c) || out(r, c) != 0) continue;
      ++next;
      std::deque<std::pair<int, int>> q{{r, c}};
      out(r, c) = next;
      while (!q.empty()) {
        auto [y, x] = q.front();
        q.pop_front();
        for (auto [dr, dc] : offsets(connectivity)) {
          const int ny = y + dr, nx = x + dc;
          if (ny < 0 || nx < 0 || ny >= s.height || nx >= s.width) continue;
          if (!m(ny, nx) || out(ny, nx) != 0) continue;
          out(ny, nx) = next;
          q.emplace_back(ny, nx);
        }
      }
    }
  }
  if (count) *count = next;
  return out;
}

/// Distance of every true pixel to the nearest false pixel by exhaustive search.
/// All-true masks map to float max.
inline FloatMap exhaustive_edt(const BinaryMask& m) {
  const Shape s = m.shape();
  FloatMap out(s, 0.0f);
  std::vector<std::pair<int, int>> zeros;
  for (int r = 0; r < s.height; ++r) {
    for (int c = 0; c < s.width; ++c) {
      if (!m(r, c)) zeros.emplace_back(r, c);
    }
  }
  for (int r = 0; r < s.height; ++r) {
    for (int c = 0; c < s.width; ++c) {
      if (!m(r, c)) continue;
      if (zeros.empty()) {
        out(r, c) = std::numeric_limits<float>::max();
        continue;
      }
      long best = std::numeric_limits<long>::max();
      for (auto [zr, zc] : zeros) best = std::min<long>(best, long(zr - r) * (zr - r) + long(zc - c) * (zc - c));
      out(r, c) = static_cast<float>(std::sqrt(static_cast<double>(best)));
    }
  }
  return out;
}

/// Priority flood by linear scans: repeatedly take the unprocessed queued pixel
/// with the smallest (elevation, queue position); queued neighbors inherit its label.
inline LabelMap scan_flood(const FloatMap& elevation, const LabelMap& seeds, const BinaryMask& region,
                           int connectivity) {
  const Shape s = elevation.shape();
  LabelMap out(s, 0);
  struct Item {
    float elev;
    int r, c;
    bool done;
  };
  std::vector<Item> queue;
  for (int r = 0; r < s.height; ++r) {
    for (int c = 0; c < s.width; ++c) {
      if (seeds(r, c) != 0) {
        out(r, c) = seeds(r, c);
        queue.push_back({elevation(r, c), r, c, false});
      }
    }
  }
  for (;;) {
    std::size_t best = queue.size();
    for (std::size_t k = 0; k < queue.size(); ++k) {
      if (queue[k].done) continue;
      if (best == queue.size() || queue[k].elev < queue[best].elev) best = k;
    }
    if (best == queue.size()) break;
    queue[best].done = true;
    const int r = queue[best].r, c = queue[best].c;
    for (auto [dr, dc] : offsets(connectivity)) {
      const int nr = r + dr, nc = c + dc;
      if (nr < 0 || nc < 0 || nr >= s.height || nc >= s.width) continue;
      if (!region(nr, nc) || out(nr, nc) != 0) continue;
      out(nr, nc) = out(r, c);
      queue.push_back({elevation(nr, nc), nr, nc, false});
    }
  }
  return out;
}

/// True iff a and b induce the same partition with labels related by a bijection.
inline bool same_partition(const LabelMap& a, const LabelMap& b) {
  if (a.shape() != b.shape()) return false;
  std::map<std::int32_t, std::int32_t> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] == 0) != (b[i] == 0)) return false;
    if (a[i] == 0) continue;
    auto [it1, new1] = ab.emplace(a[i], b[i]);
    auto [it2, new2] = ba.emplace(b[i], a[i]);
    if (it1->second != b[i] || it2->second != a[i]) return false;
  }
  return true;
}

inline BinaryMask instance_mask(const LabelMap& m, std::int32_t label) {
  BinaryMask out(m.shape(), 0);
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] == label;
  return out;
}

inline std::vector<std::int32_t> labels_of(const LabelMap& m) {
  std::set<std::int32_t> s;
  for (auto v : m.values()) {
    if (v != 0) s.insert(v);
  }
  return {s.begin(), s.end()};
}

/// IoU of two binary masks by pixel counting.
inline double pair_iou(const BinaryMask& a, const BinaryMask& b) {
  long inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

/// P×G IoU matrix from explicit per-instance masks.
inline std::vector<std::vector<double>> iou_matrix(const LabelMap& pred, const LabelMap& gt) {
  const auto pl = labels_of(pred), gl = labels_of(gt);
  std::vector<std::vector<double>> m(pl.size(), std::vector<double>(gl.size()));
  for (std::size_t i = 0; i < pl.size(); ++i) {
    const auto pm = instance_mask(pred, pl[i]);
    for (std::size_t j = 0; j < gl.size(); ++j) m[i][j] = pair_iou(pm, instance_mask(gt, gl[j]));
  }
  return m;
}

/// Maximum-cardinality assignment of preds to gts with IoU > t, by exhaustive
/// search. Returns the size; `pairs` receives one optimal assignment.
inline int best_assignment(const std::vector<std::vector<double>>& iou, double t,
                           std::vector<std::pair<int, int>>* pairs = nullptr) {
  const int P = static_cast<int>(iou.size());
  const int G = P == 0 ? 0 : static_cast<int>(iou[0].size());
  std::vector<bool> used(G, false);
  std::vector<std::pair<int, int>> cur, best;
  int best_n = -1;
  auto rec = [&](auto&& self, int p) -> void {
    if (p == P) {
      if (static_cast<int>(cur.size()) > best_n) {
        best_n = static_cast<int>(cur.size());
        best = cur;
      }
      return;
    }
    if (static_cast<int>(cur.size()) + (P - p) <= best_n) return;
    for (int g = 0; g < G; ++g) {
      if (used[g] || !(iou[p][g] > t)) continue;
      used[g] = true;
      cur.emplace_back(p, g);
      self(self, p + 1);
      cur.pop_back();
      used[g] = false;
    }
    self(self, p + 1);
  };
  rec(rec, 0);
  if (pairs) *pairs = best;
  return std::max(best_n, 0);
}

/// mSA from explicit masks and exhaustive assignment.
inline double msa(const LabelMap& pred, const LabelMap& gt, const std::vector<double>& thresholds) {
  const auto m = iou_matrix(pred, gt);
  const int P = static_cast<int>(labels_of(pred).size()), G = static_cast<int>(labels_of(gt).size());
  double sum = 0.0;
  for (double t : thresholds) {
    const int tp = best_assignment(m, t);
    const int denom = tp + (P - tp) + (G - tp);
    sum += denom == 0 ? 1.0 : double(tp) / double(denom);
  }
  return sum / double(thresholds.size());
}

/// Two-sided signed-rank p by enumerating all 2^n sign assignments of the
/// ranks of |d| (distinct magnitudes, no zeros).
inline double enumerated_wilcoxon_p(const std::vector<double>& d) {
  const int n = static_cast<int>(d.size());
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](int a, int b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<int> rank(n);
  for (int k = 0; k < n; ++k) rank[idx[k]] = k + 1;
  int w_plus = 0, total = n * (n + 1) / 2;
  for (int i = 0; i < n; ++i) {
    if (d[i] > 0) w_plus += rank[i];
  }
  const int w = std::min(w_plus, total - w_plus);
  long extreme = 0;
  const long all = 1L << n;
  for (long mask = 0; mask < all; ++mask) {
    int s = 0;
    for (int r = 0; r < n; ++r) {
      if (mask >> r & 1) s += r + 1;
    }
    if (std::min(s, total - s) <= w) ++extreme;
  }
  return std::min(1.0, double(extreme) / double(all));
}

inline BinaryMask random_mask(std::mt19937_64& rng, Shape s, double density) {
  std::bernoulli_distribution coin(density);
  BinaryMask m(s, 0);
  for (auto& v : m.values()) v = coin(rng);
  return m;
}

/// Random label map built from up to `max_instances` overlapping rectangles
/// and blobs (later ones overwrite earlier ones).
inline LabelMap random_label_map(std::mt19937_64& rng, Shape s, int max_instances) {
  LabelMap m(s, 0);
  std::uniform_int_distribution<int> count(0, max_instances);
  const int n = count(rng);
  for (int k = 1; k <= n; ++k) {
    std::uniform_int_distribution<int> rr(0, s.height - 1), cc(0, s.width - 1);
    std::uniform_int_distribution<int> size(2, std::max(3, s.height / 3));
    const int r0 = rr(rng), c0 = cc(rng), h = size(rng), w = size(rng);
    for (int r = r0; r < std::min(s.height, r0 + h); ++r) {
      for (int c = c0; c < std::min(s.width, c0 + w); ++c) m(r, c) = k;
    }
  }
  return m;
}

}  // namespace oracle
