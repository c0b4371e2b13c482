#include <gtest/gtest.h>

#include <random>

#include "apg/metrics.hpp"
#include "apg/phantom.hpp"
#include "apg/pipelines.hpp"
#include "oracles.hpp"

using namespace apg;

namespace {

MaskCandidate rect(Shape s, int r0, int c0, int h, int w, double q, PointPrompt src = {}) {
  return MaskCandidate::from_binary(s, Box{r0, c0, h, w}, BinaryMask(h, w, 1), q, src);
}

MaskCandidate random_candidate(std::mt19937_64& rng, Shape s) {
  std::uniform_int_distribution<int> pos(0, s.height - 4), size(2, 12);
  std::uniform_real_distribution<double> q(0.0, 1.0);
  const int r0 = pos(rng), c0 = pos(rng);
  const int h = std::min(size(rng), s.height - r0), w = std::min(size(rng), s.width - c0);
  return rect(s, r0, c0, h, w, std::round(q(rng) * 4) / 4, {r0, c0, true});
}

std::map<std::int32_t, long> areas(const LabelMap& l) {
  std::map<std::int32_t, long> a;
  for (auto v : l.values()) {
    if (v) ++a[v];
  }
  return a;
}

Phantom disks(std::uint64_t seed, int n, Shape size = {96, 96}) {
  PhantomSpec spec;
  spec.seed = seed;
  spec.image_size = size;
  spec.n_objects = n;
  spec.min_radius = 5;
  spec.max_radius = 9;
  return make_phantom(spec);
}

}  // namespace

TEST(SizeFilter, Boundaries) {
  const Shape s{64, 64};
  for (int min_area : {10, 25, 400}) {
    std::vector<MaskCandidate> cs;
    for (int a : {min_area - 1, min_area, min_area + 1}) {
      BinaryMask bits(1, 64, 0);
      for (int i = 0; i < std::min(a, 64); ++i) bits(0, i) = 1;
      if (a <= 64) {
        cs.push_back(MaskCandidate::from_binary(s, Box{0, 0, 1, 64}, bits, 1, {}));
      } else {
        BinaryMask block(21, 21, 0);
        for (int i = 0; i < a; ++i) block[static_cast<std::size_t>(i)] = 1;
        cs.push_back(MaskCandidate::from_binary(s, Box{0, 0, 21, 21}, block, 1, {}));
      }
    }
    const auto kept = size_filter(cs, min_area);
    ASSERT_EQ(kept.size(), 2u) << min_area;
    EXPECT_EQ(kept[0].area(), min_area);
    EXPECT_EQ(kept[1].area(), min_area + 1);
  }
}

TEST(Nms, KeepsHigherQualityDuplicate) {
  const Shape s{20, 20};
  const std::vector<MaskCandidate> cs{rect(s, 2, 2, 5, 5, 0.6), rect(s, 2, 2, 5, 5, 0.9), rect(s, 12, 12, 4, 4, 0.7)};
  const auto d = nms(cs, 0.9);
  EXPECT_EQ(d.kept, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(d.suppressed_by.at(0), 1u);
}

TEST(Nms, ThresholdIsExclusive) {
  const Shape s{20, 20};
  // IoU = 9/10 exactly.
  const std::vector<MaskCandidate> cs{rect(s, 0, 0, 1, 10, 0.9), rect(s, 0, 0, 1, 9, 0.8)};
  EXPECT_EQ(nms(cs, 0.9).kept.size(), 1u);
  EXPECT_EQ(nms(cs, 0.91).kept.size(), 2u);
}

TEST(Nms, IoMinSuppressesContainedMask) {
  const Shape s{20, 20};
  const std::vector<MaskCandidate> cs{rect(s, 0, 0, 10, 10, 0.9), rect(s, 2, 2, 3, 3, 0.8)};
  EXPECT_EQ(nms(cs, 0.9, OverlapMeasure::kIou).kept.size(), 2u);
  EXPECT_EQ(nms(cs, 0.9, OverlapMeasure::kIoMin).kept.size(), 1u);
}

TEST(Nms, QualityTiesBreakByPromptPosition) {
  const Shape s{20, 20};
  const std::vector<MaskCandidate> cs{rect(s, 0, 0, 4, 4, 0.5, {3, 1, true}), rect(s, 0, 0, 4, 4, 0.5, {1, 3, true})};
  EXPECT_EQ(nms(cs, 0.5).kept, (std::vector<std::size_t>{1}));
}

TEST(Nms, Idempotent) {
  std::mt19937_64 rng(31);
  const Shape s{32, 32};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<MaskCandidate> cs;
    for (int k = 0; k < 15; ++k) cs.push_back(random_candidate(rng, s));
    for (double t : {0.3, 0.5, 0.9}) {
      const auto first = nms(cs, t);
      std::vector<MaskCandidate> kept;
      for (auto i : first.kept) kept.push_back(cs[i]);
      const auto second = nms(kept, t);
      ASSERT_EQ(second.kept.size(), kept.size());
      for (std::size_t i = 0; i < kept.size(); ++i) EXPECT_EQ(second.kept[i], i);
      for (std::size_t i = 0; i < kept.size(); ++i) {
        for (std::size_t j = i + 1; j < kept.size(); ++j) {
          EXPECT_LT(oracle::pair_iou(kept[i].binary(), kept[j].binary()), t);
        }
      }
    }
  }
}

TEST(Rasterize, ContestedPixelsGoToHigherQuality) {
  const Shape s{10, 10};
  const std::vector<MaskCandidate> cs{rect(s, 0, 0, 5, 5, 0.5), rect(s, 3, 3, 5, 5, 0.8), rect(s, 4, 4, 2, 2, 0.8)};
  const auto l = rasterize(cs, s);
  EXPECT_EQ(l(0, 0), 1);
  EXPECT_EQ(l(3, 3), 2);
  EXPECT_EQ(l(4, 4), 2);  // equal quality: earlier candidate keeps it
  EXPECT_EQ(l(7, 7), 2);
  EXPECT_EQ(l(9, 9), 0);
  EXPECT_EQ(areas(l).count(3), 0u);
}

TEST(RemoveSmallInstances, RenumbersSurvivors) {
  LabelMap l({4, 8}, 0);
  for (int c = 0; c < 3; ++c) l(0, c) = 5;
  l(1, 0) = 2;
  for (int c = 0; c < 8; ++c) l(3, c) = 9;
  const auto out = remove_small_instances(l, 3);
  EXPECT_EQ(out(0, 0), 1);
  EXPECT_EQ(out(1, 0), 0);
  EXPECT_EQ(out(3, 7), 2);
  EXPECT_EQ(count_instances(out), 2);
}

TEST(RunApg, OracleRecoversDisks) {
  const auto ph = disks(3, 6);
  const OraclePredictor pred(ph.gt);
  const auto r = run_apg(ph.bundle, pred);
  EXPECT_EQ(r.prompt_count, 6u);
  EXPECT_EQ(r.instance_count, 6);
  EXPECT_TRUE(oracle::same_partition(r.labels, ph.gt));
  EXPECT_DOUBLE_EQ(msa(r.labels, ph.gt), 1.0);
}

TEST(RunApg, BoundaryVariantRecoversDisks) {
  const auto ph = disks(4, 6);
  const OraclePredictor pred(ph.gt);
  const auto r = run_apg_boundary(ph.bundle, pred);
  EXPECT_GE(r.prompt_count, 6u);
  EXPECT_TRUE(oracle::same_partition(r.labels, ph.gt));
}

TEST(RunAis, RecoversDisks) {
  const auto ph = disks(5, 6);
  const auto r = run_ais(ph.bundle);
  EXPECT_EQ(r.instance_count, 6);
  EXPECT_TRUE(oracle::same_partition(r.labels, ph.gt));
}

TEST(RunAis, SplitsTouchingPair) {
  LabelMap gt({20, 40}, 0);
  for (int r = 0; r < 20; ++r) {
    for (int c = 0; c < 40; ++c) {
      if (std::hypot(r - 10, c - 10) <= 8) gt(r, c) = 1;
      if (std::hypot(r - 10, c - 27) <= 8) gt(r, c) = 2;
    }
  }
  const auto r = run_ais(analytic_maps(gt));
  EXPECT_TRUE(oracle::same_partition(r.labels, gt));
}

TEST(RunAmg, GridFindsFourDisks) {
  LabelMap gt({64, 64}, 0);
  int k = 0;
  for (int cy : {16, 48}) {
    for (int cx : {16, 48}) {
      ++k;
      for (int r = 0; r < 64; ++r) {
        for (int c = 0; c < 64; ++c) {
          if (std::hypot(r - cy, c - cx) <= 9) gt(r, c) = k;
        }
      }
    }
  }
  const auto b = analytic_maps(gt);
  const RegionGrowPredictor pred(b.fg, 0.5);
  AMGParams p;
  p.n_per_side = 8;
  const auto r = run_amg(b, pred, p);
  EXPECT_EQ(r.prompt_count, 64u);
  EXPECT_EQ(r.instance_count, 4);
  EXPECT_TRUE(oracle::same_partition(r.labels, gt));
}

TEST(RunAmg, QualityFilterDropsEverything) {
  const auto ph = disks(6, 4, {48, 48});
  FloatMap ramp(ph.gt.shape(), 0.0f);
  for (int r = 0; r < 48; ++r) {
    for (int c = 0; c < 48; ++c) ramp(r, c) = ph.gt(r, c) ? 0.52f : 0.0f;
  }
  AMGParams p;
  p.n_per_side = 8;
  p.min_stability = 0.9;
  const auto r = run_amg(ph.bundle, RegionGrowPredictor(ramp, 0.5), p);
  EXPECT_EQ(r.candidate_count, 0u);
  EXPECT_EQ(r.instance_count, 0);
}

TEST(Pipelines, NoInstanceBelowMinimumArea) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    PhantomSpec spec;
    spec.seed = seed;
    spec.image_size = {80, 80};
    spec.n_objects = 8;
    spec.min_radius = 2;
    spec.max_radius = 8;
    spec.noise_sigma = 0.15;
    const auto ph = make_phantom(spec);
    const RegionGrowPredictor grow(ph.bundle.fg, 0.5);
    for (int s : {0, 10, 25, 60}) {
      APGParams p;
      p.s = s;
      AMGParams a;
      a.n_per_side = 16;
      a.min_area = s;
      for (const auto& r : {run_apg(ph.bundle, grow, p), run_ais(ph.bundle, p), run_amg(ph.bundle, grow, a),
                            run_apg_boundary(ph.bundle, grow, p)}) {
        const auto ar = areas(r.labels);
        for (const auto& [label, n] : ar) EXPECT_GE(n, s) << "seed " << seed;
        EXPECT_EQ(static_cast<int>(ar.size()), r.instance_count);
        if (!ar.empty()) EXPECT_EQ(ar.rbegin()->first, r.instance_count);
      }
    }
  }
}

TEST(Pipelines, Deterministic) {
  PhantomSpec spec;
  spec.seed = 9;
  spec.image_size = {80, 80};
  spec.n_objects = 8;
  spec.noise_sigma = 0.1;
  const auto ph = make_phantom(spec);
  const RegionGrowPredictor grow(ph.bundle.fg, 0.5);
  EXPECT_EQ(run_apg(ph.bundle, grow).labels, run_apg(ph.bundle, grow).labels);
  EXPECT_EQ(run_ais(ph.bundle).labels, run_ais(ph.bundle).labels);
}

TEST(Pipelines, InvalidParamsThrow) {
  const auto ph = disks(1, 2, {40, 40});
  APGParams p;
  p.t_c = 2;
  EXPECT_THROW(run_apg(ph.bundle, OraclePredictor(ph.gt), p), Error);
  AMGParams a;
  a.n_per_side = 0;
  EXPECT_THROW(run_amg(ph.bundle, OraclePredictor(ph.gt), a), Error);
}
