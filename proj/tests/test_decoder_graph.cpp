#include <gtest/gtest.h>

#include <fstream>
#include <thread>
#include <json.hpp>

#include "apg/decoder_graph.hpp"
#include "apg/npy.hpp"
#include "apg/zip.hpp"
#include "test_paths.hpp"

using namespace apg;

namespace {

const std::filesystem::path kGraphs = std::filesystem::path(APG_FIXTURES) / "graphs";
const std::filesystem::path kOps = std::filesystem::path(APG_FIXTURES) / "ops";

std::map<std::string, npy::Array> read_npz(const std::filesystem::path& p) {
  std::map<std::string, npy::Array> out;
  for (const auto& [name, bytes] : zip::read_archive(zip::read_file(p))) {
    out[name.substr(0, name.size() - 4)] = npy::parse(bytes);
  }
  return out;
}

Tensor to_tensor(const npy::Array& a) {
  if (a.descr == "<f4") return Tensor::floats(a.shape, npy::as_vector<float>(a));
  std::vector<std::int64_t> v;
  DType dt;
  if (a.descr == "<i8") {
    v = npy::as_vector<std::int64_t>(a);
    dt = DType::kInt64;
  } else if (a.descr == "<i4") {
    const auto w = npy::as_vector<std::int32_t>(a);
    v.assign(w.begin(), w.end());
    dt = DType::kInt32;
  } else if (a.descr == "|b1") {
    const auto w = npy::as_vector<std::uint8_t>(a);
    v.assign(w.begin(), w.end());
    dt = DType::kBool;
  } else {
    throw std::runtime_error("unexpected dtype " + a.descr);
  }
  return Tensor::ints(dt, a.shape, std::move(v));
}

void expect_tensor_near(const Tensor& got, const Tensor& want, const std::string& what) {
  ASSERT_EQ(got.dtype, want.dtype) << what;
  ASSERT_EQ(got.shape, want.shape) << what;
  if (want.is_float()) {
    ASSERT_EQ(got.f.size(), want.f.size()) << what;
    for (std::size_t i = 0; i < want.f.size(); ++i) {
      EXPECT_NEAR(got.f[i], want.f[i], 1e-5 + 1e-5 * std::abs(want.f[i])) << what << " @" << i;
    }
  } else {
    EXPECT_EQ(got.i, want.i) << what;
  }
}

ErrorCode load_error(const std::string& name) {
  try {
    DecoderGraph::load(kGraphs / name);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kInvalidArgument;
}

PredictionBundle bundle_with_embedding(Shape s, int c, int h, int w, std::vector<float> values) {
  PredictionBundle b;
  b.fg = b.center_dist = b.boundary_dist = FloatMap(s, 0.0f);
  b.embedding = Embedding{c, h, w, std::move(values)};
  return b;
}

}  // namespace

TEST(Operators, MatchReferenceRuntime) {
  std::ifstream in(kOps / "cases.json");
  const auto names = nlohmann::json::parse(in).get<std::vector<std::string>>();
  ASSERT_GE(names.size(), 50u);
  for (const auto& name : names) {
    SCOPED_TRACE(name);
    const auto graph = DecoderGraph::load(kOps / (name + ".onnx"), false);
    std::map<std::string, Tensor> feeds;
    std::map<std::string, Tensor> expected;
    for (const auto& [key, arr] : read_npz(kOps / (name + ".npz"))) {
      if (key.rfind("in_", 0) == 0) feeds.emplace(key.substr(3), to_tensor(arr));
      if (key.rfind("out_", 0) == 0) expected.emplace(key.substr(4), to_tensor(arr));
    }
    const auto got = graph->run(feeds);
    for (const auto& [out_name, want] : expected) expect_tensor_near(got.at(out_name), want, name + "/" + out_name);
  }
}

TEST(Operators, SupportedListCoversFixtures) {
  const auto& ops = DecoderGraph::supported_ops();
  for (const char* op : {"Add", "MatMul", "Softmax", "Reshape", "Slice", "Gather", "ReduceMean", "Sigmoid"}) {
    EXPECT_NE(std::find(ops.begin(), ops.end(), op), ops.end()) << op;
  }
  EXPECT_EQ(std::find(ops.begin(), ops.end(), "Conv"), ops.end());
}

TEST(Load, SignatureIsReported) {
  const auto g = DecoderGraph::load(kGraphs / "fixed_plane.onnx");
  ASSERT_EQ(g->inputs().size(), 3u);
  EXPECT_EQ(g->inputs()[0].name, "embedding");
  EXPECT_EQ(g->inputs()[2].dtype, DType::kInt32);
  ASSERT_EQ(g->outputs().size(), 2u);
  EXPECT_EQ(g->outputs()[0].name, "mask_logits");
}

TEST(Load, Errors) {
  EXPECT_EQ(load_error("bad_label_dtype.onnx"), ErrorCode::kGraphSignatureMismatch);
  EXPECT_EQ(load_error("missing_scores.onnx"), ErrorCode::kGraphSignatureMismatch);
  EXPECT_EQ(load_error("missing_labels.onnx"), ErrorCode::kGraphSignatureMismatch);
  EXPECT_EQ(load_error("unsupported_op.onnx"), ErrorCode::kGraphLoadError);
  EXPECT_EQ(load_error("not_a_model.onnx"), ErrorCode::kGraphLoadError);
  EXPECT_THROW(DecoderGraph::load(kGraphs / "does_not_exist.onnx"), Error);
}

TEST(Load, SignatureCheckCanBeSkipped) {
  EXPECT_NO_THROW(DecoderGraph::load(kGraphs / "missing_scores.onnx", false));
}

TEST(Resize, IdentityAndUpsample) {
  const std::vector<float> src{0, 1, 2, 3};
  const auto same = resize_bilinear(src.data(), 2, 2, {2, 2});
  for (int i = 0; i < 4; ++i) EXPECT_FLOAT_EQ(same[static_cast<std::size_t>(i)], src[static_cast<std::size_t>(i)]);
  const auto up = resize_bilinear(src.data(), 2, 2, {4, 4});
  // Half-pixel centers: output pixel 1 maps to source 0.25.
  EXPECT_FLOAT_EQ(up(0, 0), 0.0f);
  EXPECT_FLOAT_EQ(up(0, 1), 0.25f);
  EXPECT_FLOAT_EQ(up(1, 1), 0.75f);
  EXPECT_FLOAT_EQ(up(3, 3), 3.0f);
}

TEST(ExternalPredictor, FixedPlaneThroughLogistic) {
  const auto g = DecoderGraph::load(kGraphs / "fixed_plane.onnx");
  const auto logits = npy::as_vector<float>(npy::parse(zip::read_file(kGraphs / "fixed_plane_logits.npy")));
  const ExternalPredictor pred(g, bundle_with_embedding({16, 16}, 4, 8, 8, std::vector<float>(256, 0.0f)));
  const auto c = pred.predict({3, 4, true});
  EXPECT_DOUBLE_EQ(c.quality(), 0.75);
  for (int r = 0; r < 16; ++r) {
    for (int col = 0; col < 16; ++col) {
      const double p = 1.0 / (1.0 + std::exp(-double(logits[static_cast<std::size_t>(r * 16 + col)])));
      if (p >= 0.45) {
        EXPECT_NEAR(c.soft_at(r, col), p, 1e-6);
      }
      EXPECT_EQ(c.contains(r, col), p >= 0.5);
    }
  }
}

TEST(ExternalPredictor, PicksHighestScoringPlane) {
  const auto g = DecoderGraph::load(kGraphs / "three_planes.onnx");
  const auto planes = npy::as_vector<float>(npy::parse(zip::read_file(kGraphs / "three_planes_logits.npy")));
  const ExternalPredictor pred(g, bundle_with_embedding({8, 8}, 4, 8, 8, std::vector<float>(256, 0.0f)));
  const auto c = pred.predict({0, 0, true});
  EXPECT_NEAR(c.quality(), 0.9, 1e-7);
  for (int i = 0; i < 64; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-double(planes[static_cast<std::size_t>(64 + i)])));
    EXPECT_EQ(c.contains(i / 8, i % 8), p >= 0.5);
  }
}

TEST(ExternalPredictor, MissingEmbeddingOrGraph) {
  PredictionBundle b;
  b.fg = b.center_dist = b.boundary_dist = FloatMap({4, 4}, 0.0f);
  const auto g = DecoderGraph::load(kGraphs / "fixed_plane.onnx");
  try {
    ExternalPredictor pred(g, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmbeddingMissing);
  }
  EXPECT_THROW(ExternalPredictor(nullptr, bundle_with_embedding({4, 4}, 1, 1, 1, {0})), Error);
}

TEST(PointBump, MatchesReferenceRuntime) {
  const auto g = DecoderGraph::load(kGraphs / "point_bump.onnx");
  const auto cases = read_npz(kGraphs / "point_bump_expected.npz");
  for (int k = 0; k < 3; ++k) {
    const std::string pre = "case" + std::to_string(k) + "_";
    std::map<std::string, Tensor> feeds;
    for (const char* in : {"embedding", "points", "labels"}) feeds.emplace(in, to_tensor(cases.at(pre + in)));
    const auto out = g->run(feeds);
    expect_tensor_near(out.at("mask_logits"), to_tensor(cases.at(pre + "mask_logits")), pre + "mask_logits");
    expect_tensor_near(out.at("scores"), to_tensor(cases.at(pre + "scores")), pre + "scores");
  }
}

TEST(PointBump, PredictorFollowsPrompt) {
  const auto g = DecoderGraph::load(kGraphs / "point_bump.onnx");
  const auto cases = read_npz(kGraphs / "point_bump_expected.npz");
  const auto emb = npy::as_vector<float>(cases.at("case0_embedding"));
  const ExternalPredictor pred(g, bundle_with_embedding({8, 8}, 4, 8, 8, emb));
  // Pixel (row 3, col 3) of an 8×8 image maps to (0.4375, 0.4375).
  std::map<std::string, Tensor> feeds{{"embedding", Tensor::floats({4, 8, 8}, emb)},
                                      {"points", Tensor::floats({1, 2}, {0.4375f, 0.4375f})},
                                      {"labels", Tensor::ints(DType::kInt32, {1}, {1})}};
  const auto out = g->run(feeds);
  const auto& s = out.at("scores").f;
  const auto best = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
  const auto c = pred.predict({3, 3, true});
  EXPECT_NEAR(c.quality(), s[best], 1e-7);
  for (int i = 0; i < 64; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-double(out.at("mask_logits").f[best * 64 + static_cast<std::size_t>(i)])));
    EXPECT_EQ(c.contains(i / 8, i % 8), p >= 0.5) << i;
  }
  EXPECT_TRUE(c.contains(3, 3));
}

TEST(PointBump, ConcurrentRunsAgree) {
  const auto g = DecoderGraph::load(kGraphs / "point_bump.onnx");
  const auto cases = read_npz(kGraphs / "point_bump_expected.npz");
  const ExternalPredictor pred(g, bundle_with_embedding({8, 8}, 4, 8, 8, npy::as_vector<float>(cases.at("case1_embedding"))));
  std::vector<BinaryMask> serial;
  for (int i = 0; i < 64; ++i) serial.push_back(pred.predict({i / 8, i % 8, true}).binary());
  std::vector<BinaryMask> parallel(64);
  {
    std::vector<std::jthread> threads;
    for (int t = 0; t < 8; ++t) {
      threads.emplace_back([&, t] {
        for (int i = t; i < 64; i += 8) parallel[static_cast<std::size_t>(i)] = pred.predict({i / 8, i % 8, true}).binary();
      });
    }
  }
  EXPECT_EQ(serial, parallel);
}
