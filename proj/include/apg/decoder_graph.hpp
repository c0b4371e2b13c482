#pragma once

// External mask backend: runs a serialized decoder inference graph (ONNX
// model file) with the signature
//   inputs  embedding   f32 C×He×We
//           points      f32 K×2, (x, y) normalized to [0,1]
//           labels      i32 K
//   outputs mask_logits f32 M×h×w
//           scores      f32 M
// through a small built-in interpreter.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "apg/exchange_io.hpp"
#include "apg/mask_backends.hpp"

namespace apg {

enum class DType { kFloat32, kInt32, kInt64, kBool };

struct Tensor {
  DType dtype = DType::kFloat32;
  std::vector<std::int64_t> shape;
  std::vector<float> f;         // kFloat32
  std::vector<std::int64_t> i;  // integer and bool types

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
  bool is_float() const { return dtype == DType::kFloat32; }

  static Tensor floats(std::vector<std::int64_t> shape, std::vector<float> values) {
    Tensor t;
    t.dtype = DType::kFloat32;
    t.shape = std::move(shape);
    t.f = std::move(values);
    return t;
  }
  static Tensor ints(DType dtype, std::vector<std::int64_t> shape, std::vector<std::int64_t> values) {
    Tensor t;
    t.dtype = dtype;
    t.shape = std::move(shape);
    t.i = std::move(values);
    return t;
  }
};

struct ValueSpec {
  std::string name;
  DType dtype = DType::kFloat32;
  /// -1 for symbolic or unknown dimensions; empty if the rank is unknown.
  std::vector<std::int64_t> shape;
};

/// Immutable once loaded; `run` keeps all state on the stack and may be
/// called from many threads at once.
class DecoderGraph {
 public:
  /// Parses the model and checks that every node uses a supported operator
  /// (GraphLoadError) and that the graph has the decoder signature
  /// (GraphSignatureMismatch).
  /// `check_signature = false` admits arbitrary graphs (operator tests).
  static std::shared_ptr<const DecoderGraph> load(const std::filesystem::path& path, bool check_signature = true);
  static std::shared_ptr<const DecoderGraph> from_bytes(const std::string& bytes, bool check_signature = true);

  ~DecoderGraph();

  const std::vector<ValueSpec>& inputs() const;
  const std::vector<ValueSpec>& outputs() const;

  std::map<std::string, Tensor> run(const std::map<std::string, Tensor>& feeds) const;

  /// Operators the interpreter implements.
  static const std::vector<std::string>& supported_ops();

 private:
  struct Impl;
  explicit DecoderGraph(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

/// Bilinear resize with half-pixel centers and edge clamping.
FloatMap resize_bilinear(const float* src, int src_h, int src_w, Shape dst);

/// Runs one point prompt through the graph; keeps the highest-scoring mask
/// plane, resizes it to the image, applies the logistic function.
class ExternalPredictor final : public MaskPredictor {
 public:
  ExternalPredictor(std::shared_ptr<const DecoderGraph> graph, const PredictionBundle& bundle);

  MaskCandidate predict(const PointPrompt& prompt) const override;
  std::string_view name() const override { return "external"; }

 private:
  std::shared_ptr<const DecoderGraph> graph_;
  Tensor embedding_;
  Shape shape_;
};

}  // namespace apg
