#include "apg/decoder_graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "onnx.pb.h"

namespace apg {

namespace {

using Shape64 = std::vector<std::int64_t>;

[[noreturn]] void fail(const std::string& msg) { throw Error(ErrorCode::kGraphLoadError, msg); }

DType dtype_from_proto(int t, const std::string& where) {
  switch (t) {
    case onnx::TensorProto::FLOAT: return DType::kFloat32;
    case onnx::TensorProto::INT32: return DType::kInt32;
    case onnx::TensorProto::INT64: return DType::kInt64;
    case onnx::TensorProto::BOOL: return DType::kBool;
    default: fail("unsupported element type " + std::to_string(t) + " for " + where);
  }
}

std::int64_t numel(const Shape64& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape64& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

Tensor tensor_from_proto(const onnx::TensorProto& p) {
  if (p.data_location() == onnx::TensorProto::EXTERNAL) fail("external tensor data is not supported: " + p.name());
  Tensor t;
  t.shape.assign(p.dims().begin(), p.dims().end());
  const std::int64_t n = numel(t.shape);
  const bool raw = p.has_raw_data();
  const std::string& bytes = p.raw_data();
  switch (p.data_type()) {
    case onnx::TensorProto::FLOAT:
      t.dtype = DType::kFloat32;
      if (raw) {
        t.f.resize(static_cast<std::size_t>(n));
        if (bytes.size() != t.f.size() * 4) fail("raw data size mismatch in " + p.name());
        std::memcpy(t.f.data(), bytes.data(), bytes.size());
      } else {
        t.f.assign(p.float_data().begin(), p.float_data().end());
      }
      break;
    case onnx::TensorProto::DOUBLE:
      t.dtype = DType::kFloat32;
      if (raw) {
        std::vector<double> tmp(static_cast<std::size_t>(n));
        if (bytes.size() != tmp.size() * 8) fail("raw data size mismatch in " + p.name());
        std::memcpy(tmp.data(), bytes.data(), bytes.size());
        t.f.assign(tmp.begin(), tmp.end());
      } else {
        t.f.assign(p.double_data().begin(), p.double_data().end());
      }
      break;
    case onnx::TensorProto::INT32:
    case onnx::TensorProto::BOOL:
    case onnx::TensorProto::UINT8:
    case onnx::TensorProto::INT8: {
      const int ty = p.data_type();
      t.dtype = ty == onnx::TensorProto::BOOL ? DType::kBool : DType::kInt32;
      if (raw) {
        const std::size_t width = ty == onnx::TensorProto::INT32 ? 4 : 1;
        if (bytes.size() != static_cast<std::size_t>(n) * width) fail("raw data size mismatch in " + p.name());
        t.i.resize(static_cast<std::size_t>(n));
        for (std::size_t k = 0; k < t.i.size(); ++k) {
          if (width == 4) {
            std::int32_t v;
            std::memcpy(&v, bytes.data() + 4 * k, 4);
            t.i[k] = v;
          } else if (ty == onnx::TensorProto::INT8) {
            t.i[k] = static_cast<std::int8_t>(bytes[k]);
          } else {
            t.i[k] = static_cast<std::uint8_t>(bytes[k]);
          }
        }
      } else {
        t.i.assign(p.int32_data().begin(), p.int32_data().end());
      }
      break;
    }
    case onnx::TensorProto::INT64:
      t.dtype = DType::kInt64;
      if (raw) {
        t.i.resize(static_cast<std::size_t>(n));
        if (bytes.size() != t.i.size() * 8) fail("raw data size mismatch in " + p.name());
        std::memcpy(t.i.data(), bytes.data(), bytes.size());
      } else {
        t.i.assign(p.int64_data().begin(), p.int64_data().end());
      }
      break;
    default:
      fail("unsupported tensor element type " + std::to_string(p.data_type()) + " in " + p.name());
  }
  const std::size_t have = t.is_float() ? t.f.size() : t.i.size();
  if (static_cast<std::int64_t>(have) != n) fail("tensor " + p.name() + " holds " + std::to_string(have) +
                                                 " values for shape " + shape_str(t.shape));
  return t;
}

ValueSpec spec_from_proto(const onnx::ValueInfoProto& v) {
  ValueSpec s;
  s.name = v.name();
  if (!v.type().has_tensor_type()) fail("value " + v.name() + " is not a tensor");
  const auto& tt = v.type().tensor_type();
  s.dtype = dtype_from_proto(tt.elem_type(), v.name());
  if (tt.has_shape()) {
    for (const auto& d : tt.shape().dim()) s.shape.push_back(d.has_dim_value() ? d.dim_value() : -1);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Tensor helpers

double get(const Tensor& t, std::size_t k) { return t.is_float() ? t.f[k] : static_cast<double>(t.i[k]); }

Tensor make_like(DType dtype, Shape64 shape) {
  Tensor t;
  t.dtype = dtype;
  t.shape = std::move(shape);
  if (dtype == DType::kFloat32) {
    t.f.assign(static_cast<std::size_t>(numel(t.shape)), 0.0f);
  } else {
    t.i.assign(static_cast<std::size_t>(numel(t.shape)), 0);
  }
  return t;
}

std::vector<std::int64_t> as_ints(const Tensor& t) {
  if (t.is_float()) fail("expected an integer tensor");
  return t.i;
}

Shape64 strides_of(const Shape64& s) {
  Shape64 st(s.size(), 1);
  for (std::size_t k = s.size(); k-- > 1;) st[k - 1] = st[k] * s[k];
  return st;
}

std::int64_t norm_axis(std::int64_t axis, std::size_t rank) {
  const auto r = static_cast<std::int64_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= std::max<std::int64_t>(r, 1)) fail("axis out of range");
  return axis;
}

Shape64 broadcast_shape(const Shape64& a, const Shape64& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape64 out(r);
  for (std::size_t k = 0; k < r; ++k) {
    const std::int64_t da = k < r - a.size() ? 1 : a[k - (r - a.size())];
    const std::int64_t db = k < r - b.size() ? 1 : b[k - (r - b.size())];
    if (da != db && da != 1 && db != 1) fail("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[k] = da == 1 ? db : da;
  }
  return out;
}

// Offsets into an input of shape `in` for every element of `out` under broadcasting.
std::vector<std::size_t> broadcast_offsets(const Shape64& in, const Shape64& out) {
  const std::size_t r = out.size();
  Shape64 padded(r, 1);
  for (std::size_t k = 0; k < in.size(); ++k) padded[r - in.size() + k] = in[k];
  const Shape64 in_strides = strides_of(padded);
  std::vector<std::size_t> offsets(static_cast<std::size_t>(numel(out)));
  Shape64 idx(r, 0);
  for (std::size_t flat = 0; flat < offsets.size(); ++flat) {
    std::int64_t off = 0;
    for (std::size_t k = 0; k < r; ++k) off += padded[k] == 1 ? 0 : idx[k] * in_strides[k];
    offsets[flat] = static_cast<std::size_t>(off);
    for (std::size_t k = r; k-- > 0;) {
      if (++idx[k] < out[k]) break;
      idx[k] = 0;
    }
  }
  return offsets;
}

Tensor to_float(const Tensor& t) {
  if (t.is_float()) return t;
  Tensor out = make_like(DType::kFloat32, t.shape);
  for (std::size_t k = 0; k < t.i.size(); ++k) out.f[k] = static_cast<float>(t.i[k]);
  return out;
}

// ---------------------------------------------------------------------------
// Operators

struct Node {
  std::string op;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::map<std::string, onnx::AttributeProto> attrs;

  bool has(const std::string& k) const { return attrs.count(k) != 0; }
  std::int64_t attr_i(const std::string& k, std::int64_t def) const {
    auto it = attrs.find(k);
    return it == attrs.end() ? def : it->second.i();
  }
  float attr_f(const std::string& k, float def) const {
    auto it = attrs.find(k);
    return it == attrs.end() ? def : it->second.f();
  }
  std::vector<std::int64_t> attr_ints(const std::string& k) const {
    auto it = attrs.find(k);
    if (it == attrs.end()) return {};
    return {it->second.ints().begin(), it->second.ints().end()};
  }
};

using Inputs = std::vector<const Tensor*>;
using OpFn = std::function<std::vector<Tensor>(const Node&, const Inputs&)>;

const Tensor& need(const Inputs& in, std::size_t k, const Node& n) {
  if (k >= in.size() || in[k] == nullptr) fail(n.op + " is missing input " + std::to_string(k));
  return *in[k];
}

const Tensor* optional_input(const Inputs& in, std::size_t k) { return k < in.size() ? in[k] : nullptr; }

OpFn unary(float (*fn)(float)) {
  return [fn](const Node& n, const Inputs& in) {
    Tensor x = to_float(need(in, 0, n));
    for (auto& v : x.f) v = fn(v);
    return std::vector<Tensor>{x};
  };
}

enum class Bin { kAdd, kSub, kMul, kDiv, kPow, kMax, kMin, kEqual, kLess, kGreater };

OpFn binary(Bin kind) {
  return [kind](const Node& n, const Inputs& in) {
    const Tensor& a = need(in, 0, n);
    const Tensor& b = need(in, 1, n);
    const Shape64 shape = broadcast_shape(a.shape, b.shape);
    const auto oa = broadcast_offsets(a.shape, shape);
    const auto ob = broadcast_offsets(b.shape, shape);
    const bool compare = kind == Bin::kEqual || kind == Bin::kLess || kind == Bin::kGreater;
    const bool floating = a.is_float() || b.is_float();
    Tensor out = make_like(compare ? DType::kBool : (floating ? DType::kFloat32 : a.dtype), shape);
    for (std::size_t k = 0; k < oa.size(); ++k) {
      if (compare) {
        const double x = get(a, oa[k]), y = get(b, ob[k]);
        out.i[k] = kind == Bin::kEqual ? x == y : kind == Bin::kLess ? x < y : x > y;
      } else if (floating) {
        const float x = static_cast<float>(get(a, oa[k])), y = static_cast<float>(get(b, ob[k]));
        float r = 0.0f;
        switch (kind) {
          case Bin::kAdd: r = x + y; break;
          case Bin::kSub: r = x - y; break;
          case Bin::kMul: r = x * y; break;
          case Bin::kDiv: r = x / y; break;
          case Bin::kPow: r = std::pow(x, y); break;
          case Bin::kMax: r = std::max(x, y); break;
          case Bin::kMin: r = std::min(x, y); break;
          default: break;
        }
        out.f[k] = r;
      } else {
        const std::int64_t x = a.i[oa[k]], y = b.i[ob[k]];
        std::int64_t r = 0;
        switch (kind) {
          case Bin::kAdd: r = x + y; break;
          case Bin::kSub: r = x - y; break;
          case Bin::kMul: r = x * y; break;
          case Bin::kDiv:
            if (y == 0) fail("integer division by zero");
            r = x / y;
            break;
          case Bin::kPow: r = static_cast<std::int64_t>(std::pow(double(x), double(y))); break;
          case Bin::kMax: r = std::max(x, y); break;
          case Bin::kMin: r = std::min(x, y); break;
          default: break;
        }
        out.i[k] = r;
      }
    }
    return std::vector<Tensor>{out};
  };
}

std::vector<Tensor> op_matmul(const Node& n, const Inputs& in) {
  Tensor a = to_float(need(in, 0, n));
  Tensor b = to_float(need(in, 1, n));
  const bool a_vec = a.shape.size() == 1, b_vec = b.shape.size() == 1;
  if (a_vec) a.shape.insert(a.shape.begin(), 1);
  if (b_vec) b.shape.push_back(1);
  const std::int64_t m = a.shape[a.shape.size() - 2], kdim = a.shape.back();
  const std::int64_t kb = b.shape[b.shape.size() - 2], ncol = b.shape.back();
  if (kdim != kb) fail("MatMul inner dimensions differ: " + shape_str(a.shape) + " x " + shape_str(b.shape));
  const Shape64 batch_a(a.shape.begin(), a.shape.end() - 2), batch_b(b.shape.begin(), b.shape.end() - 2);
  const Shape64 batch = broadcast_shape(batch_a, batch_b);
  const auto ob = broadcast_offsets(batch_b, batch);
  const auto oa = broadcast_offsets(batch_a, batch);
  Shape64 out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(ncol);
  Tensor out = make_like(DType::kFloat32, out_shape);
  for (std::size_t bi = 0; bi < oa.size(); ++bi) {
    const float* pa = a.f.data() + oa[bi] * m * kdim;
    const float* pb = b.f.data() + ob[bi] * kdim * ncol;
    float* po = out.f.data() + bi * m * ncol;
    for (std::int64_t r = 0; r < m; ++r) {
      for (std::int64_t c = 0; c < ncol; ++c) {
        float acc = 0.0f;
        for (std::int64_t k = 0; k < kdim; ++k) acc += pa[r * kdim + k] * pb[k * ncol + c];
        po[r * ncol + c] = acc;
      }
    }
  }
  if (a_vec) out.shape.erase(out.shape.end() - 2);
  if (b_vec) out.shape.pop_back();
  return {out};
}

std::vector<Tensor> op_gemm(const Node& n, const Inputs& in) {
  Tensor a = to_float(need(in, 0, n));
  Tensor b = to_float(need(in, 1, n));
  if (a.shape.size() != 2 || b.shape.size() != 2) fail("Gemm expects 2-D inputs");
  const bool ta = n.attr_i("transA", 0) != 0, tb = n.attr_i("transB", 0) != 0;
  const float alpha = n.attr_f("alpha", 1.0f), beta = n.attr_f("beta", 1.0f);
  const std::int64_t m = ta ? a.shape[1] : a.shape[0], k = ta ? a.shape[0] : a.shape[1];
  const std::int64_t kb = tb ? b.shape[1] : b.shape[0], ncol = tb ? b.shape[0] : b.shape[1];
  if (k != kb) fail("Gemm inner dimensions differ");
  Tensor out = make_like(DType::kFloat32, {m, ncol});
  for (std::int64_t r = 0; r < m; ++r) {
    for (std::int64_t c = 0; c < ncol; ++c) {
      float acc = 0.0f;
      for (std::int64_t q = 0; q < k; ++q) {
        const float x = ta ? a.f[q * a.shape[1] + r] : a.f[r * a.shape[1] + q];
        const float y = tb ? b.f[c * b.shape[1] + q] : b.f[q * b.shape[1] + c];
        acc += x * y;
      }
      out.f[r * ncol + c] = alpha * acc;
    }
  }
  if (const Tensor* c = optional_input(in, 2)) {
    const Tensor cf = to_float(*c);
    const auto oc = broadcast_offsets(cf.shape, out.shape);
    for (std::size_t q = 0; q < oc.size(); ++q) out.f[q] += beta * cf.f[oc[q]];
  }
  return {out};
}

std::vector<Tensor> op_softmax(const Node& n, const Inputs& in) {
  Tensor x = to_float(need(in, 0, n));
  const auto axis = static_cast<std::size_t>(norm_axis(n.attr_i("axis", -1), x.shape.size()));
  const Shape64 st = strides_of(x.shape);
  const std::int64_t len = x.shape[axis], stride = st[axis];
  const std::int64_t outer = numel(x.shape) / (len * stride);
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t s = 0; s < stride; ++s) {
      float* base = x.f.data() + o * len * stride + s;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::int64_t k = 0; k < len; ++k) mx = std::max(mx, base[k * stride]);
      float sum = 0.0f;
      for (std::int64_t k = 0; k < len; ++k) sum += (base[k * stride] = std::exp(base[k * stride] - mx));
      for (std::int64_t k = 0; k < len; ++k) base[k * stride] /= sum;
    }
  }
  return {x};
}

std::vector<Tensor> op_reshape(const Node& n, const Inputs& in) {
  Tensor x = need(in, 0, n);
  const auto target = as_ints(need(in, 1, n));
  Shape64 shape(target.size());
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t k = 0; k < target.size(); ++k) {
    if (target[k] == -1) {
      infer = static_cast<int>(k);
      continue;
    }
    shape[k] = target[k] == 0 && n.attr_i("allowzero", 0) == 0 ? x.shape.at(k) : target[k];
    known *= shape[k];
  }
  if (infer >= 0) shape[infer] = known == 0 ? 0 : x.numel() / known;
  if (numel(shape) != x.numel()) fail("Reshape " + shape_str(x.shape) + " -> " + shape_str(shape));
  x.shape = shape;
  return {x};
}

std::vector<Tensor> op_transpose(const Node& n, const Inputs& in) {
  const Tensor& x = need(in, 0, n);
  const std::size_t r = x.shape.size();
  auto perm = n.attr_ints("perm");
  if (perm.empty()) {
    perm.resize(r);
    for (std::size_t k = 0; k < r; ++k) perm[k] = static_cast<std::int64_t>(r - 1 - k);
  }
  Shape64 shape(r);
  for (std::size_t k = 0; k < r; ++k) shape[k] = x.shape[perm[k]];
  const Shape64 in_st = strides_of(x.shape);
  Tensor out = make_like(x.dtype, shape);
  Shape64 idx(r, 0);
  const std::int64_t total = numel(shape);
  for (std::int64_t flat = 0; flat < total; ++flat) {
    std::int64_t src = 0;
    for (std::size_t k = 0; k < r; ++k) src += idx[k] * in_st[perm[k]];
    if (x.is_float()) {
      out.f[flat] = x.f[src];
    } else {
      out.i[flat] = x.i[src];
    }
    for (std::size_t k = r; k-- > 0;) {
      if (++idx[k] < shape[k]) break;
      idx[k] = 0;
    }
  }
  return {out};
}

std::vector<Tensor> op_concat(const Node& n, const Inputs& in) {
  if (in.empty()) fail("Concat without inputs");
  const Tensor& first = need(in, 0, n);
  const auto axis = static_cast<std::size_t>(norm_axis(n.attr_i("axis", 0), first.shape.size()));
  Shape64 shape = first.shape;
  shape[axis] = 0;
  bool floating = false;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const Tensor& t = need(in, k, n);
    if (t.shape.size() != first.shape.size()) fail("Concat rank mismatch");
    shape[axis] += t.shape[axis];
    floating = floating || t.is_float();
  }
  Tensor out = make_like(floating ? DType::kFloat32 : first.dtype, shape);
  const std::int64_t outer = std::accumulate(shape.begin(), shape.begin() + axis, std::int64_t{1}, std::multiplies<>());
  const std::int64_t inner =
      std::accumulate(shape.begin() + axis + 1, shape.end(), std::int64_t{1}, std::multiplies<>());
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const Tensor t = floating ? to_float(*in[k]) : *in[k];
    const std::int64_t chunk = t.shape[axis] * inner;
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t c = 0; c < chunk; ++c) {
        const std::int64_t dst = o * shape[axis] * inner + offset * inner + c;
        if (floating) {
          out.f[dst] = t.f[o * chunk + c];
        } else {
          out.i[dst] = t.i[o * chunk + c];
        }
      }
    }
    offset += t.shape[axis];
  }
  return {out};
}

std::vector<std::int64_t> axes_from(const Node& n, const Inputs& in, std::size_t input_index) {
  if (const Tensor* a = optional_input(in, input_index)) return as_ints(*a);
  return n.attr_ints("axes");
}

std::vector<Tensor> op_unsqueeze(const Node& n, const Inputs& in) {
  Tensor x = need(in, 0, n);
  auto axes = axes_from(n, in, 1);
  const std::size_t r = x.shape.size() + axes.size();
  for (auto& a : axes) a = norm_axis(a, r);
  std::sort(axes.begin(), axes.end());
  for (auto a : axes) x.shape.insert(x.shape.begin() + a, 1);
  return {x};
}

std::vector<Tensor> op_squeeze(const Node& n, const Inputs& in) {
  Tensor x = need(in, 0, n);
  auto axes = axes_from(n, in, 1);
  Shape64 shape;
  std::set<std::int64_t> drop;
  for (auto a : axes) drop.insert(norm_axis(a, x.shape.size()));
  for (std::size_t k = 0; k < x.shape.size(); ++k) {
    const bool squeeze = axes.empty() ? x.shape[k] == 1 : drop.count(static_cast<std::int64_t>(k)) != 0;
    if (squeeze && x.shape[k] != 1) fail("Squeeze of non-unit axis");
    if (!squeeze) shape.push_back(x.shape[k]);
  }
  x.shape = shape;
  return {x};
}

std::vector<Tensor> op_flatten(const Node& n, const Inputs& in) {
  Tensor x = need(in, 0, n);
  auto axis = n.attr_i("axis", 1);
  if (axis < 0) axis += static_cast<std::int64_t>(x.shape.size());
  const std::int64_t lead = std::accumulate(x.shape.begin(), x.shape.begin() + axis, std::int64_t{1}, std::multiplies<>());
  x.shape = {lead, x.numel() / std::max<std::int64_t>(lead, 1)};
  return {x};
}

std::vector<Tensor> op_gather(const Node& n, const Inputs& in) {
  const Tensor& x = need(in, 0, n);
  const Tensor& idx = need(in, 1, n);
  const auto axis = static_cast<std::size_t>(norm_axis(n.attr_i("axis", 0), x.shape.size()));
  const auto indices = as_ints(idx);
  Shape64 shape(x.shape.begin(), x.shape.begin() + axis);
  shape.insert(shape.end(), idx.shape.begin(), idx.shape.end());
  shape.insert(shape.end(), x.shape.begin() + axis + 1, x.shape.end());
  const std::int64_t outer = std::accumulate(x.shape.begin(), x.shape.begin() + axis, std::int64_t{1}, std::multiplies<>());
  const std::int64_t inner =
      std::accumulate(x.shape.begin() + axis + 1, x.shape.end(), std::int64_t{1}, std::multiplies<>());
  const std::int64_t len = x.shape[axis];
  Tensor out = make_like(x.dtype, shape);
  std::size_t dst = 0;
  for (std::int64_t o = 0; o < outer; ++o) {
    for (auto j : indices) {
      if (j < 0) j += len;
      if (j < 0 || j >= len) fail("Gather index out of range");
      for (std::int64_t c = 0; c < inner; ++c, ++dst) {
        const std::int64_t src = (o * len + j) * inner + c;
        if (x.is_float()) {
          out.f[dst] = x.f[src];
        } else {
          out.i[dst] = x.i[src];
        }
      }
    }
  }
  return {out};
}

std::vector<Tensor> op_slice(const Node& n, const Inputs& in) {
  const Tensor& x = need(in, 0, n);
  const std::size_t r = x.shape.size();
  std::vector<std::int64_t> starts, ends, axes, steps;
  if (n.has("starts")) {
    starts = n.attr_ints("starts");
    ends = n.attr_ints("ends");
    axes = n.attr_ints("axes");
  } else {
    starts = as_ints(need(in, 1, n));
    ends = as_ints(need(in, 2, n));
    if (const Tensor* a = optional_input(in, 3)) axes = as_ints(*a);
    if (const Tensor* s = optional_input(in, 4)) steps = as_ints(*s);
  }
  if (axes.empty()) {
    for (std::size_t k = 0; k < starts.size(); ++k) axes.push_back(static_cast<std::int64_t>(k));
  }
  if (steps.empty()) steps.assign(starts.size(), 1);
  Shape64 begin(r, 0), step(r, 1), shape = x.shape;
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const auto a = static_cast<std::size_t>(norm_axis(axes[k], r));
    const std::int64_t dim = x.shape[a];
    const std::int64_t st = steps[k];
    if (st == 0) fail("Slice step 0");
    std::int64_t s = starts[k] < 0 ? starts[k] + dim : starts[k];
    std::int64_t e = ends[k] < 0 ? ends[k] + dim : ends[k];
    if (st > 0) {
      s = std::clamp<std::int64_t>(s, 0, dim);
      e = std::clamp<std::int64_t>(e, 0, dim);
      shape[a] = e > s ? (e - s + st - 1) / st : 0;
    } else {
      s = std::clamp<std::int64_t>(s, -1, dim - 1);
      e = std::clamp<std::int64_t>(e, -1, dim - 1);
      shape[a] = s > e ? (s - e - st - 1) / (-st) : 0;
    }
    begin[a] = s;
    step[a] = st;
  }
  const Shape64 in_st = strides_of(x.shape);
  Tensor out = make_like(x.dtype, shape);
  Shape64 idx(r, 0);
  const std::int64_t total = numel(shape);
  for (std::int64_t flat = 0; flat < total; ++flat) {
    std::int64_t src = 0;
    for (std::size_t k = 0; k < r; ++k) src += (begin[k] + idx[k] * step[k]) * in_st[k];
    if (x.is_float()) {
      out.f[flat] = x.f[src];
    } else {
      out.i[flat] = x.i[src];
    }
    for (std::size_t k = r; k-- > 0;) {
      if (++idx[k] < shape[k]) break;
      idx[k] = 0;
    }
  }
  return {out};
}

enum class Reduce { kMean, kSum, kMax, kMin };

OpFn reduce(Reduce kind) {
  return [kind](const Node& n, const Inputs& in) {
    const Tensor x = to_float(need(in, 0, n));
    auto axes = axes_from(n, in, 1);
    const bool keep = n.attr_i("keepdims", 1) != 0;
    const std::size_t r = x.shape.size();
    std::vector<bool> reduced(r, axes.empty() && n.attr_i("noop_with_empty_axes", 0) == 0);
    for (auto a : axes) reduced[static_cast<std::size_t>(norm_axis(a, r))] = true;
    Shape64 kept_shape(r);
    for (std::size_t k = 0; k < r; ++k) kept_shape[k] = reduced[k] ? 1 : x.shape[k];
    Tensor out = make_like(DType::kFloat32, kept_shape);
    const float init = kind == Reduce::kMax   ? -std::numeric_limits<float>::infinity()
                       : kind == Reduce::kMin ? std::numeric_limits<float>::infinity()
                                              : 0.0f;
    std::fill(out.f.begin(), out.f.end(), init);
    const Shape64 out_st = strides_of(kept_shape);
    Shape64 idx(r, 0);
    std::int64_t count = 1;
    for (std::size_t k = 0; k < r; ++k) count *= reduced[k] ? x.shape[k] : 1;
    for (std::size_t flat = 0; flat < x.f.size(); ++flat) {
      std::int64_t dst = 0;
      for (std::size_t k = 0; k < r; ++k) dst += reduced[k] ? 0 : idx[k] * out_st[k];
      float& acc = out.f[dst];
      const float v = x.f[flat];
      switch (kind) {
        case Reduce::kMean:
        case Reduce::kSum: acc += v; break;
        case Reduce::kMax: acc = std::max(acc, v); break;
        case Reduce::kMin: acc = std::min(acc, v); break;
      }
      for (std::size_t k = r; k-- > 0;) {
        if (++idx[k] < x.shape[k]) break;
        idx[k] = 0;
      }
    }
    if (kind == Reduce::kMean && count > 0) {
      for (auto& v : out.f) v /= static_cast<float>(count);
    }
    if (!keep) {
      Shape64 s;
      for (std::size_t k = 0; k < r; ++k) {
        if (!reduced[k]) s.push_back(kept_shape[k]);
      }
      out.shape = s;
    }
    return std::vector<Tensor>{out};
  };
}

std::vector<Tensor> op_cast(const Node& n, const Inputs& in) {
  const Tensor& x = need(in, 0, n);
  const DType to = dtype_from_proto(static_cast<int>(n.attr_i("to", 1)), "Cast");
  Tensor out = make_like(to, x.shape);
  for (std::size_t k = 0; k < static_cast<std::size_t>(x.numel()); ++k) {
    const double v = get(x, k);
    if (to == DType::kFloat32) {
      out.f[k] = static_cast<float>(v);
    } else if (to == DType::kBool) {
      out.i[k] = v != 0.0;
    } else {
      out.i[k] = static_cast<std::int64_t>(std::trunc(v));
    }
  }
  return {out};
}

std::vector<Tensor> op_shape(const Node& n, const Inputs& in) {
  const Tensor& x = need(in, 0, n);
  return {Tensor::ints(DType::kInt64, {static_cast<std::int64_t>(x.shape.size())}, x.shape)};
}

std::vector<Tensor> op_constant(const Node& n, const Inputs&) {
  auto it = n.attrs.find("value");
  if (it != n.attrs.end()) return {tensor_from_proto(it->second.t())};
  if (n.has("value_float")) return {Tensor::floats({}, {n.attr_f("value_float", 0.0f)})};
  if (n.has("value_int")) return {Tensor::ints(DType::kInt64, {}, {n.attr_i("value_int", 0)})};
  if (n.has("value_floats")) {
    const auto& fl = n.attrs.at("value_floats").floats();
    return {Tensor::floats({static_cast<std::int64_t>(fl.size())}, {fl.begin(), fl.end()})};
  }
  if (n.has("value_ints")) {
    auto v = n.attr_ints("value_ints");
    return {Tensor::ints(DType::kInt64, {static_cast<std::int64_t>(v.size())}, v)};
  }
  fail("Constant without a supported value attribute");
}

std::vector<Tensor> op_constant_of_shape(const Node& n, const Inputs& in) {
  const auto shape = as_ints(need(in, 0, n));
  Tensor fill = Tensor::floats({1}, {0.0f});
  if (auto it = n.attrs.find("value"); it != n.attrs.end()) fill = tensor_from_proto(it->second.t());
  Tensor out = make_like(fill.dtype, shape);
  if (fill.is_float()) {
    std::fill(out.f.begin(), out.f.end(), fill.f.at(0));
  } else {
    std::fill(out.i.begin(), out.i.end(), fill.i.at(0));
  }
  return {out};
}

std::vector<Tensor> op_expand(const Node& n, const Inputs& in) {
  const Tensor& x = need(in, 0, n);
  const Shape64 shape = broadcast_shape(x.shape, as_ints(need(in, 1, n)));
  const auto off = broadcast_offsets(x.shape, shape);
  Tensor out = make_like(x.dtype, shape);
  for (std::size_t k = 0; k < off.size(); ++k) {
    if (x.is_float()) {
      out.f[k] = x.f[off[k]];
    } else {
      out.i[k] = x.i[off[k]];
    }
  }
  return {out};
}

std::vector<Tensor> op_where(const Node& n, const Inputs& in) {
  const Tensor& c = need(in, 0, n);
  const Tensor& a = need(in, 1, n);
  const Tensor& b = need(in, 2, n);
  const Shape64 shape = broadcast_shape(broadcast_shape(c.shape, a.shape), b.shape);
  const auto oc = broadcast_offsets(c.shape, shape), oa = broadcast_offsets(a.shape, shape),
             ob = broadcast_offsets(b.shape, shape);
  const bool floating = a.is_float() || b.is_float();
  Tensor out = make_like(floating ? DType::kFloat32 : a.dtype, shape);
  for (std::size_t k = 0; k < oc.size(); ++k) {
    const bool take_a = get(c, oc[k]) != 0.0;
    if (floating) {
      out.f[k] = static_cast<float>(take_a ? get(a, oa[k]) : get(b, ob[k]));
    } else {
      out.i[k] = take_a ? a.i[oa[k]] : b.i[ob[k]];
    }
  }
  return {out};
}

const std::map<std::string, OpFn>& op_table() {
  static const std::map<std::string, OpFn> table = {
      {"Identity", [](const Node& n, const Inputs& in) { return std::vector<Tensor>{need(in, 0, n)}; }},
      {"Constant", op_constant},
      {"ConstantOfShape", op_constant_of_shape},
      {"Cast", op_cast},
      {"Shape", op_shape},
      {"Add", binary(Bin::kAdd)},
      {"Sub", binary(Bin::kSub)},
      {"Mul", binary(Bin::kMul)},
      {"Div", binary(Bin::kDiv)},
      {"Pow", binary(Bin::kPow)},
      {"Max", binary(Bin::kMax)},
      {"Min", binary(Bin::kMin)},
      {"Equal", binary(Bin::kEqual)},
      {"Less", binary(Bin::kLess)},
      {"Greater", binary(Bin::kGreater)},
      {"Where", op_where},
      {"Relu", unary([](float v) { return std::max(v, 0.0f); })},
      {"Sigmoid", unary([](float v) { return 1.0f / (1.0f + std::exp(-v)); })},
      {"Tanh", unary([](float v) { return std::tanh(v); })},
      {"Exp", unary([](float v) { return std::exp(v); })},
      {"Log", unary([](float v) { return std::log(v); })},
      {"Sqrt", unary([](float v) { return std::sqrt(v); })},
      {"Neg", unary([](float v) { return -v; })},
      {"Abs", unary([](float v) { return std::abs(v); })},
      {"Erf", unary([](float v) { return std::erf(v); })},
      {"Reciprocal", unary([](float v) { return 1.0f / v; })},
      {"MatMul", op_matmul},
      {"Gemm", op_gemm},
      {"Softmax", op_softmax},
      {"Reshape", op_reshape},
      {"Transpose", op_transpose},
      {"Concat", op_concat},
      {"Unsqueeze", op_unsqueeze},
      {"Squeeze", op_squeeze},
      {"Flatten", op_flatten},
      {"Gather", op_gather},
      {"Slice", op_slice},
      {"Expand", op_expand},
      {"ReduceMean", reduce(Reduce::kMean)},
      {"ReduceSum", reduce(Reduce::kSum)},
      {"ReduceMax", reduce(Reduce::kMax)},
      {"ReduceMin", reduce(Reduce::kMin)},
  };
  return table;
}

const ValueSpec* find_spec(const std::vector<ValueSpec>& specs, const std::string& name) {
  for (const auto& s : specs) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

std::string_view dtype_name(DType t) {
  switch (t) {
    case DType::kFloat32: return "float32";
    case DType::kInt32: return "int32";
    case DType::kInt64: return "int64";
    case DType::kBool: return "bool";
  }
  return "?";
}

}  // namespace

struct DecoderGraph::Impl {
  std::vector<ValueSpec> inputs;
  std::vector<ValueSpec> outputs;
  std::unordered_map<std::string, Tensor> initializers;
  std::vector<Node> nodes;
};

DecoderGraph::DecoderGraph(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
DecoderGraph::~DecoderGraph() = default;

const std::vector<ValueSpec>& DecoderGraph::inputs() const { return impl_->inputs; }
const std::vector<ValueSpec>& DecoderGraph::outputs() const { return impl_->outputs; }

const std::vector<std::string>& DecoderGraph::supported_ops() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [k, fn] : op_table()) v.push_back(k);
    return v;
  }();
  return names;
}

std::shared_ptr<const DecoderGraph> DecoderGraph::load(const std::filesystem::path& path, bool check_signature) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kGraphLoadError, "cannot open decoder graph " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_bytes(buf.str(), check_signature);
}

std::shared_ptr<const DecoderGraph> DecoderGraph::from_bytes(const std::string& bytes, bool check_signature) {
  onnx::ModelProto model;
  if (!model.ParseFromString(bytes)) fail("not a serialized model");
  const auto& g = model.graph();
  for (const auto& opset : model.opset_import()) {
    if (!opset.domain().empty() && opset.domain() != "ai.onnx") fail("unsupported operator domain " + opset.domain());
  }

  auto impl = std::make_unique<Impl>();
  for (const auto& init : g.initializer()) impl->initializers.emplace(init.name(), tensor_from_proto(init));
  for (const auto& v : g.input()) {
    if (impl->initializers.count(v.name())) continue;
    impl->inputs.push_back(spec_from_proto(v));
  }
  for (const auto& v : g.output()) impl->outputs.push_back(spec_from_proto(v));

  const auto& table = op_table();
  std::set<std::string> defined;
  for (const auto& s : impl->inputs) defined.insert(s.name);
  for (const auto& [k, t] : impl->initializers) defined.insert(k);
  for (const auto& np : g.node()) {
    if (!np.domain().empty() && np.domain() != "ai.onnx") fail("unsupported operator domain " + np.domain());
    if (!table.count(np.op_type())) fail("unsupported operator " + np.op_type());
    Node n;
    n.op = np.op_type();
    for (const auto& s : np.input()) {
      if (!s.empty() && !defined.count(s)) fail("node " + np.name() + " reads undefined value " + s);
      n.inputs.push_back(s);
    }
    for (const auto& s : np.output()) {
      n.outputs.push_back(s);
      defined.insert(s);
    }
    for (const auto& a : np.attribute()) n.attrs.emplace(a.name(), a);
    impl->nodes.push_back(std::move(n));
  }
  for (const auto& o : impl->outputs) {
    if (!defined.count(o.name)) fail("graph output " + o.name + " is never produced");
  }

  if (!check_signature) return std::shared_ptr<const DecoderGraph>(new DecoderGraph(std::move(impl)));

  auto expect = [](const std::vector<ValueSpec>& specs, std::size_t count,
                   std::initializer_list<std::pair<const char*, DType>> want, const char* what) {
    if (specs.size() != count) {
      throw Error(ErrorCode::kGraphSignatureMismatch, std::string(what) + ": expected " + std::to_string(count) +
                                                           ", graph declares " + std::to_string(specs.size()));
    }
    for (const auto& [name, dtype] : want) {
      const ValueSpec* s = find_spec(specs, name);
      if (s == nullptr) throw Error(ErrorCode::kGraphSignatureMismatch, std::string(what) + ": missing " + name);
      if (s->dtype != dtype) {
        throw Error(ErrorCode::kGraphSignatureMismatch, std::string(name) + " has dtype " +
                                                            std::string(dtype_name(s->dtype)) + ", expected " +
                                                            std::string(dtype_name(dtype)));
      }
    }
  };
  expect(impl->inputs, 3, {{"embedding", DType::kFloat32}, {"points", DType::kFloat32}, {"labels", DType::kInt32}},
         "inputs");
  expect(impl->outputs, 2, {{"mask_logits", DType::kFloat32}, {"scores", DType::kFloat32}}, "outputs");

  return std::shared_ptr<const DecoderGraph>(new DecoderGraph(std::move(impl)));
}

std::map<std::string, Tensor> DecoderGraph::run(const std::map<std::string, Tensor>& feeds) const {
  std::unordered_map<std::string, Tensor> values;
  for (const auto& spec : impl_->inputs) {
    auto it = feeds.find(spec.name);
    if (it == feeds.end()) throw Error(ErrorCode::kGraphSignatureMismatch, "missing feed " + spec.name);
    values.emplace(spec.name, it->second);
  }
  const auto& table = op_table();
  for (const auto& node : impl_->nodes) {
    Inputs in;
    for (const auto& name : node.inputs) {
      if (name.empty()) {
        in.push_back(nullptr);
        continue;
      }
      auto it = values.find(name);
      if (it != values.end()) {
        in.push_back(&it->second);
      } else {
        in.push_back(&impl_->initializers.at(name));
      }
    }
    auto outs = table.at(node.op)(node, in);
    for (std::size_t k = 0; k < node.outputs.size() && k < outs.size(); ++k) {
      if (!node.outputs[k].empty()) values.insert_or_assign(node.outputs[k], std::move(outs[k]));
    }
  }
  std::map<std::string, Tensor> result;
  for (const auto& o : impl_->outputs) {
    auto it = values.find(o.name);
    if (it != values.end()) {
      result.emplace(o.name, std::move(it->second));
    } else {
      result.emplace(o.name, impl_->initializers.at(o.name));
    }
  }
  return result;
}

FloatMap resize_bilinear(const float* src, int src_h, int src_w, Shape dst) {
  FloatMap out(dst, 0.0f);
  const double sy = static_cast<double>(src_h) / dst.height;
  const double sx = static_cast<double>(src_w) / dst.width;
  for (int y = 0; y < dst.height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src_h - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, src_h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < dst.width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src_w - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, src_w - 1);
      const double wx = fx - x0;
      const double top = (1 - wx) * src[y0 * src_w + x0] + wx * src[y0 * src_w + x1];
      const double bottom = (1 - wx) * src[y1 * src_w + x0] + wx * src[y1 * src_w + x1];
      out(y, x) = static_cast<float>((1 - wy) * top + wy * bottom);
    }
  }
  return out;
}

ExternalPredictor::ExternalPredictor(std::shared_ptr<const DecoderGraph> graph, const PredictionBundle& bundle)
    : graph_(std::move(graph)), shape_(bundle.shape()) {
  if (!graph_) throw Error(ErrorCode::kBackendUnavailable, "no decoder graph loaded");
  if (!bundle.embedding) throw Error(ErrorCode::kEmbeddingMissing, "bundle carries no embedding");
  const auto& e = *bundle.embedding;
  Shape64 dims{e.channels, e.height, e.width};
  if (const ValueSpec* s = find_spec(graph_->inputs(), "embedding"); s && s->shape.size() == 4) {
    dims.insert(dims.begin(), 1);
  }
  embedding_ = Tensor::floats(dims, e.values);
}

MaskCandidate ExternalPredictor::predict(const PointPrompt& prompt) const {
  require_in_bounds(shape_, prompt);
  std::map<std::string, Tensor> feeds;
  feeds.emplace("embedding", embedding_);
  const float px = static_cast<float>((prompt.col + 0.5) / shape_.width);
  const float py = static_cast<float>((prompt.row + 0.5) / shape_.height);
  feeds.emplace("points", Tensor::floats({1, 2}, {px, py}));
  feeds.emplace("labels", Tensor::ints(DType::kInt32, {1}, {1}));
  auto out = graph_->run(feeds);

  Tensor& logits = out.at("mask_logits");
  Tensor& scores = out.at("scores");
  if (!logits.is_float() || !scores.is_float()) {
    throw Error(ErrorCode::kGraphSignatureMismatch, "decoder outputs must be float32");
  }
  while (logits.shape.size() > 3 && logits.shape.front() == 1) logits.shape.erase(logits.shape.begin());
  while (scores.shape.size() > 1 && scores.shape.front() == 1) scores.shape.erase(scores.shape.begin());
  if (logits.shape.size() == 2) logits.shape.insert(logits.shape.begin(), 1);
  if (logits.shape.size() != 3 || scores.numel() != logits.shape[0] || logits.shape[0] < 1) {
    throw Error(ErrorCode::kGraphSignatureMismatch, "mask_logits " + shape_str(logits.shape) + " vs scores " +
                                                        shape_str(scores.shape));
  }
  const std::size_t best = static_cast<std::size_t>(
      std::distance(scores.f.begin(), std::max_element(scores.f.begin(), scores.f.end())));
  const int h = static_cast<int>(logits.shape[1]), w = static_cast<int>(logits.shape[2]);
  FloatMap plane = resize_bilinear(logits.f.data() + best * static_cast<std::size_t>(h) * w, h, w, shape_);
  for (auto& v : plane.values()) v = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
  const double quality = std::isfinite(scores.f[best]) ? std::clamp<double>(scores.f[best], 0.0, 1.0) : 0.0;
  return MaskCandidate::from_dense(plane, quality, prompt);
}

}  // namespace apg
