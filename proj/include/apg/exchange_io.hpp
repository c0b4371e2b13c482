#pragma once

// On-disk formats: prediction bundles (zip of simple arrays), label maps
// (int32 array or 16-bit PNG), dataset manifests (JSON) and score tables
// (CSV / JSON).

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <locale>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "apg/npy.hpp"
#include "apg/png16.hpp"
#include "apg/raster.hpp"
#include "apg/zip.hpp"

namespace apg {

namespace fs = std::filesystem;

struct Embedding {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;  // C×He×We, row-major
};

struct RgbImage {
  Shape shape;
  std::vector<std::uint8_t> pixels;  // H×W×3
};

/// Per-image decoder outputs. All three maps share one shape and lie in [0,1].
struct PredictionBundle {
  FloatMap fg;
  FloatMap center_dist;
  FloatMap boundary_dist;
  std::optional<Embedding> embedding;
  std::optional<RgbImage> image;
  /// Number of map values pulled back into [0,1] when the bundle was read.
  std::size_t clamped_values = 0;

  Shape shape() const { return fg.shape(); }
};

inline constexpr const char* kBundleKeys[] = {"fg", "center_dist", "boundary_dist", "embedding", "image"};

namespace io_detail {

inline FloatMap to_float_map(const npy::Array& a, const std::string& key, std::size_t& clamped) {
  if (a.shape.size() != 2) {
    throw Error(ErrorCode::kShapeMismatch, key + " must be 2-D, got rank " + std::to_string(a.shape.size()));
  }
  const Shape shape{static_cast<int>(a.shape[0]), static_cast<int>(a.shape[1])};
  std::vector<float> values;
  if (a.descr == "<f4") {
    values = npy::as_vector<float>(a);
  } else if (a.descr == "<f8") {
    const auto wide = npy::as_vector<double>(a);
    values.assign(wide.begin(), wide.end());
  } else {
    throw Error(ErrorCode::kUnsupportedDtype, key + " has dtype " + a.descr + ", expected float32");
  }
  for (auto& v : values) {
    if (std::isnan(v)) {
      v = 0.0f;
      ++clamped;
    } else if (v < 0.0f) {
      v = 0.0f;
      ++clamped;
    } else if (v > 1.0f) {
      v = 1.0f;
      ++clamped;
    }
  }
  return FloatMap(shape, std::move(values));
}

inline const npy::Array* find_key(const std::map<std::string, npy::Array>& arrays, const std::string& key) {
  auto it = arrays.find(key);
  return it == arrays.end() ? nullptr : &it->second;
}

}  // namespace io_detail

inline PredictionBundle parse_bundle(const zip::Bytes& bytes) {
  const zip::Archive archive = zip::read_archive(bytes);
  std::map<std::string, npy::Array> arrays;
  for (const auto& [name, payload] : archive) {
    std::string key = name;
    if (key.size() > 4 && key.ends_with(".npy")) key.resize(key.size() - 4);
    arrays.emplace(key, npy::parse(payload));
  }

  PredictionBundle bundle;
  const npy::Array* maps[3];
  const char* names[3] = {"fg", "center_dist", "boundary_dist"};
  for (int i = 0; i < 3; ++i) {
    maps[i] = io_detail::find_key(arrays, names[i]);
    if (maps[i] == nullptr) throw Error(ErrorCode::kMissingKey, names[i]);
  }
  bundle.fg = io_detail::to_float_map(*maps[0], "fg", bundle.clamped_values);
  bundle.center_dist = io_detail::to_float_map(*maps[1], "center_dist", bundle.clamped_values);
  bundle.boundary_dist = io_detail::to_float_map(*maps[2], "boundary_dist", bundle.clamped_values);
  require_same_shape(bundle.fg.shape(), bundle.center_dist.shape(), "fg/center_dist");
  require_same_shape(bundle.fg.shape(), bundle.boundary_dist.shape(), "fg/boundary_dist");

  if (const auto* e = io_detail::find_key(arrays, "embedding")) {
    if (e->descr != "<f4") throw Error(ErrorCode::kUnsupportedDtype, "embedding has dtype " + e->descr);
    std::vector<std::int64_t> dims = e->shape;
    if (dims.size() == 4 && dims[0] == 1) dims.erase(dims.begin());
    if (dims.size() != 3) throw Error(ErrorCode::kShapeMismatch, "embedding must be C×He×We");
    bundle.embedding = Embedding{static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
                                 npy::as_vector<float>(*e)};
  }
  if (const auto* im = io_detail::find_key(arrays, "image")) {
    if (im->descr != "|u1") throw Error(ErrorCode::kUnsupportedDtype, "image has dtype " + im->descr);
    if (im->shape.size() != 3 || im->shape[2] != 3) throw Error(ErrorCode::kShapeMismatch, "image must be H×W×3");
    const Shape s{static_cast<int>(im->shape[0]), static_cast<int>(im->shape[1])};
    require_same_shape(bundle.fg.shape(), s, "fg/image");
    bundle.image = RgbImage{s, im->data};
  }
  return bundle;
}

inline PredictionBundle read_bundle(const fs::path& path) { return parse_bundle(zip::read_file(path)); }

inline zip::Bytes serialize_bundle(const PredictionBundle& b) {
  auto map_array = [](const FloatMap& m) {
    return npy::from_values<float>("<f4", {m.height(), m.width()}, m.storage());
  };
  zip::Archive archive;
  archive["fg.npy"] = npy::serialize(map_array(b.fg));
  archive["center_dist.npy"] = npy::serialize(map_array(b.center_dist));
  archive["boundary_dist.npy"] = npy::serialize(map_array(b.boundary_dist));
  if (b.embedding) {
    const auto& e = *b.embedding;
    archive["embedding.npy"] = npy::serialize(npy::from_values<float>("<f4", {e.channels, e.height, e.width}, e.values));
  }
  if (b.image) {
    archive["image.npy"] = npy::serialize(
        npy::from_values<std::uint8_t>("|u1", {b.image->shape.height, b.image->shape.width, 3}, b.image->pixels));
  }
  return zip::write_archive(archive);
}

inline void write_bundle(const PredictionBundle& bundle, const fs::path& path) {
  zip::write_file(path, serialize_bundle(bundle));
}

// ---------------------------------------------------------------------------
// Label maps

enum class LabelFormat { kArray, kPng16 };

inline LabelMap label_map_from_array(const npy::Array& a) {
  if (a.shape.size() != 2) throw Error(ErrorCode::kUnsupportedFormat, "label map must be 2-D");
  const Shape shape{static_cast<int>(a.shape[0]), static_cast<int>(a.shape[1])};
  std::vector<std::int64_t> wide;
  const std::string& d = a.descr;
  if (d == "<i4") {
    auto v = npy::as_vector<std::int32_t>(a);
    wide.assign(v.begin(), v.end());
  } else if (d == "<i8") {
    wide = npy::as_vector<std::int64_t>(a);
  } else if (d == "<u2") {
    auto v = npy::as_vector<std::uint16_t>(a);
    wide.assign(v.begin(), v.end());
  } else if (d == "<i2") {
    auto v = npy::as_vector<std::int16_t>(a);
    wide.assign(v.begin(), v.end());
  } else if (d == "|u1") {
    wide.assign(a.data.begin(), a.data.end());
  } else if (d == "<u4") {
    auto v = npy::as_vector<std::uint32_t>(a);
    wide.assign(v.begin(), v.end());
  } else {
    throw Error(ErrorCode::kUnsupportedFormat, "label map dtype " + d + " is not an integer type");
  }
  std::vector<std::int32_t> labels(wide.size());
  for (std::size_t i = 0; i < wide.size(); ++i) {
    if (wide[i] < 0) throw Error(ErrorCode::kNegativeLabel, "label " + std::to_string(wide[i]));
    if (wide[i] > std::numeric_limits<std::int32_t>::max()) {
      throw Error(ErrorCode::kLabelOverflow, "label " + std::to_string(wide[i]) + " exceeds int32");
    }
    labels[i] = static_cast<std::int32_t>(wide[i]);
  }
  return LabelMap(shape, std::move(labels));
}

/// Accepts either container; the format is sniffed from the leading bytes.
inline LabelMap parse_label_map(const zip::Bytes& bytes) {
  if (png::has_signature(bytes)) {
    const auto gray = png::decode_gray(bytes);
    LabelMap out(gray.shape(), 0);
    for (std::size_t i = 0; i < gray.size(); ++i) out[i] = gray[i];
    return out;
  }
  if (bytes.size() >= 6 && bytes[0] == 0x93 && bytes[1] == 'N') return label_map_from_array(npy::parse(bytes));
  throw Error(ErrorCode::kUnsupportedFormat, "neither a simple-array file nor a PNG");
}

inline LabelMap read_label_map(const fs::path& path) { return parse_label_map(zip::read_file(path)); }

inline zip::Bytes serialize_label_map(const LabelMap& map, LabelFormat format) {
  for (auto v : map.values()) {
    if (v < 0) throw Error(ErrorCode::kNegativeLabel, "label " + std::to_string(v));
  }
  if (format == LabelFormat::kArray) {
    return npy::serialize(npy::from_values<std::int32_t>("<i4", {map.height(), map.width()}, map.storage()));
  }
  Raster<std::uint16_t> gray(map.shape(), 0);
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (map[i] > 0xFFFF) {
      throw Error(ErrorCode::kLabelOverflow, "label " + std::to_string(map[i]) + " does not fit 16-bit PNG");
    }
    gray[i] = static_cast<std::uint16_t>(map[i]);
  }
  return png::encode_gray16(gray);
}

inline void write_label_map(const LabelMap& map, const fs::path& path, LabelFormat format = LabelFormat::kArray) {
  zip::write_file(path, serialize_label_map(map, format));
}

// ---------------------------------------------------------------------------
// Dataset manifests

struct ManifestItem {
  std::string id;
  fs::path bundle_path;
  std::optional<fs::path> gt_path;
};

struct DatasetManifest {
  std::string name;
  std::string modality;
  std::vector<ManifestItem> items;
};

/// Relative paths are resolved against `base_dir`. With `check_files`, every
/// referenced file must exist.
inline DatasetManifest parse_manifest(const nlohmann::json& j, const fs::path& base_dir, bool check_files = true) {
  DatasetManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.modality = j.value("modality", std::string{});
    std::set<std::string> seen;
    for (const auto& item : j.at("items")) {
      ManifestItem it;
      it.id = item.at("id").get<std::string>();
      if (!seen.insert(it.id).second) throw Error(ErrorCode::kDuplicateId, "manifest item id '" + it.id + "'");
      it.bundle_path = base_dir / item.at("bundle_path").get<std::string>();
      if (item.contains("gt_path") && !item["gt_path"].is_null()) {
        it.gt_path = base_dir / item["gt_path"].get<std::string>();
      }
      m.items.push_back(std::move(it));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kUnsupportedFormat, std::string("manifest: ") + e.what());
  }
  if (check_files) {
    for (const auto& it : m.items) {
      if (!fs::exists(it.bundle_path)) throw Error(ErrorCode::kIo, "missing bundle " + it.bundle_path.string());
      if (it.gt_path && !fs::exists(*it.gt_path)) throw Error(ErrorCode::kIo, "missing gt " + it.gt_path->string());
    }
  }
  return m;
}

inline DatasetManifest read_manifest(const fs::path& path, bool check_files = true) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kUnsupportedFormat, std::string("manifest JSON: ") + e.what());
  }
  return parse_manifest(j, path.parent_path(), check_files);
}

/// Paths are written relative to `base_dir` when they live beneath it.
inline nlohmann::json manifest_to_json(const DatasetManifest& m, const fs::path& base_dir) {
  auto rel = [&](const fs::path& p) {
    const fs::path r = p.lexically_relative(base_dir);
    return (r.empty() || *r.begin() == "..") ? p.generic_string() : r.generic_string();
  };
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : m.items) {
    items.push_back({{"id", it.id},
                     {"bundle_path", rel(it.bundle_path)},
                     {"gt_path", it.gt_path ? nlohmann::json(rel(*it.gt_path)) : nlohmann::json(nullptr)}});
  }
  return {{"name", m.name}, {"modality", m.modality}, {"items", items}};
}

inline void write_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot create " + path.string());
  out << manifest_to_json(m, path.parent_path()).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Score tables

struct ScoreRow {
  std::string dataset;
  std::string image_id;
  std::string method;
  double msa = 0.0;
  friend bool operator==(const ScoreRow&, const ScoreRow&) = default;
};

struct ScoreTable {
  std::vector<ScoreRow> rows;

  /// Enforces key uniqueness and msa ∈ [0,1].
  void validate() const {
    std::set<std::tuple<std::string, std::string, std::string>> keys;
    for (const auto& r : rows) {
      if (!(r.msa >= 0.0 && r.msa <= 1.0)) {
        throw Error(ErrorCode::kInvalidArgument, "msa " + std::to_string(r.msa) + " outside [0,1]");
      }
      if (!keys.emplace(r.dataset, r.image_id, r.method).second) {
        throw Error(ErrorCode::kDuplicateId, "score row (" + r.dataset + ", " + r.image_id + ", " + r.method + ")");
      }
    }
  }

  void append(const ScoreTable& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }

  friend bool operator==(const ScoreTable&, const ScoreTable&) = default;
};

enum class ScoreFormat { kCsv, kJson };

namespace io_detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  return fields;
}

}  // namespace io_detail

inline std::string format_msa(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

inline std::string scores_to_csv(const ScoreTable& t) {
  std::string out = "dataset,image_id,method,msa\n";
  for (const auto& r : t.rows) {
    out += io_detail::csv_field(r.dataset) + "," + io_detail::csv_field(r.image_id) + "," +
           io_detail::csv_field(r.method) + "," + format_msa(r.msa) + "\n";
  }
  return out;
}

inline nlohmann::json scores_to_json(const ScoreTable& t) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : t.rows) {
    arr.push_back({{"dataset", r.dataset}, {"image_id", r.image_id}, {"method", r.method}, {"msa", r.msa}});
  }
  return arr;
}

inline ScoreTable scores_from_csv(const std::string& text) {
  ScoreTable t;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) return t;
  const auto header = io_detail::split_csv_line(line);
  if (header != std::vector<std::string>{"dataset", "image_id", "method", "msa"}) {
    throw Error(ErrorCode::kUnsupportedFormat, "score CSV header must be dataset,image_id,method,msa");
  }
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = io_detail::split_csv_line(line);
    if (f.size() != 4) throw Error(ErrorCode::kUnsupportedFormat, "score CSV row has " + std::to_string(f.size()) + " fields");
    ScoreRow r{f[0], f[1], f[2], 0.0};
    std::istringstream num(f[3]);
    num.imbue(std::locale::classic());
    if (!(num >> r.msa)) throw Error(ErrorCode::kUnsupportedFormat, "bad msa value '" + f[3] + "'");
    t.rows.push_back(std::move(r));
  }
  t.validate();
  return t;
}

inline ScoreTable scores_from_json(const nlohmann::json& j) {
  ScoreTable t;
  try {
    for (const auto& o : j) {
      t.rows.push_back({o.at("dataset").get<std::string>(), o.at("image_id").get<std::string>(),
                        o.at("method").get<std::string>(), o.at("msa").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kUnsupportedFormat, std::string("score JSON: ") + e.what());
  }
  t.validate();
  return t;
}

inline void write_scores(const ScoreTable& table, const fs::path& path, ScoreFormat format) {
  table.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot create " + path.string());
  if (format == ScoreFormat::kCsv) {
    out << scores_to_csv(table);
  } else {
    out << scores_to_json(table).dump(2) << "\n";
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed on " + path.string());
}

/// Format chosen by extension: ".json" → JSON, anything else → CSV.
inline ScoreTable read_scores(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  if (path.extension() == ".json") {
    try {
      return scores_from_json(nlohmann::json::parse(buf.str()));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kUnsupportedFormat, std::string("score JSON: ") + e.what());
    }
  }
  return scores_from_csv(buf.str());
}

}  // namespace apg
