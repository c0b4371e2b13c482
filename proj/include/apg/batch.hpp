#pragma once

// Batch orchestration behind the command-line tool: parameter files, dataset
// segmentation with a worker pool, evaluation and method comparison.
// Requires linking apg_graph (external backend).

#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "apg/decoder_graph.hpp"
#include "apg/exchange_io.hpp"
#include "apg/metrics.hpp"
#include "apg/phantom.hpp"
#include "apg/pipelines.hpp"
#include "apg/stats.hpp"

namespace apg {

// ---------------------------------------------------------------------------
// Parameters

inline std::string_view to_string(OverlapMeasure m) { return m == OverlapMeasure::kIou ? "iou" : "iomin"; }

inline OverlapMeasure overlap_measure_from_string(const std::string& s) {
  if (s == "iou") return OverlapMeasure::kIou;
  if (s == "iomin") return OverlapMeasure::kIoMin;
  throw Error(ErrorCode::kInvalidArgument, "overlap_measure must be iou or iomin, got " + s);
}

namespace batch_detail {

template <typename T>
void take(const nlohmann::json& j, const char* key, T& field) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::kInvalidArgument, std::string("parameter ") + key + " has the wrong type");
  }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw Error(ErrorCode::kInvalidArgument, "parameters must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* n) { return k == n; }) == known.end()) {
      throw Error(ErrorCode::kInvalidArgument, "unknown parameter " + k);
    }
  }
}

}  // namespace batch_detail

/// Missing fields keep their defaults; unknown fields are rejected.
inline APGParams apg_params_from_json(const nlohmann::json& j) {
  batch_detail::reject_unknown(j, {"t_fg", "t_b", "t_c", "s", "t_nms", "connectivity", "overlap_measure",
                                   "min_separation"});
  APGParams p;
  batch_detail::take(j, "t_fg", p.t_fg);
  batch_detail::take(j, "t_b", p.t_b);
  batch_detail::take(j, "t_c", p.t_c);
  batch_detail::take(j, "s", p.s);
  batch_detail::take(j, "t_nms", p.t_nms);
  batch_detail::take(j, "min_separation", p.min_separation);
  int conn = static_cast<int>(p.connectivity);
  batch_detail::take(j, "connectivity", conn);
  p.connectivity = connectivity_from_int(conn);
  std::string measure(to_string(p.overlap_measure));
  batch_detail::take(j, "overlap_measure", measure);
  p.overlap_measure = overlap_measure_from_string(measure);
  p.validate();
  return p;
}

inline nlohmann::json to_json(const APGParams& p) {
  return {{"t_fg", p.t_fg},
          {"t_b", p.t_b},
          {"t_c", p.t_c},
          {"s", p.s},
          {"t_nms", p.t_nms},
          {"connectivity", static_cast<int>(p.connectivity)},
          {"overlap_measure", std::string(to_string(p.overlap_measure))},
          {"min_separation", p.min_separation}};
}

inline AMGParams amg_params_from_json(const nlohmann::json& j) {
  batch_detail::reject_unknown(j, {"n_per_side", "min_quality", "min_stability", "t_nms", "min_area",
                                   "overlap_measure"});
  AMGParams p;
  batch_detail::take(j, "n_per_side", p.n_per_side);
  batch_detail::take(j, "min_quality", p.min_quality);
  batch_detail::take(j, "min_stability", p.min_stability);
  batch_detail::take(j, "t_nms", p.t_nms);
  batch_detail::take(j, "min_area", p.min_area);
  std::string measure(to_string(p.overlap_measure));
  batch_detail::take(j, "overlap_measure", measure);
  p.overlap_measure = overlap_measure_from_string(measure);
  p.validate();
  return p;
}

inline nlohmann::json to_json(const AMGParams& p) {
  return {{"n_per_side", p.n_per_side},
          {"min_quality", p.min_quality},
          {"min_stability", p.min_stability},
          {"t_nms", p.t_nms},
          {"min_area", p.min_area},
          {"overlap_measure", std::string(to_string(p.overlap_measure))}};
}

/// Accepts inline JSON (starting with '{') or a path to a JSON file.
inline nlohmann::json load_params_json(const std::string& arg) {
  if (arg.empty()) return nlohmann::json::object();
  const auto first = arg.find_first_not_of(" \t\r\n");
  try {
    if (first != std::string::npos && arg[first] == '{') return nlohmann::json::parse(arg);
    std::ifstream in(arg);
    if (!in) throw Error(ErrorCode::kIo, "cannot open params file " + arg);
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("params JSON: ") + e.what());
  }
}

/// Comma-separated list, e.g. "0.5,0.75".
inline ThresholdSchedule parse_thresholds(const std::string& text) {
  if (text.empty()) return default_schedule();
  ThresholdSchedule s;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      s.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kInvalidArgument, "bad threshold '" + item + "'");
    }
  }
  validate_schedule(s);
  return s;
}

// ---------------------------------------------------------------------------
// Segmentation

enum class Method { kApg, kApgBoundary, kAis, kAmg };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::kApg: return "apg";
    case Method::kApgBoundary: return "apg_boundary";
    case Method::kAis: return "ais";
    case Method::kAmg: return "amg";
  }
  return "apg";
}

inline Method method_from_string(const std::string& s) {
  for (Method m : {Method::kApg, Method::kApgBoundary, Method::kAis, Method::kAmg}) {
    if (s == to_string(m)) return m;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown method " + s);
}

inline BackendKind backend_from_string(const std::string& s) {
  for (BackendKind k : {BackendKind::kOracle, BackendKind::kRegionGrow, BackendKind::kExternal}) {
    if (s == to_string(k)) return k;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown backend " + s);
}

struct SegmentConfig {
  Method method = Method::kApg;
  BackendKind backend = BackendKind::kOracle;
  APGParams apg;
  AMGParams amg;
  fs::path manifest;
  fs::path output_dir;
  int workers = 1;
  std::optional<fs::path> decoder_graph;

  /// Resolves parameters from the JSON object matching the method family.
  void set_params(const nlohmann::json& j) {
    if (method == Method::kAmg) {
      amg = amg_params_from_json(j);
    } else {
      apg = apg_params_from_json(j);
    }
  }

  nlohmann::json params_json() const { return method == Method::kAmg ? to_json(amg) : to_json(apg); }

  /// Configuration errors that make the whole run meaningless.
  void validate() const {
    if (method != Method::kAis && backend == BackendKind::kExternal && !decoder_graph) {
      throw Error(ErrorCode::kInvalidArgument, "the external backend needs --decoder-graph");
    }
    if (workers < 1) throw Error(ErrorCode::kInvalidArgument, "workers must be ≥ 1");
    apg.validate();
    amg.validate();
  }
};

struct ImageOutcome {
  std::string id;
  bool ok = false;
  std::string error;
  std::size_t prompt_count = 0;
  std::size_t candidate_count = 0;
  std::size_t kept_count = 0;
  int instance_count = 0;
  double seconds = 0.0;
};

struct SegmentReport {
  std::vector<ImageOutcome> images;  // manifest order
  double seconds = 0.0;
  nlohmann::json log;

  std::vector<std::string> failed_ids() const {
    std::vector<std::string> ids;
    for (const auto& o : images) {
      if (!o.ok) ids.push_back(o.id);
    }
    return ids;
  }
  /// 0 when every image succeeded, 2 otherwise.
  int exit_code() const { return failed_ids().empty() ? 0 : 2; }
};

inline fs::path segmentation_path(const fs::path& dir, const std::string& id) { return dir / (id + ".seg.npy"); }

/// Runs `fn(i)` for i in [0, n) on `workers` threads.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), std::max<std::size_t>(n, 1));
  if (count <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
}

/// Segments one image; throws on any failure.
inline SegmentationResult segment_image(const SegmentConfig& cfg, const ManifestItem& item,
                                        const std::shared_ptr<const DecoderGraph>& graph) {
  const PredictionBundle bundle = read_bundle(item.bundle_path);
  if (cfg.method == Method::kAis) return run_ais(bundle, cfg.apg);

  std::unique_ptr<MaskPredictor> predictor;
  switch (cfg.backend) {
    case BackendKind::kOracle: {
      if (!item.gt_path) throw Error(ErrorCode::kBackendUnavailable, "oracle backend needs gt_path for " + item.id);
      LabelMap gt = read_label_map(*item.gt_path);
      require_same_shape(gt.shape(), bundle.shape(), "ground truth vs bundle");
      predictor = std::make_unique<OraclePredictor>(std::move(gt));
      break;
    }
    case BackendKind::kRegionGrow:
      predictor = std::make_unique<RegionGrowPredictor>(bundle.fg, cfg.apg.t_fg);
      break;
    case BackendKind::kExternal:
      predictor = std::make_unique<ExternalPredictor>(graph, bundle);
      break;
  }
  switch (cfg.method) {
    case Method::kApg: return run_apg(bundle, *predictor, cfg.apg);
    case Method::kApgBoundary: return run_apg_boundary(bundle, *predictor, cfg.apg);
    case Method::kAmg: return run_amg(bundle, *predictor, cfg.amg);
    case Method::kAis: break;
  }
  return run_ais(bundle, cfg.apg);
}

/// Segments every manifest item, writes <id>.seg.npy and run_log.json into
/// the output directory. Per-image failures are recorded, never thrown.
inline SegmentReport run_segment(const SegmentConfig& cfg) {
  cfg.validate();
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  const DatasetManifest manifest = read_manifest(cfg.manifest, false);
  fs::create_directories(cfg.output_dir);

  std::shared_ptr<const DecoderGraph> graph;
  const bool needs_graph = cfg.method != Method::kAis && cfg.backend == BackendKind::kExternal;
  if (needs_graph) graph = DecoderGraph::load(*cfg.decoder_graph);

  SegmentReport report;
  report.images.resize(manifest.items.size());
  parallel_for(manifest.items.size(), cfg.workers, [&](std::size_t i) {
    const auto& item = manifest.items[i];
    ImageOutcome& o = report.images[i];
    o.id = item.id;
    const auto start = Clock::now();
    try {
      const SegmentationResult r = segment_image(cfg, item, graph);
      write_label_map(r.labels, segmentation_path(cfg.output_dir, item.id), LabelFormat::kArray);
      o.prompt_count = r.prompt_count;
      o.candidate_count = r.candidate_count;
      o.kept_count = r.kept_count;
      o.instance_count = r.instance_count;
      o.ok = true;
    } catch (const std::exception& e) {
      o.error = e.what();
    }
    o.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  });
  report.seconds = std::chrono::duration<double>(Clock::now() - t0).count();

  nlohmann::json images = nlohmann::json::array();
  for (const auto& o : report.images) {
    nlohmann::json e = {{"id", o.id},         {"status", o.ok ? "ok" : "failed"},
                        {"seconds", o.seconds}, {"prompt_count", o.prompt_count},
                        {"candidate_count", o.candidate_count}, {"kept_count", o.kept_count},
                        {"instance_count", o.instance_count}};
    if (!o.ok) e["error"] = o.error;
    images.push_back(e);
  }
  report.log = {{"method", std::string(to_string(cfg.method))},
                {"backend", cfg.method == Method::kAis ? "none" : std::string(to_string(cfg.backend))},
                {"params", cfg.params_json()},
                {"dataset", manifest.name},
                {"modality", manifest.modality},
                {"manifest", fs::absolute(cfg.manifest).generic_string()},
                {"decoder_graph", cfg.decoder_graph ? nlohmann::json(cfg.decoder_graph->generic_string())
                                                    : nlohmann::json(nullptr)},
                {"workers", cfg.workers},
                {"total_seconds", report.seconds},
                {"images", images},
                {"failed_ids", report.failed_ids()}};
  std::ofstream out(cfg.output_dir / "run_log.json");
  if (!out) throw Error(ErrorCode::kIo, "cannot write run log in " + cfg.output_dir.string());
  out << report.log.dump(2) << "\n";
  return report;
}

// ---------------------------------------------------------------------------
// Phantom datasets

inline std::string_view to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::kDisk: return "disk";
    case ShapeKind::kEllipse: return "ellipse";
    case ShapeKind::kBlob: return "blob";
  }
  return "disk";
}

inline ShapeKind shape_kind_from_string(const std::string& s) {
  for (ShapeKind k : {ShapeKind::kDisk, ShapeKind::kEllipse, ShapeKind::kBlob}) {
    if (s == to_string(k)) return k;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown shape kind " + s);
}

/// Writes `count` phantoms (image i uses seed spec.seed + i) as
/// bundles/<id>.bundle.npz and gt/<id>.gt.npy plus manifest.json.
inline DatasetManifest write_phantom_dataset(const PhantomSpec& spec, int count, const fs::path& out_dir,
                                             const std::string& name, const std::string& modality, int workers = 1) {
  spec.validate();
  if (count < 0) throw Error(ErrorCode::kInvalidArgument, "count must be nonnegative");
  fs::create_directories(out_dir / "bundles");
  fs::create_directories(out_dir / "gt");
  DatasetManifest m{name, modality, std::vector<ManifestItem>(static_cast<std::size_t>(count))};
  parallel_for(m.items.size(), workers, [&](std::size_t i) {
    char id[32];
    std::snprintf(id, sizeof id, "phantom_%03zu", i);
    PhantomSpec s = spec;
    s.seed = spec.seed + i;
    const Phantom p = make_phantom(s);
    ManifestItem& item = m.items[i];
    item.id = id;
    item.bundle_path = out_dir / "bundles" / (item.id + ".bundle.npz");
    item.gt_path = out_dir / "gt" / (item.id + ".gt.npy");
    write_bundle(p.bundle, item.bundle_path);
    write_label_map(p.gt, *item.gt_path, LabelFormat::kArray);
  });
  write_manifest(m, out_dir / "manifest.json");
  return m;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Method name recorded in a segmentation run log, if present.
inline std::optional<std::string> method_from_run_log(const fs::path& pred_dir) {
  std::ifstream in(pred_dir / "run_log.json");
  if (!in) return std::nullopt;
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.contains("method") && j["method"].is_string()) return j["method"].get<std::string>();
  } catch (const nlohmann::json::exception&) {
  }
  return std::nullopt;
}

/// One row per gt-bearing manifest item. Throws MissingPrediction when a
/// segmentation file is absent.
inline ScoreTable run_evaluate(const fs::path& pred_dir, const DatasetManifest& manifest, const std::string& method,
                               const ThresholdSchedule& schedule = default_schedule()) {
  validate_schedule(schedule);
  ScoreTable table;
  std::vector<const ManifestItem*> items;
  for (const auto& it : manifest.items) {
    if (!it.gt_path) continue;
    if (!fs::exists(segmentation_path(pred_dir, it.id))) {
      throw Error(ErrorCode::kMissingPrediction, it.id + " (expected " + segmentation_path(pred_dir, it.id).string() + ")");
    }
    items.push_back(&it);
  }
  table.rows.resize(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const LabelMap pred = read_label_map(segmentation_path(pred_dir, items[i]->id));
    const LabelMap gt = read_label_map(*items[i]->gt_path);
    table.rows[i] = {manifest.name, items[i]->id, method, msa(pred, gt, schedule)};
  }
  return table;
}

inline std::string summary_to_csv(const std::vector<AggregateRow>& rows) {
  std::string out = "dataset,method,images,mean_msa\n";
  for (const auto& r : rows) {
    out += io_detail::csv_field(r.dataset) + "," + io_detail::csv_field(r.method) + "," + std::to_string(r.images) +
           "," + format_msa(r.mean_msa) + "\n";
  }
  return out;
}

inline nlohmann::json summary_to_json(const std::vector<AggregateRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"dataset", r.dataset}, {"method", r.method}, {"images", r.images}, {"mean_msa", r.mean_msa}});
  }
  return j;
}

// ---------------------------------------------------------------------------
// Comparison

struct CompareResult {
  WinLossMatrix matrix;
  /// group → method → average rank over the group's datasets
  std::map<std::string, std::map<std::string, double>> average_ranks;
  double alpha = 0.05;
};

/// `modality` maps dataset → group for the average-rank summary; datasets not
/// listed fall into the group "all".
inline CompareResult run_compare(const ScoreTable& table, double alpha,
                                 const std::map<std::string, std::string>& modality = {}) {
  table.validate();
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::kInvalidArgument, "alpha must lie in (0,1)");
  std::set<std::string> methods;
  for (const auto& r : table.rows) methods.insert(r.method);
  if (methods.size() < 2) throw Error(ErrorCode::kInvalidArgument, "comparison needs at least two methods");

  CompareResult res;
  res.alpha = alpha;
  res.matrix = win_loss_draw(table, alpha);
  const auto agg = aggregate(table);
  std::map<std::string, std::vector<AggregateRow>> groups;
  for (const auto& r : agg) {
    auto it = modality.find(r.dataset);
    groups[it == modality.end() ? "all" : it->second].push_back(r);
  }
  for (const auto& [g, rows] : groups) res.average_ranks[g] = average_rank(to_matrix(rows));
  return res;
}

inline nlohmann::json compare_to_json(const CompareResult& c) { return win_loss_to_json(c.matrix); }

/// Human-readable table; the header states the test configuration.
inline std::string compare_to_text(const CompareResult& c) {
  std::ostringstream out;
  out << "# paired Wilcoxon signed-rank test, two-sided, alpha = " << c.alpha
      << ", zero differences dropped, exact null for n <= " << kExactMaxN
      << " without ties, normal approximation otherwise\n";
  out << "# verdict is from the row method's perspective (win = row scores higher)\n";
  for (const auto& [dataset, cells] : c.matrix) {
    out << "\n[" << dataset << "]\n";
    out << std::left << std::setw(16) << "method_a" << std::setw(16) << "method_b" << std::right << std::setw(6) << "n"
        << std::setw(10) << "W" << std::setw(14) << "p" << "  verdict\n";
    for (const auto& [pair, cell] : cells) {
      if (pair.first == pair.second) continue;
      std::ostringstream p;
      p << std::setprecision(6) << cell.result.p_value;
      out << std::left << std::setw(16) << pair.first << std::setw(16) << pair.second << std::right << std::setw(6)
          << cell.result.n_effective << std::setw(10) << cell.result.w_statistic << std::setw(14) << p.str() << "  "
          << to_string(cell.result.verdict) << "\n";
    }
  }
  out << "\naverage rank (1 = best)\n";
  for (const auto& [group, ranks] : c.average_ranks) {
    out << "[" << group << "]\n";
    for (const auto& [method, r] : ranks) {
      std::ostringstream v;
      v << std::fixed << std::setprecision(3) << r;
      out << "  " << std::left << std::setw(16) << method << v.str() << "\n";
    }
  }
  return out.str();
}

}  // namespace apg
