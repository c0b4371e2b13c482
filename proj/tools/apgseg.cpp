// apgseg: segment prediction bundles, evaluate, compare and report.

#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <fmt/ostream.h>

#include "apg/batch.hpp"
#include "apg/report.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPartial = 2;
constexpr int kExitEvaluation = 3;
constexpr int kExitUsage = 64;

bool is_usage_error(const apg::Error& e) {
  return e.code() == apg::ErrorCode::kInvalidArgument || e.code() == apg::ErrorCode::kThresholdBelowHalf;
}

void write_text(const apg::fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw apg::Error(apg::ErrorCode::kIo, "cannot create " + path.string());
  out << text;
  if (!out) throw apg::Error(apg::ErrorCode::kIo, "write failed on " + path.string());
}

apg::ScoreFormat score_format(const std::string& s) {
  if (s == "csv") return apg::ScoreFormat::kCsv;
  if (s == "json") return apg::ScoreFormat::kJson;
  throw apg::Error(apg::ErrorCode::kInvalidArgument, "format must be csv or json");
}

std::map<std::string, std::string> read_modality_map(const std::string& path) {
  std::map<std::string, std::string> m;
  if (path.empty()) return m;
  std::ifstream in(path);
  if (!in) throw apg::Error(apg::ErrorCode::kInvalidArgument, "cannot open modality map " + path);
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& [k, v] : j.items()) m[k] = v.get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw apg::Error(apg::ErrorCode::kInvalidArgument, std::string("modality map: ") + e.what());
  }
  return m;
}

apg::ScoreTable read_tables(const std::vector<std::string>& paths) {
  apg::ScoreTable all;
  for (const auto& p : paths) all.append(apg::read_scores(p));
  all.validate();
  return all;
}

struct SegmentArgs {
  std::string method;
  std::string backend = "oracle";
  std::string manifest;
  std::string out;
  std::string params;
  std::string decoder_graph;
  int workers = 1;
};

int cmd_segment(const SegmentArgs& a) {
  apg::SegmentConfig cfg;
  try {
    cfg.method = apg::method_from_string(a.method);
    cfg.backend = apg::backend_from_string(a.backend);
    cfg.set_params(apg::load_params_json(a.params));
    cfg.manifest = a.manifest;
    cfg.output_dir = a.out;
    cfg.workers = a.workers;
    if (!a.decoder_graph.empty()) cfg.decoder_graph = a.decoder_graph;
    cfg.validate();
  } catch (const apg::Error& e) {
    fmt::print(std::cerr, "usage error: {}\n", e.what());
    return kExitUsage;
  }

  apg::SegmentReport report;
  try {
    report = apg::run_segment(cfg);
  } catch (const apg::Error& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return kExitUsage;
  }
  for (const auto& o : report.images) {
    if (!o.ok) fmt::print(std::cerr, "failed {}: {}\n", o.id, o.error);
  }
  const auto failed = report.failed_ids();
  fmt::print("segmented {}/{} images with {} in {:.2f} s -> {}\n", report.images.size() - failed.size(),
             report.images.size(), a.method, report.seconds, a.out);
  return failed.empty() ? kExitOk : kExitPartial;
}

struct EvaluateArgs {
  std::string manifest;
  std::string pred;
  std::string out;
  std::string method;
  std::string thresholds;
  std::string format = "csv";
};

int cmd_evaluate(const EvaluateArgs& a) {
  apg::ThresholdSchedule schedule;
  apg::ScoreFormat format{};
  try {
    schedule = apg::parse_thresholds(a.thresholds);
    format = score_format(a.format);
  } catch (const apg::Error& e) {
    fmt::print(std::cerr, "usage error: {}\n", e.what());
    return kExitUsage;
  }
  try {
    const auto manifest = apg::read_manifest(a.manifest, false);
    std::string method = a.method;
    if (method.empty()) method = apg::method_from_run_log(a.pred).value_or("unknown");
    const apg::ScoreTable table = apg::run_evaluate(a.pred, manifest, method, schedule);
    const auto summary = apg::aggregate(table);
    apg::fs::create_directories(a.out);
    const std::string ext = format == apg::ScoreFormat::kCsv ? ".csv" : ".json";
    apg::write_scores(table, apg::fs::path(a.out) / ("scores" + ext), format);
    write_text(apg::fs::path(a.out) / ("summary" + ext), format == apg::ScoreFormat::kCsv
                                                             ? apg::summary_to_csv(summary)
                                                             : apg::summary_to_json(summary).dump(2) + "\n");
    for (const auto& r : summary) {
      fmt::print("{} {} images={} mean_msa={}\n", r.dataset, r.method, r.images, apg::format_msa(r.mean_msa));
    }
  } catch (const apg::Error& e) {
    fmt::print(std::cerr, "evaluation error: {}\n", e.what());
    return kExitEvaluation;
  }
  return kExitOk;
}

struct CompareArgs {
  std::vector<std::string> tables;
  std::string out;
  std::string modality_map;
  double alpha = 0.05;
};

int cmd_compare(const CompareArgs& a) {
  try {
    const auto modality = read_modality_map(a.modality_map);
    const auto result = apg::run_compare(read_tables(a.tables), a.alpha, modality);
    const std::string text = apg::compare_to_text(result);
    apg::fs::create_directories(a.out);
    write_text(apg::fs::path(a.out) / "compare.json", apg::compare_to_json(result).dump(2) + "\n");
    write_text(apg::fs::path(a.out) / "compare.txt", text);
    fmt::print("{}", text);
  } catch (const apg::Error& e) {
    fmt::print(std::cerr, "{}: {}\n", is_usage_error(e) ? "usage error" : "evaluation error", e.what());
    return is_usage_error(e) ? kExitUsage : kExitEvaluation;
  }
  return kExitOk;
}

struct ReportArgs {
  std::vector<std::string> tables;
  std::string out;
  std::string modality_map;
  std::string format = "csv";
  bool svg = true;
};

int cmd_report(const ReportArgs& a) {
  try {
    const auto format = score_format(a.format);
    const auto rows = apg::build_report(read_tables(a.tables), read_modality_map(a.modality_map));
    apg::fs::create_directories(a.out);
    if (format == apg::ScoreFormat::kCsv) {
      write_text(apg::fs::path(a.out) / "report.csv", apg::report_to_csv(rows));
    } else {
      write_text(apg::fs::path(a.out) / "report.json", apg::report_to_json(rows).dump(2) + "\n");
    }
    if (a.svg) {
      for (const auto& [group, group_rows] : apg::group_by_modality(rows)) {
        write_text(apg::fs::path(a.out) / ("report_" + group + ".svg"), apg::report_svg(group_rows, group));
      }
    }
    fmt::print("{}", apg::report_to_csv(rows));
  } catch (const apg::Error& e) {
    fmt::print(std::cerr, "{}: {}\n", is_usage_error(e) ? "usage error" : "evaluation error", e.what());
    return is_usage_error(e) ? kExitUsage : kExitEvaluation;
  }
  return kExitOk;
}

struct PhantomArgs {
  std::string out;
  std::string name = "phantom";
  std::string modality = "synthetic";
  std::string shape = "disk";
  int count = 5;
  std::uint64_t seed = 0;
  int size = 256;
  int n_objects = 20;
  double min_radius = 6.0;
  double max_radius = 12.0;
  int min_gap = 2;
  bool allow_touching = false;
  double noise = 0.0;
  double blur = 0.0;
  int workers = 1;
};

int cmd_phantom(const PhantomArgs& a) {
  apg::PhantomSpec spec;
  try {
    spec.seed = a.seed;
    spec.image_size = {a.size, a.size};
    spec.n_objects = a.n_objects;
    spec.shape_kind = apg::shape_kind_from_string(a.shape);
    spec.min_radius = a.min_radius;
    spec.max_radius = a.max_radius;
    spec.min_gap = a.allow_touching ? 0 : a.min_gap;
    spec.allow_touching = a.allow_touching;
    spec.noise_sigma = a.noise;
    spec.blur_radius = a.blur;
    spec.validate();
  } catch (const apg::Error& e) {
    fmt::print(std::cerr, "usage error: {}\n", e.what());
    return kExitUsage;
  }
  try {
    const auto m = apg::write_phantom_dataset(spec, a.count, a.out, a.name, a.modality, a.workers);
    fmt::print("wrote {} phantoms to {}\n", m.items.size(), (apg::fs::path(a.out) / "manifest.json").string());
  } catch (const apg::Error& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return e.code() == apg::ErrorCode::kPlacementFailure ? kExitUsage : kExitPartial;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Automatic prompt generation and evaluation for promptable segmentation"};
  app.require_subcommand(1);

  SegmentArgs seg;
  auto* s = app.add_subcommand("segment", "Segment every bundle of a dataset manifest");
  s->add_option("--method", seg.method, "apg | apg_boundary | ais | amg")->required();
  s->add_option("--backend", seg.backend, "oracle | regiongrow | external")->capture_default_str();
  s->add_option("--manifest", seg.manifest, "Dataset manifest JSON")->required();
  s->add_option("--out", seg.out, "Output directory")->required();
  s->add_option("--params", seg.params, "Parameter JSON (inline object or file path)");
  s->add_option("--decoder-graph", seg.decoder_graph, "Decoder graph for the external backend");
  s->add_option("--workers", seg.workers, "Worker threads")->capture_default_str();

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Score segmentations against ground truth");
  e->add_option("--manifest", ev.manifest, "Dataset manifest JSON")->required();
  e->add_option("--pred", ev.pred, "Directory holding <id>.seg.npy files")->required();
  e->add_option("--out", ev.out, "Output directory")->required();
  e->add_option("--method", ev.method, "Method name for the score rows (default: from run_log.json)");
  e->add_option("--thresholds", ev.thresholds, "Comma-separated IoU thresholds");
  e->add_option("--format", ev.format, "csv | json")->capture_default_str();

  CompareArgs cmp;
  auto* c = app.add_subcommand("compare", "Paired Wilcoxon tests between methods");
  c->add_option("tables", cmp.tables, "Score tables (CSV or JSON)")->required();
  c->add_option("--out", cmp.out, "Output directory")->required();
  c->add_option("--alpha", cmp.alpha, "Significance level")->capture_default_str();
  c->add_option("--modality-map", cmp.modality_map, "JSON object dataset -> modality");

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "Per-dataset score table with top-3 markers");
  r->add_option("tables", rep.tables, "Score tables (CSV or JSON)")->required();
  r->add_option("--out", rep.out, "Output directory")->required();
  r->add_option("--format", rep.format, "csv | json")->capture_default_str();
  r->add_option("--modality-map", rep.modality_map, "JSON object dataset -> modality");
  r->add_flag("!--no-svg", rep.svg, "Skip the bar charts");

  PhantomArgs ph;
  auto* p = app.add_subcommand("phantom", "Generate a synthetic dataset");
  p->add_option("--out", ph.out, "Output directory")->required();
  p->add_option("--count", ph.count, "Number of images")->capture_default_str();
  p->add_option("--seed", ph.seed, "Seed of the first image")->capture_default_str();
  p->add_option("--size", ph.size, "Image side length")->capture_default_str();
  p->add_option("--n-objects", ph.n_objects, "Objects per image")->capture_default_str();
  p->add_option("--shape", ph.shape, "disk | ellipse | blob")->capture_default_str();
  p->add_option("--min-radius", ph.min_radius)->capture_default_str();
  p->add_option("--max-radius", ph.max_radius)->capture_default_str();
  p->add_option("--min-gap", ph.min_gap)->capture_default_str();
  p->add_flag("--allow-touching", ph.allow_touching);
  p->add_option("--noise", ph.noise, "Gaussian noise sigma")->capture_default_str();
  p->add_option("--blur", ph.blur, "Box blur radius")->capture_default_str();
  p->add_option("--name", ph.name)->capture_default_str();
  p->add_option("--modality", ph.modality)->capture_default_str();
  p->add_option("--workers", ph.workers)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (*s) return cmd_segment(seg);
  if (*e) return cmd_evaluate(ev);
  if (*c) return cmd_compare(cmp);
  if (*r) return cmd_report(rep);
  if (*p) return cmd_phantom(ph);
  return kExitUsage;
}
