// vdx: batch driver for the volume clustering pipeline.
//
//   vdx synth   --kind diffuse|solid|two-blobs ... --out v.vvol [--truth t.vvol]
//   vdx hist    --input v.vvol [--bins 256]
//   vdx filter  --input v.vvol --cutoff auto|<x> --out points.jsonl
//   vdx cluster --input points.jsonl --min-weight W [--eps 1.7] [--no-border]
//               [--labels l.bin] [--flags l.flags] [--summary s.json]
//   vdx rank    --input points.jsonl --labels l.bin --flags l.flags [--key size]
//   vdx shell   --input points.jsonl --min-weight W --cluster C [--depth 1] ...
//   vdx export  --input points.jsonl --format pointcloud|obj --out file ...
//   vdx serve   [--port 8080] [--listen 127.0.0.1]
//
// Every command prints one JSON object on stdout. Exit status: 0 success,
// 1 data error (JSON error object on stdout), 2 usage error.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "vdx/features.hpp"
#include "vdx/intensity.hpp"
#include "vdx/mesh.hpp"
#include "vdx/service.hpp"
#include "vdx/synth.hpp"
#include "vdx/volume.hpp"
#include "vdx/wdbscan.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCliSchema = "vdx.cli/1";
constexpr const char* kToolVersion = "0.1.0";

json format_versions() {
  return {{"vvol", vdx::kVvolVersion},
          {"sparse_jsonl", 1},
          {"labels_i32", 1},
          {"flags_u8", 1},
          {"pointcloud", vdx::kPointCloudFormatVersion},
          {"obj", 1}};
}

struct Provenance {
  std::string command;
  json config = json::object();

  json record() const {
    return {{"schema", kCliSchema},
            {"tool_version", kToolVersion},
            {"command", command},
            {"config", config},
            {"format_versions", format_versions()}};
  }
  /// Writes <artifact>.provenance.json next to an output.
  void attach(const fs::path& artifact) const {
    std::ofstream out(artifact.string() + ".provenance.json", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write provenance for " + artifact.string());
    out << record().dump(2) << '\n';
  }
};

void emit(json j, const Provenance& prov) {
  j["schema"] = kCliSchema;
  j["command"] = prov.command;
  j["provenance"] = prov.record();
  std::cout << j.dump() << std::endl;
}

bool is_volume_file(const fs::path& p) { return p.extension() == ".vvol"; }

/// Parses "auto" or a number.
std::optional<double> parse_cutoff(const std::string& raw) {
  if (raw == "auto") return std::nullopt;
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(raw, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != raw.size() || !std::isfinite(v))
    throw vdx::DataError("cutoff must be 'auto' or a finite number, got '" + raw + "'");
  return v;
}

struct CutoffChoice {
  double value;
  bool automatic;
};

CutoffChoice resolve_cutoff(const vdx::DenseVolume& v, const std::string& raw, std::size_t bins,
                            std::size_t window) {
  if (auto c = parse_cutoff(raw)) return {*c, false};
  const auto cusp = vdx::detect_cusp(vdx::histogram(v, bins), window);
  if (!cusp)
    throw vdx::DataError("automatic cutoff failed: no cusp found in the intensity histogram; "
                         "supply --cutoff <value>");
  return {*cusp, true};
}

vdx::SparsePoints load_points(const fs::path& input, const std::string& cutoff, std::size_t bins,
                              json& info) {
  if (!is_volume_file(input)) return vdx::load_sparse_jsonl(input);
  if (cutoff.empty()) throw vdx::DataError("a .vvol input needs --cutoff");
  const auto v = vdx::load_volume(input);
  const auto c = resolve_cutoff(v, cutoff, bins, vdx::kCuspSmoothingWindow);
  info["cutoff"] = c.value;
  info["cutoff_auto"] = c.automatic;
  return vdx::to_sparse(v, c.value);
}

/// Rebuilds a ClusterResult from label/flag files written by `cluster`.
vdx::ClusterResult load_result(const fs::path& labels, const fs::path& flags, std::size_t n) {
  vdx::ClusterResult r;
  r.labels = vdx::load_labels(labels);
  if (r.labels.size() != n)
    throw vdx::DataError("label file has " + std::to_string(r.labels.size()) +
                         " entries for " + std::to_string(n) + " points");
  if (!flags.empty()) {
    r.flags = vdx::load_flags(flags);
    if (r.flags.size() != n) throw vdx::DataError("flag file does not match the point count");
  } else {
    // Without flags every labelled point counts as core.
    r.flags.resize(n);
    for (std::size_t p = 0; p < n; ++p)
      r.flags[p] = r.labels[p] < 0 ? vdx::PointFlag::noise : vdx::PointFlag::core;
  }
  r.densities.assign(n, 0.0);
  for (auto l : r.labels) r.n_clusters = std::max(r.n_clusters, l + 1);
  return r;
}

std::array<std::uint64_t, 3> to_dims(const std::vector<std::uint64_t>& d) {
  if (d.size() == 1) return {d[0], d[0], d[0]};
  if (d.size() == 3) return {d[0], d[1], d[2]};
  throw vdx::DataError("--dims takes one or three extents");
}

void save_truth(const vdx::GroundTruth& t, const fs::path& path) {
  std::vector<float> vals(t.labels.begin(), t.labels.end());
  vdx::save_volume(vdx::DenseVolume(t.dims, std::move(vals)), path);
}

vdx::Service* g_service = nullptr;
void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric data exploration: weighted DBSCAN pipeline"};
  app.require_subcommand(1);
  unsigned threads = 0;
  app.add_option("--threads", threads, "Thread cap (default: $VDX_THREADS or all cores)");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic volume with ground truth");
  std::string kind = "diffuse", shape = "sphere", out, truth;
  std::vector<std::uint64_t> dims{64};
  std::uint64_t seed = 0;
  int n_bragg = 0, n_diffuse = 0, n_filaments = 0;
  double noise_ceiling = 1e-3, spike_fraction = 0.0, min_gap = -1.0, radius = 20.0, fill = 1.0,
         noise = 0.0, filament_level = 0.0, big_radius = 12.0, small_radius = 7.0;
  std::vector<double> diffuse_sigma{5.0, 20.0};
  synth->add_option("--kind", kind)->check(CLI::IsMember({"diffuse", "solid", "two-blobs"}));
  synth->add_option("--dims", dims, "One extent (cube) or three")->expected(1, 3);
  synth->add_option("--seed", seed);
  synth->add_option("--out", out)->required();
  synth->add_option("--truth", truth, "Write ground-truth labels as a VVOL volume");
  synth->add_option("--bragg", n_bragg);
  synth->add_option("--diffuse", n_diffuse);
  synth->add_option("--diffuse-sigma", diffuse_sigma)->expected(2);
  synth->add_option("--noise-ceiling", noise_ceiling);
  synth->add_option("--spike-fraction", spike_fraction);
  synth->add_option("--min-gap", min_gap);
  synth->add_option("--shape", shape)->check(CLI::IsMember({"sphere", "cuboid", "turbine"}));
  synth->add_option("--radius", radius);
  synth->add_option("--fill", fill);
  synth->add_option("--noise", noise);
  synth->add_option("--filaments", n_filaments);
  synth->add_option("--filament-level", filament_level);
  synth->add_option("--big-radius", big_radius);
  synth->add_option("--small-radius", small_radius);

  // hist
  auto* hist = app.add_subcommand("hist", "Intensity histogram and detected cusp");
  std::string input;
  std::size_t bins = vdx::kDefaultHistogramBins, window = vdx::kCuspSmoothingWindow;
  hist->add_option("--input", input)->required();
  hist->add_option("--bins", bins);
  hist->add_option("--window", window, "Cusp smoothing window (bins)");
  hist->add_option("--out", out);

  // filter
  auto* filter = app.add_subcommand("filter", "Keep voxels above the cutoff");
  std::string cutoff;
  filter->add_option("--input", input)->required();
  filter->add_option("--cutoff", cutoff, "'auto' or an intensity")->required();
  filter->add_option("--bins", bins);
  filter->add_option("--window", window);
  filter->add_option("--out", out)->required();

  // cluster
  auto* clus = app.add_subcommand("cluster", "Weighted DBSCAN");
  double eps = vdx::kDefaultEps, min_weight = 0.0;
  bool no_border = false;
  std::string labels_path, flags_path, summary_path;
  clus->add_option("--input", input)->required();
  clus->add_option("--cutoff", cutoff, "Needed for .vvol input");
  clus->add_option("--eps", eps);
  clus->add_option("--min-weight", min_weight)->required();
  clus->add_flag("--no-border", no_border, "Drop border points (core-only clustering)");
  clus->add_option("--labels", labels_path);
  clus->add_option("--flags", flags_path);
  clus->add_option("--summary", summary_path);

  // rank
  auto* rank = app.add_subcommand("rank", "Rank clusters");
  std::string key = "size";
  std::size_t top = 0;
  rank->add_option("--input", input)->required();
  rank->add_option("--labels", labels_path)->required();
  rank->add_option("--flags", flags_path);
  rank->add_option("--key", key)->check(CLI::IsMember({"size", "total_intensity", "max_intensity"}));
  rank->add_option("--top", top, "Keep only the first N");

  // shell
  auto* shell = app.add_subcommand("shell", "Double-clustering shell extraction");
  std::int32_t cluster_id = 0;
  int depth = 1;
  std::string interior_out, stats_out;
  shell->add_option("--input", input)->required();
  shell->add_option("--eps", eps);
  shell->add_option("--min-weight", min_weight)->required();
  shell->add_option("--cluster", cluster_id)->required();
  shell->add_option("--depth", depth);
  shell->add_option("--out", out, "Shell points (JSON lines)");
  shell->add_option("--interior-out", interior_out);
  shell->add_option("--stats-out", stats_out);

  // export
  auto* exp = app.add_subcommand("export", "Point-cloud or mesh export");
  std::string format = "pointcloud", mode = "stride", alpha = "cluster", volume_path;
  std::size_t target = 0;
  std::optional<std::int32_t> export_cluster;
  std::optional<double> iso, tf_cusp, tf_threshold;
  exp->add_option("--input", input)->required();
  exp->add_option("--format", format)->check(CLI::IsMember({"pointcloud", "obj"}));
  exp->add_option("--out", out)->required();
  exp->add_option("--labels", labels_path);
  exp->add_option("--flags", flags_path);
  exp->add_option("--cluster", export_cluster);
  exp->add_option("--target", target, "Decimation budget (0 = keep all)");
  exp->add_option("--mode", mode)->check(CLI::IsMember({"stride", "importance"}));
  exp->add_option("--seed", seed);
  exp->add_option("--alpha", alpha)->check(CLI::IsMember({"cluster", "tf"}));
  exp->add_option("--cusp", tf_cusp);
  exp->add_option("--threshold", tf_threshold);
  exp->add_option("--iso", iso);
  exp->add_option("--volume", volume_path, "VVOL whose geometry positions the points");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  int port = 8080;
  std::string listen = "127.0.0.1";
  serve->add_option("--port", port);
  serve->add_option("--listen", listen, "Bind address");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const vdx::ExecutionOptions exec{threads};
  Provenance prov;
  prov.command = app.get_subcommands().front()->get_name();
  prov.config["threads"] = vdx::resolve_threads(threads);

  try {
    if (*synth) {
      const auto d = to_dims(dims);
      prov.config.update({{"kind", kind}, {"dims", d}, {"seed", seed}});
      vdx::SynthResult res;
      if (kind == "diffuse") {
        vdx::DiffuseSpec spec;
        spec.dims = d;
        spec.n_bragg = n_bragg;
        spec.n_diffuse = n_diffuse;
        spec.diffuse_sigma[0] = diffuse_sigma.at(0);
        spec.diffuse_sigma[1] = diffuse_sigma.at(1);
        spec.noise_ceiling = noise_ceiling;
        spec.spike_fraction = spike_fraction;
        spec.min_gap = min_gap;
        prov.config.update({{"bragg", n_bragg},
                            {"diffuse", n_diffuse},
                            {"diffuse_sigma", diffuse_sigma},
                            {"noise_ceiling", noise_ceiling},
                            {"spike_fraction", spike_fraction},
                            {"min_gap", min_gap}});
        res = vdx::synth_diffuse(spec, seed);
      } else if (kind == "solid") {
        vdx::SolidSpec spec;
        spec.shape = shape == "sphere" ? vdx::SolidShape::sphere
                     : shape == "cuboid" ? vdx::SolidShape::cuboid
                                         : vdx::SolidShape::turbine;
        spec.dims = d;
        spec.radius = radius;
        spec.fill = fill;
        spec.noise = noise;
        spec.n_filaments = n_filaments;
        spec.filament_level = filament_level;
        prov.config.update({{"shape", shape},
                            {"radius", radius},
                            {"fill", fill},
                            {"noise", noise},
                            {"filaments", n_filaments},
                            {"filament_level", filament_level}});
        res = vdx::synth_solid(spec, seed);
      } else {
        prov.config.update({{"big_radius", big_radius}, {"small_radius", small_radius},
                            {"fill", fill}, {"noise", noise}});
        res = vdx::synth_two_blobs(d, big_radius, small_radius, fill, noise, seed);
      }
      vdx::save_volume(res.volume, out);
      prov.attach(out);
      json counts = json::array();
      for (std::int32_t f = 0; f <= res.truth.n_features; ++f) counts.push_back(res.truth.count(f));
      json j{{"output", out}, {"dims", d}, {"n_features", res.truth.n_features},
             {"truth_counts", counts}};
      if (!truth.empty()) {
        save_truth(res.truth, truth);
        prov.attach(truth);
        j["truth"] = truth;
      }
      emit(j, prov);
    } else if (*hist) {
      prov.config.update({{"input", input}, {"bins", bins}, {"window", window}});
      vdx::Histogram h;
      if (is_volume_file(input)) h = vdx::histogram(vdx::load_volume(input), bins);
      else h = vdx::histogram(vdx::load_sparse_jsonl(input), bins);
      const auto cusp = vdx::detect_cusp(h, window);
      json j = vdx::to_json(h);
      j["cusp"] = cusp ? json(*cusp) : json(nullptr);
      if (!out.empty()) {
        std::ofstream f(out, std::ios::trunc);
        f << vdx::to_json(h).dump() << '\n';
        if (!f) throw std::runtime_error("cannot write " + out);
        prov.attach(out);
      }
      emit(j, prov);
    } else if (*filter) {
      prov.config.update({{"input", input}, {"cutoff", cutoff}, {"bins", bins}, {"window", window}});
      const auto v = vdx::load_volume(input);
      const auto c = resolve_cutoff(v, cutoff, bins, window);
      prov.config["cutoff_resolved"] = c.value;
      const auto s = vdx::to_sparse(v, c.value);
      vdx::save_sparse_jsonl(s, out);
      prov.attach(out);
      emit({{"output", out}, {"cutoff", c.value}, {"cutoff_auto", c.automatic},
            {"n_points", s.size()}, {"n_voxels", v.size()}},
           prov);
    } else if (*clus) {
      prov.config.update({{"input", input}, {"eps", eps}, {"min_weight", min_weight},
                          {"include_border", !no_border}});
      if (!cutoff.empty()) prov.config["cutoff"] = cutoff;
      json info = json::object();
      const auto points = load_points(input, cutoff, bins, info);
      const vdx::ClusteringParams params{eps, min_weight, !no_border};
      const auto r = vdx::cluster(points, params, exec);
      json j = vdx::cluster_summary_json(r, points);
      j.update(info);
      if (!labels_path.empty()) {
        vdx::save_labels(r, labels_path);
        prov.attach(labels_path);
        j["labels"] = labels_path;
      }
      if (!flags_path.empty()) {
        vdx::save_flags(r, flags_path);
        prov.attach(flags_path);
        j["flags"] = flags_path;
      }
      if (!summary_path.empty()) {
        std::ofstream f(summary_path, std::ios::trunc);
        f << vdx::cluster_summary_json(r, points).dump(2) << '\n';
        if (!f) throw std::runtime_error("cannot write " + summary_path);
        prov.attach(summary_path);
      }
      emit(j, prov);
    } else if (*rank) {
      prov.config.update({{"input", input}, {"labels", labels_path}, {"flags", flags_path},
                          {"key", key}, {"top", top}});
      const auto points = vdx::load_sparse_jsonl(input);
      const auto r = load_result(labels_path, flags_path, points.size());
      auto ranked = vdx::rank_clusters(r, points, vdx::parse_rank_key(key));
      if (top > 0 && ranked.size() > top) ranked.resize(top);
      json list = json::array();
      for (const auto& s : ranked) list.push_back(vdx::to_json(s));
      emit({{"key", key}, {"n_clusters", r.n_clusters}, {"clusters", list}}, prov);
    } else if (*shell) {
      prov.config.update({{"input", input}, {"eps", eps}, {"min_weight", min_weight},
                          {"cluster", cluster_id}, {"depth", depth}});
      const auto points = vdx::load_sparse_jsonl(input);
      const vdx::ClusteringParams params{eps, min_weight, true};
      const auto s = vdx::shell_extract(points, params, cluster_id, depth, nullptr, exec);
      json j = vdx::shell_stats_json(s);
      if (!out.empty()) {
        vdx::save_sparse_jsonl(s.shell, out);
        prov.attach(out);
        j["shell"] = out;
      }
      if (!interior_out.empty()) {
        vdx::save_sparse_jsonl(s.interior, interior_out);
        prov.attach(interior_out);
        j["interior"] = interior_out;
      }
      if (!stats_out.empty()) {
        std::ofstream f(stats_out, std::ios::trunc);
        f << vdx::shell_stats_json(s).dump(2) << '\n';
        if (!f) throw std::runtime_error("cannot write " + stats_out);
        prov.attach(stats_out);
      }
      emit(j, prov);
    } else if (*exp) {
      prov.config.update({{"input", input}, {"format", format}, {"target", target}, {"mode", mode},
                          {"seed", seed}, {"alpha", alpha}});
      if (!labels_path.empty()) prov.config["labels"] = labels_path;
      if (export_cluster) prov.config["cluster"] = *export_cluster;
      if (iso) prov.config["iso"] = *iso;
      if (!volume_path.empty()) prov.config["volume"] = volume_path;
      auto points = vdx::load_sparse_jsonl(input);
      vdx::ClusterResult r;
      if (!labels_path.empty()) {
        r = load_result(labels_path, flags_path, points.size());
      } else {
        // Unlabelled input is treated as one cluster.
        r.labels.assign(points.size(), 0);
        r.flags.assign(points.size(), vdx::PointFlag::core);
        r.densities.assign(points.size(), 0.0);
        r.n_clusters = points.empty() ? 0 : 1;
      }
      if (export_cluster) points = vdx::select(r, points, {*export_cluster});
      vdx::Geometry g;
      if (!volume_path.empty()) g = vdx::load_volume(volume_path).geometry();
      json j{{"output", out}, {"format", format}};
      if (format == "pointcloud") {
        const auto keep = target > 0 ? vdx::decimate_positions(points, target,
                                                               vdx::parse_decimate_mode(mode), seed)
                                     : vdx::decimate_positions(points, std::max<std::size_t>(1, points.size()),
                                                               vdx::DecimateMode::stride);
        vdx::PointCloud pc;
        if (alpha == "tf") {
          if (!tf_cusp || !tf_threshold) throw vdx::DataError("--alpha tf needs --cusp and --threshold");
          pc = vdx::make_point_cloud(vdx::subset(points, keep), vdx::TransferFunction(*tf_cusp, *tf_threshold), g);
          prov.config.update({{"cusp", *tf_cusp}, {"threshold", *tf_threshold}});
        } else {
          pc = vdx::make_point_cloud(points, keep, g);
        }
        vdx::save_point_cloud(pc, out);
        j["n_points"] = pc.size();
        j["alpha_source"] = alpha == "tf" ? "transfer_function" : "cluster_relative";
      } else {
        // The (selected) points are meshed as one object.
        if (points.empty()) throw vdx::DataError("nothing to mesh: the selection is empty");
        vdx::ClusterResult one;
        one.labels.assign(points.size(), 0);
        one.flags.assign(points.size(), vdx::PointFlag::core);
        one.n_clusters = 1;
        double lo = std::numeric_limits<double>::infinity();
        for (const auto& p : points.points) lo = std::min(lo, p.intensity);
        const double level = iso.value_or(0.5 * lo);
        auto mesh = vdx::isosurface(vdx::rasterize_cluster(points, one, 0), level);
        for (auto& v : mesh.vertices)
          for (int a = 0; a < 3; ++a) v[a] = g.origin[a] + v[a] * g.spacing[a];
        vdx::save_obj(mesh, out);
        j.update({{"iso", level}, {"n_vertices", mesh.vertices.size()},
                  {"n_triangles", mesh.triangles.size()}, {"watertight", mesh.watertight()}});
      }
      prov.attach(out);
      emit(j, prov);
    } else if (*serve) {
      prov.config.update({{"port", port}, {"listen", listen}});
      vdx::Service service({listen, port, exec});
      const int bound = service.bind();
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      emit({{"listening", listen}, {"port", bound}}, prov);
      service.run();
      g_service = nullptr;
    }
  } catch (const vdx::FormatError& e) {
    std::cout << json{{"schema", kCliSchema}, {"command", prov.command},
                      {"error", {{"category", "format"}, {"message", e.what()}, {"offset", e.offset()}}}}
                     .dump()
              << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cout << json{{"schema", kCliSchema}, {"command", prov.command},
                      {"error", {{"category", "data"}, {"message", e.what()}}}}
                     .dump()
              << std::endl;
    return 1;
  }
  return 0;
}
