#include "vdx/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vdx {

RankKey parse_rank_key(const std::string& s) {
  if (s == "size") return RankKey::size;
  if (s == "total_intensity") return RankKey::total_intensity;
  if (s == "max_intensity") return RankKey::max_intensity;
  throw DataError("unknown ranking key '" + s + "' (expected size, total_intensity, max_intensity)");
}

const char* to_string(RankKey k) {
  switch (k) {
    case RankKey::size: return "size";
    case RankKey::total_intensity: return "total_intensity";
    case RankKey::max_intensity: return "max_intensity";
  }
  return "?";
}

std::vector<ClusterStats> cluster_stats(const ClusterResult& r, const SparsePoints& points) {
  if (r.labels.size() != points.size())
    throw DataError("cluster result does not match the point set (" +
                    std::to_string(r.labels.size()) + " labels, " +
                    std::to_string(points.size()) + " points)");
  std::vector<ClusterStats> stats(r.n_clusters);
  std::vector<std::array<double, 3>> sums(r.n_clusters, {0, 0, 0});
  for (std::int32_t c = 0; c < r.n_clusters; ++c) {
    stats[c].id = c;
    stats[c].bbox_min = {~0u, ~0u, ~0u};
  }
  for (std::size_t p = 0; p < points.size(); ++p) {
    const auto l = r.labels[p];
    if (l == ClusterResult::kNoise) continue;
    auto& s = stats.at(l);
    const auto& pt = points.points[p];
    ++s.size;
    if (r.flags[p] == PointFlag::core) ++s.core_count;
    s.total_intensity += pt.intensity;
    s.max_intensity = std::max(s.max_intensity, pt.intensity);
    sums[l][0] += pt.index.i;
    sums[l][1] += pt.index.j;
    sums[l][2] += pt.index.k;
    s.bbox_min = {std::min(s.bbox_min.i, pt.index.i), std::min(s.bbox_min.j, pt.index.j),
                  std::min(s.bbox_min.k, pt.index.k)};
    s.bbox_max = {std::max(s.bbox_max.i, pt.index.i), std::max(s.bbox_max.j, pt.index.j),
                  std::max(s.bbox_max.k, pt.index.k)};
  }
  for (std::int32_t c = 0; c < r.n_clusters; ++c)
    for (int a = 0; a < 3; ++a)
      stats[c].centroid[a] = stats[c].size ? sums[c][a] / static_cast<double>(stats[c].size) : 0.0;
  return stats;
}

std::vector<ClusterStats> rank_clusters(const ClusterResult& r, const SparsePoints& points,
                                        RankKey key) {
  auto stats = cluster_stats(r, points);
  auto value = [key](const ClusterStats& s) {
    switch (key) {
      case RankKey::size: return static_cast<double>(s.size);
      case RankKey::total_intensity: return s.total_intensity;
      case RankKey::max_intensity: return s.max_intensity;
    }
    return 0.0;
  };
  std::stable_sort(stats.begin(), stats.end(), [&](const ClusterStats& a, const ClusterStats& b) {
    const double va = value(a), vb = value(b);
    return va != vb ? va > vb : a.id < b.id;
  });
  return stats;
}

SparsePoints subset(const SparsePoints& points, const std::vector<std::size_t>& positions) {
  SparsePoints out;
  out.dims = points.dims;
  out.points.reserve(positions.size());
  for (auto p : positions) out.points.push_back(points.points[p]);
  return out;
}

SparsePoints select(const ClusterResult& r, const SparsePoints& points,
                    const std::set<std::int32_t>& ids) {
  if (r.labels.size() != points.size()) throw DataError("cluster result does not match the point set");
  for (auto id : ids)
    if (id < 0 || id >= r.n_clusters) throw DataError("unknown cluster id " + std::to_string(id));
  std::vector<bool> wanted(r.n_clusters, false);
  for (auto id : ids) wanted[id] = true;
  SparsePoints out;
  out.dims = points.dims;
  for (std::size_t p = 0; p < points.size(); ++p)
    if (r.labels[p] != ClusterResult::kNoise && wanted[r.labels[p]]) out.points.push_back(points.points[p]);
  return out;
}

ShellResult shell_extract(const SparsePoints& points, const ClusteringParams& params,
                          std::int32_t cluster_id, int peel_depth, const ClusterResult* pass1,
                          const ExecutionOptions& exec) {
  if (peel_depth < 1) throw DataError("peel depth must be a positive integer");
  ClusteringParams with_border = params;
  with_border.include_border = true;
  ClusterResult computed;
  if (!pass1) {
    computed = cluster(points, with_border, exec);
    pass1 = &computed;
  }
  if (cluster_id < 0 || cluster_id >= pass1->n_clusters)
    throw DataError("unknown cluster id " + std::to_string(cluster_id));

  const SparsePoints members = select(*pass1, points, {cluster_id});

  ClusteringParams core_only = params;
  core_only.include_border = false;
  // kept[t] flags which members survive t core-only passes; positions refer
  // to `members`.
  std::vector<std::size_t> kept(members.size());
  for (std::size_t p = 0; p < kept.size(); ++p) kept[p] = p;
  for (int depth = 1; depth <= peel_depth; ++depth) {
    const SparsePoints current = subset(members, kept);
    const ClusterResult pass = cluster(current, core_only, exec);
    std::vector<std::size_t> next;
    for (std::size_t p = 0; p < current.size(); ++p)
      if (pass.flags[p] == PointFlag::core) next.push_back(kept[p]);
    if (next.empty()) throw PeelExhaustedError(peel_depth, depth - 1);
    kept = std::move(next);
  }

  ShellResult res;
  res.cluster_id = cluster_id;
  res.peel_depth = peel_depth;
  res.shell.dims = res.interior.dims = points.dims;
  std::size_t cursor = 0;
  for (std::size_t p = 0; p < members.size(); ++p) {
    if (cursor < kept.size() && kept[cursor] == p) {
      res.interior.points.push_back(members.points[p]);
      ++cursor;
    } else {
      res.shell.points.push_back(members.points[p]);
    }
  }
  res.reduction_factor = res.shell.empty()
                             ? std::numeric_limits<double>::infinity()
                             : static_cast<double>(members.size()) / static_cast<double>(res.shell.size());
  return res;
}

nlohmann::json to_json(const ClusterStats& s) {
  return {{"id", s.id},
          {"size", s.size},
          {"core_count", s.core_count},
          {"total_intensity", s.total_intensity},
          {"max_intensity", s.max_intensity},
          {"centroid", s.centroid},
          {"bbox",
           {{"min", {s.bbox_min.i, s.bbox_min.j, s.bbox_min.k}},
            {"max", {s.bbox_max.i, s.bbox_max.j, s.bbox_max.k}}}}};
}

nlohmann::json cluster_summary_json(const ClusterResult& r, const SparsePoints& points) {
  auto clusters = nlohmann::json::array();
  for (const auto& s : cluster_stats(r, points)) clusters.push_back(to_json(s));
  const auto noise = std::count(r.labels.begin(), r.labels.end(), ClusterResult::kNoise);
  return {{"n_clusters", r.n_clusters},
          {"n_points", points.size()},
          {"n_noise", noise},
          {"clusters", std::move(clusters)}};
}

nlohmann::json shell_stats_json(const ShellResult& s) {
  nlohmann::json j{{"cluster_id", s.cluster_id},
                   {"size", s.cluster_size()},
                   {"shell_size", s.shell.size()},
                   {"interior_size", s.interior.size()},
                   {"peel_depth", s.peel_depth}};
  // JSON has no infinity; an empty shell reports null plus a flag.
  if (std::isinf(s.reduction_factor)) {
    j["reduction_factor"] = nullptr;
    j["empty_shell"] = true;
  } else {
    j["reduction_factor"] = s.reduction_factor;
    j["empty_shell"] = false;
  }
  return j;
}

}  // namespace vdx
