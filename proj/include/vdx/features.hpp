#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <vector>

#include <json.hpp>

#include "vdx/volume.hpp"
#include "vdx/wdbscan.hpp"

namespace vdx {

struct ClusterStats {
  std::int32_t id = 0;
  std::size_t size = 0;
  std::size_t core_count = 0;
  double total_intensity = 0.0;
  double max_intensity = 0.0;
  Vec3 centroid{0, 0, 0};  // index space, unweighted
  VoxelIndex bbox_min;
  VoxelIndex bbox_max;

  friend bool operator==(const ClusterStats&, const ClusterStats&) = default;
};

enum class RankKey { size, total_intensity, max_intensity };

RankKey parse_rank_key(const std::string& s);
const char* to_string(RankKey k);

/// Statistics per cluster, indexed by cluster id.
std::vector<ClusterStats> cluster_stats(const ClusterResult& r, const SparsePoints& points);

/// Descending by key, ties by ascending id.
std::vector<ClusterStats> rank_clusters(const ClusterResult& r, const SparsePoints& points,
                                        RankKey key);

/// Member points of the given clusters, in canonical order. Throws DataError
/// naming the first unknown id.
SparsePoints select(const ClusterResult& r, const SparsePoints& points,
                    const std::set<std::int32_t>& ids);

struct ShellResult {
  std::int32_t cluster_id = 0;
  int peel_depth = 1;
  SparsePoints shell;
  SparsePoints interior;
  /// |cluster| / |shell|; +infinity when nothing was peeled.
  double reduction_factor = 0.0;

  std::size_t cluster_size() const noexcept { return shell.size() + interior.size(); }
  bool empty_shell() const noexcept { return shell.empty(); }
};

/// Thrown when peeling consumes the whole cluster before the requested depth.
class PeelExhaustedError : public DataError {
 public:
  PeelExhaustedError(int requested, int last_nonempty)
      : DataError("cluster vanished while peeling to depth " + std::to_string(requested) +
                  "; last non-empty depth is " + std::to_string(last_nonempty)),
        last_nonempty_(last_nonempty) {}
  int last_nonempty_depth() const noexcept { return last_nonempty_; }

 private:
  int last_nonempty_;
};

/// Double-clustering shell extraction. Pass 1 clusters everything with
/// borders kept; pass 2 re-clusters the chosen cluster's members keeping
/// core points only, repeated peel_depth times. The shell is what the core
/// passes removed. A pass-1 result may be supplied to skip recomputation.
ShellResult shell_extract(const SparsePoints& points, const ClusteringParams& params,
                          std::int32_t cluster_id, int peel_depth = 1,
                          const ClusterResult* pass1 = nullptr, const ExecutionOptions& exec = {});

/// Subset of `points` at the given positions (already canonical order).
SparsePoints subset(const SparsePoints& points, const std::vector<std::size_t>& positions);

nlohmann::json to_json(const ClusterStats& s);
/// {n_clusters, n_points, n_noise, clusters: [...]} with clusters in id order.
nlohmann::json cluster_summary_json(const ClusterResult& r, const SparsePoints& points);
nlohmann::json shell_stats_json(const ShellResult& s);

}  // namespace vdx
