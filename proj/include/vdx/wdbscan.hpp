#pragma once

// Intensity-weighted DBSCAN on a voxel lattice.
//
// A point's density is its own intensity plus the intensities of the points
// at the stencil offsets around it. Core points (density >= min_weight) that
// are stencil neighbours share a cluster. With include_border, a non-core
// point next to at least one core point joins the cluster of its
// lexicographically smallest core neighbour; everything else is noise.
//
// Cluster ids follow the order in which each cluster's first core point
// appears in the canonical (i, j, k) point order, so results are unique and
// independent of thread count.

#include <cstdint>
#include <vector>

#include "vdx/volume.hpp"

namespace vdx {

inline constexpr double kDefaultEps = 1.7;

struct Offset {
  std::int32_t dx = 0, dy = 0, dz = 0;
  friend auto operator<=>(const Offset&, const Offset&) = default;
};

/// Nonzero integer offsets with dx^2 + dy^2 + dz^2 <= eps^2, sorted.
class NeighborStencil {
 public:
  explicit NeighborStencil(double eps);

  double eps() const noexcept { return eps_; }
  const std::vector<Offset>& offsets() const noexcept { return offsets_; }
  std::size_t size() const noexcept { return offsets_.size(); }
  /// Offsets lexicographically greater than (0,0,0): one per neighbour pair.
  std::vector<Offset> forward_half() const;

 private:
  double eps_;
  std::vector<Offset> offsets_;
};

inline NeighborStencil stencil(double eps) { return NeighborStencil(eps); }

struct ClusteringParams {
  double eps = kDefaultEps;
  double min_weight = 0.0;
  bool include_border = true;

  /// Throws DataError when eps or min_weight is not positive and finite.
  void validate() const;
  /// eps < 1 admits no lattice neighbours; clustering degenerates to
  /// per-voxel thresholding.
  bool degenerate() const noexcept { return eps < 1.0; }

  friend bool operator==(const ClusteringParams&, const ClusteringParams&) = default;
};

enum class PointFlag : std::uint8_t { noise = 0, border = 1, core = 2 };

struct ClusterResult {
  static constexpr std::int32_t kNoise = -1;

  std::vector<std::int32_t> labels;
  std::vector<PointFlag> flags;
  std::vector<double> densities;
  std::int32_t n_clusters = 0;

  friend bool operator==(const ClusterResult&, const ClusterResult&) = default;
};

struct ExecutionOptions {
  /// 0 selects the default: $VDX_THREADS if set, otherwise hardware concurrency.
  unsigned threads = 0;
};

unsigned resolve_threads(unsigned requested);

/// Open-addressing map from voxel index to point position.
class VoxelIndexMap {
 public:
  explicit VoxelIndexMap(const SparsePoints& points);

  /// Position of the point at (i, j, k), or -1.
  std::int64_t find(std::int64_t i, std::int64_t j, std::int64_t k) const noexcept;

 private:
  std::uint64_t key(std::uint64_t i, std::uint64_t j, std::uint64_t k) const noexcept {
    return (i * dims_[1] + j) * dims_[2] + k;
  }

  Dims dims_;
  std::uint64_t mask_ = 0;
  std::vector<std::uint64_t> keys_;
  std::vector<std::uint32_t> values_;
};

double weighted_density(std::size_t p, const SparsePoints& points, const NeighborStencil& s,
                        const VoxelIndexMap& index);
double weighted_density(std::size_t p, const SparsePoints& points, const NeighborStencil& s);

ClusterResult cluster(const SparsePoints& points, const ClusteringParams& params,
                      const ExecutionOptions& exec = {});

inline constexpr std::size_t kBruteForceLimit = 10000;

/// Reference O(n^2) implementation: pairwise distances, no lattice indexing.
/// Throws DataError above kBruteForceLimit points.
ClusterResult brute_force_cluster(const SparsePoints& points, const ClusteringParams& params);

/// Relabels clusters so ids follow first-core-point order. Used to compare
/// results from implementations with other numbering schemes.
ClusterResult canonical_relabel(ClusterResult r);

// Label export: i32 little-endian, aligned with the point order. The JSON
// summary lives with the cluster statistics (features.hpp).
void write_labels(const ClusterResult& r, std::ostream& out);
void save_labels(const ClusterResult& r, const std::filesystem::path& path);
std::vector<std::int32_t> read_labels(std::istream& in);
std::vector<std::int32_t> load_labels(const std::filesystem::path& path);
/// Companion u8 flag array (0 noise, 1 border, 2 core).
void save_flags(const ClusterResult& r, const std::filesystem::path& path);
std::vector<PointFlag> load_flags(const std::filesystem::path& path);

}  // namespace vdx
