#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "vdx/intensity.hpp"
#include "vdx/volume.hpp"
#include "vdx/wdbscan.hpp"

namespace vdx {

enum class AlphaSource : std::uint8_t { cluster_relative, transfer_function };

struct PointCloud {
  std::vector<std::array<float, 3>> positions;
  std::vector<float> intensities;
  std::vector<float> alphas;
  AlphaSource alpha_source = AlphaSource::cluster_relative;

  std::size_t size() const noexcept { return positions.size(); }
  bool bit_equal(const PointCloud& other) const noexcept;
};

PointCloud make_point_cloud(const SparsePoints& points, const Geometry& geometry = {});
PointCloud make_point_cloud(const SparsePoints& points, const TransferFunction& tf,
                            const Geometry& geometry = {});

// Binary point cloud: u32 count, then count x (3 f32 position, f32 intensity,
// f32 alpha), little-endian. Alpha provenance is not stored.
inline constexpr std::uint32_t kPointCloudFormatVersion = 1;
void write_point_cloud(const PointCloud& pc, std::ostream& out);
std::string encode_point_cloud(const PointCloud& pc);
PointCloud read_point_cloud(std::istream& in);
void save_point_cloud(const PointCloud& pc, const std::filesystem::path& path);
PointCloud load_point_cloud(const std::filesystem::path& path);

enum class DecimateMode { stride, importance };
DecimateMode parse_decimate_mode(const std::string& s);

/// At most `target` points, canonical order preserved. Stride keeps every
/// ceil(n/target)-th point starting at the first; importance samples without
/// replacement with probability proportional to intensity.
SparsePoints decimate(const SparsePoints& points, std::size_t target, DecimateMode mode,
                      std::uint64_t seed = 0);
/// Positions of the points decimate() keeps, ascending.
std::vector<std::size_t> decimate_positions(const SparsePoints& points, std::size_t target,
                                            DecimateMode mode, std::uint64_t seed = 0);

/// Point cloud of `points` restricted to `positions`, with alphas taken from
/// the full set's relative intensities.
PointCloud make_point_cloud(const SparsePoints& points, const std::vector<std::size_t>& positions,
                            const Geometry& geometry = {});

struct TriangleMesh {
  std::vector<std::array<double, 3>> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
  double iso_value = 0.0;

  bool empty() const noexcept { return triangles.empty(); }
  double area() const;
  /// Every undirected edge used by exactly two triangles, once in each direction.
  bool watertight() const;
  std::int64_t euler_characteristic() const;
};

/// Marching cubes over the grid cells. Voxels above `iso` are inside; NaN
/// counts as below. Triangles wind counter-clockwise seen from outside, and
/// vertices on shared cell edges are shared. Vertex order is slab-major.
TriangleMesh isosurface(const DenseVolume& v, double iso);

/// Cluster members written into a zero volume covering the cluster bbox plus
/// one voxel of padding. Origin is the padded bbox corner in index units.
DenseVolume rasterize_cluster(const SparsePoints& points, const ClusterResult& r, std::int32_t id);

void write_obj(const TriangleMesh& m, std::ostream& out);
std::string encode_obj(const TriangleMesh& m);
void save_obj(const TriangleMesh& m, const std::filesystem::path& path);
TriangleMesh read_obj(std::istream& in);

}  // namespace vdx
