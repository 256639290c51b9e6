#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace vdx {

/// Raised when a file does not follow one of the documented formats.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Raised for invalid arguments to data operations (bad index, bad parameter).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Dims = std::array<std::uint64_t, 3>;
using Vec3 = std::array<double, 3>;

struct VoxelIndex {
  std::uint32_t i = 0;
  std::uint32_t j = 0;
  std::uint32_t k = 0;

  friend auto operator<=>(const VoxelIndex&, const VoxelIndex&) = default;
};

/// Physical placement of a voxel grid: position = origin + index * spacing.
struct Geometry {
  Vec3 origin{0.0, 0.0, 0.0};
  Vec3 spacing{1.0, 1.0, 1.0};

  Vec3 position(const VoxelIndex& v) const {
    return {origin[0] + v.i * spacing[0], origin[1] + v.j * spacing[1],
            origin[2] + v.k * spacing[2]};
  }

  friend bool operator==(const Geometry&, const Geometry&) = default;
};

/// Dense scalar grid, x-fastest. NaN marks voxels without data.
class DenseVolume {
 public:
  DenseVolume() = default;
  DenseVolume(Dims dims, std::vector<float> values, Geometry geometry = {},
              std::array<std::string, 3> axis_labels = {"X", "Y", "Z"});
  /// Zero-filled volume.
  explicit DenseVolume(Dims dims, Geometry geometry = {},
                       std::array<std::string, 3> axis_labels = {"X", "Y", "Z"});

  const Dims& dims() const noexcept { return dims_; }
  const Geometry& geometry() const noexcept { return geometry_; }
  const std::array<std::string, 3>& axis_labels() const noexcept { return labels_; }
  const std::vector<float>& values() const noexcept { return values_; }
  std::vector<float>& mutable_values() noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::size_t linear(std::uint64_t i, std::uint64_t j, std::uint64_t k) const noexcept {
    return static_cast<std::size_t>(i + dims_[0] * (j + dims_[1] * k));
  }
  float at(std::uint64_t i, std::uint64_t j, std::uint64_t k) const noexcept {
    return values_[linear(i, j, k)];
  }
  float& at(std::uint64_t i, std::uint64_t j, std::uint64_t k) noexcept {
    return values_[linear(i, j, k)];
  }

  /// Bitwise comparison, so NaN payloads compare equal to themselves.
  bool bit_equal(const DenseVolume& other) const noexcept;

 private:
  Dims dims_{0, 0, 0};
  Geometry geometry_;
  std::array<std::string, 3> labels_{"X", "Y", "Z"};
  std::vector<float> values_;
};

struct SparsePoint {
  VoxelIndex index;
  double intensity = 0.0;

  friend bool operator==(const SparsePoint&, const SparsePoint&) = default;
};

/// Above-cutoff voxels, sorted by (i, j, k) with no duplicates.
struct SparsePoints {
  Dims dims{0, 0, 0};
  std::vector<SparsePoint> points;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }

  /// Sorts and checks the container invariants; throws DataError on duplicates
  /// or non-positive/NaN intensities.
  void canonicalize();
  bool is_canonical() const;

  friend bool operator==(const SparsePoints&, const SparsePoints&) = default;
};

struct Plane2D {
  std::uint64_t width = 0;   // extent of the faster remaining axis
  std::uint64_t height = 0;  // extent of the slower remaining axis
  std::vector<double> values;

  double at(std::uint64_t u, std::uint64_t v) const { return values[u + width * v]; }
};

// VVOL binary format.
inline constexpr char kVvolMagic[4] = {'V', 'V', 'O', 'L'};
inline constexpr std::uint32_t kVvolVersion = 1;
inline constexpr std::size_t kVvolHeaderSize = 4 + 4 + 3 * 8 + 3 * 8 + 3 * 8 + 3 * 8;

DenseVolume load_volume(const std::filesystem::path& path);
DenseVolume read_volume(std::istream& in);
void save_volume(const DenseVolume& v, const std::filesystem::path& path);
void write_volume(const DenseVolume& v, std::ostream& out);

/// Voxels with value > cutoff (NaN never passes), in (i, j, k) order.
SparsePoints to_sparse(const DenseVolume& v, double cutoff);

/// Slab mean over `thickness` planes perpendicular to `axis`, ignoring NaN.
Plane2D slice(const DenseVolume& v, int axis, std::uint64_t index, std::uint64_t thickness);

// Sparse exchange format: JSON lines {"i":..,"j":..,"k":..,"v":..}.
// A leading {"dims":[nx,ny,nz]} line carries the source extents.
void write_sparse_jsonl(const SparsePoints& s, std::ostream& out);
void save_sparse_jsonl(const SparsePoints& s, const std::filesystem::path& path);
SparsePoints read_sparse_jsonl(std::istream& in);
SparsePoints load_sparse_jsonl(const std::filesystem::path& path);

}  // namespace vdx
