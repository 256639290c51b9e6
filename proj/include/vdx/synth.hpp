#pragma once

#include <cstdint>
#include <vector>

#include "vdx/volume.hpp"

namespace vdx {

/// Per-voxel ground truth: 0 = noise/background, f + 1 = feature (or object) f.
struct GroundTruth {
  Dims dims{0, 0, 0};
  std::vector<std::int32_t> labels;  // x-fastest, same layout as DenseVolume
  std::int32_t n_features = 0;

  std::int32_t at(std::uint64_t i, std::uint64_t j, std::uint64_t k) const {
    return labels[i + dims[0] * (j + dims[1] * k)];
  }
  std::size_t count(std::int32_t label) const;
  /// Signal voxels (label != 0) as a sparse index set, in (i, j, k) order.
  std::vector<VoxelIndex> signal_voxels() const;
};

/// Gaussian blob; the ground-truth support is the ellipsoid where
/// sum((d_a / sigma_a)^2) <= truncation^2.
struct GaussianFeature {
  Vec3 center{0, 0, 0};
  Vec3 sigma{1, 1, 1};
  double amplitude = 1.0;
  double truncation = 3.0;
};

struct DiffuseSpec {
  Dims dims{64, 64, 64};
  int n_bragg = 0;      // sharp peaks: sigma ~ bragg_sigma, amplitude log-uniform in bragg_amplitude
  int n_diffuse = 0;    // broad features: sigma uniform per axis in diffuse_sigma
  double bragg_sigma = 1.0;
  double bragg_truncation = 3.0;
  double bragg_amplitude[2] = {1e3, 1e6};
  double diffuse_sigma[2] = {5.0, 20.0};
  double diffuse_truncation = 2.0;
  double diffuse_amplitude[2] = {1.0, 1e2};
  /// Background noise is uniform in (0, noise_ceiling].
  double noise_ceiling = 1e-3;
  /// Fraction of background voxels replaced by isolated hot voxels,
  /// log-uniform in (noise_ceiling, spike_ceiling].
  double spike_fraction = 0.0;
  double spike_ceiling = 1e-2;
  /// Minimum gap in voxels between feature supports; negative allows overlap.
  double min_gap = -1.0;
  /// Features whose support would cross the domain boundary are rejected.
  bool keep_inside = true;
  /// Explicit features; when non-empty the random placement above is skipped.
  std::vector<GaussianFeature> features;
};

struct SynthResult {
  DenseVolume volume;
  GroundTruth truth;
  std::vector<GaussianFeature> features;  // empty for solids
};

/// Bragg-like peaks and diffuse blobs over uniform noise. Deterministic in seed.
SynthResult synth_diffuse(const DiffuseSpec& spec, std::uint64_t seed);

enum class SolidShape { sphere, cuboid, turbine };

struct SolidSpec {
  SolidShape shape = SolidShape::sphere;
  Dims dims{64, 64, 64};
  /// Sphere radius in voxels (sphere); half extents (cuboid) default to dims/4.
  double radius = 20.0;
  Vec3 half_extents{0, 0, 0};
  /// Shape center; defaults to the grid center (dims - 1) / 2.
  bool explicit_center = false;
  Vec3 center{0, 0, 0};
  double fill = 1.0;
  /// Background uniform in (0, noise]; 0 leaves the background at exactly 0.
  double noise = 0.0;
  /// Random straight filaments outside the object at `filament_level`.
  int n_filaments = 0;
  double filament_level = 0.0;
};

SynthResult synth_solid(const SolidSpec& spec, std::uint64_t seed);

/// Two separated solid balls of different radii (fixture shared by the
/// service, CLI and acceptance tests). Label 1 is the larger ball.
SynthResult synth_two_blobs(Dims dims, double big_radius, double small_radius, double fill,
                            double noise, std::uint64_t seed);

}  // namespace vdx
