#include "vdx/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rng.hpp"

namespace vdx {

using detail::Rng;

std::size_t GroundTruth::count(std::int32_t label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

std::vector<VoxelIndex> GroundTruth::signal_voxels() const {
  std::vector<VoxelIndex> out;
  for (std::uint64_t i = 0; i < dims[0]; ++i)
    for (std::uint64_t j = 0; j < dims[1]; ++j)
      for (std::uint64_t k = 0; k < dims[2]; ++k)
        if (at(i, j, k) != 0)
          out.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
                         static_cast<std::uint32_t>(k)});
  return out;
}

namespace {

double support_radius(const GaussianFeature& f) {
  return f.truncation * std::max({f.sigma[0], f.sigma[1], f.sigma[2]});
}

/// Normalized squared distance; <= truncation^2 inside the support.
double normalized_r2(const GaussianFeature& f, double x, double y, double z) {
  const double dx = (x - f.center[0]) / f.sigma[0];
  const double dy = (y - f.center[1]) / f.sigma[1];
  const double dz = (z - f.center[2]) / f.sigma[2];
  return dx * dx + dy * dy + dz * dz;
}

std::vector<GaussianFeature> place_features(const DiffuseSpec& spec, Rng& rng) {
  std::vector<GaussianFeature> out;
  const int total = spec.n_bragg + spec.n_diffuse;
  for (int n = 0; n < total; ++n) {
    const bool bragg = n < spec.n_bragg;
    GaussianFeature f;
    if (bragg) {
      f.sigma = {spec.bragg_sigma, spec.bragg_sigma, spec.bragg_sigma};
      f.truncation = spec.bragg_truncation;
      f.amplitude = rng.log_uniform(spec.bragg_amplitude[0], spec.bragg_amplitude[1]);
    } else {
      for (auto& s : f.sigma) s = rng.uniform(spec.diffuse_sigma[0], spec.diffuse_sigma[1]);
      f.truncation = spec.diffuse_truncation;
      f.amplitude = rng.log_uniform(spec.diffuse_amplitude[0], spec.diffuse_amplitude[1]);
    }
    const double r = support_radius(f);
    bool placed = false;
    for (int attempt = 0; attempt < 20000 && !placed; ++attempt) {
      for (int a = 0; a < 3; ++a) {
        const double hi = static_cast<double>(spec.dims[a] - 1);
        f.center[a] = spec.keep_inside ? rng.uniform(std::min(r, hi / 2), std::max(hi - r, hi / 2))
                                       : rng.uniform(0.0, hi);
      }
      if (spec.keep_inside) {
        bool inside = true;
        for (int a = 0; a < 3; ++a)
          inside = inside && f.center[a] - r >= 0.0 &&
                   f.center[a] + r <= static_cast<double>(spec.dims[a] - 1);
        if (!inside) continue;
      }
      placed = true;
      if (spec.min_gap >= 0.0) {
        for (const auto& g : out) {
          const double d = std::hypot(f.center[0] - g.center[0], f.center[1] - g.center[1],
                                      f.center[2] - g.center[2]);
          if (d - r - support_radius(g) < spec.min_gap) {
            placed = false;
            break;
          }
        }
      }
    }
    if (!placed)
      throw DataError("could not place feature " + std::to_string(n) +
                      " under the gap/boundary constraints");
    out.push_back(f);
  }
  return out;
}

std::vector<std::int32_t> empty_labels(const Dims& d) {
  return std::vector<std::int32_t>(d[0] * d[1] * d[2], 0);
}

}  // namespace

SynthResult synth_diffuse(const DiffuseSpec& spec, std::uint64_t seed) {
  for (auto d : spec.dims)
    if (d == 0) throw DataError("synthetic extents must be positive");
  Rng rng(seed);
  DenseVolume vol(spec.dims);
  auto& vals = vol.mutable_values();
  const bool spikes = spec.spike_fraction > 0.0 && spec.spike_ceiling > spec.noise_ceiling;
  for (auto& x : vals) {
    double v = spec.noise_ceiling * rng.uniform_open0();
    if (spikes && rng.uniform() < spec.spike_fraction)
      v = rng.log_uniform(std::nextafter(spec.noise_ceiling, 1.0), spec.spike_ceiling);
    x = static_cast<float>(v);
  }

  SynthResult res;
  res.features = spec.features.empty() ? place_features(spec, rng) : spec.features;
  res.truth.dims = spec.dims;
  res.truth.labels = empty_labels(spec.dims);
  res.truth.n_features = static_cast<std::int32_t>(res.features.size());

  for (std::size_t f = 0; f < res.features.size(); ++f) {
    const auto& feat = res.features[f];
    const double r = support_radius(feat);
    const double t2 = feat.truncation * feat.truncation;
    std::array<std::int64_t, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(feat.center[a] - r)));
      hi[a] = std::min<std::int64_t>(static_cast<std::int64_t>(spec.dims[a]) - 1,
                                     static_cast<std::int64_t>(std::ceil(feat.center[a] + r)));
    }
    for (std::int64_t k = lo[2]; k <= hi[2]; ++k)
      for (std::int64_t j = lo[1]; j <= hi[1]; ++j)
        for (std::int64_t i = lo[0]; i <= hi[0]; ++i) {
          const double q = normalized_r2(feat, i, j, k);
          if (q > t2) continue;
          const double g = feat.amplitude * std::exp(-0.5 * q);
          const auto idx = vol.linear(i, j, k);
          vals[idx] = static_cast<float>(vals[idx] + g);
          auto& label = res.truth.labels[idx];
          if (label == 0) {
            label = static_cast<std::int32_t>(f + 1);
          } else {
            // Overlap: the feature contributing most owns the voxel.
            const auto& other = res.features[label - 1];
            const double og = other.amplitude * std::exp(-0.5 * normalized_r2(other, i, j, k));
            if (g > og) label = static_cast<std::int32_t>(f + 1);
          }
        }
  }
  res.volume = std::move(vol);
  return res;
}

namespace {

bool in_turbine(const Dims& d, double x, double y, double z) {
  const double u = x / d[0], v = y / d[1], w = z / d[2];
  // Root block and platform.
  if (u >= 0.3 && u <= 0.7 && v >= 0.35 && v <= 0.65 && w >= 0.1 && w <= 0.3) return true;
  if (u >= 0.2 && u <= 0.8 && v >= 0.25 && v <= 0.75 && w > 0.3 && w <= 0.35) return true;
  // Twisted airfoil blade: an elongated ellipse whose major axis rotates with height.
  if (w > 0.35 && w <= 0.9) {
    const double theta = 0.6 * (w - 0.35) / 0.55;
    const double cu = u - 0.5, cv = v - 0.5;
    const double a = std::cos(theta) * cu + std::sin(theta) * cv;
    const double b = -std::sin(theta) * cu + std::cos(theta) * cv;
    return (a / 0.3) * (a / 0.3) + (b / 0.06) * (b / 0.06) <= 1.0;
  }
  return false;
}

}  // namespace

SynthResult synth_solid(const SolidSpec& spec, std::uint64_t seed) {
  for (auto d : spec.dims)
    if (d == 0) throw DataError("synthetic extents must be positive");
  if (spec.noise < 0.0 || (spec.noise > 0.0 && spec.noise >= spec.fill))
    throw DataError("background noise must lie in [0, fill)");
  Rng rng(seed);
  const auto& d = spec.dims;
  Vec3 c = spec.center;
  if (!spec.explicit_center)
    for (int a = 0; a < 3; ++a) c[a] = (static_cast<double>(d[a]) - 1.0) / 2.0;
  Vec3 half = spec.half_extents;
  if (half == Vec3{0, 0, 0})
    for (int a = 0; a < 3; ++a) half[a] = static_cast<double>(d[a]) / 4.0;
  const double r2 = spec.radius * spec.radius;

  auto inside = [&](double x, double y, double z) {
    switch (spec.shape) {
      case SolidShape::sphere: {
        const double dx = x - c[0], dy = y - c[1], dz = z - c[2];
        return spec.radius > 0.0 && dx * dx + dy * dy + dz * dz <= r2;
      }
      case SolidShape::cuboid:
        return std::abs(x - c[0]) <= half[0] && std::abs(y - c[1]) <= half[1] &&
               std::abs(z - c[2]) <= half[2];
      case SolidShape::turbine:
        return in_turbine(d, x, y, z);
    }
    return false;
  };

  DenseVolume vol(d);
  auto& vals = vol.mutable_values();
  SynthResult res;
  res.truth.dims = d;
  res.truth.labels = empty_labels(d);
  res.truth.n_features = 1;
  std::size_t idx = 0;
  for (std::uint64_t k = 0; k < d[2]; ++k)
    for (std::uint64_t j = 0; j < d[1]; ++j)
      for (std::uint64_t i = 0; i < d[0]; ++i, ++idx) {
        // Always draw so the noise field does not depend on the shape.
        const double bg = spec.noise * rng.uniform_open0();
        if (inside(i, j, k)) {
          vals[idx] = static_cast<float>(spec.fill);
          res.truth.labels[idx] = 1;
        } else {
          vals[idx] = static_cast<float>(bg);
        }
      }

  for (int f = 0; f < spec.n_filaments; ++f) {
    Vec3 a, b;
    for (int ax = 0; ax < 3; ++ax) {
      a[ax] = rng.uniform(0.0, static_cast<double>(d[ax] - 1));
      b[ax] = rng.uniform(0.0, static_cast<double>(d[ax] - 1));
    }
    const double len = std::hypot(b[0] - a[0], b[1] - a[1], b[2] - a[2]);
    const int steps = std::max(1, static_cast<int>(std::ceil(len * 2.0)));
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      const auto i = static_cast<std::uint64_t>(std::lround(a[0] + t * (b[0] - a[0])));
      const auto j = static_cast<std::uint64_t>(std::lround(a[1] + t * (b[1] - a[1])));
      const auto k = static_cast<std::uint64_t>(std::lround(a[2] + t * (b[2] - a[2])));
      const auto li = vol.linear(i, j, k);
      if (res.truth.labels[li] == 0 && vals[li] < spec.filament_level)
        vals[li] = static_cast<float>(spec.filament_level);
    }
  }
  res.volume = std::move(vol);
  return res;
}

SynthResult synth_two_blobs(Dims dims, double big_radius, double small_radius, double fill,
                            double noise, std::uint64_t seed) {
  if (noise < 0.0 || (noise > 0.0 && noise >= fill))
    throw DataError("background noise must lie in [0, fill)");
  Rng rng(seed);
  const Vec3 big{0.3 * dims[0], 0.5 * dims[1], 0.5 * dims[2]};
  const Vec3 small{0.75 * dims[0], 0.5 * dims[1], 0.5 * dims[2]};
  DenseVolume vol(dims);
  auto& vals = vol.mutable_values();
  SynthResult res;
  res.truth.dims = dims;
  res.truth.labels = empty_labels(dims);
  res.truth.n_features = 2;
  auto d2 = [](const Vec3& c, double x, double y, double z) {
    return (x - c[0]) * (x - c[0]) + (y - c[1]) * (y - c[1]) + (z - c[2]) * (z - c[2]);
  };
  std::size_t idx = 0;
  for (std::uint64_t k = 0; k < dims[2]; ++k)
    for (std::uint64_t j = 0; j < dims[1]; ++j)
      for (std::uint64_t i = 0; i < dims[0]; ++i, ++idx) {
        const double bg = noise * rng.uniform_open0();
        if (d2(big, i, j, k) <= big_radius * big_radius) {
          vals[idx] = static_cast<float>(fill);
          res.truth.labels[idx] = 1;
        } else if (d2(small, i, j, k) <= small_radius * small_radius) {
          vals[idx] = static_cast<float>(fill);
          res.truth.labels[idx] = 2;
        } else {
          vals[idx] = static_cast<float>(bg);
        }
      }
  res.volume = std::move(vol);
  return res;
}

}  // namespace vdx
