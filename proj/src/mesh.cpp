#include "vdx/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "byte_io.hpp"
#include "mc_table.hpp"
#include "rng.hpp"

namespace vdx {

// --- point clouds -------------------------------------------------------------------

bool PointCloud::bit_equal(const PointCloud& other) const noexcept {
  auto same = [](const auto& a, const auto& b) {
    return a.size() == b.size() &&
           (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(a[0])) == 0);
  };
  return same(positions, other.positions) && same(intensities, other.intensities) &&
         same(alphas, other.alphas);
}

namespace {

PointCloud positions_and_intensities(const SparsePoints& points, const Geometry& g) {
  PointCloud pc;
  pc.positions.reserve(points.size());
  pc.intensities.reserve(points.size());
  for (const auto& p : points.points) {
    const auto pos = g.position(p.index);
    pc.positions.push_back({static_cast<float>(pos[0]), static_cast<float>(pos[1]),
                            static_cast<float>(pos[2])});
    pc.intensities.push_back(static_cast<float>(p.intensity));
  }
  return pc;
}

}  // namespace

PointCloud make_point_cloud(const SparsePoints& points, const Geometry& geometry) {
  auto pc = positions_and_intensities(points, geometry);
  for (double a : cluster_alpha(points)) pc.alphas.push_back(static_cast<float>(a));
  pc.alpha_source = AlphaSource::cluster_relative;
  return pc;
}

PointCloud make_point_cloud(const SparsePoints& points, const TransferFunction& tf,
                            const Geometry& geometry) {
  auto pc = positions_and_intensities(points, geometry);
  for (const auto& p : points.points) pc.alphas.push_back(static_cast<float>(tf.alpha(p.intensity)));
  pc.alpha_source = AlphaSource::transfer_function;
  return pc;
}

PointCloud make_point_cloud(const SparsePoints& points, const std::vector<std::size_t>& positions,
                            const Geometry& geometry) {
  const auto alphas = cluster_alpha(points);
  SparsePoints picked;
  picked.dims = points.dims;
  picked.points.reserve(positions.size());
  for (auto p : positions) picked.points.push_back(points.points.at(p));
  auto pc = positions_and_intensities(picked, geometry);
  for (auto p : positions) pc.alphas.push_back(static_cast<float>(alphas[p]));
  pc.alpha_source = AlphaSource::cluster_relative;
  return pc;
}

void write_point_cloud(const PointCloud& pc, std::ostream& out) {
  if (pc.positions.size() != pc.intensities.size() || pc.positions.size() != pc.alphas.size())
    throw DataError("point cloud arrays differ in length");
  if (pc.size() > std::numeric_limits<std::uint32_t>::max())
    throw DataError("point cloud too large for the binary format");
  detail::ByteWriter w(out);
  w.u32(static_cast<std::uint32_t>(pc.size()));
  for (std::size_t p = 0; p < pc.size(); ++p) {
    for (float c : pc.positions[p]) w.f32(c);
    w.f32(pc.intensities[p]);
    w.f32(pc.alphas[p]);
  }
  if (!out) throw std::runtime_error("write failed");
}

std::string encode_point_cloud(const PointCloud& pc) {
  std::ostringstream out(std::ios::binary);
  write_point_cloud(pc, out);
  return std::move(out).str();
}

PointCloud read_point_cloud(std::istream& in) {
  detail::ByteReader r(in);
  const auto n = r.u32("point count");
  if (const auto rem = r.remaining(); rem && *rem < std::uint64_t{n} * 20)
    throw FormatError("truncated point cloud: " + std::to_string(n) + " points declared",
                      4 + *rem);
  PointCloud pc;
  pc.positions.resize(n);
  pc.intensities.resize(n);
  pc.alphas.resize(n);
  for (std::uint32_t p = 0; p < n; ++p) {
    for (auto& c : pc.positions[p]) c = r.f32("position");
    pc.intensities[p] = r.f32("intensity");
    pc.alphas[p] = r.f32("alpha");
  }
  return pc;
}

void save_point_cloud(const PointCloud& pc, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_point_cloud(pc, out);
}

PointCloud load_point_cloud(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_point_cloud(in);
}

// --- decimation ---------------------------------------------------------------------

DecimateMode parse_decimate_mode(const std::string& s) {
  if (s == "stride") return DecimateMode::stride;
  if (s == "importance") return DecimateMode::importance;
  throw DataError("unknown decimation mode '" + s + "' (expected stride or importance)");
}

std::vector<std::size_t> decimate_positions(const SparsePoints& points, std::size_t target,
                                            DecimateMode mode, std::uint64_t seed) {
  if (target == 0) throw DataError("decimation target must be at least 1");
  const std::size_t n = points.size();
  std::vector<std::size_t> chosen;
  if (target >= n) {
    chosen.resize(n);
    for (std::size_t p = 0; p < n; ++p) chosen[p] = p;
    return chosen;
  }
  if (mode == DecimateMode::stride) {
    const std::size_t step = (n + target - 1) / target;
    for (std::size_t p = 0; p < n; p += step) chosen.push_back(p);
    return chosen;
  }
  // Weighted sampling without replacement (exponential keys): keep the
  // `target` largest log(u) / w.
  detail::Rng rng(seed);
  std::vector<std::pair<double, std::size_t>> keys(n);
  for (std::size_t p = 0; p < n; ++p)
    keys[p] = {std::log(rng.uniform_open0()) / points.points[p].intensity, p};
  std::nth_element(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(target), keys.end(),
                   [](const auto& a, const auto& b) {
                     return a.first > b.first || (a.first == b.first && a.second < b.second);
                   });
  chosen.resize(target);
  for (std::size_t t = 0; t < target; ++t) chosen[t] = keys[t].second;
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

SparsePoints decimate(const SparsePoints& points, std::size_t target, DecimateMode mode,
                      std::uint64_t seed) {
  const auto chosen = decimate_positions(points, target, mode, seed);
  if (chosen.size() == points.size()) return points;
  SparsePoints out;
  out.dims = points.dims;
  out.points.reserve(chosen.size());
  for (auto p : chosen) out.points.push_back(points.points[p]);
  return out;
}

// --- meshes -------------------------------------------------------------------------

double TriangleMesh::area() const {
  double total = 0.0;
  for (const auto& t : triangles) {
    const auto& a = vertices[t[0]];
    const auto& b = vertices[t[1]];
    const auto& c = vertices[t[2]];
    const std::array<double, 3> u{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
    const std::array<double, 3> v{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
    total += 0.5 * std::hypot(u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2],
                              u[0] * v[1] - u[1] * v[0]);
  }
  return total;
}

bool TriangleMesh::watertight() const {
  std::unordered_map<std::uint64_t, int> directed;
  directed.reserve(triangles.size() * 3);
  for (const auto& t : triangles)
    for (int e = 0; e < 3; ++e) {
      const std::uint64_t a = t[e], b = t[(e + 1) % 3];
      if (++directed[a << 32 | b] != 1) return false;
    }
  for (const auto& [key, count] : directed) {
    const std::uint64_t a = key >> 32, b = key & 0xffffffffu;
    if (!directed.contains(b << 32 | a)) return false;
  }
  return true;
}

std::int64_t TriangleMesh::euler_characteristic() const {
  std::vector<bool> used(vertices.size(), false);
  std::unordered_map<std::uint64_t, int> edges;
  for (const auto& t : triangles)
    for (int e = 0; e < 3; ++e) {
      used[t[e]] = true;
      std::uint64_t a = t[e], b = t[(e + 1) % 3];
      if (a > b) std::swap(a, b);
      edges[a << 32 | b] = 1;
    }
  const auto v = std::count(used.begin(), used.end(), true);
  return static_cast<std::int64_t>(v) - static_cast<std::int64_t>(edges.size()) +
         static_cast<std::int64_t>(triangles.size());
}

namespace {

constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {3, 2}, {0, 3}, {4, 5}, {5, 6},
                                     {7, 6}, {4, 7}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
// Axis along which each edge runs (its first corner is the lower end).
constexpr int kEdgeAxis[12] = {0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2};

// Keeps vertices off grid points so no triangle collapses to zero area.
constexpr double kMinEdgeFraction = 1e-6;

}  // namespace

TriangleMesh isosurface(const DenseVolume& v, double iso) {
  if (!std::isfinite(iso)) throw DataError("iso value must be finite");
  TriangleMesh mesh;
  mesh.iso_value = iso;
  const auto [nx, ny, nz] = v.dims();
  if (nx < 2 || ny < 2 || nz < 2) return mesh;
  const auto& g = v.geometry();
  auto inside = [iso](float x) { return x > iso; };  // NaN compares false

  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;
  auto vertex_on = [&](std::uint64_t i, std::uint64_t j, std::uint64_t k, int edge) {
    const auto* ca = kCorner[kEdgeCorners[edge][0]];
    const auto* cb = kCorner[kEdgeCorners[edge][1]];
    const std::uint64_t ai = i + ca[0], aj = j + ca[1], ak = k + ca[2];
    const std::uint64_t key = v.linear(ai, aj, ak) * 3 + kEdgeAxis[edge];
    auto [it, fresh] = edge_vertex.try_emplace(key, static_cast<std::uint32_t>(mesh.vertices.size()));
    if (!fresh) return it->second;
    const double va = v.at(ai, aj, ak);
    const double vb = v.at(i + cb[0], j + cb[1], k + cb[2]);
    double t = 0.5;
    if (std::isfinite(va) && std::isfinite(vb) && va != vb) t = (iso - va) / (vb - va);
    t = std::clamp(t, kMinEdgeFraction, 1.0 - kMinEdgeFraction);
    std::array<double, 3> p{static_cast<double>(ai), static_cast<double>(aj), static_cast<double>(ak)};
    p[kEdgeAxis[edge]] += t;
    for (int a = 0; a < 3; ++a) p[a] = g.origin[a] + p[a] * g.spacing[a];
    mesh.vertices.push_back(p);
    return it->second;
  };

  for (std::uint64_t k = 0; k + 1 < nz; ++k)
    for (std::uint64_t j = 0; j + 1 < ny; ++j)
      for (std::uint64_t i = 0; i + 1 < nx; ++i) {
        int cube = 0;
        for (int c = 0; c < 8; ++c)
          if (!inside(v.at(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]))) cube |= 1 << c;
        if (cube == 0 || cube == 255) continue;
        const auto* row = detail::kTriTable[cube];
        for (int t = 0; row[t] != -1; t += 3) {
          // With bit c set for corners below iso, table order is already
          // counter-clockwise seen from the below-iso side, i.e. outside.
          const std::array<std::uint32_t, 3> tri{vertex_on(i, j, k, row[t]),
                                                 vertex_on(i, j, k, row[t + 1]),
                                                 vertex_on(i, j, k, row[t + 2])};
          mesh.triangles.push_back(tri);
        }
      }
  return mesh;
}

DenseVolume rasterize_cluster(const SparsePoints& points, const ClusterResult& r, std::int32_t id) {
  if (r.labels.size() != points.size()) throw DataError("cluster result does not match the point set");
  if (id < 0 || id >= r.n_clusters) throw DataError("unknown cluster id " + std::to_string(id));
  VoxelIndex lo{~0u, ~0u, ~0u}, hi{0, 0, 0};
  for (std::size_t p = 0; p < points.size(); ++p) {
    if (r.labels[p] != id) continue;
    const auto& v = points.points[p].index;
    lo = {std::min(lo.i, v.i), std::min(lo.j, v.j), std::min(lo.k, v.k)};
    hi = {std::max(hi.i, v.i), std::max(hi.j, v.j), std::max(hi.k, v.k)};
  }
  const Dims dims{hi.i - lo.i + 3ull, hi.j - lo.j + 3ull, hi.k - lo.k + 3ull};
  Geometry g;
  g.origin = {lo.i - 1.0, lo.j - 1.0, lo.k - 1.0};
  DenseVolume out(dims, g);
  for (std::size_t p = 0; p < points.size(); ++p) {
    if (r.labels[p] != id) continue;
    const auto& v = points.points[p].index;
    out.at(v.i - lo.i + 1, v.j - lo.j + 1, v.k - lo.k + 1) = static_cast<float>(points.points[p].intensity);
  }
  return out;
}

void write_obj(const TriangleMesh& m, std::ostream& out) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "# iso %.17g\n", m.iso_value);
  out << buf;
  for (const auto& v : m.vertices) {
    std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", v[0], v[1], v[2]);
    out << buf;
  }
  for (const auto& t : m.triangles) {
    std::snprintf(buf, sizeof buf, "f %u %u %u\n", t[0] + 1, t[1] + 1, t[2] + 1);
    out << buf;
  }
  if (!out) throw std::runtime_error("write failed");
}

std::string encode_obj(const TriangleMesh& m) {
  std::ostringstream out;
  write_obj(m, out);
  return std::move(out).str();
}

void save_obj(const TriangleMesh& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_obj(m, out);
}

TriangleMesh read_obj(std::istream& in) {
  TriangleMesh m;
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      std::array<double, 3> p{};
      if (!(ls >> p[0] >> p[1] >> p[2])) throw FormatError("bad OBJ vertex", offset);
      m.vertices.push_back(p);
    } else if (tag == "f") {
      std::array<std::uint32_t, 3> t{};
      for (auto& x : t) {
        std::uint64_t idx = 0;
        if (!(ls >> idx) || idx == 0) throw FormatError("bad OBJ face", offset);
        x = static_cast<std::uint32_t>(idx - 1);
      }
      m.triangles.push_back(t);
    } else if (tag == "#" ) {
      std::string word;
      if (ls >> word && word == "iso") ls >> m.iso_value;
    }
    offset += line.size() + 1;
  }
  for (const auto& t : m.triangles)
    for (auto x : t)
      if (x >= m.vertices.size()) throw FormatError("OBJ face index out of range", offset);
  return m;
}

}  // namespace vdx
