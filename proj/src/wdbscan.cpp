#include "vdx/wdbscan.hpp"

#include <bit>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <thread>

#include "byte_io.hpp"
#include "parallel.hpp"

namespace vdx {

NeighborStencil::NeighborStencil(double eps) : eps_(eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw DataError("eps must be positive and finite");
  const double eps2 = eps * eps;
  const auto reach = static_cast<std::int32_t>(std::floor(eps));
  // Loop order (dx, dy, dz) ascending yields lexicographic order directly.
  for (std::int32_t dx = -reach; dx <= reach; ++dx)
    for (std::int32_t dy = -reach; dy <= reach; ++dy)
      for (std::int32_t dz = -reach; dz <= reach; ++dz) {
        if (dx == 0 && dy == 0 && dz == 0) continue;
        if (static_cast<double>(dx * dx + dy * dy + dz * dz) <= eps2) offsets_.push_back({dx, dy, dz});
      }
}

std::vector<Offset> NeighborStencil::forward_half() const {
  std::vector<Offset> out;
  for (const auto& o : offsets_)
    if (o > Offset{0, 0, 0}) out.push_back(o);
  return out;
}

void ClusteringParams::validate() const {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw DataError("eps must be positive and finite");
  if (!(min_weight > 0.0) || !std::isfinite(min_weight))
    throw DataError("min_weight must be positive and finite");
}

unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("VDX_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// --- index --------------------------------------------------------------------

namespace {

constexpr std::uint64_t kEmpty = ~std::uint64_t{0};

std::uint64_t mix(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

}  // namespace

VoxelIndexMap::VoxelIndexMap(const SparsePoints& points) : dims_(points.dims) {
  if (points.size() > std::numeric_limits<std::uint32_t>::max())
    throw DataError("sparse set too large for 32-bit point positions");
  const std::uint64_t capacity = std::bit_ceil(std::max<std::uint64_t>(16, 2 * points.size()));
  mask_ = capacity - 1;
  keys_.assign(capacity, kEmpty);
  values_.assign(capacity, 0);
  for (std::size_t p = 0; p < points.size(); ++p) {
    const auto& v = points.points[p].index;
    const auto k = key(v.i, v.j, v.k);
    auto slot = mix(k) & mask_;
    while (keys_[slot] != kEmpty) slot = (slot + 1) & mask_;
    keys_[slot] = k;
    values_[slot] = static_cast<std::uint32_t>(p);
  }
}

std::int64_t VoxelIndexMap::find(std::int64_t i, std::int64_t j, std::int64_t k) const noexcept {
  if (i < 0 || j < 0 || k < 0 || static_cast<std::uint64_t>(i) >= dims_[0] ||
      static_cast<std::uint64_t>(j) >= dims_[1] || static_cast<std::uint64_t>(k) >= dims_[2])
    return -1;
  const auto kk = key(i, j, k);
  auto slot = mix(kk) & mask_;
  while (true) {
    const auto stored = keys_[slot];
    if (stored == kk) return values_[slot];
    if (stored == kEmpty) return -1;
    slot = (slot + 1) & mask_;
  }
}

// --- clustering -----------------------------------------------------------------

namespace {

template <typename Fn>
void for_each_neighbor(const SparsePoints& points, const VoxelIndexMap& index,
                       const std::vector<Offset>& offsets, std::size_t p, Fn&& fn) {
  const auto& v = points.points[p].index;
  for (const auto& o : offsets) {
    const auto q = index.find(static_cast<std::int64_t>(v.i) + o.dx,
                              static_cast<std::int64_t>(v.j) + o.dy,
                              static_cast<std::int64_t>(v.k) + o.dz);
    if (q >= 0 && fn(static_cast<std::size_t>(q))) return;
  }
}

// Union-find whose roots are always the smallest member position.
class MinRootForest {
 public:
  explicit MinRootForest(std::size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), std::uint32_t{0});
  }
  std::uint32_t find(std::uint32_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) parent_[b] = a;
    else parent_[a] = b;
  }

 private:
  std::vector<std::uint32_t> parent_;
};

}  // namespace

double weighted_density(std::size_t p, const SparsePoints& points, const NeighborStencil& s,
                        const VoxelIndexMap& index) {
  double d = points.points.at(p).intensity;
  for_each_neighbor(points, index, s.offsets(), p, [&](std::size_t q) {
    d += points.points[q].intensity;
    return false;
  });
  return d;
}

double weighted_density(std::size_t p, const SparsePoints& points, const NeighborStencil& s) {
  return weighted_density(p, points, s, VoxelIndexMap(points));
}

ClusterResult cluster(const SparsePoints& points, const ClusteringParams& params,
                      const ExecutionOptions& exec) {
  params.validate();
  const std::size_t n = points.size();
  ClusterResult r;
  r.labels.assign(n, ClusterResult::kNoise);
  r.flags.assign(n, PointFlag::noise);
  r.densities.assign(n, 0.0);
  if (n == 0) return r;

  const NeighborStencil st(params.eps);
  const VoxelIndexMap index(points);
  const unsigned threads = resolve_threads(exec.threads);

  // Densities and core flags. Each point's sum runs in stencil order, so the
  // floating-point result does not depend on chunking.
  detail::parallel_chunks(n, threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t p = b; p < e; ++p) {
      r.densities[p] = weighted_density(p, points, st, index);
      if (r.densities[p] >= params.min_weight) r.flags[p] = PointFlag::core;
    }
  });

  // Core components. The partition is order-independent; min-index roots
  // make the first core point of every component its root.
  MinRootForest forest(n);
  const auto forward = st.forward_half();
  for (std::size_t p = 0; p < n; ++p) {
    if (r.flags[p] != PointFlag::core) continue;
    for_each_neighbor(points, index, forward, p, [&](std::size_t q) {
      if (r.flags[q] == PointFlag::core)
        forest.unite(static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(q));
      return false;
    });
  }
  for (std::size_t p = 0; p < n; ++p) {
    if (r.flags[p] != PointFlag::core) continue;
    const auto root = forest.find(static_cast<std::uint32_t>(p));
    r.labels[p] = root == p ? r.n_clusters++ : r.labels[root];
  }

  if (params.include_border) {
    // Stencil offsets are sorted, so the first core neighbour found is the
    // lexicographically smallest one.
    const auto& offsets = st.offsets();
    detail::parallel_chunks(n, threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t p = b; p < e; ++p) {
        if (r.flags[p] == PointFlag::core) continue;
        for_each_neighbor(points, index, offsets, p, [&](std::size_t q) {
          if (r.flags[q] != PointFlag::core) return false;
          r.labels[p] = r.labels[q];
          r.flags[p] = PointFlag::border;
          return true;
        });
      }
    });
  }
  return r;
}

ClusterResult brute_force_cluster(const SparsePoints& points, const ClusteringParams& params) {
  params.validate();
  const std::size_t n = points.size();
  if (n > kBruteForceLimit)
    throw DataError("brute-force clustering refuses " + std::to_string(n) + " points (limit " +
                    std::to_string(kBruteForceLimit) + ")");
  const double eps2 = params.eps * params.eps;
  auto near = [&](std::size_t a, std::size_t b) {
    const auto& u = points.points[a].index;
    const auto& v = points.points[b].index;
    const std::int64_t dx = static_cast<std::int64_t>(u.i) - v.i;
    const std::int64_t dy = static_cast<std::int64_t>(u.j) - v.j;
    const std::int64_t dz = static_cast<std::int64_t>(u.k) - v.k;
    return static_cast<double>(dx * dx + dy * dy + dz * dz) <= eps2;
  };

  ClusterResult r;
  r.labels.assign(n, ClusterResult::kNoise);
  r.flags.assign(n, PointFlag::noise);
  r.densities.assign(n, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    double d = points.points[p].intensity;
    for (std::size_t q = 0; q < n; ++q)
      if (q != p && near(p, q)) d += points.points[q].intensity;
    r.densities[p] = d;
    if (d >= params.min_weight) r.flags[p] = PointFlag::core;
  }

  std::vector<std::size_t> queue;
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (r.flags[seed] != PointFlag::core || r.labels[seed] != ClusterResult::kNoise) continue;
    const auto id = r.n_clusters++;
    r.labels[seed] = id;
    queue.assign(1, seed);
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const auto p = queue[head];
      for (std::size_t q = 0; q < n; ++q) {
        if (r.flags[q] == PointFlag::core && r.labels[q] == ClusterResult::kNoise && near(p, q)) {
          r.labels[q] = id;
          queue.push_back(q);
        }
      }
    }
  }

  if (params.include_border) {
    for (std::size_t p = 0; p < n; ++p) {
      if (r.flags[p] == PointFlag::core) continue;
      for (std::size_t q = 0; q < n; ++q) {
        if (q != p && r.flags[q] == PointFlag::core && near(p, q)) {
          r.labels[p] = r.labels[q];
          r.flags[p] = PointFlag::border;
          break;
        }
      }
    }
  }
  return r;
}

ClusterResult canonical_relabel(ClusterResult r) {
  std::vector<std::int32_t> remap;
  auto lookup = [&](std::int32_t old) -> std::int32_t& {
    if (static_cast<std::size_t>(old) >= remap.size()) remap.resize(old + 1, ClusterResult::kNoise);
    return remap[old];
  };
  std::int32_t next = 0;
  for (std::size_t p = 0; p < r.labels.size(); ++p)
    if (r.flags[p] == PointFlag::core && lookup(r.labels[p]) == ClusterResult::kNoise)
      lookup(r.labels[p]) = next++;
  for (auto& l : r.labels)
    if (l != ClusterResult::kNoise) l = lookup(l);
  r.n_clusters = next;
  return r;
}

// --- label files -----------------------------------------------------------------

void write_labels(const ClusterResult& r, std::ostream& out) {
  detail::ByteWriter w(out);
  w.array(std::span<const std::int32_t>(r.labels));
  if (!out) throw std::runtime_error("write failed");
}

void save_labels(const ClusterResult& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_labels(r, out);
}

std::vector<std::int32_t> read_labels(std::istream& in) {
  detail::ByteReader rd(in);
  const auto rem = rd.remaining();
  std::vector<std::int32_t> out;
  if (rem) {
    if (*rem % 4 != 0) throw FormatError("label file length is not a multiple of 4", *rem);
    out.resize(*rem / 4);
    rd.array(std::span<std::int32_t>(out), "labels");
  } else {
    char buf[4];
    while (in.read(buf, 4)) {
      std::int32_t v;
      std::memcpy(&v, buf, 4);
      out.push_back(detail::to_little(v));
    }
  }
  return out;
}

std::vector<std::int32_t> load_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_labels(in);
}

void save_flags(const ClusterResult& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(r.flags.data()), static_cast<std::streamsize>(r.flags.size()));
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

std::vector<PointFlag> load_flags(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<PointFlag> out;
  char c;
  std::uint64_t offset = 0;
  while (in.get(c)) {
    if (static_cast<unsigned char>(c) > 2) throw FormatError("bad point flag", offset);
    out.push_back(static_cast<PointFlag>(c));
    ++offset;
  }
  return out;
}

}  // namespace vdx
