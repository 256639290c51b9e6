#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "vdx/features.hpp"
#include "vdx/synth.hpp"

using namespace vdx;

namespace {

ClusterResult make_result(const std::vector<std::int32_t>& labels) {
  ClusterResult r;
  r.labels = labels;
  r.flags.assign(labels.size(), PointFlag::core);
  r.densities.assign(labels.size(), 1.0);
  for (auto l : labels) r.n_clusters = std::max(r.n_clusters, l + 1);
  return r;
}

SparsePoints line(std::size_t n, double intensity = 1.0) {
  SparsePoints s;
  s.dims = {n, 1, 1};
  for (std::uint32_t i = 0; i < n; ++i) s.points.push_back({{i, 0, 0}, intensity});
  return s;
}

// Independent peel of a uniform solid with unit intensities: a point survives
// a pass iff itself plus its present stencil neighbours reach min_weight.
// Computed on a dense occupancy grid.
std::vector<std::size_t> peel_counts(const SparsePoints& s, int depth, double eps, double min_weight) {
  const auto& d = s.dims;
  std::vector<char> occ(d[0] * d[1] * d[2], 0);
  auto at = [&](std::int64_t i, std::int64_t j, std::int64_t k) -> char& {
    return occ[i + d[0] * (j + d[1] * k)];
  };
  for (const auto& p : s.points) at(p.index.i, p.index.j, p.index.k) = 1;
  std::vector<std::size_t> counts;
  const int reach = static_cast<int>(eps);
  for (int t = 0; t < depth; ++t) {
    auto next = occ;
    std::size_t n = 0;
    for (std::int64_t k = 0; k < std::int64_t(d[2]); ++k)
      for (std::int64_t j = 0; j < std::int64_t(d[1]); ++j)
        for (std::int64_t i = 0; i < std::int64_t(d[0]); ++i) {
          if (!at(i, j, k)) continue;
          int present = 0;
          for (int a = -reach; a <= reach; ++a)
            for (int b = -reach; b <= reach; ++b)
              for (int c = -reach; c <= reach; ++c) {
                if (a * a + b * b + c * c > eps * eps) continue;
                const auto x = i + a, y = j + b, z = k + c;
                if (x >= 0 && y >= 0 && z >= 0 && x < std::int64_t(d[0]) && y < std::int64_t(d[1]) &&
                    z < std::int64_t(d[2]) && at(x, y, z))
                  ++present;
              }
          const bool keep = present >= min_weight;
          next[i + d[0] * (j + d[1] * k)] = keep;
          n += keep;
        }
    occ = std::move(next);
    counts.push_back(n);
  }
  return counts;
}

// Unit-fill solids: a voxel is core when at most one of its 18 neighbours is
// missing, so every voxel away from the surface is core.
constexpr double kSolidWeight = 18.0;
ClusteringParams solid_params() { return {1.7, kSolidWeight, true}; }

}  // namespace

TEST_CASE("rank_clusters") {
  SUBCASE("sizes 5, 9, 9: ties by id") {
    std::vector<std::int32_t> labels;
    for (int c = 0; c < 3; ++c)
      for (int n = 0; n < (c == 0 ? 5 : 9); ++n) labels.push_back(c);
    const auto pts = line(labels.size());
    const auto ranked = rank_clusters(make_result(labels), pts, RankKey::size);
    REQUIRE(ranked.size() == 3);
    CHECK(ranked[0].id == 1);
    CHECK(ranked[1].id == 2);
    CHECK(ranked[2].id == 0);
    CHECK(ranked[2].size == 5);
  }
  SUBCASE("single cluster") {
    const auto pts = line(4);
    CHECK(rank_clusters(make_result({0, 0, 0, 0}), pts, RankKey::size).size() == 1);
  }
  SUBCASE("intensity keys") {
    auto pts = line(4);
    pts.points[0].intensity = 10;
    pts.points[3].intensity = 7;
    const auto r = make_result({0, 1, 1, 1});
    CHECK(rank_clusters(r, pts, RankKey::max_intensity)[0].id == 0);
    CHECK(rank_clusters(r, pts, RankKey::total_intensity)[0].id == 0);
    CHECK(rank_clusters(r, pts, RankKey::size)[0].id == 1);
    CHECK(parse_rank_key("total_intensity") == RankKey::total_intensity);
    CHECK_THROWS_AS(parse_rank_key("volume"), DataError);
  }
  SUBCASE("two-blob fixture: the larger blob ranks first") {
    const auto fx = synth_two_blobs({48, 32, 32}, 8, 5, 1.0, 0.01, 3);
    const auto pts = to_sparse(fx.volume, 0.5);
    const auto r = cluster(pts, {1.7, 3.0, true});
    REQUIRE(r.n_clusters == 2);
    const auto ranked = rank_clusters(r, pts, RankKey::size);
    CHECK(ranked[0].size == fx.truth.count(1));
    CHECK(ranked[1].size == fx.truth.count(2));
    const auto top = select(r, pts, {ranked[0].id});
    std::vector<VoxelIndex> truth;
    for (const auto& v : fx.truth.signal_voxels())
      if (fx.truth.at(v.i, v.j, v.k) == 1) truth.push_back(v);
    REQUIRE(top.size() == truth.size());
    for (std::size_t p = 0; p < truth.size(); ++p) CHECK(top.points[p].index == truth[p]);
  }
}

TEST_CASE("cluster statistics") {
  SparsePoints s;
  s.dims = {5, 5, 5};
  s.points = {{{0, 0, 0}, 1}, {{0, 0, 1}, 2}, {{2, 4, 4}, 3}, {{4, 4, 4}, 5}};
  auto r = make_result({0, 0, -1, 0});
  r.flags[1] = PointFlag::border;
  const auto st = cluster_stats(r, s);
  REQUIRE(st.size() == 1);
  CHECK(st[0].size == 3);
  CHECK(st[0].core_count == 2);
  CHECK(st[0].total_intensity == 8);
  CHECK(st[0].max_intensity == 5);
  CHECK(st[0].centroid[0] == doctest::Approx(4.0 / 3));
  CHECK(st[0].bbox_min == VoxelIndex{0, 0, 0});
  CHECK(st[0].bbox_max == VoxelIndex{4, 4, 4});
  const auto j = cluster_summary_json(r, s);
  CHECK(j["n_clusters"] == 1);
  CHECK(j["n_noise"] == 1);
  CHECK(j["clusters"][0]["size"] == 3);
}

TEST_CASE("select") {
  const auto pts = line(6);
  const auto r = make_result({0, 1, -1, 1, 2, 0});
  CHECK(select(r, pts, {}).empty());
  CHECK(select(r, pts, {0, 1, 2}).size() == 5);
  const auto one = select(r, pts, {1});
  REQUIRE(one.size() == 2);
  CHECK(one.points[0].index.i == 1);
  CHECK(one.points[1].index.i == 3);
  try {
    select(r, pts, {0, 7});
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find('7') != std::string::npos);
  }
}

TEST_CASE("shell of an all-core cluster is empty and flagged") {
  const auto s = test::block(3, 10.0);
  const auto sh = shell_extract(s, {1.7, 70.0, true}, 0, 1);
  CHECK(sh.shell.empty());
  CHECK(sh.interior.size() == 27);
  CHECK(std::isinf(sh.reduction_factor));
  const auto j = shell_stats_json(sh);
  CHECK(j["reduction_factor"].is_null());
  CHECK(j["empty_shell"] == true);
  CHECK(j["size"] == 27);
}

TEST_CASE("sphere r=20: depth-1 shell is exactly the pass-1 border") {
  const auto s = test::sphere_points(64, 20);
  const auto ref = test::reference_wdbscan(s, 1.7, kSolidWeight);
  REQUIRE(ref.n_clusters == 1);
  const auto sh = shell_extract(s, solid_params(), 0, 1);
  std::vector<VoxelIndex> border;
  for (std::size_t p = 0; p < s.size(); ++p)
    if (ref.flags[p] == PointFlag::border) border.push_back(s.points[p].index);
  REQUIRE(sh.shell.size() == border.size());
  for (std::size_t p = 0; p < border.size(); ++p) CHECK(sh.shell.points[p].index == border[p]);
  CHECK(sh.interior.size() == peel_counts(s, 1, 1.7, kSolidWeight)[0]);
}

TEST_CASE("sphere r=25: peeling agrees with occupancy counting") {
  const auto s = test::sphere_points(64, 25);
  const auto counts = peel_counts(s, 3, 1.7, kSolidWeight);
  ClusterResult pass1 = cluster(s, solid_params());
  std::size_t prev_interior = s.size();
  for (int d = 1; d <= 3; ++d) {
    const auto sh = shell_extract(s, solid_params(), 0, d, &pass1);
    CHECK(sh.interior.size() == counts[d - 1]);
    CHECK(sh.cluster_size() == s.size());
    CHECK(sh.interior.size() <= prev_interior);
    prev_interior = sh.interior.size();
    if (d == 2) CHECK(sh.reduction_factor >= 4.0);
  }
}

TEST_CASE("shell partition, monotone peeling and interior safety on random clusters") {
  std::mt19937_64 rng(11);
  for (int inst = 0; inst < 15; ++inst) {
    const auto s = test::random_sparse(rng, 18, 0.5, 0.5, 2.0);
    const ClusteringParams p{1.7, 8.0, true};
    const auto r = cluster(s, p);
    if (r.n_clusters == 0) continue;
    const auto ranked = rank_clusters(r, s, RankKey::size);
    const auto id = ranked[0].id;
    const auto members = select(r, s, {id});
    std::vector<VoxelIndex> prev;
    for (const auto& m : members.points) prev.push_back(m.index);
    for (int d = 1; d <= 4; ++d) {
      ShellResult sh;
      try {
        sh = shell_extract(s, p, id, d, &r);
      } catch (const PeelExhaustedError& e) {
        CHECK(e.last_nonempty_depth() == d - 1);
        break;
      }
      std::vector<VoxelIndex> all;
      for (const auto& x : sh.shell.points) all.push_back(x.index);
      for (const auto& x : sh.interior.points) all.push_back(x.index);
      std::sort(all.begin(), all.end());
      REQUIRE(all.size() == members.size());
      for (std::size_t q = 0; q < all.size(); ++q) CHECK(all[q] == members.points[q].index);
      std::vector<VoxelIndex> now;
      for (const auto& x : sh.interior.points) now.push_back(x.index);
      CHECK(std::includes(prev.begin(), prev.end(), now.begin(), now.end()));
      if (d == 1)
        for (const auto& x : sh.interior.points) {
          const auto pos = std::lower_bound(s.points.begin(), s.points.end(), x,
                                            [](const SparsePoint& a, const SparsePoint& b) {
                                              return a.index < b.index;
                                            }) -
                           s.points.begin();
          CHECK(r.flags[pos] == PointFlag::core);
        }
      prev = std::move(now);
    }
  }
}

TEST_CASE("peeling a thin cluster to exhaustion reports the last depth") {
  const auto s = test::block(3, 1.0);
  // Only the centre is core at weight 19; the second pass removes it.
  try {
    shell_extract(s, {1.7, 19.0, true}, 0, 2);
    FAIL("expected exhaustion");
  } catch (const PeelExhaustedError& e) {
    CHECK(e.last_nonempty_depth() == 1);
  }
  CHECK_THROWS_AS(shell_extract(s, {1.7, 19.0, true}, 5, 1), DataError);
  CHECK_THROWS_AS(shell_extract(s, {1.7, 19.0, true}, 0, 0), DataError);
}

TEST_CASE("depth-1 shell of a solid sphere scales with surface area") {
  double lo = 1e300, hi = 0;
  for (double r : {10.0, 15.0, 20.0, 25.0}) {
    const auto s = test::sphere_points(64, r);
    const auto sh = shell_extract(s, solid_params(), 0, 1);
    const double ratio = static_cast<double>(sh.shell.size()) / (r * r);
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
  }
  CHECK(hi / lo <= 2.0);
}
