#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "vdx/synth.hpp"
#include "vdx/volume.hpp"

using namespace vdx;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "vdx_test_volume";
  fs::create_directories(dir);
  return dir / name;
}

DenseVolume random_volume(std::uint64_t seed, Dims d) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1e3f, 1e6f);
  std::vector<float> vals(d[0] * d[1] * d[2]);
  for (auto& x : vals) x = (rng() % 17 == 0) ? std::numeric_limits<float>::quiet_NaN() : u(rng);
  Geometry g{{double(rng() % 100) - 50.5, 0.25, -3.0}, {0.02, 1.0 + double(rng() % 7), 0.5}};
  return DenseVolume(d, std::move(vals), g, {"H", "K", "L"});
}

}  // namespace

TEST_CASE("VVOL round trip preserves every bit") {
  const auto path = temp_path("rt.vvol");
  SUBCASE("2x2x2 zeros has the documented file size") {
    DenseVolume v({2, 2, 2});
    save_volume(v, path);
    CHECK(fs::file_size(path) == kVvolHeaderSize + 8 * 4);
    CHECK(load_volume(path).bit_equal(v));
  }
  SUBCASE("NaN positions survive") {
    DenseVolume v({3, 2, 2});
    v.at(1, 0, 1) = std::numeric_limits<float>::quiet_NaN();
    v.at(2, 1, 0) = 4.5f;
    save_volume(v, path);
    const auto back = load_volume(path);
    CHECK(back.bit_equal(v));
    CHECK(std::isnan(back.at(1, 0, 1)));
    CHECK(back.at(2, 1, 0) == 4.5f);
  }
  SUBCASE("axis labels and geometry") {
    DenseVolume v({1, 1, 2}, Geometry{{-1, 2, 3}, {0.1, 0.2, 0.3}}, {"H", "K", "L"});
    save_volume(v, path);
    const auto back = load_volume(path);
    CHECK(back.axis_labels()[1] == "K");
    CHECK(back.geometry() == v.geometry());
  }
}

TEST_CASE("VVOL randomized round trip over 100 seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto v = random_volume(seed, {32, 32, 32});
    std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
    write_volume(v, buf);
    buf.seekg(0);
    REQUIRE(read_volume(buf).bit_equal(v));
  }
}

TEST_CASE("VVOL rejects malformed files") {
  SUBCASE("bad magic") {
    std::stringstream buf;
    write_volume(DenseVolume({2, 2, 2}), buf);
    auto bytes = buf.str();
    std::memcpy(bytes.data(), "XXXX", 4);
    std::stringstream bad(bytes);
    try {
      read_volume(bad);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 0);
      CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }
  }
  SUBCASE("701^3 header with a 10-byte payload") {
    std::stringstream buf;
    write_volume(DenseVolume({1, 1, 1}), buf);
    auto bytes = buf.str().substr(0, kVvolHeaderSize);
    for (int a = 0; a < 3; ++a) {
      const std::uint64_t d = 701;
      std::memcpy(bytes.data() + 8 + 8 * a, &d, 8);
    }
    bytes += std::string(10, '\0');
    std::stringstream bad(bytes);
    try {
      read_volume(bad);
      FAIL("expected a truncation error");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("truncated") != std::string::npos);
      CHECK(e.offset() == kVvolHeaderSize + 10);
    }
  }
  SUBCASE("extents whose product overflows") {
    std::stringstream buf;
    write_volume(DenseVolume({1, 1, 1}), buf);
    auto bytes = buf.str();
    const std::uint64_t huge = std::uint64_t{1} << 40;
    for (int a = 0; a < 3; ++a) std::memcpy(bytes.data() + 8 + 8 * a, &huge, 8);
    std::stringstream bad(bytes);
    CHECK_THROWS_AS(read_volume(bad), FormatError);
  }
  SUBCASE("truncated header") {
    std::stringstream bad(std::string("VVOL\x01\0\0\0", 8));
    CHECK_THROWS_AS(read_volume(bad), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS(load_volume(temp_path("does-not-exist.vvol"))); }
}

TEST_CASE("DenseVolume invariants") {
  CHECK_THROWS_AS(DenseVolume({2, 2, 2}, std::vector<float>(7)), DataError);
  CHECK_THROWS_AS(DenseVolume({1, 1, 1}, std::vector<float>{1.0f}, Geometry{{0, 0, 0}, {1, 0, 1}}),
                  DataError);
  CHECK_THROWS_AS(DenseVolume({1, 1, 1}, std::vector<float>{std::numeric_limits<float>::infinity()}),
                  DataError);
}

TEST_CASE("to_sparse") {
  SUBCASE("all-NaN volume is empty") {
    DenseVolume v({3, 3, 3}, std::vector<float>(27, std::numeric_limits<float>::quiet_NaN()));
    CHECK(to_sparse(v, 0.0).empty());
  }
  SUBCASE("single bright voxel") {
    DenseVolume v({3, 3, 3});
    v.at(1, 2, 0) = 5.0f;
    const auto s = to_sparse(v, 1.0);
    REQUIRE(s.size() == 1);
    CHECK(s.points[0].index == VoxelIndex{1, 2, 0});
    CHECK(s.points[0].intensity == 5.0);
  }
  SUBCASE("negative values are never kept") {
    DenseVolume v({2, 1, 1}, std::vector<float>{-3.0f, 2.0f});
    CHECK(to_sparse(v, -10.0).size() == 1);
  }
  SUBCASE("10^4 noise voxels below 1e-3 and 10^3 signal voxels above 1e-2") {
    std::mt19937_64 rng(7);
    DenseVolume v({40, 40, 40}, std::vector<float>(64000, std::numeric_limits<float>::quiet_NaN()));
    std::vector<std::size_t> sites(64000);
    for (std::size_t s = 0; s < sites.size(); ++s) sites[s] = s;
    std::shuffle(sites.begin(), sites.end(), rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::set<std::size_t> signal;
    for (std::size_t s = 0; s < 10000; ++s)
      v.mutable_values()[sites[s]] = static_cast<float>(1e-3 * (1.0 - u(rng)));
    for (std::size_t s = 10000; s < 11000; ++s) {
      v.mutable_values()[sites[s]] = static_cast<float>(1e-2 * (1.0 + 100.0 * u(rng)) + 1e-3);
      signal.insert(sites[s]);
    }
    const auto sp = to_sparse(v, 1e-3);
    REQUIRE(sp.size() == 1000);
    for (const auto& p : sp.points) CHECK(signal.count(v.linear(p.index.i, p.index.j, p.index.k)) == 1);
    CHECK(sp.is_canonical());
  }
}

TEST_CASE("to_sparse is monotone in the cutoff and sorted") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto v = random_volume(seed, {9, 7, 5});
    std::mt19937_64 rng(seed);
    const double a = std::uniform_real_distribution<double>(0, 1e6)(rng);
    const double b = std::uniform_real_distribution<double>(-10, a)(rng);
    const auto high = to_sparse(v, a);
    const auto low = to_sparse(v, b);
    CHECK(high.is_canonical());
    CHECK(low.is_canonical());
    CHECK(std::includes(low.points.begin(), low.points.end(), high.points.begin(), high.points.end(),
                        [](const SparsePoint& x, const SparsePoint& y) { return x.index < y.index; }));
    // Brute-force count.
    std::size_t expect = 0;
    for (float x : v.values())
      if (x > a && x > 0) ++expect;
    CHECK(high.size() == expect);
  }
}

TEST_CASE("to_sparse recovers generator ground truth between noise ceiling and signal floor") {
  SolidSpec spec;
  spec.dims = {32, 32, 32};
  spec.radius = 9;
  spec.noise = 0.2;
  spec.fill = 1.0;
  const auto res = synth_solid(spec, 11);
  const auto sp = to_sparse(res.volume, 0.5);
  const auto truth = res.truth.signal_voxels();
  REQUIRE(sp.size() == truth.size());
  for (std::size_t p = 0; p < sp.size(); ++p) CHECK(sp.points[p].index == truth[p]);
}

TEST_CASE("slice") {
  DenseVolume v({2, 2, 2}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8});
  SUBCASE("thickness 1 on axis 2 is the plane verbatim") {
    const auto p = slice(v, 2, 1, 1);
    REQUIRE(p.width == 2);
    REQUIRE(p.height == 2);
    CHECK(p.at(0, 0) == 5);
    CHECK(p.at(1, 0) == 6);
    CHECK(p.at(0, 1) == 7);
    CHECK(p.at(1, 1) == 8);
  }
  SUBCASE("two planes of 1 and 3 average to 2") {
    DenseVolume w({2, 2, 2}, std::vector<float>{1, 1, 1, 1, 3, 3, 3, 3});
    const auto p = slice(w, 2, 0, 2);
    for (double x : p.values) CHECK(x == 2.0);
  }
  SUBCASE("NaN is skipped; an all-NaN column gives NaN") {
    const float nan = std::numeric_limits<float>::quiet_NaN();
    DenseVolume w({1, 2, 2}, std::vector<float>{nan, nan, 4, nan});
    const auto p = slice(w, 2, 0, 2);
    CHECK(p.at(0, 0) == 4.0);
    CHECK(std::isnan(p.at(1, 0)));
  }
  SUBCASE("axis 0 and 1 orientation") {
    const auto p0 = slice(v, 0, 1, 1);  // (j, k) plane at i = 1
    CHECK(p0.at(1, 0) == v.at(1, 1, 0));
    CHECK(p0.at(0, 1) == v.at(1, 0, 1));
    const auto p1 = slice(v, 1, 0, 1);  // (i, k) plane at j = 0
    CHECK(p1.at(1, 1) == v.at(1, 0, 1));
  }
  SUBCASE("thickness 1 without NaN equals raw plane extraction") {
    const auto r = random_volume(3, {5, 4, 3});
    for (std::uint64_t k = 0; k < 3; ++k) {
      const auto p = slice(r, 2, k, 1);
      for (std::uint64_t j = 0; j < 4; ++j)
        for (std::uint64_t i = 0; i < 5; ++i) {
          const float x = r.at(i, j, k);
          if (std::isnan(x)) CHECK(std::isnan(p.at(i, j)));
          else CHECK(p.at(i, j) == static_cast<double>(x));
        }
    }
  }
  SUBCASE("out of range") {
    CHECK_THROWS_AS(slice(v, 2, 1, 2), DataError);
    CHECK_THROWS_AS(slice(v, 3, 0, 1), DataError);
    CHECK_THROWS_AS(slice(v, 0, 0, 0), DataError);
  }
}

TEST_CASE("sparse JSON lines") {
  SparsePoints s;
  s.dims = {4, 5, 6};
  s.points = {{{0, 1, 2}, 0.1}, {{3, 4, 5}, 1e-300}, {{3, 4, 1}, 12345.678901234567}};
  s.canonicalize();
  std::stringstream buf;
  write_sparse_jsonl(s, buf);
  CHECK(read_sparse_jsonl(buf) == s);

  SUBCASE("records without a dims line infer extents") {
    std::stringstream in(R"({"i":1,"j":0,"k":2,"v":3.5})"
                         "\n"
                         R"({"i":0,"j":0,"k":0,"v":1})");
    const auto t = read_sparse_jsonl(in);
    CHECK(t.dims == Dims{2, 1, 3});
    CHECK(t.points.front().index == VoxelIndex{0, 0, 0});
  }
  SUBCASE("duplicates and bad records are format errors") {
    std::stringstream dup(R"({"i":0,"j":0,"k":0,"v":1})"
                          "\n"
                          R"({"i":0,"j":0,"k":0,"v":2})");
    CHECK_THROWS_AS(read_sparse_jsonl(dup), FormatError);
    std::stringstream junk("{\"i\":0}\n");
    CHECK_THROWS_AS(read_sparse_jsonl(junk), FormatError);
  }
}

TEST_CASE("synth_diffuse") {
  SUBCASE("no features is pure noise") {
    DiffuseSpec spec;
    spec.dims = {16, 16, 16};
    const auto r = synth_diffuse(spec, 1);
    CHECK(r.truth.count(0) == 16 * 16 * 16);
    for (float x : r.volume.values()) {
      CHECK(x > 0.0f);
      CHECK(x <= 1e-3f);
    }
  }
  SUBCASE("one Bragg peak at the center: mask is the truncated ball") {
    DiffuseSpec spec;
    spec.dims = {64, 64, 64};
    spec.features = {GaussianFeature{{32, 32, 32}, {1, 1, 1}, 1e4, 3.0}};
    const auto r = synth_diffuse(spec, 2);
    CHECK(r.truth.count(1) == test::ball_count(spec.dims, {32, 32, 32}, 3.0));
    CHECK(r.truth.at(32, 32, 32) == 1);
    CHECK(r.truth.at(35, 32, 32) == 1);
    CHECK(r.truth.at(35, 33, 32) == 0);
    CHECK(r.volume.at(32, 32, 32) > 1e4f);
  }
  SUBCASE("same seed, same volume; different seed differs") {
    DiffuseSpec spec;
    spec.dims = {24, 24, 24};
    spec.n_bragg = 2;
    spec.n_diffuse = 1;
    spec.diffuse_sigma[0] = 2;
    spec.diffuse_sigma[1] = 3;
    const auto a = synth_diffuse(spec, 5), b = synth_diffuse(spec, 5), c = synth_diffuse(spec, 6);
    CHECK(a.volume.bit_equal(b.volume));
    CHECK(a.truth.labels == b.truth.labels);
    CHECK_FALSE(a.volume.bit_equal(c.volume));
  }
  SUBCASE("min_gap separates supports") {
    DiffuseSpec spec;
    spec.dims = {96, 96, 96};
    spec.n_bragg = 4;
    spec.n_diffuse = 3;
    spec.diffuse_sigma[0] = 3;
    spec.diffuse_sigma[1] = 4;
    spec.min_gap = 10;
    const auto r = synth_diffuse(spec, 9);
    for (std::size_t a = 0; a < r.features.size(); ++a)
      for (std::size_t b = a + 1; b < r.features.size(); ++b) {
        const auto& f = r.features[a];
        const auto& g = r.features[b];
        const double ra = f.truncation * *std::max_element(f.sigma.begin(), f.sigma.end());
        const double rb = g.truncation * *std::max_element(g.sigma.begin(), g.sigma.end());
        CHECK(std::hypot(f.center[0] - g.center[0], f.center[1] - g.center[1],
                         f.center[2] - g.center[2]) - ra - rb >= 10.0);
      }
  }
}

TEST_CASE("synth_solid") {
  SUBCASE("radius 0 is empty") {
    SolidSpec spec;
    spec.radius = 0;
    CHECK(synth_solid(spec, 0).truth.count(1) == 0);
  }
  SUBCASE("sphere r=20 in 64^3 matches direct enumeration") {
    SolidSpec spec;
    spec.radius = 20;
    const auto r = synth_solid(spec, 0);
    CHECK(r.truth.count(1) == test::ball_count(spec.dims, {31.5, 31.5, 31.5}, 20.0));
    for (std::size_t n = 0; n < r.volume.size(); ++n)
      CHECK(r.volume.values()[n] == (r.truth.labels[n] ? 1.0f : 0.0f));
  }
  SUBCASE("noise fills the background strictly below fill") {
    SolidSpec spec;
    spec.dims = {24, 24, 24};
    spec.radius = 6;
    spec.noise = 0.1;
    const auto r = synth_solid(spec, 3);
    for (std::size_t n = 0; n < r.volume.size(); ++n) {
      if (r.truth.labels[n]) continue;
      CHECK(r.volume.values()[n] > 0.0f);
      CHECK(r.volume.values()[n] <= 0.1f);
    }
  }
  SUBCASE("filaments are background-labelled") {
    SolidSpec spec;
    spec.dims = {32, 32, 32};
    spec.shape = SolidShape::turbine;
    spec.noise = 0.01;
    spec.n_filaments = 5;
    spec.filament_level = 0.3;
    const auto r = synth_solid(spec, 4);
    std::size_t filament = 0;
    for (std::size_t n = 0; n < r.volume.size(); ++n)
      if (r.volume.values()[n] == 0.3f) {
        ++filament;
        CHECK(r.truth.labels[n] == 0);
      }
    CHECK(filament > 0);
    CHECK(r.truth.count(1) > 0);
  }
  SUBCASE("cuboid default half extents") {
    SolidSpec spec;
    spec.shape = SolidShape::cuboid;
    spec.dims = {8, 8, 8};
    // center 3.5, half 2: indices 2..5 on each axis
    CHECK(synth_solid(spec, 0).truth.count(1) == 4 * 4 * 4);
  }
  SUBCASE("noise at or above fill is rejected") {
    SolidSpec spec;
    spec.noise = 1.0;
    CHECK_THROWS_AS(synth_solid(spec, 0), DataError);
  }
}
