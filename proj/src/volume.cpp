#include "vdx/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "byte_io.hpp"

namespace vdx {

namespace {

std::uint64_t checked_count(const Dims& d) {
  std::uint64_t n = 1;
  for (auto e : d) {
    if (e != 0 && n > std::numeric_limits<std::uint64_t>::max() / e)
      throw DataError("volume extents overflow");
    n *= e;
  }
  return n;
}

std::string pad_label(const std::string& s) {
  std::string out = s.substr(0, 8);
  out.resize(8, ' ');
  return out;
}

std::string trim_label(const char* raw) {
  std::string s(raw, 8);
  auto end = s.find_last_not_of(' ');
  return end == std::string::npos ? std::string{} : s.substr(0, end + 1);
}

void validate(const DenseVolume& v) {
  for (double s : v.geometry().spacing)
    if (!(s > 0.0) || !std::isfinite(s)) throw DataError("spacing components must be positive and finite");
  for (double o : v.geometry().origin)
    if (!std::isfinite(o)) throw DataError("origin components must be finite");
  for (float x : v.values())
    if (std::isinf(x)) throw DataError("volume values must not be infinite");
}

}  // namespace

DenseVolume::DenseVolume(Dims dims, std::vector<float> values, Geometry geometry,
                         std::array<std::string, 3> axis_labels)
    : dims_(dims), geometry_(geometry), labels_(std::move(axis_labels)), values_(std::move(values)) {
  if (values_.size() != checked_count(dims_))
    throw DataError("value count " + std::to_string(values_.size()) +
                    " does not match extents " + std::to_string(dims_[0]) + "x" +
                    std::to_string(dims_[1]) + "x" + std::to_string(dims_[2]));
  validate(*this);
}

DenseVolume::DenseVolume(Dims dims, Geometry geometry, std::array<std::string, 3> axis_labels)
    : DenseVolume(dims, std::vector<float>(checked_count(dims), 0.0f), geometry,
                  std::move(axis_labels)) {}

bool DenseVolume::bit_equal(const DenseVolume& other) const noexcept {
  if (dims_ != other.dims_ || labels_ != other.labels_) return false;
  for (int a = 0; a < 3; ++a) {
    if (std::bit_cast<std::uint64_t>(geometry_.origin[a]) !=
            std::bit_cast<std::uint64_t>(other.geometry_.origin[a]) ||
        std::bit_cast<std::uint64_t>(geometry_.spacing[a]) !=
            std::bit_cast<std::uint64_t>(other.geometry_.spacing[a]))
      return false;
  }
  return values_.size() == other.values_.size() &&
         std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(float)) == 0;
}

void SparsePoints::canonicalize() {
  std::sort(points.begin(), points.end(),
            [](const SparsePoint& a, const SparsePoint& b) { return a.index < b.index; });
  for (std::size_t p = 0; p < points.size(); ++p) {
    const auto& pt = points[p];
    if (!(pt.intensity > 0.0) || !std::isfinite(pt.intensity))
      throw DataError("sparse point intensities must be positive and finite");
    if (p > 0 && points[p - 1].index == pt.index)
      throw DataError("duplicate voxel index in sparse set");
    if (pt.index.i >= dims[0] || pt.index.j >= dims[1] || pt.index.k >= dims[2])
      throw DataError("sparse point outside declared extents");
  }
}

bool SparsePoints::is_canonical() const {
  for (std::size_t p = 0; p < points.size(); ++p) {
    if (!(points[p].intensity > 0.0)) return false;
    if (p > 0 && !(points[p - 1].index < points[p].index)) return false;
  }
  return true;
}

// --- VVOL -------------------------------------------------------------------

void write_volume(const DenseVolume& v, std::ostream& out) {
  detail::ByteWriter w(out);
  w.bytes(kVvolMagic, 4);
  w.u32(kVvolVersion);
  for (auto d : v.dims()) w.u64(d);
  for (double o : v.geometry().origin) w.f64(o);
  for (double s : v.geometry().spacing) w.f64(s);
  for (const auto& l : v.axis_labels()) w.bytes(pad_label(l).data(), 8);
  w.f32_array(v.values());
  if (!out) throw std::runtime_error("write failed");
}

DenseVolume read_volume(std::istream& in) {
  detail::ByteReader r(in);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kVvolMagic, 4) != 0) throw FormatError("bad VVOL magic", 0);
  const auto version = r.u32("version");
  if (version != kVvolVersion)
    throw FormatError("unsupported VVOL version " + std::to_string(version), 4);
  Dims dims{};
  for (auto& d : dims) d = r.u64("extents");
  Geometry g;
  for (auto& o : g.origin) o = r.f64("origin");
  for (auto& s : g.spacing) s = r.f64("spacing");
  std::array<std::string, 3> labels;
  for (auto& l : labels) {
    char raw[8];
    r.bytes(raw, 8, "axis label");
    l = trim_label(raw);
  }
  std::uint64_t count = 0;
  try {
    count = checked_count(dims);
  } catch (const DataError&) {
    throw FormatError("VVOL extents overflow", 8);
  }
  if (count > std::numeric_limits<std::uint64_t>::max() / 4)
    throw FormatError("VVOL extents overflow", 8);
  // Check the payload length before allocating so a bogus header cannot
  // trigger a huge allocation.
  const auto remaining = r.remaining();
  if (remaining && *remaining < count * 4)
    throw FormatError("truncated VVOL payload: expected " + std::to_string(count * 4) +
                          " bytes, found " + std::to_string(*remaining),
                      kVvolHeaderSize + *remaining);
  std::vector<float> values(count);
  r.f32_array(values, "payload");
  try {
    return DenseVolume(dims, std::move(values), g, std::move(labels));
  } catch (const DataError& e) {
    throw FormatError(std::string("invalid VVOL content: ") + e.what(), kVvolHeaderSize);
  }
}

void save_volume(const DenseVolume& v, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  try {
    write_volume(v, out);
    out.flush();
    if (!out) throw std::runtime_error("write failed");
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

DenseVolume load_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_volume(in);
}

// --- sparse -----------------------------------------------------------------

SparsePoints to_sparse(const DenseVolume& v, double cutoff) {
  if (!std::isfinite(cutoff)) throw DataError("cutoff must be finite");
  SparsePoints out;
  out.dims = v.dims();
  const auto [nx, ny, nz] = v.dims();
  const auto& vals = v.values();
  // Count per i-plane first so points can be written directly in (i, j, k)
  // order without a global sort.
  std::vector<std::size_t> per_i(nx + 1, 0);
  for (std::size_t idx = 0; idx < vals.size(); ++idx) {
    const float x = vals[idx];
    if (x > cutoff && x > 0.0f) ++per_i[idx % nx + 1];
  }
  for (std::size_t i = 0; i < nx; ++i) per_i[i + 1] += per_i[i];
  out.points.resize(per_i[nx]);
  // Storage order visits each i-plane with j fastest; each plane's run is
  // re-sorted afterwards to get k fastest.
  std::vector<std::size_t> cursor(per_i.begin(), per_i.end() - 1);
  std::size_t idx = 0;
  for (std::uint64_t k = 0; k < nz; ++k)
    for (std::uint64_t j = 0; j < ny; ++j)
      for (std::uint64_t i = 0; i < nx; ++i, ++idx) {
        const float x = vals[idx];
        if (x > cutoff && x > 0.0f)
          out.points[cursor[i]++] = {{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
                                      static_cast<std::uint32_t>(k)},
                                     static_cast<double>(x)};
      }
  for (std::size_t i = 0; i < nx; ++i)
    std::sort(out.points.begin() + per_i[i], out.points.begin() + per_i[i + 1],
              [](const SparsePoint& a, const SparsePoint& b) { return a.index < b.index; });
  return out;
}

Plane2D slice(const DenseVolume& v, int axis, std::uint64_t index, std::uint64_t thickness) {
  if (axis < 0 || axis > 2) throw DataError("slice axis must be 0, 1 or 2");
  if (thickness == 0) throw DataError("slice thickness must be positive");
  const auto& d = v.dims();
  if (index >= d[axis] || thickness > d[axis] - index)
    throw DataError("slice range [" + std::to_string(index) + ", " +
                    std::to_string(index + thickness) + ") out of bounds for axis " +
                    std::to_string(axis) + " of extent " + std::to_string(d[axis]));
  const int ua = axis == 0 ? 1 : 0;
  const int va = axis == 2 ? 1 : 2;
  Plane2D p;
  p.width = d[ua];
  p.height = d[va];
  p.values.assign(p.width * p.height, 0.0);
  std::vector<std::uint32_t> counts(p.values.size(), 0);
  std::array<std::uint64_t, 3> c{};
  for (std::uint64_t t = index; t < index + thickness; ++t) {
    c[axis] = t;
    for (std::uint64_t vv = 0; vv < p.height; ++vv) {
      c[va] = vv;
      for (std::uint64_t u = 0; u < p.width; ++u) {
        c[ua] = u;
        const float x = v.at(c[0], c[1], c[2]);
        if (std::isnan(x)) continue;
        p.values[u + p.width * vv] += x;
        ++counts[u + p.width * vv];
      }
    }
  }
  for (std::size_t n = 0; n < p.values.size(); ++n)
    p.values[n] = counts[n] ? p.values[n] / counts[n] : std::numeric_limits<double>::quiet_NaN();
  return p;
}

void write_sparse_jsonl(const SparsePoints& s, std::ostream& out) {
  out << nlohmann::json{{"dims", s.dims}}.dump() << '\n';
  for (const auto& p : s.points) {
    nlohmann::json j{{"i", p.index.i}, {"j", p.index.j}, {"k", p.index.k}, {"v", p.intensity}};
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed");
}

void save_sparse_jsonl(const SparsePoints& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  try {
    write_sparse_jsonl(s, out);
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

SparsePoints read_sparse_jsonl(std::istream& in) {
  SparsePoints s;
  bool have_dims = false;
  std::string line;
  std::uint64_t offset = 0;
  Dims extent{0, 0, 0};
  while (std::getline(in, line)) {
    const auto line_offset = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      if (j.contains("dims")) {
        s.dims = j.at("dims").get<Dims>();
        have_dims = true;
        continue;
      }
      SparsePoint p{{j.at("i").get<std::uint32_t>(), j.at("j").get<std::uint32_t>(),
                     j.at("k").get<std::uint32_t>()},
                    j.at("v").get<double>()};
      extent[0] = std::max<std::uint64_t>(extent[0], p.index.i + 1ull);
      extent[1] = std::max<std::uint64_t>(extent[1], p.index.j + 1ull);
      extent[2] = std::max<std::uint64_t>(extent[2], p.index.k + 1ull);
      s.points.push_back(p);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("bad sparse record: ") + e.what(), line_offset);
    }
  }
  if (!have_dims) s.dims = extent;
  try {
    s.canonicalize();
  } catch (const DataError& e) {
    throw FormatError(std::string("invalid sparse set: ") + e.what(), 0);
  }
  return s;
}

SparsePoints load_sparse_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_sparse_jsonl(in);
}

}  // namespace vdx
