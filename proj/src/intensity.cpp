#include "vdx/intensity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace vdx {

std::uint64_t Histogram::total() const noexcept {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}) + n_excluded;
}

double Histogram::bin_center(std::size_t b) const {
  return std::pow(10.0, 0.5 * (log_edges.at(b) + log_edges.at(b + 1)));
}

namespace {

template <typename T>
Histogram build_histogram(std::span<const T> values, std::size_t n_bins) {
  if (n_bins < 2) throw DataError("histogram needs at least 2 bins");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  std::uint64_t excluded = 0;
  for (T x : values) {
    if (!(x > 0) || !std::isfinite(x)) {
      ++excluded;
      continue;
    }
    lo = std::min<double>(lo, x);
    hi = std::max<double>(hi, x);
  }
  if (!(lo <= hi)) throw DataError("histogram input has no positive finite values");

  double llo = std::log10(lo);
  double lhi = std::log10(hi);
  if (llo == lhi) {
    llo -= 0.5;
    lhi += 0.5;
  }
  Histogram h;
  h.n_excluded = excluded;
  h.counts.assign(n_bins, 0);
  h.log_edges.resize(n_bins + 1);
  const double width = (lhi - llo) / static_cast<double>(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) h.log_edges[b] = llo + width * static_cast<double>(b);
  h.log_edges[n_bins] = lhi;

  const auto last = static_cast<std::int64_t>(n_bins) - 1;
  for (T x : values) {
    if (!(x > 0) || !std::isfinite(x)) continue;
    const double lx = std::log10(static_cast<double>(x));
    auto b = std::clamp(static_cast<std::int64_t>(std::floor((lx - llo) / width)), std::int64_t{0},
                        last);
    // The division can land one bin off when lx sits on an edge.
    if (b < last && lx >= h.log_edges[b + 1]) ++b;
    if (b > 0 && lx < h.log_edges[b]) --b;
    ++h.counts[b];
  }
  return h;
}

}  // namespace

Histogram histogram(std::span<const float> values, std::size_t n_bins) {
  return build_histogram(values, n_bins);
}
Histogram histogram(std::span<const double> values, std::size_t n_bins) {
  return build_histogram(values, n_bins);
}
Histogram histogram(const DenseVolume& v, std::size_t n_bins) {
  return histogram(std::span<const float>(v.values()), n_bins);
}
Histogram histogram(const SparsePoints& s, std::size_t n_bins) {
  std::vector<double> xs;
  xs.reserve(s.size());
  for (const auto& p : s.points) xs.push_back(p.intensity);
  return histogram(std::span<const double>(xs), n_bins);
}

std::vector<double> smooth_counts(const Histogram& h, std::size_t window) {
  const auto n = static_cast<std::int64_t>(h.counts.size());
  const auto half = static_cast<std::int64_t>(window / 2);
  std::vector<double> s(h.counts.size());
  for (std::int64_t b = 0; b < n; ++b) {
    const auto a = std::max<std::int64_t>(0, b - half);
    const auto e = std::min<std::int64_t>(n - 1, b + half);
    double sum = 0;
    for (auto t = a; t <= e; ++t) sum += static_cast<double>(h.counts[t]);
    s[b] = sum / static_cast<double>(e - a + 1);
  }
  return s;
}

std::optional<double> detect_cusp(const Histogram& h, std::size_t window) {
  if (h.counts.empty()) return std::nullopt;
  const auto s = smooth_counts(h, window);
  const std::size_t n = s.size();
  const double mid = 0.5 * (h.log_edges.front() + h.log_edges.back());

  std::size_t peak = 0;
  for (std::size_t b = 0; b < n && 0.5 * (h.log_edges[b] + h.log_edges[b + 1]) < mid; ++b)
    if (s[b] > s[peak]) peak = b;

  std::size_t m = peak + 1;
  while (m < n) {
    if (!(s[m] < s[m - 1])) {
      ++m;
      continue;
    }
    std::size_t e = m;
    while (e + 1 < n && s[e + 1] == s[m]) ++e;
    if (e + 1 >= n) return std::nullopt;
    if (s[e + 1] > s[m]) return h.bin_center((m + e) / 2);
    m = e + 1;
  }
  return std::nullopt;
}

TransferFunction::TransferFunction(double cusp, double threshold)
    : cusp_(cusp), threshold_(threshold) {
  if (!(cusp > 0.0) || !(cusp < threshold) || !std::isfinite(threshold))
    throw DataError("transfer function requires 0 < cusp < threshold");
}

double TransferFunction::alpha(double intensity) const noexcept {
  if (!(intensity > cusp_)) return 0.0;
  if (intensity >= threshold_) return 1.0;
  return std::clamp((intensity - cusp_) / (threshold_ - cusp_), 0.0, 1.0);
}

std::vector<double> cluster_alpha(std::span<const double> intensities) {
  if (intensities.empty()) return {};
  const auto [mn, mx] = std::minmax_element(intensities.begin(), intensities.end());
  const double lo = *mn, range = *mx - *mn;
  std::vector<double> out(intensities.size(), 1.0);
  if (range > 0.0)
    for (std::size_t p = 0; p < intensities.size(); ++p) out[p] = (intensities[p] - lo) / range;
  return out;
}

std::vector<double> cluster_alpha(const SparsePoints& cluster) {
  std::vector<double> xs;
  xs.reserve(cluster.size());
  for (const auto& p : cluster.points) xs.push_back(p.intensity);
  return cluster_alpha(xs);
}

nlohmann::json to_json(const Histogram& h) {
  return {{"edges", h.log_edges}, {"counts", h.counts}, {"excluded", h.n_excluded}};
}

Histogram histogram_from_json(const nlohmann::json& j) {
  Histogram h;
  h.log_edges = j.at("edges").get<std::vector<double>>();
  h.counts = j.at("counts").get<std::vector<std::uint64_t>>();
  h.n_excluded = j.at("excluded").get<std::uint64_t>();
  if (h.log_edges.size() != h.counts.size() + 1) throw DataError("histogram edges/counts mismatch");
  return h;
}

}  // namespace vdx
