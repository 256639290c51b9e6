#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "vdx/volume.hpp"

namespace vdx {

/// Histogram over log10(intensity). Bins are left-closed; the last bin is
/// closed on both ends.
struct Histogram {
  std::vector<double> log_edges;  // n_bins + 1, increasing
  std::vector<std::uint64_t> counts;
  std::uint64_t n_excluded = 0;  // NaN, infinite and non-positive values

  std::size_t n_bins() const noexcept { return counts.size(); }
  std::uint64_t total() const noexcept;
  /// Intensity at the log-space center of bin b.
  double bin_center(std::size_t b) const;
};

inline constexpr std::size_t kDefaultHistogramBins = 256;
inline constexpr std::size_t kCuspSmoothingWindow = 5;

Histogram histogram(std::span<const float> values, std::size_t n_bins = kDefaultHistogramBins);
Histogram histogram(std::span<const double> values, std::size_t n_bins = kDefaultHistogramBins);
Histogram histogram(const DenseVolume& v, std::size_t n_bins = kDefaultHistogramBins);
Histogram histogram(const SparsePoints& s, std::size_t n_bins = kDefaultHistogramBins);

/// Centered moving average, window truncated at the ends.
std::vector<double> smooth_counts(const Histogram& h, std::size_t window = kCuspSmoothingWindow);

/// Noise/signal separation point: the first local minimum of the smoothed
/// histogram after its peak in the lower half of the log-intensity range.
/// A flat-bottomed valley counts as one minimum located at its middle bin.
std::optional<double> detect_cusp(const Histogram& h, std::size_t window = kCuspSmoothingWindow);

/// Two-segment opacity ramp: 0 up to cusp, linear to 1 at threshold, 1 above.
class TransferFunction {
 public:
  TransferFunction(double cusp, double threshold);

  double cusp() const noexcept { return cusp_; }
  double threshold() const noexcept { return threshold_; }
  double alpha(double intensity) const noexcept;

 private:
  double cusp_;
  double threshold_;
};

/// Per-cluster relative opacity: (I - I_min) / (I_max - I_min); all ones when
/// the intensities are equal.
std::vector<double> cluster_alpha(std::span<const double> intensities);
std::vector<double> cluster_alpha(const SparsePoints& cluster);

nlohmann::json to_json(const Histogram& h);
Histogram histogram_from_json(const nlohmann::json& j);

}  // namespace vdx
