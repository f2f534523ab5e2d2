#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pvf/error.hpp"
#include "pvf/time.hpp"

namespace pvf::data {

/// Explicit missing-value marker. Every other value is required to be finite.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) { return std::isnan(v); }

/// A single channel on a fixed-step UTC grid.
struct TimeSeries {
  std::string name;
  std::vector<EpochSeconds> timestamps;
  Eigen::VectorXd values;

  Eigen::Index size() const { return values.size(); }
};

/// Calendar day of every row.
using DayIndex = std::vector<std::int64_t>;

DayIndex day_index(std::span<const EpochSeconds> timestamps);

/// Throws ValidationError unless timestamps are strictly increasing with a constant step.
/// Returns the step in seconds.
EpochSeconds validate_grid(std::span<const EpochSeconds> timestamps);

struct RepairReport {
  std::size_t zero_filled = 0;
  std::size_t interpolated = 0;
  std::vector<std::int64_t> dropped_days;
};

struct RepairResult {
  TimeSeries series;
  RepairReport report;
};

/// Applies the three missing-value rules day by day.
///
/// Leading/trailing runs within a day are zero-filled when the nearest known
/// value inside the day is below 1% of that day's peak. Runs of one or two
/// points with known neighbours are linearly interpolated with
/// x_i = x1 + i (x2 - x1) / (len + 1). Anything longer drops the whole day;
/// values of dropped days are left untouched.
RepairResult repair_missing(const TimeSeries& series, const DayIndex& days);

struct Channel {
  std::string name;
  Eigen::VectorXd values;
};

/// PV power plus meteorological channels sharing one time grid.
///
/// After `repair_dataset` the grid may contain jumps where whole days were
/// removed; `step` remains the nominal sampling interval.
struct AlignedDataset {
  EpochSeconds step = 300;
  std::vector<EpochSeconds> timestamps;
  Channel pv;
  std::vector<Channel> weather;

  Eigen::Index rows() const { return static_cast<Eigen::Index>(timestamps.size()); }
  DayIndex days() const { return day_index(timestamps); }
  const Channel& weather_channel(const std::string& name) const;
  /// Rows [begin, end) of every channel.
  AlignedDataset slice(Eigen::Index begin, Eigen::Index end) const;
};

struct DatasetRepair {
  AlignedDataset dataset;
  std::vector<std::pair<std::string, RepairReport>> channel_reports;
  /// Union over channels, ascending.
  std::vector<std::int64_t> dropped_days;
  std::size_t zero_filled = 0;
  std::size_t interpolated = 0;
};

/// Repairs every channel and removes the union of dropped days from all of them.
DatasetRepair repair_dataset(const AlignedDataset& raw);

struct ChannelStats {
  std::string name;
  double mean = 0.0;
  double stddev = 1.0;
  /// Zero-variance channel; excluded from model inputs.
  bool constant = false;
};

/// Per-channel z-score statistics (population convention).
struct NormStats {
  std::vector<ChannelStats> channels;

  const ChannelStats& at(const std::string& name) const;
  double apply(const std::string& name, double v) const;
  double invert(const std::string& name, double z) const;
  Eigen::VectorXd apply(const std::string& name, const Eigen::VectorXd& v) const;
  Eigen::VectorXd invert(const std::string& name, const Eigen::VectorXd& z) const;
};

NormStats zscore_fit(std::span<const Channel> channels);
/// Statistics for pv and every weather channel of `train`.
NormStats zscore_fit(const AlignedDataset& train);

/// One supervised sample: `lookback` rows of inputs and the next PV value.
struct SampleWindow {
  Eigen::Index target_row = 0;
  EpochSeconds target_time = 0;
  Eigen::VectorXd high;     // lookback
  Eigen::VectorXd low;      // lookback
  Eigen::MatrixXd weather;  // lookback x F
  double target = 0.0;      // physical units
  double last_pv = 0.0;     // PV at the final input row
};

/// Builds one window per target row whose `lookback` predecessors are
/// contiguous on the fixed step. Windows never straddle removed days.
/// `weather_channels` selects (and orders) the meteorological inputs.
std::vector<SampleWindow> make_windows(const AlignedDataset& dataset, const Eigen::VectorXd& high,
                                       const Eigen::VectorXd& low,
                                       std::span<const std::string> weather_channels,
                                       Eigen::Index lookback, Eigen::Index horizon = 1);

struct SplitSizes {
  std::size_t train = 0, val = 0, test = 0;
};

/// Floor-rounded val/test sizes; the remainder goes to train.
SplitSizes split_sizes(std::size_t n, std::array<double, 3> ratios = {0.8, 0.1, 0.1});

template <typename T>
struct Split {
  std::vector<T> train, val, test;
};

/// Chronological, contiguous split.
template <typename T>
Split<T> split(const std::vector<T>& items, std::array<double, 3> ratios = {0.8, 0.1, 0.1}) {
  const SplitSizes s = split_sizes(items.size(), ratios);
  Split<T> out;
  const auto b = items.begin();
  out.train.assign(b, b + static_cast<std::ptrdiff_t>(s.train));
  out.val.assign(b + static_cast<std::ptrdiff_t>(s.train), b + static_cast<std::ptrdiff_t>(s.train + s.val));
  out.test.assign(b + static_cast<std::ptrdiff_t>(s.train + s.val), items.end());
  return out;
}

/// Pearson correlation coefficient. Empty when either input is constant.
template <typename DerivedX, typename DerivedY>
std::optional<typename DerivedX::Scalar> pearson(const Eigen::MatrixBase<DerivedX>& x,
                                                 const Eigen::MatrixBase<DerivedY>& y) {
  using Scalar = typename DerivedX::Scalar;
  require(x.size() == y.size(), "pearson: length mismatch");
  require(x.size() >= 2, "pearson: need at least two points");
  const auto xc = (x.array() - x.mean()).eval();
  const auto yc = (y.array() - y.mean()).eval();
  const Scalar sxx = xc.square().sum();
  const Scalar syy = yc.square().sum();
  if (!(sxx > Scalar(0)) || !(syy > Scalar(0))) return std::nullopt;
  const Scalar rho = (xc * yc).sum() / std::sqrt(sxx * syy);
  return std::clamp(rho, Scalar(-1), Scalar(1));
}

struct FeatureScore {
  std::string name;
  std::optional<double> correlation;
};

/// Ranks weather channels by |pearson(channel, pv)| (descending, ties in
/// declaration order, undefined correlations last).
std::vector<FeatureScore> rank_features(const AlignedDataset& dataset);

/// Labels of the `k` most PV-correlated weather channels.
std::vector<std::string> select_features(const AlignedDataset& dataset, std::size_t k = 4);

struct SynthConfig {
  int days = 30;
  EpochSeconds step = 300;
  double cloud_amplitude = 0.3;
  double capacity_kw = 350.0;
  /// 2022-07-01T00:00:00Z
  EpochSeconds start = 1656633600;
};

/// Deterministic synthetic PV site with eight meteorological channels:
/// irradiance, temperature, humidity, visibility (correlated with PV by
/// construction) and wind_speed, wind_direction, pressure, rainfall.
AlignedDataset synth_dataset(const SynthConfig& config, std::uint64_t seed);

}  // namespace pvf::data
