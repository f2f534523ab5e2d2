#include "pvf/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <numbers>
#include <random>
#include <set>

namespace pvf::data {

DayIndex day_index(std::span<const EpochSeconds> timestamps) {
  DayIndex days(timestamps.size());
  std::transform(timestamps.begin(), timestamps.end(), days.begin(), [](EpochSeconds t) { return day_of(t); });
  return days;
}

EpochSeconds validate_grid(std::span<const EpochSeconds> timestamps) {
  require(timestamps.size() >= 2, "time grid needs at least two rows");
  const EpochSeconds step = timestamps[1] - timestamps[0];
  require(step > 0, "timestamps must be strictly increasing");
  for (std::size_t i = 2; i < timestamps.size(); ++i) {
    if (timestamps[i] - timestamps[i - 1] != step)
      throw ValidationError("non-constant time step at row " + std::to_string(i) + " (" +
                            format_rfc3339(timestamps[i]) + ")");
  }
  return step;
}

namespace {

bool zero_context(double neighbour, double peak) {
  if (peak == 0.0) return neighbour == 0.0;
  return std::abs(neighbour) < 0.01 * peak;
}

}  // namespace

RepairResult repair_missing(const TimeSeries& series, const DayIndex& days) {
  require(series.timestamps.size() == static_cast<std::size_t>(series.values.size()),
          "repair_missing: timestamps/values length mismatch for '" + series.name + "'");
  require(days.size() == series.timestamps.size(), "repair_missing: day index length mismatch");
  validate_grid(series.timestamps);

  const Eigen::VectorXd& in = series.values;
  const Eigen::Index n = in.size();
  RepairResult result{series, {}};
  Eigen::VectorXd& out = result.series.values;
  RepairReport& report = result.report;

  auto known = [&](Eigen::Index i) { return i >= 0 && i < n && !is_missing(in[i]); };

  Eigen::Index s = 0;
  while (s < n) {
    Eigen::Index e = s;
    while (e < n && days[static_cast<std::size_t>(e)] == days[static_cast<std::size_t>(s)]) ++e;
    const std::int64_t day = days[static_cast<std::size_t>(s)];

    double peak = 0.0;
    bool any_known = false;
    for (Eigen::Index i = s; i < e; ++i) {
      if (known(i)) {
        any_known = true;
        peak = std::max(peak, std::abs(in[i]));
      }
    }
    if (!any_known) {
      report.dropped_days.push_back(day);
      s = e;
      continue;
    }

    bool drop = false;
    std::size_t zero_filled = 0, interpolated = 0;
    Eigen::Index a = s;
    while (a < e) {
      if (!is_missing(in[a])) {
        ++a;
        continue;
      }
      Eigen::Index b = a;
      while (b < e && is_missing(in[b])) ++b;
      const Eigen::Index len = b - a;
      const bool leading = a == s;
      const bool trailing = b == e;

      if (leading || trailing) {
        const double neighbour = leading ? in[b] : in[a - 1];
        if (zero_context(neighbour, peak)) {
          out.segment(a, len).setZero();
          zero_filled += static_cast<std::size_t>(len);
          a = b;
          continue;
        }
      }
      if (len <= 2 && known(a - 1) && known(b)) {
        const double x1 = in[a - 1];
        const double x2 = in[b];
        const double steps = static_cast<double>(len + 1);
        for (Eigen::Index i = 1; i <= len; ++i)
          out[a + i - 1] = x1 + static_cast<double>(i) * (x2 - x1) / steps;
        interpolated += static_cast<std::size_t>(len);
      } else {
        drop = true;
      }
      a = b;
    }

    if (drop) {
      out.segment(s, e - s) = in.segment(s, e - s);
      report.dropped_days.push_back(day);
    } else {
      report.zero_filled += zero_filled;
      report.interpolated += interpolated;
    }
    s = e;
  }
  return result;
}

const Channel& AlignedDataset::weather_channel(const std::string& name) const {
  for (const auto& c : weather)
    if (c.name == name) return c;
  throw ValidationError("unknown weather channel '" + name + "'");
}

AlignedDataset AlignedDataset::slice(Eigen::Index begin, Eigen::Index end) const {
  require(0 <= begin && begin <= end && end <= rows(), "dataset slice out of range");
  AlignedDataset out;
  out.step = step;
  out.timestamps.assign(timestamps.begin() + begin, timestamps.begin() + end);
  out.pv = {pv.name, pv.values.segment(begin, end - begin)};
  for (const auto& c : weather) out.weather.push_back({c.name, c.values.segment(begin, end - begin)});
  return out;
}

DatasetRepair repair_dataset(const AlignedDataset& raw) {
  const DayIndex days = raw.days();
  DatasetRepair result;
  std::set<std::int64_t> dropped;

  std::vector<Channel> repaired;
  auto run = [&](const Channel& c) {
    RepairResult r = repair_missing({c.name, raw.timestamps, c.values}, days);
    dropped.insert(r.report.dropped_days.begin(), r.report.dropped_days.end());
    result.zero_filled += r.report.zero_filled;
    result.interpolated += r.report.interpolated;
    result.channel_reports.emplace_back(c.name, std::move(r.report));
    repaired.push_back({c.name, std::move(r.series.values)});
  };
  run(raw.pv);
  for (const auto& c : raw.weather) run(c);

  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < raw.rows(); ++i)
    if (!dropped.contains(days[static_cast<std::size_t>(i)])) keep.push_back(i);

  AlignedDataset& out = result.dataset;
  out.step = raw.step;
  for (Eigen::Index i : keep) out.timestamps.push_back(raw.timestamps[static_cast<std::size_t>(i)]);
  auto gather = [&](const Channel& c) {
    Channel g{c.name, Eigen::VectorXd(static_cast<Eigen::Index>(keep.size()))};
    for (std::size_t j = 0; j < keep.size(); ++j) {
      g.values[static_cast<Eigen::Index>(j)] = c.values[keep[j]];
      if (is_missing(g.values[static_cast<Eigen::Index>(j)]))
        throw NumericError("repair left a missing value in channel '" + c.name + "'");
    }
    return g;
  };
  out.pv = gather(repaired.front());
  for (std::size_t c = 1; c < repaired.size(); ++c) out.weather.push_back(gather(repaired[c]));
  result.dropped_days.assign(dropped.begin(), dropped.end());
  return result;
}

const ChannelStats& NormStats::at(const std::string& name) const {
  for (const auto& c : channels)
    if (c.name == name) return c;
  throw ValidationError("no normalization statistics for channel '" + name + "'");
}

double NormStats::apply(const std::string& name, double v) const {
  const auto& c = at(name);
  return (v - c.mean) / c.stddev;
}

double NormStats::invert(const std::string& name, double z) const {
  const auto& c = at(name);
  return z * c.stddev + c.mean;
}

Eigen::VectorXd NormStats::apply(const std::string& name, const Eigen::VectorXd& v) const {
  const auto& c = at(name);
  return ((v.array() - c.mean) / c.stddev).matrix();
}

Eigen::VectorXd NormStats::invert(const std::string& name, const Eigen::VectorXd& z) const {
  const auto& c = at(name);
  return (z.array() * c.stddev + c.mean).matrix();
}

NormStats zscore_fit(std::span<const Channel> channels) {
  NormStats stats;
  for (const auto& c : channels) {
    require(c.values.size() > 0, "zscore_fit: empty channel '" + c.name + "'");
    require(c.values.allFinite(), "zscore_fit: channel '" + c.name + "' has missing or non-finite values");
    ChannelStats s{c.name, c.values.mean(), 0.0, false};
    s.stddev = std::sqrt((c.values.array() - s.mean).square().mean());
    if (!(s.stddev > 1e-12 * std::max(1.0, std::abs(s.mean)))) {
      s.constant = true;
      s.stddev = 1.0;
    }
    stats.channels.push_back(std::move(s));
  }
  return stats;
}

NormStats zscore_fit(const AlignedDataset& train) {
  std::vector<Channel> all{train.pv};
  all.insert(all.end(), train.weather.begin(), train.weather.end());
  return zscore_fit(all);
}

std::vector<SampleWindow> make_windows(const AlignedDataset& dataset, const Eigen::VectorXd& high,
                                       const Eigen::VectorXd& low,
                                       std::span<const std::string> weather_channels,
                                       Eigen::Index lookback, Eigen::Index horizon) {
  require(lookback >= 1, "make_windows: lookback must be >= 1");
  require(horizon == 1, "make_windows: only one-step-ahead targets are supported");
  const Eigen::Index n = dataset.rows();
  require(high.size() == n && low.size() == n, "make_windows: high/low not on the dataset grid");

  std::vector<const Channel*> weather;
  for (const auto& name : weather_channels) weather.push_back(&dataset.weather_channel(name));

  std::vector<SampleWindow> windows;
  if (n < lookback + 1) {
    spdlog::warn("make_windows: series of length {} is shorter than lookback+1 = {}", n, lookback + 1);
    return windows;
  }
  const auto F = static_cast<Eigen::Index>(weather.size());
  for (Eigen::Index r = lookback; r < n; ++r) {
    const EpochSeconds span = dataset.timestamps[static_cast<std::size_t>(r)] -
                              dataset.timestamps[static_cast<std::size_t>(r - lookback)];
    if (span != lookback * dataset.step) continue;
    SampleWindow w;
    w.target_row = r;
    w.target_time = dataset.timestamps[static_cast<std::size_t>(r)];
    w.high = high.segment(r - lookback, lookback);
    w.low = low.segment(r - lookback, lookback);
    w.weather.resize(lookback, F);
    for (Eigen::Index f = 0; f < F; ++f) w.weather.col(f) = weather[static_cast<std::size_t>(f)]->values.segment(r - lookback, lookback);
    w.target = dataset.pv.values[r];
    w.last_pv = dataset.pv.values[r - 1];
    windows.push_back(std::move(w));
  }
  return windows;
}

SplitSizes split_sizes(std::size_t n, std::array<double, 3> ratios) {
  require(n >= 3, "split: need at least 3 windows, got " + std::to_string(n));
  for (double r : ratios) require(r >= 0.0, "split: ratios must be non-negative");
  require(std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) < 1e-9, "split: ratios must sum to 1");
  SplitSizes s;
  // Small epsilon so that e.g. 10 * 0.1 floors to 1 rather than 0.
  s.val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[1] + 1e-9));
  s.test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[2] + 1e-9));
  s.train = n - s.val - s.test;
  return s;
}

std::vector<FeatureScore> rank_features(const AlignedDataset& dataset) {
  std::vector<FeatureScore> scores;
  for (const auto& c : dataset.weather) scores.push_back({c.name, pearson(c.values, dataset.pv.values)});
  std::stable_sort(scores.begin(), scores.end(), [](const FeatureScore& a, const FeatureScore& b) {
    if (!b.correlation) return a.correlation.has_value();
    if (!a.correlation) return false;
    return std::abs(*a.correlation) > std::abs(*b.correlation);
  });
  return scores;
}

std::vector<std::string> select_features(const AlignedDataset& dataset, std::size_t k) {
  std::vector<std::string> names;
  for (const auto& s : rank_features(dataset)) {
    if (names.size() == k) break;
    names.push_back(s.name);
  }
  return names;
}

namespace {

// Stationary AR(1) with unit marginal variance.
class Ar1 {
 public:
  Ar1(double rho, std::mt19937_64& rng) : rho_(rho), rng_(rng), state_(normal_(rng)) {}
  double next() {
    state_ = rho_ * state_ + std::sqrt(1.0 - rho_ * rho_) * normal_(rng_);
    return state_;
  }

 private:
  double rho_;
  std::mt19937_64& rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  double state_;
};

}  // namespace

AlignedDataset synth_dataset(const SynthConfig& config, std::uint64_t seed) {
  require(config.days >= 2, "synth_dataset: need at least 2 days");
  require(config.step > 0 && kSecondsPerDay % config.step == 0, "synth_dataset: step must divide one day");
  require(config.cloud_amplitude >= 0.0 && config.cloud_amplitude < 1.0,
          "synth_dataset: cloud amplitude must lie in [0, 1)");
  using std::numbers::pi;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  const Eigen::Index per_day = kSecondsPerDay / config.step;
  const Eigen::Index n = per_day * config.days;
  const double step_hours = static_cast<double>(config.step) / 3600.0;
  const double amp = config.cloud_amplitude;

  AlignedDataset ds;
  ds.step = config.step;
  ds.timestamps.resize(static_cast<std::size_t>(n));
  ds.pv = {"pv", Eigen::VectorXd::Zero(n)};
  const char* names[] = {"irradiance", "temperature", "humidity",  "visibility",
                         "wind_speed", "wind_direction", "pressure", "rainfall"};
  for (const char* name : names) ds.weather.push_back({name, Eigen::VectorXd::Zero(n)});
  auto& irr = ds.weather[0].values;
  auto& temp = ds.weather[1].values;
  auto& hum = ds.weather[2].values;
  auto& vis = ds.weather[3].values;
  auto& wind = ds.weather[4].values;
  auto& wdir = ds.weather[5].values;
  auto& pres = ds.weather[6].values;
  auto& rain = ds.weather[7].values;

  // Cloud cover: slow day-level regime plus an hour-scale AR(1) texture.
  Ar1 cloud_fast(std::exp(-step_hours / 0.75), rng);
  Ar1 wind_ar(std::exp(-step_hours / 2.0), rng);
  Ar1 dir_ar(std::exp(-step_hours / 6.0), rng);
  Ar1 pres_ar(std::exp(-step_hours / 24.0), rng);
  Ar1 temp_ar(std::exp(-step_hours / 3.0), rng);
  const double season_phase = 2.0 * pi * uniform(rng);

  auto clear_sky = [](double hour) {
    constexpr double sunrise = 6.0, sunset = 18.5;
    if (hour <= sunrise || hour >= sunset) return 0.0;
    return std::pow(std::sin(pi * (hour - sunrise) / (sunset - sunrise)), 1.3);
  };

  double day_regime = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index d = i / per_day;
    if (i % per_day == 0) day_regime = uniform(rng);
    const EpochSeconds t = config.start + i * config.step;
    ds.timestamps[static_cast<std::size_t>(i)] = t;
    const double hour = static_cast<double>((t % kSecondsPerDay + kSecondsPerDay) % kSecondsPerDay) / 3600.0;

    const double clear = clear_sky(hour);
    const double clear_lag = clear_sky(hour - 2.0);
    const double drift = 1.0 + 0.08 * std::sin(2.0 * pi * static_cast<double>(d) / 365.0 + season_phase);
    const double cloud =
        amp * std::clamp(0.55 * day_regime + 0.45 * (0.5 + 0.3 * cloud_fast.next()), 0.0, 1.0);
    const double meas = 1.0 + 0.05 * amp * normal(rng);

    const double pv = config.capacity_kw * clear * drift * (1.0 - cloud) * meas;
    ds.pv.values[i] = std::max(0.0, pv);

    irr[i] = std::max(0.0, 1000.0 * clear * drift * (1.0 - cloud) * (1.0 + 0.03 * normal(rng)));
    temp[i] = 27.0 + 5.0 * clear_lag * (1.0 - 0.5 * cloud) + 0.6 * temp_ar.next();
    hum[i] = std::clamp(82.0 - 18.0 * clear_lag + 15.0 * cloud + 2.0 * normal(rng), 0.0, 100.0);
    vis[i] = std::max(0.5, 9.0 + 7.0 * clear_lag - 10.0 * cloud + 0.8 * normal(rng));
    wind[i] = std::max(0.0, 3.0 + 1.5 * wind_ar.next());
    wdir[i] = std::fmod(540.0 + 60.0 * dir_ar.next(), 360.0);
    pres[i] = 1008.0 + 2.5 * pres_ar.next();
    rain[i] = (cloud > 0.6 * std::max(amp, 1e-12) && uniform(rng) < 0.05) ? 2.0 * uniform(rng) : 0.0;
  }
  return ds;
}

}  // namespace pvf::data
