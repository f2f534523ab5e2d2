#include "pvf/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pvf/error.hpp"
#include "pvf/io.hpp"

namespace pvf::pipeline {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

const char* const kPv = "pv";
const char* const kHigh = "S_high";
const char* const kLow = "S_low";

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

/// Linear-interpolated empirical quantile of sorted data.
double sorted_quantile(const std::vector<double>& sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

// Configuration -----------------------------------------------------------------

void PipelineConfig::validate() const {
  require(synth_days >= 2, "config: synth_days must be at least 2");
  require(cloud_amplitude >= 0.0 && cloud_amplitude <= 1.0, "config: cloud_amplitude must lie in [0, 1]");
  require(capacity_kw > 0.0, "config: capacity_kw must be positive");
  require(ensemble_size >= 1, "config: ensemble_size must be >= 1");
  require(noise_factor >= 0.0, "config: noise_factor must be >= 0");
  require(sd_threshold > 0.0, "config: sd_threshold must be positive");
  require(max_sift_iterations >= 1, "config: max_sift_iterations must be >= 1");
  require(noise_mode == "noise-modes" || noise_mode == "fresh-white",
          "config: noise_mode must be 'noise-modes' or 'fresh-white'");
  require(f_high > 0.0, "config: f_high must be positive");
  require(strict_window >= 16, "config: strict_window must be at least 16 samples");
  require(lookback >= 1, "config: lookback must be >= 1");
  require(horizon == 1, "config: only horizon 1 is supported");
  const double rsum = ratios[0] + ratios[1] + ratios[2];
  require(ratios[0] > 0 && ratios[1] > 0 && ratios[2] > 0 && std::abs(rsum - 1.0) < 1e-9,
          "config: split ratios must be positive and sum to 1");
  require(top_k >= 1, "config: top_k must be >= 1");
  require(d_model >= 1 && cnn_filters >= 1 && cnn_layers >= 1 && cnn_kernel >= 1 && itr_dim >= 1 && itr_depth >= 0 &&
              itr_ff >= 1 && lstm_hidden >= 1 && lstm_layers >= 1 && eqn_hidden >= 1,
          "config: network sizes must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "config: dropout must lie in [0, 1)");
  require(itr_heads >= 1 && itr_dim % itr_heads == 0, "config: itr_dim must be divisible by itr_heads");
  require(fusion_heads >= 1 && d_model % fusion_heads == 0, "config: d_model must be divisible by fusion_heads");
  const eqn::QuantileLevels q(levels);
  eqn::WidthSpec::make(q, width_confidences, width_weights);
  require(theta_multiplier >= 0.0, "config: theta_multiplier must be >= 0");
  lambda.validate();
  require(epistemic_eps > 0.0, "config: epistemic_eps must be positive");
  require(lr > 0.0, "config: lr must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "config: Adam betas must lie in [0, 1)");
  require(adam_eps > 0.0, "config: adam_eps must be positive");
  require(batch_size >= 1, "config: batch_size must be >= 1");
  require(max_epochs >= 1, "config: max_epochs must be >= 1");
  require(patience >= 0, "config: patience must be >= 0");
  require(min_delta >= 0.0, "config: min_delta must be >= 0");
  require(confidence > 0.0 && confidence < 1.0, "config: confidence must lie in (0, 1)");
  q.index_of((1.0 - confidence) / 2.0);
  q.index_of((1.0 + confidence) / 2.0);
  q.index_of((1.0 - confidence) / 2.0);
  q.index_of((1.0 + confidence) / 2.0);
}

json PipelineConfig::to_json() const {
  return {{"input", input},
          {"synth_days", synth_days},
          {"cloud_amplitude", cloud_amplitude},
          {"capacity_kw", capacity_kw},
          {"seed", seed},
          {"ensemble_size", ensemble_size},
          {"noise_factor", noise_factor},
          {"sd_threshold", sd_threshold},
          {"max_sift_iterations", max_sift_iterations},
          {"max_imfs", max_imfs},
          {"noise_mode", noise_mode},
          {"f_high", f_high},
          {"strict", strict},
          {"strict_window", strict_window},
          {"lookback", lookback},
          {"horizon", horizon},
          {"ratios", ratios},
          {"top_k", top_k},
          {"d_model", d_model},
          {"cnn_filters", cnn_filters},
          {"cnn_layers", cnn_layers},
          {"cnn_kernel", cnn_kernel},
          {"dropout", dropout},
          {"itr_dim", itr_dim},
          {"itr_depth", itr_depth},
          {"itr_heads", itr_heads},
          {"itr_ff", itr_ff},
          {"lstm_hidden", lstm_hidden},
          {"lstm_layers", lstm_layers},
          {"fusion_heads", fusion_heads},
          {"eqn_hidden", eqn_hidden},
          {"levels", levels},
          {"width_confidences", width_confidences},
          {"width_weights", width_weights},
          {"theta_multiplier", theta_multiplier},
          {"lambda_quantile", lambda.quantile},
          {"lambda_evidence", lambda.evidence},
          {"lambda_width", lambda.width},
          {"epistemic_eps", epistemic_eps},
          {"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"min_delta", min_delta},
          {"confidence", confidence},
          {"classical_winkler", classical_winkler}};
}

std::string PipelineConfig::hash() const {
  const std::string text = to_json().dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return fmt::format("{:016x}", h);
}

emd::CeemdanConfig PipelineConfig::ceemdan() const {
  emd::CeemdanConfig c;
  c.ensemble_size = ensemble_size;
  c.noise_factor = noise_factor;
  c.sift.max_iterations = max_sift_iterations;
  c.sift.sd_threshold = sd_threshold;
  c.seed = derive_seed(seed, 1);
  c.max_imfs = max_imfs;
  c.noise_mode = noise_mode == "fresh-white" ? emd::NoiseMode::FreshWhite : emd::NoiseMode::NoiseModes;
  c.threads = threads;
  return c;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over (seed, stream)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

data::AlignedDataset load_or_synth(const PipelineConfig& cfg) {
  if (!cfg.input.empty()) return io::read_dataset_csv(cfg.input);
  data::SynthConfig sc;
  sc.days = cfg.synth_days;
  sc.cloud_amplitude = cfg.cloud_amplitude;
  sc.capacity_kw = cfg.capacity_kw;
  return data::synth_dataset(sc, derive_seed(cfg.seed, 0));
}

// Decomposition -----------------------------------------------------------------

Decomposition run_decompose(const data::AlignedDataset& ds, const PipelineConfig& cfg, std::optional<Index> causal_from) {
  require(ds.rows() >= 4, "decompose: series too short");
  require(ds.pv.values.allFinite(), "decompose: PV series still contains missing values after repair");
  const Eigen::VectorXd& x = ds.pv.values;
  const emd::CeemdanConfig cc = cfg.ceemdan();
  Decomposition out;
  out.fs = 1.0 / static_cast<double>(ds.step);

  const Index n0 = causal_from ? *causal_from : x.size();
  require(n0 >= 4 && n0 <= x.size(), "decompose: invalid causal boundary");
  out.result = emd::ceemdan(x.head(n0), cc);
  out.profiles = spectral::profile_all(out.result, out.fs, cfg.f_high);
  out.groups = spectral::group_imfs(out.profiles, cfg.f_high);
  auto rec = spectral::reconstruct(out.result, out.groups);
  out.high = Eigen::VectorXd::Zero(x.size());
  out.low = Eigen::VectorXd::Zero(x.size());
  out.high.head(n0) = rec.high;
  out.low.head(n0) = rec.low;

  for (Index t = n0; t < x.size(); ++t) {
    const Index w = std::min<Index>(cfg.strict_window, t + 1);
    const auto dec = emd::ceemdan(x.segment(t - w + 1, w), cc);
    const auto prof = spectral::profile_all(dec, out.fs, cfg.f_high);
    const auto r = spectral::reconstruct(dec, spectral::group_imfs(prof, cfg.f_high));
    out.high[t] = r.high[w - 1];
    out.low[t] = r.low[w - 1];
  }
  return out;
}

// Preparation -------------------------------------------------------------------

double persistence_interval_width(const std::vector<data::SampleWindow>& train, double confidence) {
  require(!train.empty(), "persistence width: no training windows");
  std::vector<double> r;
  r.reserve(train.size());
  for (const auto& w : train) r.push_back(w.target - w.last_pv);
  std::sort(r.begin(), r.end());
  return sorted_quantile(r, (1.0 + confidence) / 2.0) - sorted_quantile(r, (1.0 - confidence) / 2.0);
}

Prepared prepare(const data::AlignedDataset& raw, const PipelineConfig& cfg) {
  cfg.validate();
  Prepared p;
  p.repair = data::repair_dataset(raw);
  const data::AlignedDataset& ds = p.repair.dataset;
  require(ds.rows() > cfg.lookback + 3, "prepare: too few rows left after repair");

  // Window targets depend only on the grid, so the split is known before decomposing.
  const Eigen::VectorXd zeros = Eigen::VectorXd::Zero(ds.rows());
  const auto probe_windows = data::make_windows(ds, zeros, zeros, {}, cfg.lookback, cfg.horizon);
  require(probe_windows.size() >= 3, "prepare: need at least 3 windows, got " + std::to_string(probe_windows.size()));
  const auto probe_split = data::split(probe_windows, cfg.ratios);
  p.train_rows = probe_split.train.back().target_row + 1;

  p.decomposition = run_decompose(ds, cfg, cfg.strict ? std::optional<Index>(p.train_rows) : std::nullopt);

  const data::AlignedDataset train_ds = ds.slice(0, p.train_rows);
  p.feature_scores = data::rank_features(train_ds);
  std::vector<data::Channel> channels{{kPv, train_ds.pv.values},
                                      {kHigh, p.decomposition.high.head(p.train_rows)},
                                      {kLow, p.decomposition.low.head(p.train_rows)}};
  for (const auto& w : train_ds.weather) channels.push_back(w);
  const data::NormStats all = data::zscore_fit(channels);
  require(!all.at(kPv).constant, "prepare: PV is constant over the training rows");

  for (const auto& name : data::select_features(train_ds, cfg.top_k))
    if (all.at(name).constant)
      spdlog::warn("weather channel '{}' is constant on the training rows and is excluded", name);
    else
      p.features.push_back(name);
  require(!p.features.empty(), "prepare: no usable weather channel");

  for (const char* name : {kPv, kHigh, kLow}) p.stats.channels.push_back(all.at(name));
  for (const auto& name : p.features) p.stats.channels.push_back(all.at(name));

  const auto windows =
      data::make_windows(ds, p.decomposition.high, p.decomposition.low, p.features, cfg.lookback, cfg.horizon);
  p.windows = data::split(windows, cfg.ratios);

  p.levels = eqn::QuantileLevels(cfg.levels);
  p.width = eqn::WidthSpec::make(p.levels, cfg.width_confidences, cfg.width_weights);
  for (auto& iv : p.width.intervals)
    iv.theta = cfg.theta_multiplier * persistence_interval_width(p.windows.train, iv.confidence);
  return p;
}

Batch make_batch(const std::vector<data::SampleWindow>& windows, std::span<const std::size_t> rows,
                 const Prepared& prep) {
  require(!rows.empty(), "batch: no rows selected");
  const auto B = static_cast<Index>(rows.size());
  const Index T = windows[rows[0]].high.size();
  const auto F = static_cast<Index>(prep.features.size());
  const auto& sh = prep.stats.at(kHigh);
  const auto& sl = prep.stats.at(kLow);
  std::vector<const data::ChannelStats*> sw;
  for (const auto& f : prep.features) sw.push_back(&prep.stats.at(f));

  Eigen::VectorXd high(B * T), low(B * T), weather(B * T * F), y(B);
  for (Index b = 0; b < B; ++b) {
    const auto& w = windows[rows[static_cast<std::size_t>(b)]];
    require(w.high.size() == T && w.weather.cols() == F, "batch: inconsistent window shapes");
    for (Index t = 0; t < T; ++t) {
      high[b * T + t] = (w.high[t] - sh.mean) / sh.stddev;
      low[b * T + t] = (w.low[t] - sl.mean) / sl.stddev;
      for (Index f = 0; f < F; ++f) {
        const auto* s = sw[static_cast<std::size_t>(f)];
        weather[(b * T + t) * F + f] = (w.weather(t, f) - s->mean) / s->stddev;
      }
    }
    y[b] = w.target;
  }
  return {ad::Tensor::from({B, T, 1}, std::move(high)), ad::Tensor::from({B, T, 1}, std::move(low)),
          ad::Tensor::from({B, T, F}, std::move(weather)), std::move(y)};
}

// Model -------------------------------------------------------------------------

ModelConfig ModelConfig::from(const PipelineConfig& cfg, Index weather_features) {
  ModelConfig m;
  m.lookback = cfg.lookback;
  m.weather_features = weather_features;
  m.d = cfg.d_model;
  m.cnn = {cfg.cnn_filters, cfg.cnn_layers, cfg.cnn_kernel, cfg.dropout};
  m.itr = {cfg.itr_dim, cfg.itr_depth, cfg.itr_heads, cfg.itr_ff};
  m.lstm = {cfg.lstm_hidden, cfg.lstm_layers};
  m.fusion_heads = cfg.fusion_heads;
  m.eqn_hidden = cfg.eqn_hidden;
  m.levels = cfg.levels.size();
  return m;
}

ForecastModel::ForecastModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  nets::Rng rng(seed);
  cnn_ = nets::CnnExtractor(1, cfg.d, cfg.cnn, rng);
  require(cfg.lookback >= cnn_.min_length(), "model: lookback " + std::to_string(cfg.lookback) +
                                                 " is below the CNN minimum of " + std::to_string(cnn_.min_length()));
  itr_ = nets::ITransformer(cfg.lookback, cfg.d, cfg.itr, rng);
  lstm_ = nets::BiLstm(cfg.weather_features, cfg.d, cfg.lstm, rng);
  fusion_ = nets::AttentionFusion(cfg.d, cfg.fusion_heads, rng);
  head_ = eqn::EqnHead(cfg.d, cfg.eqn_hidden, cfg.levels, rng);
}

eqn::EqnOutput ForecastModel::forward(const Batch& batch, const nets::ForwardContext& ctx, double scale, double shift) {
  const ad::Tensor fh = cnn_(batch.high, ctx);
  const ad::Tensor fl = itr_(batch.low);
  const ad::Tensor fw = lstm_(batch.weather);
  return head_(fusion_({fh, fl, fw}), scale, shift);
}

nets::ParamRefs ForecastModel::parameters() {
  nets::ParamRefs refs;
  cnn_.collect(refs, "cnn");
  itr_.collect(refs, "itransformer");
  lstm_.collect(refs, "bilstm");
  fusion_.collect(refs, "fusion");
  head_.collect(refs, "eqn");
  return refs;
}

std::vector<Eigen::VectorXd> ForecastModel::snapshot() {
  const auto refs = parameters();
  std::vector<Eigen::VectorXd> out;
  for (const auto& [name, t] : refs.params) out.push_back(t->value());
  for (const auto& [name, b] : refs.buffers) out.push_back(*b);
  return out;
}

void ForecastModel::restore(const std::vector<Eigen::VectorXd>& values) {
  const auto refs = parameters();
  require(values.size() == refs.params.size() + refs.buffers.size(), "model: snapshot does not match the model");
  std::size_t i = 0;
  for (const auto& [name, t] : refs.params) t->mutable_value() = values[i++];
  for (const auto& [name, b] : refs.buffers) *b = values[i++];
}

// Training ----------------------------------------------------------------------

json TrainReport::to_json() const {
  json epochs_json = json::array();
  for (const auto& e : epochs)
    epochs_json.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"seconds", e.seconds}});
  const double aet = epochs.empty() ? 0.0 : total_seconds / static_cast<double>(epochs.size());
  return {{"epochs", epochs_json},         {"best_epoch", best_epoch},      {"best_val_loss", best_val_loss},
          {"stop_reason", stop_reason},    {"total_seconds", total_seconds}, {"mean_epoch_seconds", aet}};
}

namespace {

double batched_loss(ForecastModel& model, const Prepared& prep, const std::vector<data::SampleWindow>& windows,
                    const PipelineConfig& cfg) {
  const auto& pv = prep.stats.at(kPv);
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);
  double sum = 0.0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t len = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size));
    const std::span<const std::size_t> rows(order.data() + start, len);
    const Batch batch = make_batch(windows, rows, prep);
    const auto out = model.forward(batch, {false, nullptr}, pv.stddev, pv.mean);
    const auto parts = eqn::total_loss(batch.y, out, prep.levels, prep.width, cfg.lambda);
    sum += parts.total.item() * static_cast<double>(len);
  }
  return sum / static_cast<double>(windows.size());
}

}  // namespace

double evaluate_loss(ForecastModel& model, const Prepared& prep, const std::vector<data::SampleWindow>& windows,
                     const PipelineConfig& cfg) {
  require(!windows.empty(), "evaluate_loss: no windows");
  return batched_loss(model, prep, windows, cfg);
}

TrainReport train(ForecastModel& model, const Prepared& prep, const PipelineConfig& cfg, TrainReport* partial) {
  require(!prep.windows.train.empty() && !prep.windows.val.empty(), "train: empty training or validation split");
  const auto& pv = prep.stats.at(kPv);
  const auto refs = model.parameters();
  std::vector<Eigen::VectorXd> m, v;
  for (const auto& [name, t] : refs.params) {
    m.push_back(Eigen::VectorXd::Zero(t->size()));
    v.push_back(Eigen::VectorXd::Zero(t->size()));
  }

  nets::Rng dropout_rng(derive_seed(cfg.seed, 3));
  nets::Rng shuffle_rng(derive_seed(cfg.seed, 4));
  std::vector<std::size_t> order(prep.windows.train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainReport report;
  report.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<Eigen::VectorXd> best = model.snapshot();
  int waited = 0;
  long step = 0;
  const auto t0 = Clock::now();

  auto fail = [&](const std::string& what) {
    model.restore(best);
    report.stop_reason = "diverged";
    report.total_seconds = seconds_since(t0);
    if (partial) *partial = report;
    throw NumericError(what);
  };

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto te = Clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double train_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t len = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size));
      const Batch batch = make_batch(prep.windows.train, std::span(order.data() + start, len), prep);
      for (const auto& [name, t] : refs.params) t->zero_grad();

      eqn::EqnOutput out;
      try {
        out = model.forward(batch, {true, &dropout_rng}, pv.stddev, pv.mean);
      } catch (const NumericError& e) {
        fail(fmt::format("train: epoch {}: {}", epoch, e.what()));
      }
      const auto parts = eqn::total_loss(batch.y, out, prep.levels, prep.width, cfg.lambda);
      const double loss = parts.total.item();
      if (!std::isfinite(loss)) fail(fmt::format("train: non-finite loss at epoch {}", epoch));
      parts.total.backward();
      train_sum += loss * static_cast<double>(len);

      ++step;
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < refs.params.size(); ++i) {
        ad::Tensor& p = *refs.params[i].second;
        if (p.grad().size() != p.size()) continue;
        const Eigen::VectorXd& g = p.grad();
        if (!g.allFinite()) fail("train: non-finite gradient for parameter '" + refs.params[i].first + "'");
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g.cwiseAbs2();
        p.mutable_value().array() -= cfg.lr * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + cfg.adam_eps);
      }
    }
    for (const auto& [name, t] : refs.params) t->zero_grad();

    const double val = batched_loss(model, prep, prep.windows.val, cfg);
    if (!std::isfinite(val)) fail(fmt::format("train: non-finite validation loss at epoch {}", epoch));
    EpochRecord rec{epoch, train_sum / static_cast<double>(order.size()), val, seconds_since(te)};
    report.epochs.push_back(rec);
    spdlog::info("epoch {:3d}  train {:.6g}  val {:.6g}  ({:.1f} s)", epoch, rec.train_loss, val, rec.seconds);

    if (val < report.best_val_loss - cfg.min_delta) {
      report.best_val_loss = val;
      report.best_epoch = epoch;
      best = model.snapshot();
      waited = 0;
    } else if (++waited >= cfg.patience) {
      report.stop_reason = "early_stop";
      break;
    }
  }
  if (report.stop_reason.empty()) report.stop_reason = "max_epochs";
  model.restore(best);
  report.total_seconds = seconds_since(t0);
  if (partial) *partial = report;
  return report;
}

// Prediction and evaluation -----------------------------------------------------

std::vector<ForecastRecord> predict(ForecastModel& model, const Prepared& prep,
                                    const std::vector<data::SampleWindow>& windows, const PipelineConfig& cfg) {
  require(model.config().levels == prep.levels.size(), "predict: model has " + std::to_string(model.config().levels) +
                                                           " quantile outputs, configuration has " +
                                                           std::to_string(prep.levels.size()));
  const auto& pv = prep.stats.at(kPv);
  std::vector<ForecastRecord> out;
  out.reserve(windows.size());
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t len = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size));
    const Batch batch = make_batch(windows, std::span(order.data() + start, len), prep);
    const auto res = model.forward(batch, {false, nullptr}, pv.stddev, pv.mean);
    const Eigen::MatrixXd q = res.quantiles.matrix();
    const Eigen::MatrixXd e = res.evidence.matrix();
    const Eigen::VectorXd u_ep = eqn::epistemic(e, cfg.epistemic_eps);
    const Eigen::VectorXd u_al = eqn::aleatoric(q, 0, prep.levels.size() - 1);
    for (Index b = 0; b < q.rows(); ++b) {
      const auto& w = windows[start + static_cast<std::size_t>(b)];
      ForecastRecord r;
      r.t = w.target_time;
      r.y_true = w.target;
      for (Index j = 0; j < q.cols(); ++j) r.quantiles.push_back(q(b, j));
      r.evidence_mean = e.row(b).mean();
      r.u_epistemic = u_ep[b];
      r.u_aleatoric = u_al[b];
      out.push_back(std::move(r));
    }
  }
  return out;
}

void write_forecasts_csv(const fs::path& path, const std::vector<ForecastRecord>& records,
                         const eqn::QuantileLevels& levels, const std::string& config_hash) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open '" + path.string() + "' for writing");
  out << "# config_hash: " << config_hash << '\n';
  out << "t,y_true";
  for (double tau : levels.values()) out << ",q_" << io::format_number(tau);
  out << ",evidence_mean,u_epistemic,u_aleatoric\n";
  for (const auto& r : records) {
    out << format_rfc3339(r.t) << ',' << io::format_number(r.y_true);
    for (double q : r.quantiles) out << ',' << io::format_number(q);
    out << ',' << io::format_number(r.evidence_mean) << ',' << io::format_number(r.u_epistemic) << ','
        << io::format_number(r.u_aleatoric) << '\n';
  }
}

std::vector<ForecastRecord> read_forecasts_csv(const fs::path& path, const eqn::QuantileLevels& levels) {
  const io::Table t = io::read_table(path);
  const std::size_t Q = levels.size();
  require(t.header.size() == Q + 5, path.string() + ": expected " + std::to_string(Q + 5) + " columns");
  for (std::size_t j = 0; j < Q; ++j)
    require(t.header[2 + j] == "q_" + io::format_number(levels[j]),
            path.string() + ": column '" + t.header[2 + j] + "' does not match the configured levels");
  std::vector<ForecastRecord> out;
  for (Index r = 0; r < t.values.rows(); ++r) {
    ForecastRecord rec;
    rec.t = parse_rfc3339(t.keys[static_cast<std::size_t>(r)]);
    rec.y_true = t.values(r, 0);
    for (std::size_t j = 0; j < Q; ++j) rec.quantiles.push_back(t.values(r, static_cast<Index>(1 + j)));
    rec.evidence_mean = t.values(r, static_cast<Index>(Q + 1));
    rec.u_epistemic = t.values(r, static_cast<Index>(Q + 2));
    rec.u_aleatoric = t.values(r, static_cast<Index>(Q + 3));
    out.push_back(std::move(rec));
  }
  return out;
}

metrics::EvalReport evaluate(const std::vector<ForecastRecord>& records, const eqn::QuantileLevels& levels,
                             double confidence) {
  require(!records.empty(), "evaluate: empty test split");
  const auto n = static_cast<Index>(records.size());
  const auto Q = static_cast<Index>(levels.size());
  Eigen::VectorXd y(n);
  Eigen::MatrixXd q(n, Q);
  for (Index i = 0; i < n; ++i) {
    const auto& r = records[static_cast<std::size_t>(i)];
    require(static_cast<Index>(r.quantiles.size()) == Q, "evaluate: quantile count mismatch");
    y[i] = r.y_true;
    for (Index j = 0; j < Q; ++j) q(i, j) = r.quantiles[static_cast<std::size_t>(j)];
  }
  const Index med = static_cast<Index>(levels.median());
  const Index lo = static_cast<Index>(levels.index_of((1.0 - confidence) / 2.0));
  const Index hi = static_cast<Index>(levels.index_of((1.0 + confidence) / 2.0));

  metrics::EvalReport rep;
  rep.n = records.size();
  rep.confidence = confidence;
  rep.nmae = metrics::nmae(y, q.col(med));
  rep.nrmse = metrics::nrmse(y, q.col(med));
  rep.r2 = metrics::r2(y, q.col(med));
  rep.crps = metrics::crps(q, y, levels.values());
  rep.ace = metrics::ace(y, q.col(lo), q.col(hi), confidence);
  rep.ws = metrics::winkler(y, q.col(lo), q.col(hi), confidence, metrics::WinklerConvention::AsPrinted);
  rep.ws_classical = metrics::winkler(y, q.col(lo), q.col(hi), confidence, metrics::WinklerConvention::Classical);
  return rep;
}

json to_json(const metrics::EvalReport& r, const std::string& config_hash) {
  return {{"config_hash", config_hash},
          {"n", r.n},
          {"confidence", r.confidence},
          {"nMAE", optional_json(r.nmae)},
          {"nRMSE", optional_json(r.nrmse)},
          {"R2", optional_json(r.r2)},
          {"CRPS", r.crps},
          {"ACE", r.ace},
          {"abs_ACE", std::abs(r.ace)},
          {"WS", r.ws},
          {"WS_classical", r.ws_classical}};
}

void write_eval_csv(const fs::path& path, const metrics::EvalReport& r, bool classical_winkler,
                    const std::string& config_hash) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open '" + path.string() + "' for writing");
  auto opt = [](const std::optional<double>& v) { return v ? io::format_number(*v) : std::string("NA"); };
  out << "# config_hash: " << config_hash << '\n';
  out << "nMAE,nRMSE,R2,CRPS,ACE,WS\n";
  out << opt(r.nmae) << ',' << opt(r.nrmse) << ',' << opt(r.r2) << ',' << io::format_number(r.crps) << ','
      << io::format_number(r.ace) << ',' << io::format_number(classical_winkler ? r.ws_classical : r.ws) << '\n';
}

// Checkpoints -------------------------------------------------------------------

void save_model(const fs::path& path, ForecastModel& model, const Prepared& prep, const PipelineConfig& cfg) {
  io::Checkpoint ck;
  json stats = json::object();
  for (const auto& c : prep.stats.channels) stats[c.name] = {{"mean", c.mean}, {"std", c.stddev}};
  json thetas = json::array();
  for (const auto& iv : prep.width.intervals) thetas.push_back({{"confidence", iv.confidence}, {"theta", iv.theta}});
  ck.metadata = {{"config", cfg.to_json()},
                 {"config_hash", cfg.hash()},
                 {"features", prep.features},
                 {"norm_stats", stats},
                 {"width_thresholds", thetas}};
  const auto refs = model.parameters();
  for (const auto& [name, t] : refs.params)
    ck.add(name, std::vector<std::int64_t>(t->shape().begin(), t->shape().end()), t->value());
  for (const auto& [name, b] : refs.buffers) ck.add(name, {b->size()}, *b);
  io::save_checkpoint(path, ck);
}

void load_model(const fs::path& path, ForecastModel& model) {
  const io::Checkpoint ck = io::load_checkpoint(path);
  const auto refs = model.parameters();
  auto check_shape = [&](const std::string& name, const std::vector<std::int64_t>& expected) {
    const auto& actual = ck.shapes[ck.find(name)].second;
    if (actual != expected) {
      auto str = [](const std::vector<std::int64_t>& s) {
        return ad::to_string(ad::Shape(s.begin(), s.end()));
      };
      throw ValidationError("checkpoint: '" + name + "' has shape " + str(actual) + ", model expects " + str(expected));
    }
    return ck.find(name);
  };
  for (const auto& [name, t] : refs.params)
    t->mutable_value() = ck.tensors[check_shape(name, std::vector<std::int64_t>(t->shape().begin(), t->shape().end()))];
  for (const auto& [name, b] : refs.buffers) *b = ck.tensors[check_shape(name, {b->size()})];
}

// Full run ----------------------------------------------------------------------

RunOutputs run_all(const PipelineConfig& cfg) {
  cfg.validate();
  const std::string hash = cfg.hash();
  RunOutputs out;
  out.run_dir = cfg.run_dir();
  fs::create_directories(out.run_dir);
  io::write_json(out.run_dir / "config.json", {{"config_hash", hash}, {"config", cfg.to_json()}});

  const data::AlignedDataset raw = load_or_synth(cfg);
  if (cfg.input.empty()) io::write_dataset_csv(out.run_dir / "data.csv", raw, hash);
  const Prepared prep = prepare(raw, cfg);
  json repair = io::to_json(prep.repair);
  repair["config_hash"] = hash;
  io::write_json(out.run_dir / "repair_report.json", repair);

  const auto& dec = prep.decomposition;
  const auto& ds = prep.dataset();
  std::vector<EpochSeconds> span(ds.timestamps.begin(), ds.timestamps.begin() + dec.result.residual.size());
  io::write_imfs_csv(out.run_dir / "imfs.csv", span, dec.result, hash);
  io::write_components_csv(out.run_dir / "components.csv", ds.timestamps, dec.high, dec.low, hash);
  json spec = io::spectral_report(dec.profiles, dec.groups, dec.fs, cfg.f_high);
  spec["config_hash"] = hash;
  io::write_json(out.run_dir / "spectral.json", spec);

  ForecastModel model(ModelConfig::from(cfg, static_cast<Index>(prep.features.size())), derive_seed(cfg.seed, 2));
  TrainReport partial;
  try {
    out.train = train(model, prep, cfg, &partial);
  } catch (const NumericError&) {
    save_model(out.run_dir / "checkpoint.bin", model, prep, cfg);
    json tr = partial.to_json();
    tr["config_hash"] = hash;
    io::write_json(out.run_dir / "train_report.json", tr);
    throw;
  }
  save_model(out.run_dir / "checkpoint.bin", model, prep, cfg);
  json tr = out.train.to_json();
  tr["config_hash"] = hash;
  io::write_json(out.run_dir / "train_report.json", tr);

  const auto records = predict(model, prep, prep.windows.test, cfg);
  write_forecasts_csv(out.run_dir / "forecasts.csv", records, prep.levels, hash);
  out.eval = evaluate(records, prep.levels, cfg.confidence);
  io::write_json(out.run_dir / "eval_report.json", to_json(out.eval, hash));
  write_eval_csv(out.run_dir / "eval_report.csv", out.eval, cfg.classical_winkler, hash);
  return out;
}

}  // namespace pvf::pipeline
