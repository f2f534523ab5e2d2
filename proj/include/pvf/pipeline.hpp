#pragma once

// End-to-end orchestration: preparation, training, prediction, evaluation.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pvf/data.hpp"
#include "pvf/emd.hpp"
#include "pvf/eqn.hpp"
#include "pvf/metrics.hpp"
#include "pvf/nets.hpp"
#include "pvf/spectral.hpp"

namespace pvf::pipeline {

namespace fs = std::filesystem;
using ad::Index;
using nlohmann::json;

struct PipelineConfig {
  // Data. An empty `input` selects the synthetic generator.
  std::string input;
  int synth_days = 30;
  double cloud_amplitude = 0.3;
  double capacity_kw = 350.0;
  std::uint64_t seed = 42;

  // Decomposition.
  std::size_t ensemble_size = 50;
  double noise_factor = 0.2;
  double sd_threshold = 0.2;
  int max_sift_iterations = 100;
  std::size_t max_imfs = 0;
  std::string noise_mode = "noise-modes";
  double f_high = spectral::kDefaultHighThresholdHz;
  /// Decompose the training span only and extend causally with trailing windows.
  bool strict = false;
  Index strict_window = 576;

  // Windows and split.
  Index lookback = 12;
  Index horizon = 1;
  std::array<double, 3> ratios{0.8, 0.1, 0.1};
  std::size_t top_k = 4;

  // Networks.
  Index d_model = 64;
  Index cnn_filters = 64;
  Index cnn_layers = 2;
  Index cnn_kernel = 3;
  double dropout = 0.1;
  Index itr_dim = 128;
  Index itr_depth = 4;
  Index itr_heads = 8;
  Index itr_ff = 256;
  Index lstm_hidden = 64;
  Index lstm_layers = 2;
  Index fusion_heads = 4;
  Index eqn_hidden = 128;

  // Head and loss.
  std::vector<double> levels{0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95};
  std::vector<double> width_confidences{0.6, 0.8, 0.9};
  std::vector<double> width_weights{1.0, 1.0, 2.0};
  double theta_multiplier = 2.0;
  eqn::LossWeights lambda{};
  double epistemic_eps = 1e-6;

  // Optimizer.
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Index batch_size = 64;
  int max_epochs = 100;
  int patience = 10;
  double min_delta = 1e-6;

  // Evaluation.
  double confidence = 0.9;
  bool classical_winkler = false;

  // Execution only; not part of the hash.
  std::string out_dir = "runs";
  unsigned threads = 0;

  void validate() const;
  /// Every field that influences results, keys sorted.
  json to_json() const;
  /// 16 hex digits of FNV-1a over the canonical JSON.
  std::string hash() const;
  fs::path run_dir() const { return fs::path(out_dir) / hash(); }
  emd::CeemdanConfig ceemdan() const;
};

/// Independent RNG stream derived from the run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

data::AlignedDataset load_or_synth(const PipelineConfig& cfg);

struct Decomposition {
  /// Full-series decomposition, or the training span in strict mode.
  emd::DecompositionResult<double> result;
  std::vector<spectral::FrequencyProfile<double>> profiles;
  spectral::Grouping groups;
  Eigen::VectorXd high;
  Eigen::VectorXd low;
  double fs = 0.0;
};

/// CEEMDAN, spectral grouping and reconstruction of the PV channel.
/// `causal_from` (strict mode) is the first row computed from trailing windows.
Decomposition run_decompose(const data::AlignedDataset& ds, const PipelineConfig& cfg,
                            std::optional<Index> causal_from = std::nullopt);

/// Everything derived from data before the model sees it.
struct Prepared {
  data::DatasetRepair repair;
  Decomposition decomposition;
  std::vector<std::string> features;
  std::vector<data::FeatureScore> feature_scores;
  /// pv, high, low and the selected weather channels, fit on training rows.
  data::NormStats stats;
  data::Split<data::SampleWindow> windows;
  /// Last row (exclusive) that training statistics may see.
  Index train_rows = 0;
  eqn::QuantileLevels levels;
  eqn::WidthSpec width;

  const data::AlignedDataset& dataset() const { return repair.dataset; }
};

Prepared prepare(const data::AlignedDataset& raw, const PipelineConfig& cfg);

/// Central `confidence` interval width of y(t+1) - y(t) over training windows.
double persistence_interval_width(const std::vector<data::SampleWindow>& train, double confidence);

struct Batch {
  ad::Tensor high;     // [B, T, 1]
  ad::Tensor low;      // [B, T, 1]
  ad::Tensor weather;  // [B, T, F]
  Eigen::VectorXd y;   // physical units
};

Batch make_batch(const std::vector<data::SampleWindow>& windows, std::span<const std::size_t> rows,
                 const Prepared& prep);

struct ModelConfig {
  Index lookback = 12;
  Index weather_features = 4;
  Index d = 64;
  nets::CnnConfig cnn{};
  nets::ITransformerConfig itr{};
  nets::BiLstmConfig lstm{};
  Index fusion_heads = 4;
  Index eqn_hidden = 128;
  std::size_t levels = 11;

  static ModelConfig from(const PipelineConfig& cfg, Index weather_features);
};

/// Three extractors, attention fusion and the evidential quantile head.
class ForecastModel {
 public:
  ForecastModel(const ModelConfig& cfg, std::uint64_t seed);
  ForecastModel(const ForecastModel&) = delete;
  ForecastModel& operator=(const ForecastModel&) = delete;

  /// Quantiles come out in physical units via `scale` and `shift`.
  eqn::EqnOutput forward(const Batch& batch, const nets::ForwardContext& ctx, double scale, double shift);
  nets::ParamRefs parameters();
  const ModelConfig& config() const { return cfg_; }

  /// Copies parameters and buffers out of / into flat storage.
  std::vector<Eigen::VectorXd> snapshot();
  void restore(const std::vector<Eigen::VectorXd>& values);

 private:
  ModelConfig cfg_;
  nets::CnnExtractor cnn_;
  nets::ITransformer itr_;
  nets::BiLstm lstm_;
  nets::AttentionFusion fusion_;
  eqn::EqnHead head_;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::string stop_reason;
  double total_seconds = 0.0;

  json to_json() const;
};

/// Mini-batch Adam on the total loss with early stopping on validation loss.
/// Leaves the best-validation parameters in `model`. On a non-finite loss the
/// best parameters so far are restored and NumericError is thrown.
TrainReport train(ForecastModel& model, const Prepared& prep, const PipelineConfig& cfg,
                  TrainReport* partial = nullptr);

/// Mean total loss over `windows` in eval mode.
double evaluate_loss(ForecastModel& model, const Prepared& prep, const std::vector<data::SampleWindow>& windows,
                     const PipelineConfig& cfg);

struct ForecastRecord {
  EpochSeconds t = 0;
  double y_true = 0.0;
  std::vector<double> quantiles;
  double evidence_mean = 0.0;
  double u_epistemic = 0.0;
  double u_aleatoric = 0.0;
};

std::vector<ForecastRecord> predict(ForecastModel& model, const Prepared& prep,
                                    const std::vector<data::SampleWindow>& windows, const PipelineConfig& cfg);

void write_forecasts_csv(const fs::path& path, const std::vector<ForecastRecord>& records,
                         const eqn::QuantileLevels& levels, const std::string& config_hash);
std::vector<ForecastRecord> read_forecasts_csv(const fs::path& path, const eqn::QuantileLevels& levels);

metrics::EvalReport evaluate(const std::vector<ForecastRecord>& records, const eqn::QuantileLevels& levels,
                             double confidence);
json to_json(const metrics::EvalReport& r, const std::string& config_hash);
void write_eval_csv(const fs::path& path, const metrics::EvalReport& r, bool classical_winkler,
                    const std::string& config_hash);

/// Checkpoint with parameters, buffers, the config and the normalization state.
void save_model(const fs::path& path, ForecastModel& model, const Prepared& prep, const PipelineConfig& cfg);
/// Throws ValidationError with expected/actual shapes on mismatch.
void load_model(const fs::path& path, ForecastModel& model);

/// Files written by `run_all`, relative to the run directory.
struct RunOutputs {
  fs::path run_dir;
  TrainReport train;
  metrics::EvalReport eval;
};

RunOutputs run_all(const PipelineConfig& cfg);

}  // namespace pvf::pipeline
