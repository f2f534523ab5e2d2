// Command-line front end: synth, repair, decompose, train, predict, evaluate, run-all.

#include <CLI11.hpp>
#include <iostream>

#include <spdlog/spdlog.h>

#include "pvf/error.hpp"
#include "pvf/io.hpp"
#include "pvf/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
namespace io = pvf::io;
namespace pl = pvf::pipeline;

struct Paths {
  std::string output;
  std::string checkpoint;
  std::string forecasts;
  std::string split = "test";
};

void add_config_options(CLI::App& app, pl::PipelineConfig& c) {
  app.add_option("--input", c.input, "Dataset CSV (timestamp,<channel>...); synthetic data when empty");
  app.add_option("--seed", c.seed, "Run seed")->envname("PVF_SEED");
  app.add_option("--out-dir", c.out_dir, "Parent of the run directory");
  app.add_option("--threads", c.threads, "CEEMDAN worker threads (0 = all cores); results do not depend on it");

  app.add_option("--synth-days", c.synth_days);
  app.add_option("--cloud-amplitude", c.cloud_amplitude);
  app.add_option("--capacity-kw", c.capacity_kw);

  app.add_option("--ensemble-size", c.ensemble_size);
  app.add_option("--noise-factor", c.noise_factor);
  app.add_option("--sd-threshold", c.sd_threshold);
  app.add_option("--max-sift-iterations", c.max_sift_iterations);
  app.add_option("--max-imfs", c.max_imfs, "0 = until the residual is monotone");
  app.add_option("--noise-mode", c.noise_mode)->check(CLI::IsMember({"noise-modes", "fresh-white"}));
  app.add_option("--f-high", c.f_high, "High/low threshold in Hz");
  app.add_flag("--strict,!--no-strict", c.strict, "Decompose the training span only, extend causally");
  app.add_option("--strict-window", c.strict_window);

  app.add_option("--lookback", c.lookback);
  app.add_option("--horizon", c.horizon);
  app.add_option("--ratios", c.ratios)->delimiter(',');
  app.add_option("--top-k", c.top_k);

  app.add_option("--d-model", c.d_model);
  app.add_option("--cnn-filters", c.cnn_filters);
  app.add_option("--cnn-layers", c.cnn_layers);
  app.add_option("--cnn-kernel", c.cnn_kernel);
  app.add_option("--dropout", c.dropout);
  app.add_option("--itr-dim", c.itr_dim);
  app.add_option("--itr-depth", c.itr_depth);
  app.add_option("--itr-heads", c.itr_heads);
  app.add_option("--itr-ff", c.itr_ff);
  app.add_option("--lstm-hidden", c.lstm_hidden);
  app.add_option("--lstm-layers", c.lstm_layers);
  app.add_option("--fusion-heads", c.fusion_heads);
  app.add_option("--eqn-hidden", c.eqn_hidden);

  app.add_option("--levels", c.levels)->delimiter(',');
  app.add_option("--width-confidences", c.width_confidences)->delimiter(',');
  app.add_option("--width-weights", c.width_weights)->delimiter(',');
  app.add_option("--theta-multiplier", c.theta_multiplier);
  app.add_option("--lambda-quantile", c.lambda.quantile);
  app.add_option("--lambda-evidence", c.lambda.evidence);
  app.add_option("--lambda-width", c.lambda.width);
  app.add_option("--epistemic-eps", c.epistemic_eps);

  app.add_option("--lr", c.lr);
  app.add_option("--beta1", c.beta1);
  app.add_option("--beta2", c.beta2);
  app.add_option("--adam-eps", c.adam_eps);
  app.add_option("--batch-size", c.batch_size);
  app.add_option("--max-epochs", c.max_epochs);
  app.add_option("--patience", c.patience);
  app.add_option("--min-delta", c.min_delta);

  app.add_option("--confidence", c.confidence);
  app.add_flag("--classical-winkler", c.classical_winkler, "WS column uses 2/(1 - confidence)");
}

std::string hashed(const pl::PipelineConfig& cfg) { return cfg.hash(); }

fs::path or_default(const std::string& given, const fs::path& fallback) {
  return given.empty() ? fallback : fs::path(given);
}

void cmd_synth(const pl::PipelineConfig& cfg, const Paths& p) {
  const auto path = or_default(p.output, cfg.run_dir() / "data.csv");
  io::write_dataset_csv(path, pl::load_or_synth(cfg), hashed(cfg));
  std::cout << path.string() << '\n';
}

void cmd_repair(const pl::PipelineConfig& cfg, const Paths& p) {
  const auto rep = pvf::data::repair_dataset(pl::load_or_synth(cfg));
  const auto path = or_default(p.output, cfg.run_dir() / "repaired.csv");
  io::write_dataset_csv(path, rep.dataset, hashed(cfg));
  auto j = io::to_json(rep);
  j["config_hash"] = hashed(cfg);
  io::write_json(path.parent_path() / "repair_report.json", j);
  std::cout << path.string() << '\n';
}

void cmd_decompose(const pl::PipelineConfig& cfg) {
  const auto prep = pl::prepare(pl::load_or_synth(cfg), cfg);
  const auto& dec = prep.decomposition;
  const auto& ds = prep.dataset();
  const auto dir = cfg.run_dir();
  const std::vector<pvf::EpochSeconds> span(ds.timestamps.begin(),
                                            ds.timestamps.begin() + dec.result.residual.size());
  io::write_imfs_csv(dir / "imfs.csv", span, dec.result, hashed(cfg));
  io::write_components_csv(dir / "components.csv", ds.timestamps, dec.high, dec.low, hashed(cfg));
  auto j = io::spectral_report(dec.profiles, dec.groups, dec.fs, cfg.f_high);
  j["config_hash"] = hashed(cfg);
  io::write_json(dir / "spectral.json", j);
  std::cout << dir.string() << '\n';
}

pl::ModelConfig model_config(const pl::PipelineConfig& cfg, const pl::Prepared& prep) {
  return pl::ModelConfig::from(cfg, static_cast<pvf::ad::Index>(prep.features.size()));
}

void cmd_train(const pl::PipelineConfig& cfg) {
  const auto prep = pl::prepare(pl::load_or_synth(cfg), cfg);
  pl::ForecastModel model(model_config(cfg, prep), pl::derive_seed(cfg.seed, 2));
  const auto dir = cfg.run_dir();
  pl::TrainReport report;
  try {
    pl::train(model, prep, cfg, &report);
  } catch (const pvf::NumericError&) {
    pl::save_model(dir / "checkpoint.bin", model, prep, cfg);
    throw;
  }
  pl::save_model(dir / "checkpoint.bin", model, prep, cfg);
  auto j = report.to_json();
  j["config_hash"] = hashed(cfg);
  io::write_json(dir / "train_report.json", j);
  std::cout << (dir / "checkpoint.bin").string() << '\n';
}

void cmd_predict(const pl::PipelineConfig& cfg, const Paths& p) {
  const auto prep = pl::prepare(pl::load_or_synth(cfg), cfg);
  pl::ForecastModel model(model_config(cfg, prep), pl::derive_seed(cfg.seed, 2));
  pl::load_model(or_default(p.checkpoint, cfg.run_dir() / "checkpoint.bin"), model);
  std::vector<pvf::data::SampleWindow> windows;
  const auto& w = prep.windows;
  if (p.split == "train" || p.split == "all") windows.insert(windows.end(), w.train.begin(), w.train.end());
  if (p.split == "val" || p.split == "all") windows.insert(windows.end(), w.val.begin(), w.val.end());
  if (p.split == "test" || p.split == "all") windows.insert(windows.end(), w.test.begin(), w.test.end());
  const auto path = or_default(p.output, cfg.run_dir() / "forecasts.csv");
  pl::write_forecasts_csv(path, pl::predict(model, prep, windows, cfg), prep.levels, hashed(cfg));
  std::cout << path.string() << '\n';
}

void cmd_evaluate(const pl::PipelineConfig& cfg, const Paths& p) {
  cfg.validate();
  const pvf::eqn::QuantileLevels levels(cfg.levels);
  const auto records = pl::read_forecasts_csv(or_default(p.forecasts, cfg.run_dir() / "forecasts.csv"), levels);
  const auto rep = pl::evaluate(records, levels, cfg.confidence);
  const auto dir = p.output.empty() ? cfg.run_dir() : fs::path(p.output);
  io::write_json(dir / "eval_report.json", pl::to_json(rep, hashed(cfg)));
  pl::write_eval_csv(dir / "eval_report.csv", rep, cfg.classical_winkler, hashed(cfg));
  std::cout << pl::to_json(rep, hashed(cfg)).dump(2) << '\n';
}

void cmd_run_all(const pl::PipelineConfig& cfg) {
  const auto out = pl::run_all(cfg);
  std::cout << out.run_dir.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic PV forecasting: CEEMDAN decomposition, CNN/iTransformer/BiLSTM features, evidential quantiles"};
  app.set_config("--config", "", "TOML/INI file whose keys match the long option names");
  app.require_subcommand(1);
  app.fallthrough();

  pl::PipelineConfig cfg;
  Paths paths;
  bool verbose = false;
  add_config_options(app, cfg);
  app.add_flag("-v,--verbose", verbose, "Log per-epoch progress");

  auto* synth = app.add_subcommand("synth", "Write the synthetic dataset");
  synth->add_option("-o,--output", paths.output);
  auto* repair = app.add_subcommand("repair", "Apply the missing-value rules to --input");
  repair->add_option("-o,--output", paths.output);
  auto* decompose = app.add_subcommand("decompose", "CEEMDAN, spectral grouping, S_high/S_low export");
  auto* train = app.add_subcommand("train", "Train and write checkpoint.bin");
  auto* predict = app.add_subcommand("predict", "Forecast a split with a trained checkpoint");
  predict->add_option("--checkpoint", paths.checkpoint);
  predict->add_option("--split", paths.split)->check(CLI::IsMember({"train", "val", "test", "all"}));
  predict->add_option("-o,--output", paths.output);
  auto* evaluate = app.add_subcommand("evaluate", "Score a forecast CSV");
  evaluate->add_option("--forecasts", paths.forecasts);
  evaluate->add_option("-o,--output-dir", paths.output);
  auto* run_all = app.add_subcommand("run-all", "Every stage in sequence");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);
  try {
    if (*synth) cmd_synth(cfg, paths);
    else if (*repair) cmd_repair(cfg, paths);
    else if (*decompose) cmd_decompose(cfg);
    else if (*train) cmd_train(cfg);
    else if (*predict) cmd_predict(cfg, paths);
    else if (*evaluate) cmd_evaluate(cfg, paths);
    else if (*run_all) cmd_run_all(cfg);
  } catch (const pvf::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 2;
  } catch (const pvf::ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
