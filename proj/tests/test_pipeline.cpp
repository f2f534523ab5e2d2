#include <doctest.h>

#include "pvf/error.hpp"
#include "pvf/io.hpp"
#include "pvf/pipeline.hpp"
#include "tiny.hpp"

using namespace pvf;
using namespace pvf::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "pvf_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ForecastRecord record(double y, std::vector<double> q) {
  ForecastRecord r;
  r.t = 1656633600;
  r.y_true = y;
  r.quantiles = std::move(q);
  return r;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("config hash and validation") {
  PipelineConfig a;
  CHECK(a.hash().size() == 16);
  CHECK(a.hash() == PipelineConfig{}.hash());
  PipelineConfig b;
  b.seed = 43;
  CHECK(a.hash() != b.hash());
  PipelineConfig c;
  c.out_dir = "elsewhere";
  c.threads = 7;
  CHECK(a.hash() == c.hash());
  CHECK(c.run_dir() == fs::path("elsewhere") / a.hash());
  a.validate();

  auto bad = [](auto mutate) {
    PipelineConfig x;
    mutate(x);
    CHECK_THROWS_AS(x.validate(), ValidationError);
  };
  bad([](PipelineConfig& x) { x.ratios = {0.8, 0.1, 0.2}; });
  bad([](PipelineConfig& x) { x.levels = {0.1, 0.9}; });
  bad([](PipelineConfig& x) { x.lambda.width = -1; });
  bad([](PipelineConfig& x) { x.itr_heads = 3; });
  bad([](PipelineConfig& x) { x.noise_mode = "pink"; });
  bad([](PipelineConfig& x) { x.horizon = 2; });
  bad([](PipelineConfig& x) { x.confidence = 0.5; });
  bad([](PipelineConfig& x) { x.patience = -1; });
}

TEST_CASE("seed streams are distinct and stable") {
  CHECK(derive_seed(42, 0) != derive_seed(42, 1));
  CHECK(derive_seed(42, 0) != derive_seed(43, 0));
  CHECK(derive_seed(42, 2) == derive_seed(42, 2));
}

TEST_CASE("evaluate matches direct metric calls") {
  eqn::QuantileLevels levels;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0, 1);
  std::vector<ForecastRecord> recs;
  Eigen::VectorXd y(40);
  Eigen::MatrixXd q(40, 11);
  for (int i = 0; i < 40; ++i) {
    std::vector<double> row(11);
    const double centre = 50 + 10 * g(rng);
    for (int j = 0; j < 11; ++j) row[static_cast<std::size_t>(j)] = centre + 8 * (levels[static_cast<std::size_t>(j)] - 0.5);
    y[i] = centre + 3 * g(rng);
    for (int j = 0; j < 11; ++j) q(i, j) = row[static_cast<std::size_t>(j)];
    recs.push_back(record(y[i], row));
  }
  const auto rep = evaluate(recs, levels, 0.9);
  CHECK(*rep.nmae == *metrics::nmae(y, q.col(5)));
  CHECK(*rep.nrmse == *metrics::nrmse(y, q.col(5)));
  CHECK(*rep.r2 == *metrics::r2(y, q.col(5)));
  CHECK(rep.crps == metrics::crps(q, y, levels.values()));
  CHECK(rep.ace == metrics::ace(y, q.col(0), q.col(10), 0.9));
  CHECK(rep.ws == metrics::winkler(y, q.col(0), q.col(10), 0.9));
  CHECK(rep.n == 40);

  const auto j = to_json(rep, "h");
  CHECK(j["config_hash"] == "h");
  CHECK(j["abs_ACE"] == std::abs(rep.ace));

  const auto dir = scratch_dir("eval");
  write_eval_csv(dir / "e.csv", rep, false, "h");
  const auto t = io::read_table(dir / "e.csv");
  CHECK(t.header == std::vector<std::string>{"nMAE", "nRMSE", "R2", "CRPS", "ACE", "WS"});
  CHECK(std::stod(t.keys[0]) == *rep.nmae);
  CHECK(t.values(0, 4) == rep.ws);
  CHECK_THROWS_AS(evaluate({}, levels, 0.9), ValidationError);
}

TEST_CASE("perfect oracle forecast") {
  eqn::QuantileLevels levels;
  std::vector<ForecastRecord> recs;
  for (int i = 1; i <= 10; ++i) {
    std::vector<double> row(11, static_cast<double>(i));
    row[0] -= 1.0;
    row[10] += 1.0;
    recs.push_back(record(i, row));
  }
  const auto rep = evaluate(recs, levels, 0.9);
  CHECK(*rep.nmae == 0.0);
  CHECK(*rep.r2 == 1.0);
  CHECK(rep.ws == doctest::Approx(2.0));
  CHECK(rep.ace == doctest::Approx(0.1));
}

TEST_CASE("forecast csv round trip") {
  eqn::QuantileLevels levels;
  std::vector<ForecastRecord> recs;
  for (int i = 0; i < 3; ++i) {
    auto r = record(0.1 * i, std::vector<double>(11, 1.0 / 3.0 + i));
    r.t += 300 * i;
    r.evidence_mean = 2.5;
    r.u_epistemic = 1.0 / 7.0;
    r.u_aleatoric = 0.0;
    recs.push_back(r);
  }
  const auto path = scratch_dir("fc") / "f.csv";
  write_forecasts_csv(path, recs, levels, "hash");
  const auto back = read_forecasts_csv(path, levels);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].t == recs[i].t);
    CHECK(back[i].y_true == recs[i].y_true);
    CHECK(back[i].quantiles == recs[i].quantiles);
    CHECK(back[i].u_epistemic == recs[i].u_epistemic);
  }
  CHECK_THROWS_AS(read_forecasts_csv(path, eqn::QuantileLevels({0.1, 0.5, 0.9})), ValidationError);
}

TEST_CASE("training statistics never see validation or test rows") {
  auto cfg = testing::tiny_config();
  const auto raw = load_or_synth(cfg);
  const auto base = prepare(raw, cfg);
  REQUIRE(base.train_rows < raw.rows());
  CHECK(base.windows.train.back().target_row < base.train_rows);
  CHECK(base.windows.val.front().target_row >= base.train_rows);

  auto tampered = raw;
  for (Eigen::Index i = base.train_rows; i < raw.rows(); ++i) {
    tampered.pv.values[i] = 3.0 * raw.pv.values[i] + 17.0;
    for (auto& c : tampered.weather) c.values[i] = -c.values[i] * 5.0;
  }

  auto same_channel = [](const Prepared& a, const Prepared& b, const std::string& name) {
    CHECK(a.stats.at(name).mean == b.stats.at(name).mean);
    CHECK(a.stats.at(name).stddev == b.stats.at(name).stddev);
  };

  SUBCASE("default mode: pv and weather statistics, features and thresholds") {
    const auto other = prepare(tampered, cfg);
    CHECK(other.features == base.features);
    same_channel(base, other, "pv");
    for (const auto& f : base.features) same_channel(base, other, f);
    for (std::size_t k = 0; k < base.width.intervals.size(); ++k)
      CHECK(other.width.intervals[k].theta == base.width.intervals[k].theta);
  }
  SUBCASE("strict mode: decomposition statistics as well") {
    cfg.strict = true;
    const auto s1 = prepare(raw, cfg);
    const auto s2 = prepare(tampered, cfg);
    for (const auto& c : s1.stats.channels) same_channel(s1, s2, c.name);
    CHECK(s1.decomposition.high.head(s1.train_rows) == s2.decomposition.high.head(s2.train_rows));
  }
}

TEST_CASE("strict mode extends causally") {
  auto cfg = testing::tiny_config();
  cfg.strict = true;
  const auto raw = load_or_synth(cfg);
  const auto prep = prepare(raw, cfg);
  // Changing a row changes nothing before it.
  auto later = raw;
  const Eigen::Index cut = prep.train_rows + 20;
  for (Eigen::Index i = cut; i < raw.rows(); ++i) later.pv.values[i] += 5.0;
  const auto prep2 = prepare(later, cfg);
  CHECK(prep.decomposition.high.head(cut) == prep2.decomposition.high.head(cut));
  CHECK(prep.decomposition.low.head(cut) == prep2.decomposition.low.head(cut));
  const Eigen::VectorXd sum = prep.decomposition.high + prep.decomposition.low;
  CHECK((sum - prep.dataset().pv.values).cwiseAbs().maxCoeff() < 1e-8 * prep.dataset().pv.values.cwiseAbs().maxCoeff());
}

TEST_CASE("early stopping boundaries") {
  auto cfg = testing::tiny_config();
  cfg.max_epochs = 6;
  cfg.min_delta = 1e12;  // nothing after the first epoch counts as an improvement
  const auto prep = prepare(load_or_synth(cfg), cfg);
  for (int patience : {0, 1, 3}) {
    cfg.patience = patience;
    ForecastModel model(ModelConfig::from(cfg, static_cast<Index>(prep.features.size())), derive_seed(cfg.seed, 2));
    const auto rep = train(model, prep, cfg);
    INFO("patience " << patience);
    CHECK(rep.stop_reason == "early_stop");
    CHECK(rep.best_epoch == 1);
    CHECK(rep.epochs.size() == static_cast<std::size_t>(1 + std::max(patience, 1)));
  }
}

TEST_CASE("training is deterministic and keeps the best epoch") {
  auto cfg = testing::tiny_config();
  cfg.max_epochs = 3;
  const auto prep = prepare(load_or_synth(cfg), cfg);
  auto run = [&] {
    ForecastModel model(ModelConfig::from(cfg, static_cast<Index>(prep.features.size())), derive_seed(cfg.seed, 2));
    auto rep = train(model, prep, cfg);
    return std::make_pair(rep, predict(model, prep, prep.windows.test, cfg));
  };
  const auto [r1, p1] = run();
  const auto [r2, p2] = run();
  REQUIRE(r1.epochs.size() == r2.epochs.size());
  for (std::size_t e = 0; e < r1.epochs.size(); ++e) {
    CHECK(r1.epochs[e].train_loss == r2.epochs[e].train_loss);
    CHECK(r1.epochs[e].val_loss == r2.epochs[e].val_loss);
  }
  for (std::size_t e = 0; e + 1 < static_cast<std::size_t>(r1.best_epoch); ++e)
    CHECK(r1.best_val_loss <= r1.epochs[e].val_loss);
  REQUIRE(p1.size() == prep.windows.test.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].quantiles == p2[i].quantiles);
    CHECK(std::is_sorted(p1[i].quantiles.begin(), p1[i].quantiles.end()));
    CHECK(p1[i].u_aleatoric >= 0.0);
    CHECK(p1[i].u_epistemic > 0.0);
  }
}

TEST_CASE("checkpoint save and load through the model") {
  auto cfg = testing::tiny_config();
  cfg.max_epochs = 1;
  const auto prep = prepare(load_or_synth(cfg), cfg);
  const auto mc = ModelConfig::from(cfg, static_cast<Index>(prep.features.size()));
  ForecastModel trained(mc, derive_seed(cfg.seed, 2));
  train(trained, prep, cfg);
  const auto path = scratch_dir("model") / "checkpoint.bin";
  save_model(path, trained, prep, cfg);

  ForecastModel fresh(mc, 12345);
  load_model(path, fresh);
  const auto a = predict(trained, prep, prep.windows.test, cfg);
  const auto b = predict(fresh, prep, prep.windows.test, cfg);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].quantiles == b[i].quantiles);

  const auto meta = io::load_checkpoint(path).metadata;
  CHECK(meta["config_hash"] == cfg.hash());
  CHECK(meta["features"].size() == prep.features.size());

  auto wider = mc;
  wider.d = 16;
  wider.fusion_heads = 2;
  ForecastModel other(wider, 1);
  CHECK_THROWS_WITH_AS(load_model(path, other), doctest::Contains("model expects"), ValidationError);
}

TEST_CASE("divergence raises a numeric error") {
  auto cfg = testing::tiny_config();
  cfg.lr = 1e300;
  cfg.max_epochs = 3;
  const auto prep = prepare(load_or_synth(cfg), cfg);
  ForecastModel model(ModelConfig::from(cfg, static_cast<Index>(prep.features.size())), derive_seed(cfg.seed, 2));
  TrainReport partial;
  CHECK_THROWS_AS(train(model, prep, cfg, &partial), NumericError);
  CHECK(partial.stop_reason == "diverged");
}

}  // TEST_SUITE
