#include <doctest.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "pvf/error.hpp"
#include "pvf/io.hpp"

using namespace pvf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "pvf_tests";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("number formatting round-trips") {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5e17, 350.0, 0.0}) CHECK(std::stod(io::format_number(v)) == v);
  CHECK(io::format_number(350.0) == "350");
  CHECK(io::format_number(data::kMissing) == "NA");
}

TEST_CASE("dataset csv with missing cells and absent rows") {
  std::istringstream in(
      "# comment\n"
      "timestamp,irradiance,pv\n"
      "2022-07-01T00:00:00Z,1,10\n"
      "2022-07-01T00:05:00Z,NA,11\n"
      "2022-07-01T00:15:00Z,3,\n"
      "2022-07-01T00:20:00Z,4,14\n");
  const auto ds = io::read_dataset_csv(in);
  CHECK(ds.step == 300);
  REQUIRE(ds.rows() == 5);
  CHECK(ds.pv.name == "pv");
  CHECK(ds.pv.values[1] == 11.0);
  CHECK(data::is_missing(ds.pv.values[2]));
  CHECK(data::is_missing(ds.pv.values[3]));
  CHECK(data::is_missing(ds.weather_channel("irradiance").values[1]));
  CHECK(ds.timestamps[2] == parse_rfc3339("2022-07-01T00:10:00Z"));
}

TEST_CASE("malformed csv input is rejected") {
  std::istringstream no_header("when,pv\n2022-07-01T00:00:00Z,1\n");
  CHECK_THROWS_AS(io::read_dataset_csv(no_header), ValidationError);
  std::istringstream bad_number("timestamp,pv\n2022-07-01T00:00:00Z,abc\n2022-07-01T00:05:00Z,1\n");
  CHECK_THROWS_AS(io::read_dataset_csv(bad_number), ValidationError);
  std::istringstream ragged("timestamp,pv,x\n2022-07-01T00:00:00Z,1\n2022-07-01T00:05:00Z,1,2\n");
  CHECK_THROWS_AS(io::read_dataset_csv(ragged), ValidationError);
  CHECK_THROWS_AS(io::read_dataset_csv(scratch("does_not_exist.csv")), ValidationError);
}

TEST_CASE("dataset csv write then read") {
  data::SynthConfig sc;
  sc.days = 2;
  auto ds = data::synth_dataset(sc, 3);
  ds.pv.values[7] = data::kMissing;
  const auto path = scratch("roundtrip.csv");
  io::write_dataset_csv(path, ds, "abc");
  const auto back = io::read_dataset_csv(path);
  REQUIRE(back.rows() == ds.rows());
  CHECK(back.timestamps == ds.timestamps);
  CHECK(data::is_missing(back.pv.values[7]));
  for (Eigen::Index i = 0; i < ds.rows(); ++i)
    if (i != 7) CHECK(back.pv.values[i] == ds.pv.values[i]);
  for (std::size_t c = 0; c < ds.weather.size(); ++c) CHECK(back.weather[c].values == ds.weather[c].values);
  std::ifstream f(path);
  std::string first;
  std::getline(f, first);
  CHECK(first == "# config_hash: abc");
}

TEST_CASE("checkpoint round trip is lossless") {
  io::Checkpoint ck;
  ck.metadata = {{"k", "v"}, {"n", 3}};
  Eigen::VectorXd a(6);
  a << 0.1, -1.0 / 3.0, 1e-310, 7e300, -0.0, 42;
  ck.add("layer.weight", {2, 3}, a);
  ck.add("layer.bias", {3}, Eigen::VectorXd::Constant(3, 0.25));
  const auto path = scratch("ckpt.bin");
  io::save_checkpoint(path, ck);
  const auto back = io::load_checkpoint(path);
  CHECK(back.metadata == ck.metadata);
  REQUIRE(back.shapes.size() == 2);
  CHECK(back.shapes[0].first == "layer.weight");
  CHECK(back.shapes[0].second == std::vector<std::int64_t>{2, 3});
  CHECK(std::memcmp(back.tensors[0].data(), a.data(), sizeof(double) * 6) == 0);
  CHECK(back.find("layer.bias") == 1);
  CHECK_THROWS_AS(back.find("nope"), ValidationError);
  CHECK_THROWS_AS(ck.add("bad", {4}, Eigen::VectorXd::Zero(3)), ValidationError);

  std::ofstream(scratch("junk.bin"), std::ios::binary) << "not a checkpoint";
  CHECK_THROWS_AS(io::load_checkpoint(scratch("junk.bin")), ValidationError);
}

TEST_CASE("numeric table reader") {
  const auto path = scratch("table.csv");
  std::ofstream(path) << "# x\nt,a,b\nr1,1,2\nr2,3,NA\n";
  const auto t = io::read_table(path);
  CHECK(t.header == std::vector<std::string>{"t", "a", "b"});
  CHECK(t.keys == std::vector<std::string>{"r1", "r2"});
  CHECK(t.values(1, 0) == 3.0);
  CHECK(std::isnan(t.values(1, 1)));
}

TEST_CASE("repair report json") {
  data::DatasetRepair r;
  r.dropped_days = {day_of(parse_rfc3339("2022-07-03T00:00:00Z"))};
  r.zero_filled = 2;
  const auto j = io::to_json(r);
  CHECK(j["dropped_days"][0] == "2022-07-03");
  CHECK(j["zero_filled"] == 2);
}

}  // TEST_SUITE
