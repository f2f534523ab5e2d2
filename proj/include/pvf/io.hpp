#pragma once

// CSV, JSON and checkpoint files.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pvf/data.hpp"
#include "pvf/emd.hpp"
#include "pvf/spectral.hpp"

namespace pvf::io {

namespace fs = std::filesystem;
using nlohmann::json;

/// Shortest decimal form that reads back to the same double.
std::string format_number(double v);

/// Reads `timestamp,<channel>...` with RFC 3339 timestamps. Empty or `NA`
/// cells become missing; rows absent from the fixed-step grid are inserted as
/// missing. The PV column is `pv` when present, otherwise the first channel.
/// Lines starting with `#` are ignored.
data::AlignedDataset read_dataset_csv(const fs::path& path);
data::AlignedDataset read_dataset_csv(std::istream& in, const std::string& source = "<stream>");

/// Writes pv first, then weather channels. Missing values are written as `NA`.
void write_dataset_csv(const fs::path& path, const data::AlignedDataset& ds, const std::string& config_hash = {});

json to_json(const data::RepairReport& r);
json to_json(const data::DatasetRepair& r);

void write_json(const fs::path& path, const json& j);
json read_json(const fs::path& path);

/// `t, imf_1..imf_K, residual`.
void write_imfs_csv(const fs::path& path, const std::vector<EpochSeconds>& t,
                    const emd::DecompositionResult<double>& decomp, const std::string& config_hash);
/// `t, S_high, S_low`.
void write_components_csv(const fs::path& path, const std::vector<EpochSeconds>& t, const Eigen::VectorXd& high,
                          const Eigen::VectorXd& low, const std::string& config_hash);
json spectral_report(const std::vector<spectral::FrequencyProfile<double>>& profiles, const spectral::Grouping& groups,
                     double fs, double f_high);

/// Rows of a numeric CSV with a header; `#` lines are skipped. The first
/// column is kept as text.
struct Table {
  std::vector<std::string> header;
  std::vector<std::string> keys;
  Eigen::MatrixXd values;
};
Table read_table(const fs::path& path);

/// Named tensors plus a JSON metadata blob, stored losslessly.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  json metadata;
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> shapes;
  std::vector<Eigen::VectorXd> tensors;

  void add(const std::string& name, std::vector<std::int64_t> shape, Eigen::VectorXd values);
  /// Throws ValidationError when the name is absent.
  std::size_t find(const std::string& name) const;
};

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const fs::path& path);

}  // namespace pvf::io
