#include "pvf/io.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "pvf/error.hpp"

namespace pvf::io {
namespace {

constexpr char kMagic[8] = {'P', 'V', 'F', 'C', 'K', 'P', 'T', '\0'};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::string_view rest(line);
  while (true) {
    const auto comma = rest.find(',');
    out.push_back(trim(rest.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

bool skip_line(const std::string& line) {
  const std::string t = trim(line);
  return t.empty() || t.front() == '#';
}

double parse_cell(const std::string& cell, const std::string& where) {
  if (cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan") return data::kMissing;
  double v = 0.0;
  const char* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    throw ValidationError(where + ": cannot parse '" + cell + "' as a number");
  return v;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open '" + path.string() + "' for writing");
  return out;
}

void hash_line(std::ostream& out, const std::string& config_hash) {
  if (!config_hash.empty()) out << "# config_hash: " << config_hash << '\n';
}

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ValidationError("checkpoint: truncated while reading " + what);
  return v;
}

}  // namespace

std::string format_number(double v) {
  if (data::is_missing(v)) return "NA";
  return fmt::format("{}", v);
}

data::AlignedDataset read_dataset_csv(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open dataset '" + path.string() + "'");
  return read_dataset_csv(in, path.string());
}

data::AlignedDataset read_dataset_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line))
    if (!skip_line(line)) {
      header = split_row(line);
      break;
    }
  require(header.size() >= 2, source + ": expected header 'timestamp,<channel>...'");
  require(header[0] == "timestamp" || header[0] == "t", source + ": first column must be 'timestamp'");

  std::vector<EpochSeconds> times;
  std::vector<std::vector<double>> cols(header.size() - 1);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (skip_line(line)) continue;
    const auto cells = split_row(line);
    const std::string where = source + ":" + std::to_string(lineno);
    require(cells.size() == header.size(), where + ": expected " + std::to_string(header.size()) + " columns, got " +
                                               std::to_string(cells.size()));
    times.push_back(parse_rfc3339(cells[0]));
    for (std::size_t c = 1; c < cells.size(); ++c) cols[c - 1].push_back(parse_cell(cells[c], where));
  }
  require(times.size() >= 2, source + ": need at least two rows");

  EpochSeconds step = 0;
  for (std::size_t i = 1; i < times.size(); ++i) {
    const EpochSeconds d = times[i] - times[i - 1];
    require(d > 0, source + ": timestamps must be strictly increasing");
    step = step == 0 ? d : std::min(step, d);
  }
  for (std::size_t i = 1; i < times.size(); ++i)
    require((times[i] - times[i - 1]) % step == 0,
            source + ": timestamps do not lie on a fixed " + std::to_string(step) + " s grid");

  const std::size_t n = static_cast<std::size_t>((times.back() - times.front()) / step) + 1;
  data::AlignedDataset ds;
  ds.step = step;
  ds.timestamps.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.timestamps[i] = times.front() + static_cast<EpochSeconds>(i) * step;

  std::size_t pv_col = 0;
  for (std::size_t c = 1; c < header.size(); ++c)
    if (header[c] == "pv") pv_col = c - 1;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    data::Channel ch{header[c + 1], Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), data::kMissing)};
    for (std::size_t r = 0; r < times.size(); ++r)
      ch.values[static_cast<Eigen::Index>((times[r] - times.front()) / step)] = cols[c][r];
    if (c == pv_col)
      ds.pv = std::move(ch);
    else
      ds.weather.push_back(std::move(ch));
  }
  return ds;
}

void write_dataset_csv(const fs::path& path, const data::AlignedDataset& ds, const std::string& config_hash) {
  auto out = open_out(path);
  hash_line(out, config_hash);
  out << "timestamp," << ds.pv.name;
  for (const auto& w : ds.weather) out << ',' << w.name;
  out << '\n';
  for (Eigen::Index r = 0; r < ds.rows(); ++r) {
    out << format_rfc3339(ds.timestamps[static_cast<std::size_t>(r)]) << ',' << format_number(ds.pv.values[r]);
    for (const auto& w : ds.weather) out << ',' << format_number(w.values[r]);
    out << '\n';
  }
}

json to_json(const data::RepairReport& r) {
  json days = json::array();
  for (auto d : r.dropped_days) days.push_back(format_day(d));
  return {{"zero_filled", r.zero_filled}, {"interpolated", r.interpolated}, {"dropped_days", days}};
}

json to_json(const data::DatasetRepair& r) {
  json channels = json::object();
  for (const auto& [name, rep] : r.channel_reports) channels[name] = to_json(rep);
  json days = json::array();
  for (auto d : r.dropped_days) days.push_back(format_day(d));
  return {{"zero_filled", r.zero_filled},
          {"interpolated", r.interpolated},
          {"dropped_days", days},
          {"rows", r.dataset.rows()},
          {"channels", channels}};
}

void write_json(const fs::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_imfs_csv(const fs::path& path, const std::vector<EpochSeconds>& t,
                    const emd::DecompositionResult<double>& decomp, const std::string& config_hash) {
  require(static_cast<Eigen::Index>(t.size()) == decomp.residual.size(), "imf export: time axis length mismatch");
  auto out = open_out(path);
  hash_line(out, config_hash);
  out << 't';
  for (std::size_t k = 1; k <= decomp.size(); ++k) out << ",imf_" << k;
  out << ",residual\n";
  for (std::size_t r = 0; r < t.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    out << format_rfc3339(t[r]);
    for (const auto& m : decomp.imfs) out << ',' << format_number(m.values[i]);
    out << ',' << format_number(decomp.residual[i]) << '\n';
  }
}

void write_components_csv(const fs::path& path, const std::vector<EpochSeconds>& t, const Eigen::VectorXd& high,
                          const Eigen::VectorXd& low, const std::string& config_hash) {
  require(static_cast<Eigen::Index>(t.size()) == high.size() && high.size() == low.size(),
          "component export: length mismatch");
  auto out = open_out(path);
  hash_line(out, config_hash);
  out << "t,S_high,S_low\n";
  for (std::size_t r = 0; r < t.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    out << format_rfc3339(t[r]) << ',' << format_number(high[i]) << ',' << format_number(low[i]) << '\n';
  }
}

json spectral_report(const std::vector<spectral::FrequencyProfile<double>>& profiles, const spectral::Grouping& groups,
                     double fs, double f_high) {
  json imfs = json::array();
  for (std::size_t k = 0; k < profiles.size(); ++k) {
    const auto& p = profiles[k];
    imfs.push_back({{"imf", k + 1},
                    {"f_dom", p.f_dom},
                    {"f_cen", p.f_cen},
                    {"f_dominant", p.f_dominant},
                    {"group", spectral::to_string(p.group)},
                    {"zero_energy", p.zero_energy}});
  }
  return {{"sampling_hz", fs}, {"f_high", f_high}, {"imfs", imfs}, {"high", groups.high}, {"low", groups.low}};
}

Table read_table(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open '" + path.string() + "'");
  Table t;
  std::string line;
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (skip_line(line)) continue;
    auto cells = split_row(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    const std::string where = path.string() + ":" + std::to_string(lineno);
    require(cells.size() == t.header.size(), where + ": column count differs from header");
    t.keys.push_back(cells[0]);
    std::vector<double> row;
    for (std::size_t c = 1; c < cells.size(); ++c) row.push_back(parse_cell(cells[c], where));
    rows.push_back(std::move(row));
  }
  require(!t.header.empty(), path.string() + ": missing header");
  t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.header.size() - 1));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      t.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return t;
}

void Checkpoint::add(const std::string& name, std::vector<std::int64_t> shape, Eigen::VectorXd values) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  require(n == values.size(), "checkpoint: shape of '" + name + "' does not match its data");
  shapes.emplace_back(name, std::move(shape));
  tensors.push_back(std::move(values));
}

std::size_t Checkpoint::find(const std::string& name) const {
  for (std::size_t i = 0; i < shapes.size(); ++i)
    if (shapes[i].first == name) return i;
  throw ValidationError("checkpoint: tensor '" + name + "' not found");
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  auto out = open_out(path);
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, Checkpoint::kVersion);
  const std::string meta = ckpt.metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put<std::uint64_t>(out, ckpt.tensors.size());
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    const auto& [name, shape] = ckpt.shapes[i];
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put<std::int64_t>(out, d);
    out.write(reinterpret_cast<const char*>(ckpt.tensors[i].data()),
              static_cast<std::streamsize>(ckpt.tensors[i].size() * sizeof(double)));
  }
  require(out.good(), "checkpoint: write to '" + path.string() + "' failed");
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open checkpoint '" + path.string() + "'");
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  require(in.good() && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0, path.string() + ": not a checkpoint file");
  const auto version = get<std::uint32_t>(in, "version");
  require(version == Checkpoint::kVersion, path.string() + ": unsupported checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  std::string meta(get<std::uint64_t>(in, "metadata length"), '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta.size()));
  require(in.good(), "checkpoint: truncated metadata");
  ckpt.metadata = json::parse(meta);
  const auto count = get<std::uint64_t>(in, "tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(get<std::uint32_t>(in, "name length"), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto rank = get<std::uint32_t>(in, "rank");
    std::vector<std::int64_t> shape(rank);
    std::int64_t n = 1;
    for (auto& d : shape) {
      d = get<std::int64_t>(in, "shape");
      require(d >= 0, "checkpoint: negative dimension in '" + name + "'");
      n *= d;
    }
    Eigen::VectorXd v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    require(in.good(), "checkpoint: truncated data for '" + name + "'");
    ckpt.shapes.emplace_back(std::move(name), std::move(shape));
    ckpt.tensors.push_back(std::move(v));
  }
  return ckpt;
}

}  // namespace pvf::io
