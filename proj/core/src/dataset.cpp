#include "inverse_uq/dataset.hpp"

#include "inverse_uq/errors.hpp"
#include "inverse_uq/logging.hpp"
#include "inverse_uq/util.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

namespace inverse_uq::data {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct CsvRow {
  std::size_t line = 0;
  std::vector<std::string> fields;
};

struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  std::vector<CsvRow> rows;
};

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  CsvTable table;
  table.path = path;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
      table.header = util::split(line, ',');
      continue;
    }
    if (line.empty()) continue;
    CsvRow row{line_no, util::split(line, ',')};
    if (row.fields.size() != table.header.size()) {
      throw SchemaError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(table.header.size()) +
                        " columns, found " + std::to_string(row.fields.size()));
    }
    table.rows.push_back(std::move(row));
  }
  if (line_no == 0 || table.header.empty() || (table.header.size() == 1 && table.header[0].empty())) {
    throw ParseError(path, 1, "empty file");
  }
  if (table.rows.empty()) throw ParseError(path, line_no, "no data rows");
  return table;
}

double parse_value(const CsvTable& table, const CsvRow& row, std::size_t column) {
  const std::string& field = row.fields[column];
  if (field.empty() || field == "NA") return kNaN;
  double value = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw ParseError(table.path, row.line, "column '" + table.header[column] + "': not a number: '" + field + "'");
  }
  return value;
}

Date parse_row_date(const CsvTable& table, const CsvRow& row) {
  try {
    return parse_date(row.fields[1]);
  } catch (const std::invalid_argument&) {
    throw ParseError(table.path, row.line, "invalid date '" + row.fields[1] + "'");
  }
}

void expect_prefix(const CsvTable& table, const std::vector<std::string>& prefix) {
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (i >= table.header.size() || table.header[i] != prefix[i]) {
      throw SchemaError(table.path + ": header column " + std::to_string(i + 1) + " must be '" + prefix[i] + "'");
    }
  }
}

std::vector<std::string> value_columns(const CsvTable& table, std::size_t skip,
                                       const std::vector<std::string>& expected) {
  std::vector<std::string> names(table.header.begin() + static_cast<std::ptrdiff_t>(skip), table.header.end());
  if (!expected.empty() && names != expected) {
    std::ostringstream os;
    os << table.path << ": expected " << expected.size() << " value columns matching the schema, found "
       << names.size();
    throw SchemaError(os.str());
  }
  if (names.empty()) throw SchemaError(table.path + ": no value columns");
  return names;
}

// Keeps basins in order of first appearance.
template <typename T>
struct OrderedMap {
  std::vector<std::string> keys;
  std::unordered_map<std::string, T> values;

  T& operator[](const std::string& key) {
    auto [it, inserted] = values.try_emplace(key);
    if (inserted) keys.push_back(key);
    return it->second;
  }
};

std::string write_number(double v) { return std::isnan(v) ? std::string("NA") : util::format_double(v); }

}  // namespace

Date parse_date(std::string_view text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
    throw std::invalid_argument("date must be YYYY-MM-DD: '" + std::string(text) + "'");
  }
  auto number = [&](std::size_t pos, std::size_t len) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, v);
    if (ec != std::errc() || ptr != text.data() + pos + len) {
      throw std::invalid_argument("date must be YYYY-MM-DD: '" + std::string(text) + "'");
    }
    return v;
  };
  const std::chrono::year_month_day ymd{std::chrono::year{number(0, 4)},
                                        std::chrono::month{static_cast<unsigned>(number(5, 2))},
                                        std::chrono::day{static_cast<unsigned>(number(8, 2))}};
  if (!ymd.ok()) throw std::invalid_argument("not a calendar date: '" + std::string(text) + "'");
  return Date{ymd};
}

std::string format_date(Date date) {
  const std::chrono::year_month_day ymd{date};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

int year_of(Date date) { return static_cast<int>(std::chrono::year_month_day{date}.year()); }

std::string_view to_string(Period period) {
  switch (period) {
    case Period::full: return "full";
    case Period::train: return "train";
    case Period::validation: return "validation";
    case Period::test: return "test";
  }
  return "full";
}

const BasinRecord* Dataset::find(std::string_view basin_id) const {
  for (const auto& r : records)
    if (r.basin_id == basin_id) return &r;
  return nullptr;
}

std::vector<std::string> Dataset::basin_ids() const {
  std::vector<std::string> ids;
  ids.reserve(records.size());
  for (const auto& r : records) ids.push_back(r.basin_id);
  return ids;
}

void Dataset::validate() const {
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.basin_id).second) throw IntegrityError("duplicate basin '" + r.basin_id + "'");
    if (r.drivers.rows() != r.length() || r.response.size() != r.length()) {
      throw IntegrityError("basin '" + r.basin_id + "': drivers, response and dates differ in length");
    }
    if (r.drivers.cols() != driver_count()) {
      throw IntegrityError("basin '" + r.basin_id + "': driver column count differs from dataset");
    }
    if (r.statics && r.statics->size() != static_count()) {
      throw IntegrityError("basin '" + r.basin_id + "': static vector length differs from dataset");
    }
    for (std::size_t t = 1; t < r.dates.size(); ++t) {
      if (r.dates[t] <= r.dates[t - 1]) {
        throw IntegrityError("basin '" + r.basin_id + "': dates not strictly increasing at " + format_date(r.dates[t]));
      }
    }
  }
}

Schema load_schema(const std::string& path) {
  const nlohmann::json j = nlohmann::json::parse(util::read_file(path));
  Schema s;
  for (const auto& [key, value] : j.items()) {
    if (key == "drivers") {
      s.drivers = value.get<std::vector<std::string>>();
    } else if (key == "response") {
      s.response = value.get<std::string>();
    } else if (key == "statics") {
      s.statics = value.get<std::vector<std::string>>();
    } else {
      throw SchemaError(path + ": unknown schema key '" + key + "'");
    }
  }
  return s;
}

Dataset load_dataset(const std::string& driver_path, const std::string& response_path,
                     const std::string& static_path, const Schema& schema) {
  const CsvTable drivers = read_csv(driver_path);
  const CsvTable response = read_csv(response_path);
  expect_prefix(drivers, {"basin_id", "date"});
  expect_prefix(response, {"basin_id", "date"});

  Dataset ds;
  ds.driver_names = value_columns(drivers, 2, schema.drivers);
  const auto response_cols = value_columns(response, 2, schema.response.empty()
                                                            ? std::vector<std::string>{}
                                                            : std::vector<std::string>{schema.response});
  if (response_cols.size() != 1) throw SchemaError(response_path + ": expected a single response column");
  ds.response_name = response_cols.front();

  const std::size_t dx = ds.driver_names.size();
  struct Builder {
    std::map<Date, std::vector<double>> driver_rows;
    std::map<Date, double> response_rows;
  };
  OrderedMap<Builder> basins;

  for (const auto& row : drivers.rows) {
    const Date date = parse_row_date(drivers, row);
    std::vector<double> values(dx);
    for (std::size_t c = 0; c < dx; ++c) values[c] = parse_value(drivers, row, c + 2);
    auto& b = basins[row.fields[0]];
    if (!b.driver_rows.emplace(date, std::move(values)).second) {
      throw IntegrityError(driver_path + ":" + std::to_string(row.line) + ": duplicate (basin_id, date) (" +
                           row.fields[0] + ", " + row.fields[1] + ")");
    }
  }
  for (const auto& row : response.rows) {
    const Date date = parse_row_date(response, row);
    const double value = parse_value(response, row, 2);
    auto it = basins.values.find(row.fields[0]);
    if (it == basins.values.end()) {
      throw IntegrityError(response_path + ":" + std::to_string(row.line) + ": basin '" + row.fields[0] +
                           "' has no driver rows");
    }
    if (!it->second.driver_rows.contains(date)) {
      throw IntegrityError(response_path + ":" + std::to_string(row.line) + ": no driver row for (" + row.fields[0] +
                           ", " + row.fields[1] + ")");
    }
    if (!it->second.response_rows.emplace(date, value).second) {
      throw IntegrityError(response_path + ":" + std::to_string(row.line) + ": duplicate (basin_id, date) (" +
                           row.fields[0] + ", " + row.fields[1] + ")");
    }
  }

  std::unordered_map<std::string, Vector> statics;
  if (!static_path.empty()) {
    const CsvTable st = read_csv(static_path);
    expect_prefix(st, {"basin_id"});
    ds.static_names = value_columns(st, 1, schema.statics);
    for (const auto& row : st.rows) {
      Vector z(static_cast<Eigen::Index>(ds.static_names.size()));
      for (std::size_t c = 0; c < ds.static_names.size(); ++c)
        z(static_cast<Eigen::Index>(c)) = parse_value(st, row, c + 1);
      if (!statics.emplace(row.fields[0], std::move(z)).second) {
        throw IntegrityError(static_path + ":" + std::to_string(row.line) + ": duplicate basin_id '" +
                             row.fields[0] + "'");
      }
    }
  } else {
    ds.static_names = schema.statics;
  }

  for (const auto& id : basins.keys) {
    const Builder& b = basins.values.at(id);
    BasinRecord r;
    r.basin_id = id;
    const auto t = static_cast<Eigen::Index>(b.driver_rows.size());
    r.drivers.resize(t, static_cast<Eigen::Index>(dx));
    r.response = Vector::Constant(t, kNaN);
    Eigen::Index i = 0;
    for (const auto& [date, values] : b.driver_rows) {
      r.dates.push_back(date);
      for (std::size_t c = 0; c < dx; ++c) r.drivers(i, static_cast<Eigen::Index>(c)) = values[c];
      if (auto rit = b.response_rows.find(date); rit != b.response_rows.end()) r.response(i) = rit->second;
      ++i;
    }
    if (auto sit = statics.find(id); sit != statics.end()) r.statics = sit->second;
    ds.records.push_back(std::move(r));
  }
  for (const auto& [id, z] : statics) {
    if (!basins.values.contains(id)) logging::warn("statics_without_series", {{"basin_id", id}});
  }
  ds.validate();
  return ds;
}

void write_dataset(const Dataset& dataset, const std::string& driver_path, const std::string& response_path,
                   const std::string& static_path) {
  std::ostringstream drv, rsp, st;
  drv << "basin_id,date";
  for (const auto& n : dataset.driver_names) drv << ',' << n;
  drv << '\n';
  rsp << "basin_id,date," << dataset.response_name << '\n';
  for (const auto& r : dataset.records) {
    for (Eigen::Index t = 0; t < r.length(); ++t) {
      const std::string date = format_date(r.dates[static_cast<std::size_t>(t)]);
      drv << r.basin_id << ',' << date;
      for (Eigen::Index c = 0; c < r.drivers.cols(); ++c) drv << ',' << write_number(r.drivers(t, c));
      drv << '\n';
      rsp << r.basin_id << ',' << date << ',' << write_number(r.response(t)) << '\n';
    }
  }
  util::write_file(driver_path, drv.str());
  util::write_file(response_path, rsp.str());
  if (!static_path.empty()) {
    st << "basin_id";
    for (const auto& n : dataset.static_names) st << ',' << n;
    st << '\n';
    for (const auto& r : dataset.records) {
      if (!r.statics) continue;
      st << r.basin_id;
      for (Eigen::Index c = 0; c < r.statics->size(); ++c) st << ',' << write_number((*r.statics)(c));
      st << '\n';
    }
    util::write_file(static_path, st.str());
  }
}

Eigen::Index window_count(Eigen::Index length, Eigen::Index lookback, Eigen::Index stride) {
  if (lookback < 1 || stride < 1) throw std::invalid_argument("lookback and stride must be positive");
  if (length < lookback) return 0;
  return (length - lookback) / stride + 1;
}

std::vector<WindowSample> make_windows(const BasinRecord& record, Eigen::Index lookback, Eigen::Index stride) {
  const Eigen::Index count = window_count(record.length(), lookback, stride);
  std::vector<WindowSample> out;
  if (count == 0) return out;

  // bad_prefix[t] = number of rows with a missing value among the first t rows.
  const Eigen::Index t_total = record.length();
  std::vector<Eigen::Index> bad_prefix(static_cast<std::size_t>(t_total) + 1, 0);
  for (Eigen::Index t = 0; t < t_total; ++t) {
    const bool bad = !record.drivers.row(t).allFinite() || !std::isfinite(record.response(t));
    bad_prefix[static_cast<std::size_t>(t) + 1] = bad_prefix[static_cast<std::size_t>(t)] + (bad ? 1 : 0);
  }

  const Eigen::Index dx = record.drivers.cols();
  out.reserve(static_cast<std::size_t>(count));
  for (Eigen::Index k = 0; k < count; ++k) {
    const Eigen::Index start = k * stride;
    if (bad_prefix[static_cast<std::size_t>(start + lookback)] != bad_prefix[static_cast<std::size_t>(start)]) continue;
    WindowSample w;
    w.basin_id = record.basin_id;
    w.start_index = start;
    w.length = lookback;
    w.inputs.resize(lookback, dx + 1);
    w.inputs.leftCols(dx) = record.drivers.middleRows(start, lookback);
    w.inputs.col(dx) = record.response.segment(start, lookback);
    w.target_statics = record.statics;
    out.push_back(std::move(w));
  }
  return out;
}

std::size_t default_train_count(std::size_t basin_count) {
  if (basin_count == 531) return 400;
  return static_cast<std::size_t>(std::lround(static_cast<double>(basin_count) * 400.0 / 531.0));
}

SplitSpec make_split_spec(const Dataset& dataset, std::size_t train_count, std::uint64_t seed) {
  std::vector<std::string> ids = dataset.basin_ids();
  if (train_count > ids.size()) throw std::invalid_argument("train basin count exceeds dataset size");
  std::sort(ids.begin(), ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  SplitSpec spec;
  spec.seed = seed;
  spec.train_basins.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(train_count));
  spec.test_basins.assign(ids.begin() + static_cast<std::ptrdiff_t>(train_count), ids.end());
  return spec;
}

void validate_split(const SplitSpec& spec, const Dataset& dataset) {
  if (spec.train_years.overlaps(spec.val_years) || spec.train_years.overlaps(spec.test_years) ||
      spec.val_years.overlaps(spec.test_years)) {
    throw std::invalid_argument("split: year ranges overlap");
  }
  std::set<std::string> train(spec.train_basins.begin(), spec.train_basins.end());
  std::set<std::string> test(spec.test_basins.begin(), spec.test_basins.end());
  if (train.size() != spec.train_basins.size() || test.size() != spec.test_basins.size()) {
    throw std::invalid_argument("split: duplicate basin ids in spec");
  }
  for (const auto& id : test)
    if (train.contains(id)) throw std::invalid_argument("split: basin '" + id + "' is in both train and test");

  std::set<std::string> present;
  for (const auto& r : dataset.records) present.insert(r.basin_id);
  std::vector<std::string> missing;
  for (const auto* group : {&train, &test})
    for (const auto& id : *group)
      if (!present.contains(id)) missing.push_back(id);
  if (!missing.empty()) {
    std::string msg = "split: basins absent from dataset:";
    for (const auto& id : missing) msg += " " + id;
    throw std::invalid_argument(msg);
  }
  std::vector<std::string> unassigned;
  for (const auto& id : present)
    if (!train.contains(id) && !test.contains(id)) unassigned.push_back(id);
  if (!unassigned.empty()) {
    std::string msg = "split: dataset basins not assigned to train or test:";
    for (const auto& id : unassigned) msg += " " + id;
    throw std::invalid_argument(msg);
  }
}

Dataset select_basins(const Dataset& dataset, const std::vector<std::string>& basin_ids) {
  Dataset out = dataset;
  out.records.clear();
  for (const auto& id : basin_ids) {
    const BasinRecord* r = dataset.find(id);
    if (r == nullptr) throw std::invalid_argument("select_basins: unknown basin '" + id + "'");
    out.records.push_back(*r);
  }
  return out;
}

Dataset slice_years(const Dataset& dataset, const YearRange& years, Period period) {
  Dataset out = dataset;
  out.period = period;
  out.years = years;
  for (auto& r : out.records) {
    Eigen::Index begin = r.length(), end = r.length();
    for (Eigen::Index t = 0; t < r.length(); ++t) {
      if (years.contains(year_of(r.dates[static_cast<std::size_t>(t)]))) {
        begin = t;
        break;
      }
    }
    end = begin;
    while (end < r.length() && years.contains(year_of(r.dates[static_cast<std::size_t>(end)]))) ++end;
    const Eigen::Index n = end - begin;
    r.dates = std::vector<Date>(r.dates.begin() + begin, r.dates.begin() + end);
    r.drivers = Matrix(r.drivers.middleRows(begin, n));
    r.response = Vector(r.response.segment(begin, n));
  }
  return out;
}

SplitResult split(const Dataset& dataset, const SplitSpec& spec) {
  validate_split(spec, dataset);
  auto partition = [&](const std::vector<std::string>& ids) {
    const Dataset basins = select_basins(dataset, ids);
    return Partition{slice_years(basins, spec.train_years, Period::train),
                     slice_years(basins, spec.val_years, Period::validation),
                     slice_years(basins, spec.test_years, Period::test)};
  };
  return SplitResult{partition(spec.train_basins), partition(spec.test_basins)};
}

std::string split_hash(const SplitSpec& spec) {
  return util::hex64(util::fnv1a64(nlohmann::json(spec).dump()));
}

namespace {

struct ColumnStats {
  double mean = 0.0;
  double std = 1.0;
  bool flagged = false;
};

ColumnStats column_stats(const std::vector<double>& values) {
  ColumnStats s;
  std::size_t n = 0;
  double sum = 0.0;
  for (double v : values)
    if (std::isfinite(v)) {
      sum += v;
      ++n;
    }
  if (n == 0) {
    s.flagged = true;
    return s;
  }
  s.mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values)
    if (std::isfinite(v)) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(n));
  if (!(s.std > 1e-12)) {
    s.std = 1.0;
    s.flagged = true;
  }
  return s;
}

}  // namespace

Normalizer fit_normalizer(const Dataset& train) {
  if (train.records.empty()) throw std::invalid_argument("fit_normalizer: empty training partition");
  Normalizer n;
  const Eigen::Index dx = train.driver_count();
  const Eigen::Index dz = train.static_count();
  n.driver_mean.resize(dx);
  n.driver_std.resize(dx);
  n.static_mean.resize(dz);
  n.static_std.resize(dz);

  auto flag = [&](const std::string& name) {
    n.flagged.push_back(name);
    logging::warn("constant_column", {{"column", name}, {"action", "std replaced by 1"}});
  };

  for (Eigen::Index c = 0; c < dx; ++c) {
    std::vector<double> col;
    for (const auto& r : train.records) col.insert(col.end(), r.drivers.col(c).begin(), r.drivers.col(c).end());
    const ColumnStats s = column_stats(col);
    n.driver_mean(c) = s.mean;
    n.driver_std(c) = s.std;
    if (s.flagged) flag(train.driver_names[static_cast<std::size_t>(c)]);
  }
  {
    std::vector<double> col;
    for (const auto& r : train.records) col.insert(col.end(), r.response.begin(), r.response.end());
    const ColumnStats s = column_stats(col);
    n.response_mean = s.mean;
    n.response_std = s.std;
    if (s.flagged) flag(train.response_name);
  }
  for (Eigen::Index c = 0; c < dz; ++c) {
    std::vector<double> col;
    for (const auto& r : train.records)
      if (r.statics) col.push_back((*r.statics)(c));
    const ColumnStats s = column_stats(col);
    n.static_mean(c) = s.mean;
    n.static_std(c) = s.std;
    if (s.flagged) flag(train.static_names[static_cast<std::size_t>(c)]);
  }
  return n;
}

Dataset Normalizer::apply(const Dataset& dataset) const {
  Dataset out = dataset;
  for (auto& r : out.records) {
    r.drivers = ((r.drivers.rowwise() - driver_mean.transpose()).array().rowwise() / driver_std.transpose().array())
                    .matrix();
    r.response = ((r.response.array() - response_mean) / response_std).matrix();
    if (r.statics) r.statics = normalize_statics(*r.statics);
  }
  return out;
}

Dataset Normalizer::invert(const Dataset& dataset) const {
  Dataset out = dataset;
  for (auto& r : out.records) {
    r.drivers = ((r.drivers.array().rowwise() * driver_std.transpose().array()).matrix().rowwise() +
                 driver_mean.transpose());
    r.response = (r.response.array() * response_std + response_mean).matrix();
    if (r.statics) r.statics = denormalize_statics(*r.statics);
  }
  return out;
}

Vector Normalizer::normalize_statics(const Vector& raw) const {
  return ((raw - static_mean).array() / static_std.array()).matrix();
}

Vector Normalizer::denormalize_statics(const Vector& normalized) const {
  return (normalized.array() * static_std.array()).matrix() + static_mean;
}

Vector Normalizer::denormalize_static_std(const Vector& normalized_std) const {
  return (normalized_std.array() * static_std.array()).matrix();
}

double Normalizer::denormalize_response(double normalized) const { return normalized * response_std + response_mean; }

namespace {

std::vector<double> to_std(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
Vector to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void to_json(nlohmann::json& j, const Normalizer& n) {
  j = {{"driver_mean", to_std(n.driver_mean)}, {"driver_std", to_std(n.driver_std)},
       {"response_mean", n.response_mean},     {"response_std", n.response_std},
       {"static_mean", to_std(n.static_mean)}, {"static_std", to_std(n.static_std)},
       {"flagged", n.flagged}};
}

void from_json(const nlohmann::json& j, Normalizer& n) {
  n.driver_mean = to_eigen(j.at("driver_mean").get<std::vector<double>>());
  n.driver_std = to_eigen(j.at("driver_std").get<std::vector<double>>());
  n.response_mean = j.at("response_mean").get<double>();
  n.response_std = j.at("response_std").get<double>();
  n.static_mean = to_eigen(j.at("static_mean").get<std::vector<double>>());
  n.static_std = to_eigen(j.at("static_std").get<std::vector<double>>());
  n.flagged = j.at("flagged").get<std::vector<std::string>>();
}

void to_json(nlohmann::json& j, const YearRange& r) { j = nlohmann::json::array({r.begin, r.end}); }
void from_json(const nlohmann::json& j, YearRange& r) {
  r.begin = j.at(0).get<int>();
  r.end = j.at(1).get<int>();
}

void to_json(nlohmann::json& j, const SplitSpec& s) {
  j = {{"train_years", s.train_years}, {"val_years", s.val_years},     {"test_years", s.test_years},
       {"train_basins", s.train_basins}, {"test_basins", s.test_basins}, {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SplitSpec& s) {
  s.train_years = j.at("train_years").get<YearRange>();
  s.val_years = j.at("val_years").get<YearRange>();
  s.test_years = j.at("test_years").get<YearRange>();
  s.train_basins = j.at("train_basins").get<std::vector<std::string>>();
  s.test_basins = j.at("test_basins").get<std::vector<std::string>>();
  s.seed = j.at("seed").get<std::uint64_t>();
}

}  // namespace inverse_uq::data
