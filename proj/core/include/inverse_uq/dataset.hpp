#pragma once

// Multi-basin daily time series: ingest, windowing, splits and z-scoring.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace inverse_uq::data {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Date = std::chrono::sys_days;

/// Parses `YYYY-MM-DD`; throws std::invalid_argument on anything else.
Date parse_date(std::string_view text);
std::string format_date(Date date);
int year_of(Date date);

/// Half-open calendar-year range [begin, end).
struct YearRange {
  int begin = 0;
  int end = 0;

  bool empty() const { return end <= begin; }
  bool contains(int year) const { return year >= begin && year < end; }
  bool overlaps(const YearRange& other) const {
    return !empty() && !other.empty() && begin < other.end && other.begin < end;
  }
  friend bool operator==(const YearRange&, const YearRange&) = default;
};

enum class Period { full, train, validation, test };
std::string_view to_string(Period period);

/// One basin. Missing observations are stored as NaN.
struct BasinRecord {
  std::string basin_id;
  std::vector<Date> dates;
  Matrix drivers;                 // T x D_x
  Vector response;                // T
  std::optional<Vector> statics;  // D_z, absent when the basin has no static row

  Eigen::Index length() const { return static_cast<Eigen::Index>(dates.size()); }
};

struct Dataset {
  std::vector<std::string> driver_names;
  std::string response_name = "flow";
  std::vector<std::string> static_names;
  std::vector<BasinRecord> records;

  // Provenance of temporal slices produced by split().
  Period period = Period::full;
  std::optional<YearRange> years;

  Eigen::Index driver_count() const { return static_cast<Eigen::Index>(driver_names.size()); }
  Eigen::Index static_count() const { return static_cast<Eigen::Index>(static_names.size()); }
  const BasinRecord* find(std::string_view basin_id) const;
  std::vector<std::string> basin_ids() const;
  /// Checks the BasinRecord invariants for every record; throws IntegrityError.
  void validate() const;
};

/// Column labels expected in the CSV headers. Empty lists accept whatever the
/// headers declare.
struct Schema {
  std::vector<std::string> drivers;
  std::string response = "flow";
  std::vector<std::string> statics;
};

Schema load_schema(const std::string& path);

/// Reads the drivers/response/statics CSV trio. `static_path` may be empty.
/// Throws ParseError (with line), SchemaError, IntegrityError or IoError; no
/// partial dataset is returned.
Dataset load_dataset(const std::string& driver_path, const std::string& response_path,
                     const std::string& static_path, const Schema& schema = {});

/// Writes the same CSV trio that load_dataset reads.
void write_dataset(const Dataset& dataset, const std::string& driver_path, const std::string& response_path,
                   const std::string& static_path);

struct WindowSample {
  std::string basin_id;
  Eigen::Index start_index = 0;
  Eigen::Index length = 0;
  Matrix inputs;  // length x (D_x + 1): per-step [drivers, response]
  std::optional<Vector> target_statics;
};

inline constexpr Eigen::Index kDefaultLookback = 365;
inline constexpr Eigen::Index kDefaultStride = 182;

/// Windows starting at 0, stride, 2*stride, ... with start + lookback <= T.
/// Windows touching a missing value are dropped. Throws std::invalid_argument
/// for non-positive lookback or stride.
std::vector<WindowSample> make_windows(const BasinRecord& record, Eigen::Index lookback = kDefaultLookback,
                                       Eigen::Index stride = kDefaultStride);

/// Number of candidate window starts, ignoring missing values.
Eigen::Index window_count(Eigen::Index length, Eigen::Index lookback, Eigen::Index stride);

struct SplitSpec {
  YearRange train_years{1980, 2000};
  YearRange val_years{2000, 2005};
  YearRange test_years{2005, 2015};
  std::vector<std::string> train_basins;
  std::vector<std::string> test_basins;
  std::uint64_t seed = 0;
};

/// Seeded shuffle of the dataset's basins into `train_count` / rest.
SplitSpec make_split_spec(const Dataset& dataset, std::size_t train_count, std::uint64_t seed);
/// 400 of 531, scaled proportionally for other dataset sizes.
std::size_t default_train_count(std::size_t basin_count);
/// Throws std::invalid_argument describing the first violated invariant
/// (overlapping years, overlapping basins, ids missing from the dataset, ...).
void validate_split(const SplitSpec& spec, const Dataset& dataset);

struct Partition {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Spatial split into train/test basins, each sliced temporally by year range.
struct SplitResult {
  Partition train_basins;
  Partition test_basins;
};

SplitResult split(const Dataset& dataset, const SplitSpec& spec);
/// Rows of every record whose calendar year lies in `years`.
Dataset slice_years(const Dataset& dataset, const YearRange& years, Period period);
/// Restricts to the listed basins, keeping their order in `basin_ids`.
Dataset select_basins(const Dataset& dataset, const std::vector<std::string>& basin_ids);

/// Stable fingerprint of a spec (years, basin lists, seed).
std::string split_hash(const SplitSpec& spec);

/// Per-column z-score statistics fitted on training rows only.
struct Normalizer {
  Vector driver_mean, driver_std;
  double response_mean = 0.0, response_std = 1.0;
  Vector static_mean, static_std;
  std::vector<std::string> flagged;  // columns whose std was replaced by 1

  Dataset apply(const Dataset& dataset) const;
  Dataset invert(const Dataset& dataset) const;

  Vector normalize_statics(const Vector& raw) const;
  Vector denormalize_statics(const Vector& normalized) const;
  /// Scales standard deviations from normalized to raw static units.
  Vector denormalize_static_std(const Vector& normalized_std) const;
  double denormalize_response(double normalized) const;
};

/// Throws std::invalid_argument on an empty partition.
Normalizer fit_normalizer(const Dataset& train);

void to_json(nlohmann::json& j, const Normalizer& n);
void from_json(const nlohmann::json& j, Normalizer& n);
void to_json(nlohmann::json& j, const YearRange& r);
void from_json(const nlohmann::json& j, YearRange& r);
void to_json(nlohmann::json& j, const SplitSpec& s);
void from_json(const nlohmann::json& j, SplitSpec& s);

}  // namespace inverse_uq::data
