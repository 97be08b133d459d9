#pragma once

// Skill and calibration metrics for static estimates and streamflow, and the
// evaluation report that gathers them.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace inverse_uq::metrics {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kZ68 = 1.0;
inline constexpr double kZ95 = 1.96;

/// 1 - sum (o - p)^2 / sum (o - mean o)^2. Empty when the observations have
/// zero variance. Throws std::invalid_argument for mismatched lengths or fewer
/// than two values.
std::optional<double> nse(const Vector& observed, const Vector& predicted);

/// Fraction of observations inside [mu - z sigma, mu + z sigma], bounds included.
double coverage_rate(const Vector& observed, const Vector& mean, const Vector& std, double z_alpha);

/// 0.05, 0.10, ..., 0.95.
std::vector<double> default_percentile_grid();

/// Root mean square over the grid of p - (share of observations at or below the
/// Gaussian p-quantile mu + Phi^-1(p) sigma).
double rms_calibration_error(const Vector& observed, const Vector& mean, const Vector& std,
                             const std::vector<double>& grid);

/// Population std of sigma over its mean. Empty when the mean is zero.
std::optional<double> dispersion(const Vector& sigma);

/// Mean width 2 z sigma.
double mean_interval_width(const Vector& std, double z_alpha);

/// Estimates per basin (rows) and characteristic (columns).
struct StaticPredictions {
  std::vector<std::string> names;
  std::vector<std::string> basin_ids;
  Matrix mean;
  std::optional<Matrix> std;  // absent for point estimates
};

struct ObservedStatics {
  std::vector<std::string> names;
  std::vector<std::string> basin_ids;
  Matrix values;
};

struct StreamflowSeries {
  std::string basin_id;
  Vector observed;  // NaN where missing
  Vector predicted;
};

struct CharacteristicMetrics {
  std::string name;
  int count = 0;
  std::optional<double> nse;
  std::optional<double> coverage_68, coverage_95;
  std::optional<double> rms_calibration_error;
  std::optional<double> dispersion;
  std::optional<double> interval_width_68, interval_width_95;
  std::optional<double> mean_std;

  friend bool operator==(const CharacteristicMetrics&, const CharacteristicMetrics&) = default;
};

struct StreamflowSummary {
  int basins = 0;
  int undefined = 0;  // zero-variance basins left out of the aggregates
  std::optional<double> median_nse, mean_nse;

  friend bool operator==(const StreamflowSummary&, const StreamflowSummary&) = default;
};

/// NSE per basin over finite observations, aggregated by median and mean.
StreamflowSummary summarize_streamflow(const std::vector<StreamflowSeries>& series);

struct UncertaintyReport {
  std::vector<CharacteristicMetrics> per_characteristic;
  nlohmann::json aggregate = nlohmann::json::object();
  nlohmann::json config = nlohmann::json::object();

  friend bool operator==(const UncertaintyReport&, const UncertaintyReport&) = default;
};

/// Aligns predictions with observations by basin id and characteristic name
/// (std::invalid_argument listing any mismatch). Coverage columns are present
/// only when the predictions carry a std. Aggregates average the
/// per-characteristic values and also pool every (basin, characteristic) pair.
UncertaintyReport assemble_report(const StaticPredictions& predictions, const ObservedStatics& observed,
                                  const std::vector<StreamflowSeries>* streamflow = nullptr,
                                  nlohmann::json config = nlohmann::json::object());

nlohmann::json to_json(const UncertaintyReport& report);
UncertaintyReport report_from_json(const nlohmann::json& j);
/// One row per characteristic; undefined values are empty cells.
std::string to_csv(const UncertaintyReport& report);
std::vector<CharacteristicMetrics> per_characteristic_from_csv(const std::string& text);

}  // namespace inverse_uq::metrics
