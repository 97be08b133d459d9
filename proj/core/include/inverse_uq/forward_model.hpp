#pragma once

// Streamflow predictor: a unidirectional LSTM with a linear head, fed daily
// drivers concatenated with a time-constant static vector per basin.

#include "inverse_uq/dataset.hpp"
#include "inverse_uq/errors.hpp"
#include "inverse_uq/inverse_model.hpp"
#include "inverse_uq/metrics.hpp"
#include "inverse_uq/optimizer.hpp"
#include "inverse_uq/training.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace inverse_uq::forward {

using ad::Matrix;
using ad::Vector;

/// Normalized static vector per basin, plus where it came from.
struct StaticInputs {
  std::string source;  // "observed", "estimated" or "zeros"
  std::vector<std::string> names;
  std::map<std::string, Vector> by_basin;
};

/// Statics rows of a normalized dataset. Basins without a row are left out.
StaticInputs observed_statics(const data::Dataset& normalized);
/// Estimated means, normalized with the same statistics as the observations.
StaticInputs estimated_statics(const train::EstimateTable& table, const data::Normalizer& normalizer);
/// A zero vector of width `dim` for every basin of the dataset.
StaticInputs zero_statics(const data::Dataset& dataset, Eigen::Index dim, std::vector<std::string> names = {});

struct ForwardSample {
  std::string basin_id;
  Eigen::Index start_index = 0;
  Matrix inputs;  // L x (D_x + D_z), static block repeated on every row
  Vector target;  // L, normalized response
};

struct ForwardSamples {
  std::vector<ForwardSample> samples;
  std::vector<std::string> excluded;  // basins with no static vector
};

/// Windows as in make_windows, with the response moved to the target.
ForwardSamples build_forward_samples(const data::Dataset& normalized, const StaticInputs& statics,
                                     Eigen::Index lookback = data::kDefaultLookback,
                                     Eigen::Index stride = data::kDefaultStride);

struct ForwardConfig {
  Eigen::Index hidden = 64;
  int epochs = 30;
  int batch_size = 16;  // windows
  train::AdamConfig adam;
  double clip_norm = 5.0;
  int patience = 10;
  std::uint64_t seed = 0;
  Eigen::Index lookback = data::kDefaultLookback;
  Eigen::Index stride = data::kDefaultStride;
  /// Leading steps of each training window left out of the loss while the
  /// state fills up.
  Eigen::Index burn_in = 0;
  /// Median or mean over basins for the headline NSE.
  std::string aggregation = "median";

  void validate() const;
};

void to_json(nlohmann::json& j, const ForwardConfig& c);
void from_json(const nlohmann::json& j, ForwardConfig& c);

struct ForwardModel {
  ForwardConfig config;
  Eigen::Index input_dim = 0;
  model::LstmParams lstm;
  model::LinearParams head;  // H -> 1

  ForwardModel() = default;
  ForwardModel(const ForwardConfig& config, Eigen::Index input_dim, std::uint64_t init_seed);

  std::vector<ad::Parameter*> parameters();
};

struct ForwardEpoch {
  int epoch = 0;
  double train_mse = 0.0;
  std::optional<double> val_mse;
};

struct ForwardManifest {
  nlohmann::json config;
  std::string statics_source;
  std::uint64_t seed = 0;
  std::vector<ForwardEpoch> epochs;
  int best_epoch = -1;
  std::string status = "ok";
  double wall_seconds = 0.0;
};

nlohmann::json to_json(const ForwardManifest& m);

class ForwardDiverged : public TrainingError {
 public:
  ForwardDiverged(const std::string& what, ForwardManifest manifest)
      : TrainingError(what), manifest_(std::move(manifest)) {}
  const ForwardManifest& manifest() const { return manifest_; }

 private:
  ForwardManifest manifest_;
};

struct ForwardTrainResult {
  ForwardModel model;
  ForwardManifest manifest;
};

/// MSE on the normalized response. With validation samples the best epoch is
/// restored; without, the last. Throws std::invalid_argument for no samples.
ForwardTrainResult train_forward(const std::vector<ForwardSample>& train, const std::vector<ForwardSample>& val,
                                 const ForwardConfig& config, std::uint64_t seed);
ForwardTrainResult train_forward(const std::vector<ForwardSample>& train, const std::vector<ForwardSample>& val,
                                 const ForwardConfig& config);

/// Per-step predictions for one input sequence, normalized units.
Vector run_sequence(const ForwardModel& model, const Matrix& inputs);

struct BasinSeries {
  std::string basin_id;
  std::vector<data::Date> dates;
  Vector observed;   // raw units, NaN where missing
  Vector predicted;  // raw units
};

/// Runs each basin's whole record in one pass and keeps the dates inside
/// `report` (all dates when unset), so earlier rows act as warm-up. Missing
/// drivers enter as 0 (the training mean).
std::vector<BasinSeries> predict_streamflow(const ForwardModel& model, const data::Dataset& normalized,
                                            const StaticInputs& statics, const data::Normalizer& normalizer,
                                            const std::optional<data::YearRange>& report = std::nullopt);

std::vector<metrics::StreamflowSeries> as_metric_series(const std::vector<BasinSeries>& series);

struct ForwardEnsembleReport {
  std::vector<metrics::StreamflowSummary> runs;
  /// Mean over runs of the per-run basin aggregate.
  std::optional<double> average_nse_median, average_nse_mean;
  /// Aggregate of the NSE of the run-averaged prediction.
  std::optional<double> ensemble_nse_median, ensemble_nse_mean;
  std::vector<BasinSeries> ensemble;
};

/// Throws std::invalid_argument when runs cover different basins or dates.
ForwardEnsembleReport forward_ensemble_report(const std::vector<std::vector<BasinSeries>>& runs);
nlohmann::json to_json(const ForwardEnsembleReport& report);

/// `basin_id,date,y_obs,y_pred` plus `y_pred_run<i>` columns when per-run
/// series are given.
void write_predictions(const std::string& path, const std::vector<BasinSeries>& series,
                       const std::vector<std::vector<BasinSeries>>& runs = {});

nlohmann::json to_json(const ForwardModel& model);
ForwardModel forward_model_from_json(const nlohmann::json& j);

}  // namespace inverse_uq::forward
