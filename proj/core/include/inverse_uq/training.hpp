#pragma once

// Inverse-model training: contrastive batching, the composite objective with
// the variational free energy, two-phase uncertainty-weighted retraining,
// seeded ensembles, and the validation-period static export.

#include "inverse_uq/dataset.hpp"
#include "inverse_uq/errors.hpp"
#include "inverse_uq/inverse_model.hpp"
#include "inverse_uq/losses.hpp"
#include "inverse_uq/optimizer.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace inverse_uq::train {

using ad::Matrix;
using ad::Vector;

struct UblConfig {
  bool enabled = false;
  double gamma = 0.5;
  /// Unset phases split `epochs` 70/30.
  std::optional<int> phase1_epochs;
  std::optional<int> phase2_epochs;

  int resolved_phase1(int epochs) const;
  int resolved_phase2(int epochs) const;
};

struct TrainConfig {
  model::ModelConfig model;
  losses::LossWeights loss;
  int epochs = 100;
  /// Passes over the basin list per epoch (each pass draws one pair per basin).
  int rounds_per_epoch = 1;
  int batch_size = 32;  // basins
  AdamConfig adam;
  double clip_norm = 5.0;
  int patience = 10;
  std::uint64_t seed = 0;
  int ensemble_size = 5;
  int mc_samples = 50;
  /// KL multiplier before the per-batch 1/B split. Unset: B / (distinct
  /// training windows), so each batch carries KL / N_windows, the
  /// per-sequence scale of the mean data term.
  std::optional<double> kl_scale;
  Eigen::Index lookback = data::kDefaultLookback;
  Eigen::Index stride = data::kDefaultStride;
  UblConfig ubl;
  /// Upper bound on concurrently trained members; 0 = INVERSE_UQ_THREADS or
  /// hardware concurrency.
  int threads = 0;

  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
};

void to_json(nlohmann::json& j, const UblConfig& c);
void from_json(const nlohmann::json& j, UblConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochRecord {
  int epoch = 0;
  std::string phase;
  double train_objective = 0.0;
  double train_rec = 0.0, train_cont = 0.0, train_inv = 0.0, train_kl = 0.0;
  double val_total = 0.0;
  double val_rec = 0.0, val_cont = 0.0, val_inv = 0.0, val_weighted_inv = 0.0;
  double monitor = 0.0;
};

struct RunManifest {
  nlohmann::json config;
  std::string split_hash;
  std::uint64_t seed = 0;
  int member = 0;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_monitor = 0.0;
  std::optional<losses::PenaltyVector> penalty;
  std::string status = "ok";
  double wall_seconds = 0.0;
};

nlohmann::json to_json(const RunManifest& m);
nlohmann::json to_json(const losses::PenaltyVector& p);

/// Divergence: carries the manifest up to the last finite epoch.
class TrainingDiverged : public TrainingError {
 public:
  TrainingDiverged(const std::string& what, RunManifest manifest)
      : TrainingError(what), manifest_(std::move(manifest)) {}
  const RunManifest& manifest() const { return manifest_; }

 private:
  RunManifest manifest_;
};

/// Windows of one basin together with its (normalized) static target.
struct BasinWindows {
  std::string basin_id;
  std::vector<data::WindowSample> windows;
};

std::vector<BasinWindows> group_windows(const data::Dataset& dataset, Eigen::Index lookback, Eigen::Index stride);
/// Basins with at least two windows; the rest are reported with a warning.
std::vector<const BasinWindows*> contrastive_eligible(const std::vector<BasinWindows>& basins);

struct ContrastiveBatch {
  std::vector<const data::WindowSample*> anchors;
  std::vector<const data::WindowSample*> positives;

  std::size_t pairs() const { return anchors.size(); }
};

/// min(batch_size, eligible) distinct basins, two distinct windows from each.
ContrastiveBatch make_contrastive_batch(const std::vector<const BasinWindows*>& eligible, int batch_size, Rng& rng);
/// One pass over all eligible basins in shuffled order, chunked by batch_size.
std::vector<ContrastiveBatch> make_epoch_batches(const std::vector<const BasinWindows*>& eligible, int batch_size,
                                                 Rng& rng);

/// Normalized training-basin partitions.
struct InverseData {
  data::Dataset train;  // training years
  data::Dataset val;    // validation years, same basins
  std::string split_hash;
};

struct TrainResult {
  model::BimModel model;
  RunManifest manifest;
};

/// Single model, cfg.epochs epochs, best-validation checkpoint.
TrainResult train_inverse(const InverseData& data, const TrainConfig& config, std::uint64_t seed);
TrainResult train_inverse(const InverseData& data, const TrainConfig& config);

struct UblResult {
  model::BimModel model;
  losses::PenaltyVector penalty;
  RunManifest manifest;
  model::BimModel phase1_model;
};

UblResult train_inverse_ubl(const InverseData& data, const TrainConfig& config);

/// Member seed stream for the UBL epistemic matrix: the draws use
/// derive_seed(member seed, kEpistemicStream).
inline constexpr std::uint64_t kEpistemicStream = 0x5641'4c49'4441'5445ULL;

/// D_z x D_z epistemic matrix of one model on a partition (window-averaged
/// posterior draws per basin).
Matrix epistemic_matrix(const model::BimModel& model, const data::Dataset& partition, const TrainConfig& config,
                        std::uint64_t seed);

struct EnsembleResult {
  std::vector<model::BimModel> members;
  std::vector<RunManifest> manifests;
  std::optional<losses::PenaltyVector> penalty;
  /// Members at the end of phase 1 (UBL only).
  std::vector<model::BimModel> phase1_members;
};

class EnsembleAborted : public TrainingError {
 public:
  EnsembleAborted(const std::string& what, std::vector<RunManifest> manifests)
      : TrainingError(what), manifests_(std::move(manifests)) {}
  const std::vector<RunManifest>& manifests() const { return manifests_; }

 private:
  std::vector<RunManifest> manifests_;
};

/// Members seeded by derive_seed(config.seed, index); runs UBL when enabled,
/// with the epistemic matrix averaged over members.
EnsembleResult train_ensemble(const InverseData& data, const TrainConfig& config);

/// Thread budget: config.threads, else INVERSE_UQ_THREADS, else hardware.
int resolve_threads(int configured);

// ---- Pooled prediction -------------------------------------------------------

struct PooledMoments {
  Vector mean;
  Vector variance;  // within + between
  Vector within;
  Vector between;
};

/// mean of member means; mean of member variances + population variance of
/// member means.
PooledMoments pool_members(const std::vector<Vector>& means, const std::vector<Vector>& variances);

struct BasinEstimate {
  std::string basin_id;
  Vector mean;  // normalized units
  Vector std;   // pooled, normalized units (zero for deterministic members)
  Matrix member_means;      // M x D_z
  Matrix member_variances;  // M x D_z
  Vector temporal;          // mean over members of the temporal uncertainty
  int windows = 0;
  data::Date first_date{};
  data::Date last_date{};
};

struct EnsemblePrediction {
  std::vector<BasinEstimate> basins;
  std::vector<std::string> excluded;  // no complete window
};

/// Window-averaged estimates of every basin of a normalized partition.
EnsemblePrediction predict_ensemble(const std::vector<model::BimModel>& members, const data::Dataset& partition,
                                    const TrainConfig& config, std::uint64_t seed);

// ---- Export ----------------------------------------------------------------

struct EstimateTable {
  std::vector<std::string> static_names;
  std::vector<std::string> basin_ids;
  Matrix mean;                // raw units, basins x D_z
  std::optional<Matrix> std;  // raw units, bayesian only
  std::vector<std::string> excluded;
  nlohmann::json provenance;
};

/// Static estimates for the forward model. `partition` must be a normalized
/// validation-period slice (ContractError otherwise).
EstimateTable export_static_estimates(const std::vector<model::BimModel>& members, const data::Dataset& partition,
                                      const data::Normalizer& normalizer, const TrainConfig& config,
                                      std::uint64_t seed);

/// CSV `basin_id,<name>_hat...[,<name>_std...]` plus `<path>.provenance.json`.
void write_estimates(const EstimateTable& table, const std::string& path);
EstimateTable read_estimates(const std::string& path);

}  // namespace inverse_uq::train
