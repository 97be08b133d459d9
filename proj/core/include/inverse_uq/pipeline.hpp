#pragma once

// End-to-end run: data, inverse ensemble, leakage-safe static export, forward
// ensemble and the evaluation report, sharing one artifact directory.
//
// Layout under output.dir:
//   manifest.json              config, config hash, stage status, artifact index
//   inverse/                   member checkpoints and manifests, normalizer, split
//   estimates.csv              validation-period static estimates (+ provenance)
//   forward/                   forward checkpoints, manifests, predictions, report
//   report.json, report.csv    evaluation

#include "inverse_uq/dataset.hpp"
#include "inverse_uq/forward_model.hpp"
#include "inverse_uq/synthetic.hpp"
#include "inverse_uq/training.hpp"

#include <nlohmann/json.hpp>

#include <stdexcept>
#include <string>
#include <vector>

namespace inverse_uq::pipeline {

struct PipelineConfig {
  std::string data_source = "synthetic";  // "synthetic" or "csv"
  std::string data_dir;                   // csv: drivers.csv, response.csv, statics.csv
  std::string data_schema;                // optional schema JSON
  synthetic::GeneratorConfig synthetic;
  std::size_t train_basins = 0;  // 0: proportional default
  std::uint64_t split_seed = 0;
  data::YearRange train_years{1980, 1986};
  data::YearRange val_years{1986, 1988};
  data::YearRange test_years{1988, 1990};
  train::TrainConfig train;
  forward::ForwardConfig forward;
  int forward_runs = 5;
  std::string forward_statics = "estimates";  // estimates | observed | zeros | path to an estimates CSV
  std::string output_dir = "run";

  void validate() const;
};

/// Flat object of dotted keys ("train.epochs", "forward.hidden", ...).
nlohmann::json to_flat_json(const PipelineConfig& config);
/// Missing keys keep their defaults; unknown keys or wrong types throw ConfigError.
PipelineConfig from_flat_json(const nlohmann::json& j);
/// Every key with its default value and a one-line description.
std::vector<std::pair<std::string, std::string>> describe_keys();
PipelineConfig load_config(const std::string& path);
/// FNV-1a of the canonical flat JSON.
std::string config_hash(const PipelineConfig& config);

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A stage failed; `stage()` names it.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what, std::exception_ptr cause)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)), cause_(std::move(cause)) {}
  const std::string& stage() const { return stage_; }
  const std::exception_ptr& cause() const { return cause_; }

 private:
  std::string stage_;
  std::exception_ptr cause_;
};

/// Writes the synthetic CSV set (plus truth.csv) into `dir`.
void generate_synthetic(const synthetic::GeneratorConfig& config, const std::string& dir);

void train_inverse_stage(const PipelineConfig& config);
void export_statics_stage(const PipelineConfig& config);
/// `statics` overrides config.forward_statics when non-empty.
void train_forward_stage(const PipelineConfig& config, const std::string& statics = "");
void evaluate_stage(const PipelineConfig& config);
/// The four stages in order.
void run_all(const PipelineConfig& config);

/// 20 synthetic basins and small networks, for a quick end-to-end run.
PipelineConfig demo_config(const std::string& output_dir);

}  // namespace inverse_uq::pipeline
