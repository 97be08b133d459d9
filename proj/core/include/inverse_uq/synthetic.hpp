#pragma once

// Synthetic multi-basin data from a single linear-reservoir bucket with known
// parameters. Ground truth for recovery and calibration checks.

#include "inverse_uq/dataset.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace inverse_uq::synthetic {

using data::Matrix;
using data::Vector;

struct BucketParams {
  double k = 0.1;          // outflow coefficient per day, (0, 1]
  double c_max = 200.0;    // storage capacity, mm
  double et_coeff = 0.5;   // fraction of potential evapotranspiration
};

struct BucketTrace {
  Vector storage;   // T + 1 values, storage(0) = S_0
  Vector outflow;   // T, including overflow
  Vector et;        // T, actual evapotranspiration
  Vector overflow;  // T, part of outflow above capacity
};

/// Per step: Q = k S, ET = min(et_coeff E, S - Q), S' = S + P - ET - Q;
/// overflow max(0, S' - c_max) joins Q and the next storage is min(S', c_max).
/// Throws std::invalid_argument for negative forcing or invalid parameters.
BucketTrace simulate_bucket(const BucketParams& params, const Vector& precipitation, const Vector& pet, double s0);

struct GeneratorConfig {
  int basins = 50;
  int days = 3650;
  std::uint64_t seed = 0;
  data::Date start = data::parse_date("1980-01-01");
  int distractors = 5;
  double noise_sigma_log = 0.1;
  int spinup_days = 365;
  double k_min = 0.01, k_max = 0.3;
  double c_max_min = 50.0, c_max_max = 500.0;
  double et_min = 0.0, et_max = 1.0;
  /// Shared climate: wet-day probability, mean storm depth (mm) and mean
  /// potential ET (mm/day), each modulated seasonally.
  double wet_probability = 0.3;
  double wet_mean = 8.0;
  double pet_mean = 2.5;
  /// 0: every basin shares one climate, so only the bucket parameters tell
  /// basins apart. 1: wet-day frequency, storm depth, PET level and seasonal
  /// phase vary across basins.
  double climate_spread = 0.0;
};

struct SyntheticData {
  data::Dataset dataset;  // drivers precip, pet, noise1..3; statics k, c_max, et_coeff, distractor1..
  std::vector<BucketParams> truth;
};

/// Throws std::invalid_argument for fewer than 2 basins or fewer than 730 days.
SyntheticData generate_dataset(const GeneratorConfig& config);

/// Writes drivers.csv, response.csv, statics.csv and truth.csv into `dir`.
void write_synthetic(const SyntheticData& data, const std::string& dir);

}  // namespace inverse_uq::synthetic
