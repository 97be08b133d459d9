#include "inverse_uq/synthetic.hpp"

#include "inverse_uq/random.hpp"
#include "inverse_uq/util.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace inverse_uq::synthetic {

BucketTrace simulate_bucket(const BucketParams& params, const Vector& precipitation, const Vector& pet, double s0) {
  if (!(params.k > 0.0 && params.k <= 1.0)) throw std::invalid_argument("bucket k must lie in (0, 1]");
  if (!(params.c_max > 0.0)) throw std::invalid_argument("bucket c_max must be positive");
  if (!(params.et_coeff >= 0.0)) throw std::invalid_argument("bucket et_coeff must be nonnegative");
  if (!(s0 >= 0.0)) throw std::invalid_argument("initial storage must be nonnegative");
  if (precipitation.size() != pet.size()) throw std::invalid_argument("forcing series differ in length");
  if ((precipitation.array() < 0.0).any() || (pet.array() < 0.0).any() || !precipitation.allFinite() ||
      !pet.allFinite()) {
    throw std::invalid_argument("forcing must be finite and nonnegative");
  }

  const Eigen::Index t_total = precipitation.size();
  BucketTrace trace{Vector(t_total + 1), Vector(t_total), Vector(t_total), Vector(t_total)};
  double s = s0;
  trace.storage(0) = s;
  for (Eigen::Index t = 0; t < t_total; ++t) {
    double q = params.k * s;
    const double et = std::min(params.et_coeff * pet(t), s - q);
    const double next = std::max(0.0, s + precipitation(t) - et - q);
    const double spill = std::max(0.0, next - params.c_max);
    q += spill;
    s = std::min(next, params.c_max);
    trace.outflow(t) = q;
    trace.et(t) = et;
    trace.overflow(t) = spill;
    trace.storage(t + 1) = s;
  }
  return trace;
}

namespace {

constexpr double kYear = 365.25;

struct Climate {
  double wet_probability;
  double wet_mean;
  double pet_mean;
  double phase;
};

// Seasonal intermittent precipitation and sinusoidal potential ET.
void weather(const Climate& c, Eigen::Index days, Eigen::Index day_offset, Rng& rng, Vector& p, Vector& e) {
  p.resize(days);
  e.resize(days);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index t = 0; t < days; ++t) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(t + day_offset) / kYear;
    const double wet = c.wet_probability * (1.0 + 0.5 * std::sin(angle + c.phase));
    const double amount = c.wet_mean * (1.0 + 0.4 * std::sin(angle + c.phase));
    p(t) = unit(rng) < wet ? -amount * std::log(1.0 - unit(rng)) : 0.0;
    e(t) = std::max(0.0, c.pet_mean * (1.0 + 0.7 * std::sin(angle - 1.4)) * (1.0 + 0.1 * normal(rng)));
  }
}

}  // namespace

SyntheticData generate_dataset(const GeneratorConfig& config) {
  if (config.basins < 2) throw std::invalid_argument("generate_dataset: need at least 2 basins");
  if (config.days < 730) throw std::invalid_argument("generate_dataset: need at least 730 days");
  if (config.distractors < 0 || config.spinup_days < 0 || config.noise_sigma_log < 0.0 ||
      config.climate_spread < 0.0) {
    throw std::invalid_argument("generate_dataset: negative distractor count, spin-up, noise or climate spread");
  }

  SyntheticData out;
  auto& ds = out.dataset;
  ds.driver_names = {"precip", "pet", "noise1", "noise2", "noise3"};
  ds.response_name = "flow";
  ds.static_names = {"k", "c_max", "et_coeff"};
  for (int j = 0; j < config.distractors; ++j) ds.static_names.push_back("distractor" + std::to_string(j + 1));

  std::vector<data::Date> dates(static_cast<std::size_t>(config.days));
  for (int t = 0; t < config.days; ++t) dates[static_cast<std::size_t>(t)] = config.start + std::chrono::days(t);

  const std::size_t width = std::max<std::size_t>(2, std::to_string(config.basins).size());
  for (int b = 0; b < config.basins; ++b) {
    Rng rng(util::derive_seed(config.seed, static_cast<std::uint64_t>(b)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    BucketParams params{between(config.k_min, config.k_max), between(config.c_max_min, config.c_max_max),
                        between(config.et_min, config.et_max)};
    const double spread = config.climate_spread;
    const Climate climate{config.wet_probability + spread * between(-0.05, 0.1),
                          config.wet_mean + spread * between(-2.0, 2.0), config.pet_mean + spread * between(-0.5, 1.0),
                          spread * between(0.0, 2.0 * std::numbers::pi)};
    Vector distractors(config.distractors);
    for (int j = 0; j < config.distractors; ++j) distractors(j) = unit(rng);

    Vector p_spin, e_spin, p, e;
    weather(climate, config.spinup_days, -config.spinup_days, rng, p_spin, e_spin);
    weather(climate, config.days, 0, rng, p, e);
    const double s0 = simulate_bucket(params, p_spin, e_spin, 0.0).storage(config.spinup_days);
    const BucketTrace trace = simulate_bucket(params, p, e, s0);

    data::BasinRecord rec;
    const std::string id = std::to_string(b + 1);
    rec.basin_id = "basin" + std::string(width - id.size(), '0') + id;
    rec.dates = dates;
    rec.drivers.resize(config.days, 5);
    rec.drivers.col(0) = p;
    rec.drivers.col(1) = e;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int c = 2; c < 5; ++c) {
      double ar = normal(rng);
      for (int t = 0; t < config.days; ++t) {
        ar = 0.8 * ar + 0.6 * normal(rng);
        rec.drivers(t, c) = ar;
      }
    }
    rec.response.resize(config.days);
    for (int t = 0; t < config.days; ++t) {
      rec.response(t) = trace.outflow(t) * std::exp(config.noise_sigma_log * normal(rng));
    }
    Vector statics(3 + config.distractors);
    statics << params.k, params.c_max, params.et_coeff, distractors;
    rec.statics = statics;
    ds.records.push_back(std::move(rec));
    out.truth.push_back(params);
  }
  ds.validate();
  return out;
}

void write_synthetic(const SyntheticData& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path root(dir);
  data::write_dataset(data.dataset, (root / "drivers.csv").string(), (root / "response.csv").string(),
                      (root / "statics.csv").string());
  std::ostringstream truth;
  truth << "basin_id,k,c_max,et_coeff\n";
  for (std::size_t i = 0; i < data.truth.size(); ++i) {
    const auto& t = data.truth[i];
    truth << data.dataset.records[i].basin_id << ',' << util::format_double(t.k) << ','
          << util::format_double(t.c_max) << ',' << util::format_double(t.et_coeff) << '\n';
  }
  util::write_file((root / "truth.csv").string(), truth.str());
}

}  // namespace inverse_uq::synthetic
