#include "inverse_uq/metrics.hpp"

#include "inverse_uq/errors.hpp"
#include "inverse_uq/util.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace inverse_uq::metrics {

namespace {

void require_lengths(const Vector& a, const Vector& b, const Vector& c, const char* what) {
  if (a.size() != b.size() || a.size() != c.size()) {
    throw std::invalid_argument(std::string(what) + ": observed, mean and std lengths differ");
  }
}

std::optional<double> mean_of(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

std::optional<double> median_of(std::vector<double> values) {
  if (values.empty()) return std::nullopt;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> optional_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

struct Column {
  const char* name;
  std::optional<double> CharacteristicMetrics::*field;
};

constexpr Column kColumns[] = {
    {"nse", &CharacteristicMetrics::nse},
    {"coverage_68", &CharacteristicMetrics::coverage_68},
    {"coverage_95", &CharacteristicMetrics::coverage_95},
    {"rms_calibration_error", &CharacteristicMetrics::rms_calibration_error},
    {"dispersion", &CharacteristicMetrics::dispersion},
    {"interval_width_68", &CharacteristicMetrics::interval_width_68},
    {"interval_width_95", &CharacteristicMetrics::interval_width_95},
    {"mean_std", &CharacteristicMetrics::mean_std},
};

}  // namespace

std::optional<double> nse(const Vector& observed, const Vector& predicted) {
  if (observed.size() != predicted.size()) throw std::invalid_argument("nse: observed and predicted lengths differ");
  if (observed.size() < 2) throw std::invalid_argument("nse: need at least two values");
  const double mean = observed.mean();
  const double denominator = (observed.array() - mean).square().sum();
  if (!(denominator > 0.0)) return std::nullopt;
  return 1.0 - (observed - predicted).squaredNorm() / denominator;
}

double coverage_rate(const Vector& observed, const Vector& mean, const Vector& std, double z_alpha) {
  require_lengths(observed, mean, std, "coverage_rate");
  if (!(z_alpha > 0.0)) throw std::invalid_argument("coverage_rate: z_alpha must be positive");
  if (observed.size() == 0) throw std::invalid_argument("coverage_rate: no observations");
  Eigen::Index inside = 0;
  for (Eigen::Index i = 0; i < observed.size(); ++i) {
    const double half = z_alpha * std(i);
    if (observed(i) >= mean(i) - half && observed(i) <= mean(i) + half) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(observed.size());
}

std::vector<double> default_percentile_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 19; ++i) grid.push_back(0.05 * i);
  return grid;
}

double rms_calibration_error(const Vector& observed, const Vector& mean, const Vector& std,
                             const std::vector<double>& grid) {
  require_lengths(observed, mean, std, "rms_calibration_error");
  if (grid.empty()) throw std::invalid_argument("rms_calibration_error: empty percentile grid");
  if (observed.size() == 0) throw std::invalid_argument("rms_calibration_error: no observations");
  const boost::math::normal_distribution<double> standard;
  double sq = 0.0;
  for (double p : grid) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("rms_calibration_error: percentiles must lie in (0, 1)");
    const double z = boost::math::quantile(standard, p);
    Eigen::Index below = 0;
    for (Eigen::Index i = 0; i < observed.size(); ++i) {
      if (observed(i) <= mean(i) + z * std(i)) ++below;
    }
    const double d = p - static_cast<double>(below) / static_cast<double>(observed.size());
    sq += d * d;
  }
  return std::sqrt(sq / static_cast<double>(grid.size()));
}

std::optional<double> dispersion(const Vector& sigma) {
  if (sigma.size() == 0) throw std::invalid_argument("dispersion: no values");
  if ((sigma.array() < 0.0).any()) throw std::invalid_argument("dispersion: negative std");
  const double mean = sigma.mean();
  if (!(mean > 0.0)) return std::nullopt;
  // The summed mean of a constant vector is not always that constant.
  if (sigma.maxCoeff() == sigma.minCoeff()) return 0.0;
  const double sd = std::sqrt((sigma.array() - mean).square().mean());
  return sd / mean;
}

double mean_interval_width(const Vector& std, double z_alpha) {
  if (std.size() == 0) throw std::invalid_argument("mean_interval_width: no values");
  return 2.0 * z_alpha * std.mean();
}

StreamflowSummary summarize_streamflow(const std::vector<StreamflowSeries>& series) {
  StreamflowSummary out;
  std::vector<double> scores;
  for (const auto& s : series) {
    if (s.observed.size() != s.predicted.size()) {
      throw std::invalid_argument("streamflow series for " + s.basin_id + " has mismatched lengths");
    }
    std::vector<double> o, p;
    for (Eigen::Index t = 0; t < s.observed.size(); ++t) {
      if (std::isfinite(s.observed(t))) {
        o.push_back(s.observed(t));
        p.push_back(s.predicted(t));
      }
    }
    ++out.basins;
    std::optional<double> score;
    if (o.size() >= 2) {
      score = nse(Eigen::Map<const Vector>(o.data(), static_cast<Eigen::Index>(o.size())),
                  Eigen::Map<const Vector>(p.data(), static_cast<Eigen::Index>(p.size())));
    }
    if (score) {
      scores.push_back(*score);
    } else {
      ++out.undefined;
    }
  }
  out.median_nse = median_of(scores);
  out.mean_nse = mean_of(scores);
  return out;
}

UncertaintyReport assemble_report(const StaticPredictions& predictions, const ObservedStatics& observed,
                                  const std::vector<StreamflowSeries>* streamflow, nlohmann::json config) {
  const Eigen::Index n_basins = static_cast<Eigen::Index>(predictions.basin_ids.size());
  if (predictions.mean.rows() != n_basins || predictions.mean.cols() != static_cast<Eigen::Index>(predictions.names.size())) {
    throw DimensionError("assemble_report: prediction matrix does not match its labels");
  }
  if (predictions.std && (predictions.std->rows() != predictions.mean.rows() ||
                          predictions.std->cols() != predictions.mean.cols())) {
    throw DimensionError("assemble_report: std matrix does not match the mean");
  }

  std::map<std::string, Eigen::Index> observed_row, observed_col;
  for (std::size_t i = 0; i < observed.basin_ids.size(); ++i) observed_row[observed.basin_ids[i]] = static_cast<Eigen::Index>(i);
  for (std::size_t j = 0; j < observed.names.size(); ++j) observed_col[observed.names[j]] = static_cast<Eigen::Index>(j);
  std::vector<std::string> missing;
  for (const auto& id : predictions.basin_ids) {
    if (!observed_row.contains(id)) missing.push_back("basin " + id);
  }
  for (const auto& name : predictions.names) {
    if (!observed_col.contains(name)) missing.push_back("characteristic " + name);
  }
  if (!missing.empty()) {
    std::string msg = "assemble_report: no observation for";
    for (std::size_t i = 0; i < missing.size(); ++i) msg += (i ? ", " : " ") + missing[i];
    throw std::invalid_argument(msg);
  }
  if (n_basins == 0) throw std::invalid_argument("assemble_report: no basins");

  UncertaintyReport report;
  report.config = std::move(config);
  std::vector<double> pooled_obs, pooled_mean, pooled_std;
  for (std::size_t j = 0; j < predictions.names.size(); ++j) {
    const Eigen::Index col = observed_col.at(predictions.names[j]);
    Vector obs(n_basins);
    for (Eigen::Index i = 0; i < n_basins; ++i) {
      obs(i) = observed.values(observed_row.at(predictions.basin_ids[static_cast<std::size_t>(i)]), col);
    }
    const Vector mean = predictions.mean.col(static_cast<Eigen::Index>(j));

    CharacteristicMetrics m;
    m.name = predictions.names[j];
    m.count = static_cast<int>(n_basins);
    if (n_basins >= 2) m.nse = nse(obs, mean);
    if (predictions.std) {
      const Vector sd = predictions.std->col(static_cast<Eigen::Index>(j));
      m.coverage_68 = coverage_rate(obs, mean, sd, kZ68);
      m.coverage_95 = coverage_rate(obs, mean, sd, kZ95);
      m.rms_calibration_error = rms_calibration_error(obs, mean, sd, default_percentile_grid());
      m.dispersion = dispersion(sd);
      m.interval_width_68 = mean_interval_width(sd, kZ68);
      m.interval_width_95 = mean_interval_width(sd, kZ95);
      m.mean_std = sd.mean();
      for (Eigen::Index i = 0; i < n_basins; ++i) {
        pooled_obs.push_back(obs(i));
        pooled_mean.push_back(mean(i));
        pooled_std.push_back(sd(i));
      }
    }
    report.per_characteristic.push_back(std::move(m));
  }

  nlohmann::json agg = nlohmann::json::object();
  auto collect = [&](std::optional<double> CharacteristicMetrics::*field) {
    std::vector<double> v;
    for (const auto& m : report.per_characteristic) {
      if (m.*field) v.push_back(*(m.*field));
    }
    return v;
  };
  const auto nses = collect(&CharacteristicMetrics::nse);
  agg["nse_mean"] = optional_json(mean_of(nses));
  agg["nse_median"] = optional_json(median_of(nses));
  agg["nse_undefined"] = static_cast<int>(report.per_characteristic.size() - nses.size());
  agg["basins"] = static_cast<int>(n_basins);
  if (predictions.std) {
    for (const Column& c : kColumns) {
      if (std::string(c.name) == "nse") continue;
      agg[std::string(c.name) + "_mean"] = optional_json(mean_of(collect(c.field)));
    }
    const auto size = static_cast<Eigen::Index>(pooled_obs.size());
    const Eigen::Map<const Vector> o(pooled_obs.data(), size), mu(pooled_mean.data(), size), sd(pooled_std.data(), size);
    agg["coverage_68_pooled"] = coverage_rate(o, mu, sd, kZ68);
    agg["coverage_95_pooled"] = coverage_rate(o, mu, sd, kZ95);
    agg["rms_calibration_error_pooled"] = rms_calibration_error(o, mu, sd, default_percentile_grid());
    agg["dispersion_pooled"] = optional_json(dispersion(sd));
  }
  if (streamflow != nullptr) {
    const StreamflowSummary s = summarize_streamflow(*streamflow);
    agg["streamflow"] = {{"basins", s.basins},
                         {"undefined", s.undefined},
                         {"median_nse", optional_json(s.median_nse)},
                         {"mean_nse", optional_json(s.mean_nse)}};
  }
  report.aggregate = std::move(agg);
  return report;
}

nlohmann::json to_json(const UncertaintyReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& m : report.per_characteristic) {
    nlohmann::json row = {{"name", m.name}, {"count", m.count}};
    for (const Column& c : kColumns) row[c.name] = optional_json(m.*(c.field));
    rows.push_back(std::move(row));
  }
  return {{"per_characteristic", std::move(rows)}, {"aggregate", report.aggregate}, {"config", report.config}};
}

UncertaintyReport report_from_json(const nlohmann::json& j) {
  UncertaintyReport report;
  for (const auto& row : j.at("per_characteristic")) {
    CharacteristicMetrics m;
    m.name = row.at("name").get<std::string>();
    m.count = row.at("count").get<int>();
    for (const Column& c : kColumns) m.*(c.field) = optional_from(row, c.name);
    report.per_characteristic.push_back(std::move(m));
  }
  report.aggregate = j.value("aggregate", nlohmann::json::object());
  report.config = j.value("config", nlohmann::json::object());
  return report;
}

std::string to_csv(const UncertaintyReport& report) {
  std::ostringstream out;
  out << "name,count";
  for (const Column& c : kColumns) out << ',' << c.name;
  out << '\n';
  for (const auto& m : report.per_characteristic) {
    out << m.name << ',' << m.count;
    for (const Column& c : kColumns) {
      out << ',';
      if (m.*(c.field)) out << util::format_double(*(m.*(c.field)));
    }
    out << '\n';
  }
  return out.str();
}

std::vector<CharacteristicMetrics> per_characteristic_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  constexpr std::size_t kFields = 2 + std::size(kColumns);
  std::vector<CharacteristicMetrics> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto cells = util::split(line, ',');
    if (cells.size() != kFields) throw ParseError("report.csv", line_no, "expected " + std::to_string(kFields) + " fields");
    if (line_no == 1) {
      if (cells[0] != "name" || cells[1] != "count") throw SchemaError("report.csv: unexpected header");
      continue;
    }
    CharacteristicMetrics m;
    m.name = cells[0];
    try {
      m.count = std::stoi(cells[1]);
      for (std::size_t c = 0; c < std::size(kColumns); ++c) {
        if (!cells[2 + c].empty()) m.*(kColumns[c].field) = std::stod(cells[2 + c]);
      }
    } catch (const std::logic_error&) {
      throw ParseError("report.csv", line_no, "invalid number");
    }
    rows.push_back(std::move(m));
  }
  return rows;
}

}  // namespace inverse_uq::metrics
