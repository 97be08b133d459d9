#include "inverse_uq/forward_model.hpp"

#include "inverse_uq/logging.hpp"
#include "inverse_uq/random.hpp"
#include "inverse_uq/util.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace inverse_uq::forward {

namespace {

ad::Parameter uniform_param(std::string name, Eigen::Index rows, Eigen::Index cols, double fan_in, Rng& rng) {
  return ad::Parameter(std::move(name), uniform_matrix(rows, cols, 1.0 / std::sqrt(fan_in), rng));
}

Vector static_block(const StaticInputs& statics, const std::string& basin_id, bool& found) {
  const auto it = statics.by_basin.find(basin_id);
  found = it != statics.by_basin.end();
  return found ? it->second : Vector();
}

struct Batch {
  Matrix inputs;  // time-major
  Matrix target;  // (L * B) x 1, time-major
  Eigen::Index batch = 0;
  Eigen::Index length = 0;
};

Batch make_batch(const std::vector<ForwardSample>& samples, std::span<const std::size_t> order) {
  Batch b;
  b.batch = static_cast<Eigen::Index>(order.size());
  b.length = samples[order[0]].inputs.rows();
  const Eigen::Index width = samples[order[0]].inputs.cols();
  b.inputs.resize(b.length * b.batch, width);
  b.target.resize(b.length * b.batch, 1);
  for (Eigen::Index k = 0; k < b.batch; ++k) {
    const ForwardSample& s = samples[order[static_cast<std::size_t>(k)]];
    if (s.inputs.rows() != b.length || s.inputs.cols() != width) {
      throw DimensionError("forward samples differ in shape");
    }
    for (Eigen::Index t = 0; t < b.length; ++t) {
      b.inputs.row(t * b.batch + k) = s.inputs.row(t);
      b.target(t * b.batch + k, 0) = s.target(t);
    }
  }
  return b;
}

// Mean squared error after the burn-in rows.
ad::Var batch_loss(ad::Graph& g, ForwardModel& model, const Batch& b, bool trainable) {
  auto bind = [&](ad::Parameter& p) { return trainable ? g.param(p) : g.constant(p.value); };
  const Eigen::Index in = model.lstm.input_dim;
  const Eigen::Index h = model.lstm.hidden;
  const ad::Var w = bind(model.lstm.weight);
  const ad::Var proj = ad::add_bias(ad::matmul(g.constant(b.inputs), ad::slice_rows(w, 0, in)), bind(model.lstm.bias));
  const ad::Var w_hidden = ad::slice_rows(w, in, h);
  const Eigen::Index skip = std::min(model.config.burn_in, b.length - 1);

  ad::Var state = g.constant(Matrix::Zero(b.batch, 2 * h));
  std::vector<ad::Var> hs;
  hs.reserve(static_cast<std::size_t>(b.length - skip));
  for (Eigen::Index t = 0; t < b.length; ++t) {
    state = ad::lstm_cell(proj, t * b.batch, state, w_hidden);
    if (t >= skip) hs.push_back(ad::slice_cols(state, 0, h));
  }
  const ad::Var out =
      ad::add_bias(ad::matmul(ad::concat_rows(hs), bind(model.head.weight)), bind(model.head.bias));
  const ad::Var target = g.constant(b.target.bottomRows((b.length - skip) * b.batch));
  return ad::mean(ad::square(ad::sub(out, target)));
}

double evaluate_mse(ForwardModel& model, const std::vector<ForwardSample>& samples, int batch_size) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  double total = 0.0;
  double count = 0.0;
  for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(batch_size), order.size() - begin);
    const Batch b = make_batch(samples, std::span<const std::size_t>(order).subspan(begin, n));
    ad::Graph g;
    total += static_cast<double>(n) * batch_loss(g, model, b, false).scalar();
    count += static_cast<double>(n);
  }
  return total / count;
}

}  // namespace

// ---- Static inputs --------------------------------------------------------------

StaticInputs observed_statics(const data::Dataset& normalized) {
  StaticInputs s{"observed", normalized.static_names, {}};
  for (const auto& r : normalized.records) {
    if (r.statics) s.by_basin[r.basin_id] = *r.statics;
  }
  return s;
}

StaticInputs estimated_statics(const train::EstimateTable& table, const data::Normalizer& normalizer) {
  StaticInputs s{"estimated", table.static_names, {}};
  for (std::size_t i = 0; i < table.basin_ids.size(); ++i) {
    s.by_basin[table.basin_ids[i]] = normalizer.normalize_statics(table.mean.row(static_cast<Eigen::Index>(i)).transpose());
  }
  return s;
}

StaticInputs zero_statics(const data::Dataset& dataset, Eigen::Index dim, std::vector<std::string> names) {
  if (dim < 0) throw std::invalid_argument("zero_statics: negative width");
  if (names.empty()) {
    for (Eigen::Index j = 0; j < dim; ++j) names.push_back("zero" + std::to_string(j + 1));
  }
  StaticInputs s{"zeros", std::move(names), {}};
  for (const auto& r : dataset.records) s.by_basin[r.basin_id] = Vector::Zero(dim);
  return s;
}

ForwardSamples build_forward_samples(const data::Dataset& normalized, const StaticInputs& statics,
                                     Eigen::Index lookback, Eigen::Index stride) {
  ForwardSamples out;
  const Eigen::Index dx = normalized.driver_count();
  for (const auto& record : normalized.records) {
    bool found = false;
    const Vector z = static_block(statics, record.basin_id, found);
    if (!found) {
      out.excluded.push_back(record.basin_id);
      logging::warn("forward_basin_excluded", {{"basin_id", record.basin_id}, {"source", statics.source}});
      continue;
    }
    for (auto& w : data::make_windows(record, lookback, stride)) {
      ForwardSample s;
      s.basin_id = w.basin_id;
      s.start_index = w.start_index;
      s.inputs.resize(w.length, dx + z.size());
      s.inputs.leftCols(dx) = w.inputs.leftCols(dx);
      s.inputs.rightCols(z.size()) = z.transpose().replicate(w.length, 1);
      s.target = w.inputs.col(dx);
      out.samples.push_back(std::move(s));
    }
  }
  return out;
}

// ---- Config ---------------------------------------------------------------------

void ForwardConfig::validate() const {
  if (hidden < 1) throw std::invalid_argument("forward hidden size must be positive");
  if (epochs < 1) throw std::invalid_argument("forward epochs must be positive");
  if (batch_size < 1) throw std::invalid_argument("forward batch_size must be positive");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("forward clip_norm must be positive");
  if (patience < 1) throw std::invalid_argument("forward patience must be positive");
  if (lookback < 1 || stride < 1) throw std::invalid_argument("forward lookback and stride must be positive");
  if (burn_in < 0 || burn_in >= lookback) throw std::invalid_argument("forward burn_in must lie in [0, lookback)");
  if (aggregation != "median" && aggregation != "mean") {
    throw std::invalid_argument("forward aggregation must be median or mean");
  }
}

void to_json(nlohmann::json& j, const ForwardConfig& c) {
  j = {{"hidden", c.hidden},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"learning_rate", c.adam.learning_rate},
       {"beta1", c.adam.beta1},
       {"beta2", c.adam.beta2},
       {"epsilon", c.adam.epsilon},
       {"clip_norm", c.clip_norm},
       {"patience", c.patience},
       {"seed", c.seed},
       {"lookback", c.lookback},
       {"stride", c.stride},
       {"burn_in", c.burn_in},
       {"aggregation", c.aggregation}};
}

void from_json(const nlohmann::json& j, ForwardConfig& c) {
  ForwardConfig d;
  c.hidden = j.value("hidden", d.hidden);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.adam.learning_rate = j.value("learning_rate", d.adam.learning_rate);
  c.adam.beta1 = j.value("beta1", d.adam.beta1);
  c.adam.beta2 = j.value("beta2", d.adam.beta2);
  c.adam.epsilon = j.value("epsilon", d.adam.epsilon);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.patience = j.value("patience", d.patience);
  c.seed = j.value("seed", d.seed);
  c.lookback = j.value("lookback", d.lookback);
  c.stride = j.value("stride", d.stride);
  c.burn_in = j.value("burn_in", d.burn_in);
  c.aggregation = j.value("aggregation", d.aggregation);
}

// ---- Model ----------------------------------------------------------------------

ForwardModel::ForwardModel(const ForwardConfig& cfg, Eigen::Index in, std::uint64_t init_seed)
    : config(cfg), input_dim(in) {
  if (in < 1) throw std::invalid_argument("forward input width must be positive");
  cfg.validate();
  Rng rng(init_seed);
  const double fan_in = static_cast<double>(in + cfg.hidden);
  lstm.weight = uniform_param("forward_lstm.weight", in + cfg.hidden, 4 * cfg.hidden, fan_in, rng);
  lstm.bias = uniform_param("forward_lstm.bias", 1, 4 * cfg.hidden, fan_in, rng);
  lstm.input_dim = in;
  lstm.hidden = cfg.hidden;
  const auto h = static_cast<double>(cfg.hidden);
  head.weight = uniform_param("forward_head.weight", cfg.hidden, 1, h, rng);
  head.bias = uniform_param("forward_head.bias", 1, 1, h, rng);
}

std::vector<ad::Parameter*> ForwardModel::parameters() { return {&lstm.weight, &lstm.bias, &head.weight, &head.bias}; }

nlohmann::json to_json(const ForwardManifest& m) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : m.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_mse", e.train_mse},
                      {"val_mse", e.val_mse ? nlohmann::json(*e.val_mse) : nlohmann::json(nullptr)}});
  }
  return {{"config", m.config}, {"statics_source", m.statics_source}, {"seed", m.seed},
          {"epochs", epochs},   {"best_epoch", m.best_epoch},         {"status", m.status},
          {"wall_seconds", m.wall_seconds}};
}

ForwardTrainResult train_forward(const std::vector<ForwardSample>& train, const std::vector<ForwardSample>& val,
                                 const ForwardConfig& config, std::uint64_t seed) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("train_forward: no training samples");
  const auto start = std::chrono::steady_clock::now();
  Rng rng(seed);
  ForwardTrainResult result{ForwardModel(config, train.front().inputs.cols(), rng()), {}};
  ForwardModel& model = result.model;
  ForwardManifest& manifest = result.manifest;
  manifest.config = config;
  manifest.seed = seed;

  auto params = model.parameters();
  train::Adam adam(params, config.adam);
  ForwardModel best = model;
  double best_val = std::numeric_limits<double>::infinity();
  int stale = 0;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), order.size() - begin);
      const Batch b = make_batch(train, std::span<const std::size_t>(order).subspan(begin, n));
      adam.zero_grad();
      ad::Graph g;
      const ad::Var loss = batch_loss(g, model, b, true);
      const double value = loss.scalar();
      if (!std::isfinite(value)) {
        manifest.status = "diverged";
        manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        throw ForwardDiverged("forward loss is not finite (epoch " + std::to_string(epoch) + ")", manifest);
      }
      g.backward(loss);
      train::clip_grad_norm(params, config.clip_norm);
      adam.step();
      total += static_cast<double>(n) * value;
    }
    ForwardEpoch rec{epoch, total / static_cast<double>(train.size()), std::nullopt};
    if (!val.empty()) rec.val_mse = evaluate_mse(model, val, config.batch_size);
    manifest.epochs.push_back(rec);
    logging::event(logging::Level::debug, "forward_epoch",
                   {{"epoch", epoch},
                    {"train_mse", rec.train_mse},
                    {"val_mse", rec.val_mse ? nlohmann::json(*rec.val_mse) : nlohmann::json(nullptr)}});

    const double monitor = rec.val_mse.value_or(rec.train_mse);
    if (monitor < best_val) {
      best_val = monitor;
      best = model;
      manifest.best_epoch = epoch;
      stale = 0;
    } else if (!val.empty() && ++stale >= config.patience) {
      logging::info("forward_early_stop", {{"epoch", epoch}});
      break;
    }
  }
  if (!val.empty()) model = std::move(best);
  else manifest.best_epoch = manifest.epochs.back().epoch;
  manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

ForwardTrainResult train_forward(const std::vector<ForwardSample>& train, const std::vector<ForwardSample>& val,
                                 const ForwardConfig& config) {
  return train_forward(train, val, config, config.seed);
}

// ---- Inference ------------------------------------------------------------------

Vector run_sequence(const ForwardModel& model, const Matrix& inputs) {
  if (inputs.cols() != model.input_dim) {
    throw DimensionError("forward input width " + std::to_string(inputs.cols()) + " != model input width " +
                         std::to_string(model.input_dim));
  }
  const Eigen::Index h = model.lstm.hidden;
  const Matrix& w = model.lstm.weight.value;
  const Matrix proj = (inputs * w.topRows(model.input_dim)).rowwise() + model.lstm.bias.value.row(0);
  const Matrix w_hidden = w.bottomRows(h);
  Eigen::RowVectorXd hs = Eigen::RowVectorXd::Zero(h), cs = Eigen::RowVectorXd::Zero(h);
  Vector out(inputs.rows());
  auto logistic = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (Eigen::Index t = 0; t < inputs.rows(); ++t) {
    const Eigen::RowVectorXd gates = proj.row(t) + hs * w_hidden;
    for (Eigen::Index k = 0; k < h; ++k) {
      const double i = logistic(gates(k));
      const double f = logistic(gates(h + k));
      const double g = std::tanh(gates(2 * h + k));
      const double o = logistic(gates(3 * h + k));
      cs(k) = f * cs(k) + i * g;
      hs(k) = o * std::tanh(cs(k));
    }
    out(t) = hs.dot(model.head.weight.value.col(0)) + model.head.bias.value(0, 0);
  }
  return out;
}

std::vector<BasinSeries> predict_streamflow(const ForwardModel& model, const data::Dataset& normalized,
                                            const StaticInputs& statics, const data::Normalizer& normalizer,
                                            const std::optional<data::YearRange>& report) {
  std::vector<BasinSeries> out;
  const Eigen::Index dx = normalized.driver_count();
  for (const auto& record : normalized.records) {
    bool found = false;
    const Vector z = static_block(statics, record.basin_id, found);
    if (!found) {
      logging::warn("forward_basin_excluded", {{"basin_id", record.basin_id}, {"source", statics.source}});
      continue;
    }
    Matrix inputs(record.length(), dx + z.size());
    inputs.leftCols(dx) = record.drivers.unaryExpr([](double v) { return std::isfinite(v) ? v : 0.0; });
    inputs.rightCols(z.size()) = z.transpose().replicate(record.length(), 1);
    const Vector pred = run_sequence(model, inputs);

    BasinSeries s;
    s.basin_id = record.basin_id;
    std::vector<double> obs, hat;
    for (Eigen::Index t = 0; t < record.length(); ++t) {
      const data::Date d = record.dates[static_cast<std::size_t>(t)];
      if (report && !report->contains(data::year_of(d))) continue;
      s.dates.push_back(d);
      const double y = record.response(t);
      obs.push_back(std::isfinite(y) ? normalizer.denormalize_response(y) : std::numeric_limits<double>::quiet_NaN());
      hat.push_back(normalizer.denormalize_response(pred(t)));
    }
    s.observed = Eigen::Map<const Vector>(obs.data(), static_cast<Eigen::Index>(obs.size()));
    s.predicted = Eigen::Map<const Vector>(hat.data(), static_cast<Eigen::Index>(hat.size()));
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<metrics::StreamflowSeries> as_metric_series(const std::vector<BasinSeries>& series) {
  std::vector<metrics::StreamflowSeries> out;
  out.reserve(series.size());
  for (const auto& s : series) out.push_back({s.basin_id, s.observed, s.predicted});
  return out;
}

// ---- Ensembles and output ------------------------------------------------------

ForwardEnsembleReport forward_ensemble_report(const std::vector<std::vector<BasinSeries>>& runs) {
  if (runs.empty()) throw std::invalid_argument("forward_ensemble_report: no runs");
  const auto& first = runs.front();
  for (std::size_t r = 1; r < runs.size(); ++r) {
    if (runs[r].size() != first.size()) throw std::invalid_argument("forward runs cover different basin sets");
    for (std::size_t b = 0; b < first.size(); ++b) {
      if (runs[r][b].basin_id != first[b].basin_id || runs[r][b].dates != first[b].dates) {
        throw std::invalid_argument("forward runs differ at basin " + first[b].basin_id);
      }
    }
  }

  ForwardEnsembleReport rep;
  std::vector<double> medians, means;
  for (const auto& run : runs) {
    const auto summary = metrics::summarize_streamflow(as_metric_series(run));
    if (summary.median_nse) medians.push_back(*summary.median_nse);
    if (summary.mean_nse) means.push_back(*summary.mean_nse);
    rep.runs.push_back(summary);
  }
  auto average = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  rep.average_nse_median = average(medians);
  rep.average_nse_mean = average(means);

  rep.ensemble = first;
  for (std::size_t b = 0; b < first.size(); ++b) {
    Vector sum = Vector::Zero(first[b].predicted.size());
    for (const auto& run : runs) sum += run[b].predicted;
    rep.ensemble[b].predicted = sum / static_cast<double>(runs.size());
  }
  const auto ens = metrics::summarize_streamflow(as_metric_series(rep.ensemble));
  rep.ensemble_nse_median = ens.median_nse;
  rep.ensemble_nse_mean = ens.mean_nse;
  return rep;
}

nlohmann::json to_json(const ForwardEnsembleReport& report) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : report.runs) {
    runs.push_back({{"basins", r.basins}, {"undefined", r.undefined}, {"median_nse", opt(r.median_nse)},
                    {"mean_nse", opt(r.mean_nse)}});
  }
  return {{"runs", runs},
          {"average_nse_median", opt(report.average_nse_median)},
          {"average_nse_mean", opt(report.average_nse_mean)},
          {"ensemble_nse_median", opt(report.ensemble_nse_median)},
          {"ensemble_nse_mean", opt(report.ensemble_nse_mean)}};
}

void write_predictions(const std::string& path, const std::vector<BasinSeries>& series,
                       const std::vector<std::vector<BasinSeries>>& runs) {
  std::ostringstream out;
  out << "basin_id,date,y_obs,y_pred";
  for (std::size_t r = 0; r < runs.size(); ++r) out << ",y_pred_run" << r + 1;
  out << '\n';
  for (std::size_t b = 0; b < series.size(); ++b) {
    const auto& s = series[b];
    for (std::size_t t = 0; t < s.dates.size(); ++t) {
      const auto i = static_cast<Eigen::Index>(t);
      out << s.basin_id << ',' << data::format_date(s.dates[t]) << ',';
      if (std::isfinite(s.observed(i))) out << util::format_double(s.observed(i));
      out << ',' << util::format_double(s.predicted(i));
      for (const auto& run : runs) out << ',' << util::format_double(run.at(b).predicted(i));
      out << '\n';
    }
  }
  util::write_file(path, out.str());
}

nlohmann::json to_json(const ForwardModel& model) {
  nlohmann::json params = nlohmann::json::object();
  for (const ad::Parameter* p : const_cast<ForwardModel&>(model).parameters()) {
    std::vector<double> data(static_cast<std::size_t>(p->value.size()));
    Eigen::Map<Matrix>(data.data(), p->value.rows(), p->value.cols()) = p->value;
    params[p->name] = {{"rows", p->value.rows()}, {"cols", p->value.cols()}, {"data", data}};
  }
  return {{"format", "inverse_uq.forward"},
          {"version", 1},
          {"config", model.config},
          {"input_dim", model.input_dim},
          {"parameters", params}};
}

ForwardModel forward_model_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "inverse_uq.forward") throw IoError("not an inverse_uq.forward checkpoint");
  ForwardModel model(j.at("config").get<ForwardConfig>(), j.at("input_dim").get<Eigen::Index>(), 0);
  for (ad::Parameter* p : model.parameters()) {
    const auto& entry = j.at("parameters").at(p->name);
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    const auto data = entry.at("data").get<std::vector<double>>();
    if (rows != p->value.rows() || cols != p->value.cols() || static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw DimensionError("forward checkpoint parameter " + p->name + " has an unexpected shape");
    }
    p->value = Eigen::Map<const Matrix>(data.data(), rows, cols);
    p->zero_grad();
  }
  return model;
}

}  // namespace inverse_uq::forward
