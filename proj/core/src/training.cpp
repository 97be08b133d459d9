#include "inverse_uq/training.hpp"

#include "inverse_uq/logging.hpp"
#include "inverse_uq/util.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace inverse_uq::train {

namespace {

Matrix batch_inputs(const std::vector<const data::WindowSample*>& seqs) {
  std::vector<Matrix> parts;
  parts.reserve(seqs.size());
  for (const auto* w : seqs) parts.push_back(w->inputs);
  return model::stack_time_major(parts);
}

struct Targets {
  Matrix values;
  std::vector<bool> mask;
};

Targets batch_targets(const std::vector<const data::WindowSample*>& seqs, Eigen::Index static_dim) {
  Targets t{Matrix::Zero(static_cast<Eigen::Index>(seqs.size()), static_dim), std::vector<bool>(seqs.size(), false)};
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto& z = seqs[i]->target_statics;
    if (!z) continue;
    if (z->size() != static_dim) {
      throw DimensionError("window of basin " + seqs[i]->basin_id + " has " + std::to_string(z->size()) +
                           " statics, model expects " + std::to_string(static_dim));
    }
    t.values.row(static_cast<Eigen::Index>(i)) = z->transpose();
    t.mask[i] = true;
  }
  return t;
}

std::vector<const data::WindowSample*> concat(const ContrastiveBatch& b) {
  std::vector<const data::WindowSample*> all(b.anchors);
  all.insert(all.end(), b.positives.begin(), b.positives.end());
  return all;
}

struct BatchTerms {
  ad::Var objective;
  double rec = 0.0, cont = 0.0, inv = 0.0, weighted_inv = 0.0, kl = 0.0;
};

// Builds the composite objective of one batch on `mg`. KL is included when
// kl_weight is positive and the model is bayesian.
BatchTerms batch_objective(model::ModelGraph& mg, const model::BimModel& model, const ContrastiveBatch& batch,
                           const losses::LossWeights& weights, const Vector& inv_weights, double kl_weight) {
  const auto seqs = concat(batch);
  const auto n = static_cast<Eigen::Index>(batch.pairs());
  const Matrix stacked = batch_inputs(seqs);
  const Eigen::Index length = seqs.front()->length;
  ad::Graph& g = mg.graph();

  const auto enc = mg.encode(stacked, 2 * n);
  const ad::Var recon = mg.decode(enc.e, length);
  const ad::Var l_rec = losses::reconstruction_loss(recon, g.constant(stacked));
  const ad::Var l_cont =
      losses::contrastive_loss(ad::slice_rows(enc.h, 0, n), ad::slice_rows(enc.h, n, n), weights.tau);
  const ad::Var z_hat = mg.regress(enc.h);
  const Targets targets = batch_targets(seqs, model.config.static_dim);
  const ad::Var l_inv = losses::weighted_pseudo_inverse_loss(z_hat, targets.values, targets.mask, inv_weights);
  const Vector ones = Vector::Ones(model.config.static_dim);
  const double uniform_inv =
      inv_weights.isApprox(ones)
          ? l_inv.scalar()
          : losses::weighted_pseudo_inverse_loss(g.constant(z_hat.value()), targets.values, targets.mask, ones)
                .scalar();

  BatchTerms out;
  out.rec = l_rec.scalar();
  out.cont = l_cont.scalar();
  out.inv = uniform_inv;
  out.weighted_inv = l_inv.scalar();
  out.objective = losses::total_loss(l_rec, l_cont, l_inv, weights);
  if (model.bayesian() && kl_weight > 0.0) {
    const ad::Var kl = mg.kl();
    out.kl = kl.scalar();
    out.objective = losses::variational_free_energy(out.objective, kl, kl_weight);
  }
  return out;
}

struct Prepared {
  std::vector<BasinWindows> train_groups;
  std::vector<const BasinWindows*> eligible;
  std::vector<BasinWindows> val_groups;
  std::vector<ContrastiveBatch> val_batches;
  double kl_weight = 0.0;
};

Prepared prepare(const InverseData& data, const TrainConfig& config) {
  Prepared p;
  p.train_groups = group_windows(data.train, config.lookback, config.stride);
  p.eligible = contrastive_eligible(p.train_groups);
  if (p.eligible.empty()) {
    throw std::invalid_argument("training partition has no basin with two complete windows");
  }
  p.val_groups = group_windows(data.val, config.lookback, config.stride);
  ContrastiveBatch current;
  for (const auto& g : p.val_groups) {
    if (g.windows.size() < 2) continue;
    current.anchors.push_back(&g.windows.front());
    current.positives.push_back(&g.windows.back());
    if (static_cast<int>(current.pairs()) == config.batch_size) {
      p.val_batches.push_back(std::move(current));
      current = {};
    }
  }
  if (current.pairs() > 0) p.val_batches.push_back(std::move(current));

  const auto basins = static_cast<double>(p.eligible.size());
  const double batches =
      std::ceil(basins / static_cast<double>(config.batch_size)) * static_cast<double>(config.rounds_per_epoch);
  // Per-datapoint KL weighting: the dataset is every distinct training window.
  double sequences = 0.0;
  for (const auto& g : p.train_groups) sequences += static_cast<double>(g.windows.size());
  const double scale = config.kl_scale.value_or(batches / sequences);
  p.kl_weight = scale / batches;
  return p;
}

struct ValidationTerms {
  double total = 0.0, rec = 0.0, cont = 0.0, inv = 0.0, weighted_inv = 0.0;
  bool available = false;
};

ValidationTerms validate_model(const model::BimModel& model, const Prepared& prep, const TrainConfig& config,
                               const Vector& inv_weights) {
  ValidationTerms v;
  double pairs = 0.0;
  const model::ModelNoise zero = model::zero_noise(model);
  for (const auto& batch : prep.val_batches) {
    ad::Graph g;
    model::ModelGraph mg(g, model, &zero);
    const BatchTerms t = batch_objective(mg, model, batch, config.loss, inv_weights, 0.0);
    const auto w = static_cast<double>(batch.pairs());
    v.rec += w * t.rec;
    v.cont += w * t.cont;
    v.inv += w * t.inv;
    v.weighted_inv += w * t.weighted_inv;
    pairs += w;
  }
  if (pairs == 0.0) return v;
  v.rec /= pairs;
  v.cont /= pairs;
  v.inv /= pairs;
  v.weighted_inv /= pairs;
  v.total = losses::total_loss(v.rec, v.cont, v.inv, config.loss);
  v.available = true;
  return v;
}

struct PhaseSpec {
  std::string name;
  int epochs = 0;
  Vector inv_weights;
  bool monitor_weighted_inv = false;
};

void run_phase(model::BimModel& model, const Prepared& prep, const TrainConfig& config, const PhaseSpec& phase,
               Rng& rng, RunManifest& manifest) {
  auto params = model.parameters();
  Adam adam(params, config.adam);
  const Vector ones = Vector::Ones(model.config.static_dim);

  auto monitor_of = [&](const ValidationTerms& v, double train_objective) {
    if (!v.available) return train_objective;
    return phase.monitor_weighted_inv ? v.weighted_inv : v.total;
  };

  model::BimModel best = model;
  double best_monitor = std::numeric_limits<double>::infinity();
  int best_epoch = manifest.best_epoch;
  if (phase.monitor_weighted_inv) {
    // Fine-tuning starts from a checkpoint worth keeping.
    const ValidationTerms start = validate_model(model, prep, config, phase.inv_weights);
    if (start.available) best_monitor = start.weighted_inv;
  }
  int stale = 0;
  const int first_epoch = manifest.epochs.empty() ? 1 : manifest.epochs.back().epoch + 1;

  for (int e = 0; e < phase.epochs; ++e) {
    EpochRecord rec;
    rec.epoch = first_epoch + e;
    rec.phase = phase.name;
    double seen = 0.0;
    for (int round = 0; round < config.rounds_per_epoch; ++round) {
      for (const auto& batch : make_epoch_batches(prep.eligible, config.batch_size, rng)) {
        adam.zero_grad();
        std::optional<model::ModelNoise> noise;
        if (model.bayesian()) noise = model::draw_noise(model, rng);
        ad::Graph g;
        model::ModelGraph mg(g, model, noise ? &*noise : nullptr);
        BatchTerms t;
        try {
          t = batch_objective(mg, model, batch, config.loss, phase.inv_weights, prep.kl_weight);
        } catch (const TrainingError& err) {
          manifest.status = "diverged";
          throw TrainingDiverged(std::string(err.what()) + " (epoch " + std::to_string(rec.epoch) + ")", manifest);
        }
        const double objective = t.objective.scalar();
        if (!std::isfinite(objective)) {
          manifest.status = "diverged";
          throw TrainingDiverged("objective is not finite (epoch " + std::to_string(rec.epoch) + ")", manifest);
        }
        g.backward(t.objective);
        clip_grad_norm(params, config.clip_norm);
        adam.step();

        const auto w = static_cast<double>(batch.pairs());
        rec.train_objective += w * objective;
        rec.train_rec += w * t.rec;
        rec.train_cont += w * t.cont;
        rec.train_inv += w * t.inv;
        rec.train_kl += w * t.kl;
        seen += w;
      }
    }
    rec.train_objective /= seen;
    rec.train_rec /= seen;
    rec.train_cont /= seen;
    rec.train_inv /= seen;
    rec.train_kl /= seen;

    const ValidationTerms v = validate_model(model, prep, config, phase.inv_weights);
    rec.val_total = v.total;
    rec.val_rec = v.rec;
    rec.val_cont = v.cont;
    rec.val_inv = v.inv;
    rec.val_weighted_inv = v.weighted_inv;
    rec.monitor = monitor_of(v, rec.train_objective);
    manifest.epochs.push_back(rec);
    logging::event(logging::Level::debug, "epoch",
                   {{"member", manifest.member},
                    {"phase", phase.name},
                    {"epoch", rec.epoch},
                    {"train_objective", rec.train_objective},
                    {"train_rec", rec.train_rec},
                    {"train_cont", rec.train_cont},
                    {"train_inv", rec.train_inv},
                    {"train_kl", rec.train_kl},
                    {"val_total", rec.val_total},
                    {"val_inv", rec.val_inv},
                    {"monitor", rec.monitor}});

    if (rec.monitor < best_monitor) {
      best_monitor = rec.monitor;
      best = model;
      best_epoch = rec.epoch;
      stale = 0;
    } else if (++stale >= config.patience) {
      logging::info("early_stop", {{"member", manifest.member}, {"phase", phase.name}, {"epoch", rec.epoch}});
      break;
    }
  }
  model = std::move(best);
  manifest.best_epoch = best_epoch;
  manifest.best_monitor = best_monitor;
}

RunManifest new_manifest(const InverseData& data, const TrainConfig& config, std::uint64_t seed, int member) {
  RunManifest m;
  m.config = config;
  m.split_hash = data.split_hash;
  m.seed = seed;
  m.member = member;
  return m;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

// ---- Config -----------------------------------------------------------------

int UblConfig::resolved_phase1(int epochs) const {
  return phase1_epochs.value_or(static_cast<int>(std::lround(0.7 * epochs)));
}

int UblConfig::resolved_phase2(int epochs) const { return phase2_epochs.value_or(epochs - resolved_phase1(epochs)); }

void TrainConfig::validate() const {
  loss.validate();
  if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
  if (rounds_per_epoch < 1) throw std::invalid_argument("rounds_per_epoch must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be positive");
  if (patience < 1) throw std::invalid_argument("patience must be at least 1");
  if (ensemble_size < 1) throw std::invalid_argument("ensemble_size must be at least 1");
  if (mc_samples < 2) throw std::invalid_argument("mc_samples must be at least 2");
  if (kl_scale && !(*kl_scale >= 0.0)) throw std::invalid_argument("kl_scale must be nonnegative");
  if (lookback < 1 || stride < 1) throw std::invalid_argument("lookback and stride must be positive");
  if (threads < 0) throw std::invalid_argument("threads must be nonnegative");
  if (ubl.enabled) {
    if (model.mode != model::Mode::bayesian) throw std::invalid_argument("UBL requires bayesian mode");
    if (!(ubl.gamma >= 0.0 && ubl.gamma <= 1.0)) throw std::invalid_argument("ubl gamma must lie in [0, 1]");
    if (ubl.resolved_phase1(epochs) < 1 || ubl.resolved_phase2(epochs) < 1) {
      throw std::invalid_argument("UBL phases need at least one epoch each");
    }
  }
}

void to_json(nlohmann::json& j, const UblConfig& c) {
  j = {{"enabled", c.enabled},
       {"gamma", c.gamma},
       {"phase1_epochs", c.phase1_epochs ? nlohmann::json(*c.phase1_epochs) : nlohmann::json()},
       {"phase2_epochs", c.phase2_epochs ? nlohmann::json(*c.phase2_epochs) : nlohmann::json()}};
}

void from_json(const nlohmann::json& j, UblConfig& c) {
  c.enabled = j.at("enabled").get<bool>();
  c.gamma = j.at("gamma").get<double>();
  c.phase1_epochs = j.at("phase1_epochs").is_null() ? std::nullopt : std::optional<int>(j.at("phase1_epochs"));
  c.phase2_epochs = j.at("phase2_epochs").is_null() ? std::nullopt : std::optional<int>(j.at("phase2_epochs"));
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"model", c.model},
       {"loss",
        {{"lambda_rec", c.loss.lambda_rec},
         {"lambda_cont", c.loss.lambda_cont},
         {"lambda_inv", c.loss.lambda_inv},
         {"tau", c.loss.tau}}},
       {"epochs", c.epochs},
       {"rounds_per_epoch", c.rounds_per_epoch},
       {"batch_size", c.batch_size},
       {"adam",
        {{"learning_rate", c.adam.learning_rate},
         {"beta1", c.adam.beta1},
         {"beta2", c.adam.beta2},
         {"epsilon", c.adam.epsilon}}},
       {"clip_norm", c.clip_norm},
       {"patience", c.patience},
       {"seed", c.seed},
       {"ensemble_size", c.ensemble_size},
       {"mc_samples", c.mc_samples},
       {"kl_scale", c.kl_scale ? nlohmann::json(*c.kl_scale) : nlohmann::json()},
       {"lookback", c.lookback},
       {"stride", c.stride},
       {"ubl", c.ubl},
       {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.model = j.at("model").get<model::ModelConfig>();
  const auto& l = j.at("loss");
  c.loss.lambda_rec = l.at("lambda_rec").get<double>();
  c.loss.lambda_cont = l.at("lambda_cont").get<double>();
  c.loss.lambda_inv = l.at("lambda_inv").get<double>();
  c.loss.tau = l.at("tau").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.rounds_per_epoch = j.at("rounds_per_epoch").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  const auto& a = j.at("adam");
  c.adam.learning_rate = a.at("learning_rate").get<double>();
  c.adam.beta1 = a.at("beta1").get<double>();
  c.adam.beta2 = a.at("beta2").get<double>();
  c.adam.epsilon = a.at("epsilon").get<double>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.patience = j.at("patience").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.ensemble_size = j.at("ensemble_size").get<int>();
  c.mc_samples = j.at("mc_samples").get<int>();
  c.kl_scale = j.at("kl_scale").is_null() ? std::nullopt : std::optional<double>(j.at("kl_scale").get<double>());
  c.lookback = j.at("lookback").get<Eigen::Index>();
  c.stride = j.at("stride").get<Eigen::Index>();
  c.ubl = j.at("ubl").get<UblConfig>();
  c.threads = j.at("threads").get<int>();
}

nlohmann::json to_json(const losses::PenaltyVector& p) {
  return {{"w", std::vector<double>(p.w.data(), p.w.data() + p.w.size())},
          {"eigenvalue", p.eigenvalue},
          {"eigenvector", std::vector<double>(p.eigenvector.data(), p.eigenvector.data() + p.eigenvector.size())},
          {"gamma", p.gamma},
          {"uniform_fallback", p.uniform_fallback}};
}

nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : m.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"phase", e.phase},
                      {"train_objective", e.train_objective},
                      {"train_rec", e.train_rec},
                      {"train_cont", e.train_cont},
                      {"train_inv", e.train_inv},
                      {"train_kl", e.train_kl},
                      {"val_total", e.val_total},
                      {"val_rec", e.val_rec},
                      {"val_cont", e.val_cont},
                      {"val_inv", e.val_inv},
                      {"val_weighted_inv", e.val_weighted_inv},
                      {"monitor", e.monitor}});
  }
  return {{"config", m.config},
          {"split_hash", m.split_hash},
          {"seed", m.seed},
          {"member", m.member},
          {"epochs", epochs},
          {"best_epoch", m.best_epoch},
          {"best_monitor", m.best_monitor},
          {"penalty", m.penalty ? to_json(*m.penalty) : nlohmann::json()},
          {"status", m.status},
          {"wall_seconds", m.wall_seconds}};
}

// ---- Batching ---------------------------------------------------------------

std::vector<BasinWindows> group_windows(const data::Dataset& dataset, Eigen::Index lookback, Eigen::Index stride) {
  std::vector<BasinWindows> out;
  out.reserve(dataset.records.size());
  for (const auto& record : dataset.records) {
    out.push_back(BasinWindows{record.basin_id, data::make_windows(record, lookback, stride)});
  }
  return out;
}

std::vector<const BasinWindows*> contrastive_eligible(const std::vector<BasinWindows>& basins) {
  std::vector<const BasinWindows*> out;
  std::vector<std::string> skipped;
  for (const auto& b : basins) {
    if (b.windows.size() >= 2) {
      out.push_back(&b);
    } else {
      skipped.push_back(b.basin_id);
    }
  }
  if (!skipped.empty()) {
    logging::warn("basins_without_pairs", {{"basins", skipped}, {"reason", "fewer than two complete windows"}});
  }
  return out;
}

namespace {

void add_pair(ContrastiveBatch& batch, const BasinWindows& basin, Rng& rng) {
  const auto count = basin.windows.size();
  std::uniform_int_distribution<std::size_t> first(0, count - 1);
  std::uniform_int_distribution<std::size_t> second(0, count - 2);
  const std::size_t a = first(rng);
  std::size_t p = second(rng);
  if (p >= a) ++p;
  batch.anchors.push_back(&basin.windows[a]);
  batch.positives.push_back(&basin.windows[p]);
}

}  // namespace

ContrastiveBatch make_contrastive_batch(const std::vector<const BasinWindows*>& eligible, int batch_size, Rng& rng) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  std::vector<std::size_t> order(eligible.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(order.size(), static_cast<std::size_t>(batch_size)));
  ContrastiveBatch batch;
  for (std::size_t i : order) {
    if (eligible[i]->windows.size() < 2) throw std::invalid_argument("basin " + eligible[i]->basin_id + " has < 2 windows");
    add_pair(batch, *eligible[i], rng);
  }
  return batch;
}

std::vector<ContrastiveBatch> make_epoch_batches(const std::vector<const BasinWindows*>& eligible, int batch_size,
                                                 Rng& rng) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  std::vector<std::size_t> order(eligible.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<ContrastiveBatch> out;
  for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(batch_size)) {
    ContrastiveBatch batch;
    const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(batch_size));
    for (std::size_t i = begin; i < end; ++i) add_pair(batch, *eligible[order[i]], rng);
    out.push_back(std::move(batch));
  }
  return out;
}

// ---- Training ---------------------------------------------------------------

TrainResult train_inverse(const InverseData& data, const TrainConfig& config, std::uint64_t seed) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const Prepared prep = prepare(data, config);
  TrainResult result{model::BimModel(config.model, util::derive_seed(seed, 0)), new_manifest(data, config, seed, 0)};
  Rng rng(util::derive_seed(seed, 1));
  run_phase(result.model, prep, config,
            PhaseSpec{"standard", config.epochs, Vector::Ones(config.model.static_dim), false}, rng, result.manifest);
  result.manifest.wall_seconds = seconds_since(start);
  return result;
}

TrainResult train_inverse(const InverseData& data, const TrainConfig& config) {
  return train_inverse(data, config, config.seed);
}

Matrix epistemic_matrix(const model::BimModel& model, const data::Dataset& partition, const TrainConfig& config,
                        std::uint64_t seed) {
  if (!model.bayesian()) throw ContractError("epistemic matrix needs a bayesian model");
  std::vector<Matrix> draws;
  std::size_t index = 0;
  for (const auto& record : partition.records) {
    const auto windows = data::make_windows(record, config.lookback, config.stride);
    ++index;
    if (windows.empty()) continue;
    Rng rng(util::derive_seed(seed, index));
    draws.push_back(model::predict_averaged_posterior(model, windows, config.mc_samples, rng).draws);
  }
  if (draws.empty()) throw std::invalid_argument("epistemic matrix: partition has no complete window");
  return losses::epistemic_uncertainty_matrix(draws);
}

int resolve_threads(int configured) {
  if (configured > 0) return configured;
  if (const char* env = std::getenv("INVERSE_UQ_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v > 0) return v;
    } catch (const std::exception&) {
    }
    logging::warn("ignored_env", {{"name", "INVERSE_UQ_THREADS"}, {"value", env}});
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

EnsembleResult train_ensemble(const InverseData& data, const TrainConfig& config) {
  config.validate();
  const Prepared prep = prepare(data, config);
  const int m = config.ensemble_size;
  const int threads = resolve_threads(config.threads);

  EnsembleResult result;
  result.manifests.resize(static_cast<std::size_t>(m));
  std::vector<std::optional<model::BimModel>> members(static_cast<std::size_t>(m));
  std::vector<Rng> rngs;
  for (int i = 0; i < m; ++i) {
    const std::uint64_t seed = util::derive_seed(config.seed, static_cast<std::uint64_t>(i));
    result.manifests[static_cast<std::size_t>(i)] = new_manifest(data, config, seed, i);
    members[static_cast<std::size_t>(i)].emplace(config.model, util::derive_seed(seed, 0));
    rngs.emplace_back(util::derive_seed(seed, 1));
  }

  const int phase1 = config.ubl.enabled ? config.ubl.resolved_phase1(config.epochs) : config.epochs;
  const Vector ones = Vector::Ones(config.model.static_dim);
  std::vector<double> wall(static_cast<std::size_t>(m), 0.0);

  auto guarded = [&](const char* stage, auto&& body) {
    try {
      detail::parallel_for(m, threads, body);
    } catch (const TrainingDiverged& err) {
      throw EnsembleAborted(std::string(stage) + ": " + err.what(), result.manifests);
    } catch (const TrainingError& err) {
      throw EnsembleAborted(std::string(stage) + ": " + err.what(), result.manifests);
    }
  };

  guarded("phase1", [&](int i) {
    const auto start = std::chrono::steady_clock::now();
    auto& manifest = result.manifests[static_cast<std::size_t>(i)];
    try {
      run_phase(*members[static_cast<std::size_t>(i)], prep, config,
                PhaseSpec{config.ubl.enabled ? "phase1" : "standard", phase1, ones, false},
                rngs[static_cast<std::size_t>(i)], manifest);
    } catch (const TrainingDiverged& err) {
      manifest = err.manifest();
      throw;
    }
    wall[static_cast<std::size_t>(i)] += seconds_since(start);
  });

  if (config.ubl.enabled) {
    for (const auto& member : members) result.phase1_members.push_back(*member);
    std::vector<Matrix> sigmas(static_cast<std::size_t>(m));
    detail::parallel_for(m, threads, [&](int i) {
      sigmas[static_cast<std::size_t>(i)] =
          epistemic_matrix(*members[static_cast<std::size_t>(i)], data.val,
                           config, util::derive_seed(result.manifests[static_cast<std::size_t>(i)].seed, kEpistemicStream));
    });
    Matrix sigma = Matrix::Zero(config.model.static_dim, config.model.static_dim);
    for (const auto& s : sigmas) sigma += s;
    sigma /= static_cast<double>(m);
    const losses::PenaltyVector penalty = losses::ubl_penalty_vector(sigma, config.ubl.gamma);
    result.penalty = penalty;
    logging::info("ubl_penalty", to_json(penalty));

    const int phase2 = config.ubl.resolved_phase2(config.epochs);
    guarded("phase2", [&](int i) {
      const auto start = std::chrono::steady_clock::now();
      auto& manifest = result.manifests[static_cast<std::size_t>(i)];
      manifest.penalty = penalty;
      try {
        run_phase(*members[static_cast<std::size_t>(i)], prep, config, PhaseSpec{"phase2", phase2, penalty.w, true},
                  rngs[static_cast<std::size_t>(i)], manifest);
      } catch (const TrainingDiverged& err) {
        manifest = err.manifest();
        throw;
      }
      wall[static_cast<std::size_t>(i)] += seconds_since(start);
    });
  }

  for (int i = 0; i < m; ++i) {
    result.manifests[static_cast<std::size_t>(i)].wall_seconds = wall[static_cast<std::size_t>(i)];
    result.members.push_back(std::move(*members[static_cast<std::size_t>(i)]));
  }
  return result;
}

UblResult train_inverse_ubl(const InverseData& data, const TrainConfig& config) {
  TrainConfig single = config;
  single.ensemble_size = 1;
  single.ubl.enabled = true;
  EnsembleResult r = train_ensemble(data, single);
  return UblResult{std::move(r.members.front()), *r.penalty, std::move(r.manifests.front()),
                   std::move(r.phase1_members.front())};
}

// ---- Pooled prediction -------------------------------------------------------

PooledMoments pool_members(const std::vector<Vector>& means, const std::vector<Vector>& variances) {
  if (means.empty() || means.size() != variances.size()) {
    throw std::invalid_argument("pool_members: need matching, non-empty member lists");
  }
  const Eigen::Index d = means.front().size();
  PooledMoments p{Vector::Zero(d), Vector::Zero(d), Vector::Zero(d), Vector::Zero(d)};
  for (std::size_t i = 0; i < means.size(); ++i) {
    if (means[i].size() != d || variances[i].size() != d) throw DimensionError("pool_members: width mismatch");
    p.mean += means[i];
    p.within += variances[i];
  }
  const auto m = static_cast<double>(means.size());
  p.mean /= m;
  p.within /= m;
  for (const auto& mu : means) p.between += (mu - p.mean).cwiseAbs2();
  p.between /= m;
  p.variance = p.within + p.between;
  return p;
}

EnsemblePrediction predict_ensemble(const std::vector<model::BimModel>& members, const data::Dataset& partition,
                                    const TrainConfig& config, std::uint64_t seed) {
  if (members.empty()) throw std::invalid_argument("predict_ensemble: no members");
  const Eigen::Index d = members.front().config.static_dim;
  EnsemblePrediction out;
  std::size_t basin_index = 0;
  for (const auto& record : partition.records) {
    ++basin_index;
    const auto windows = data::make_windows(record, config.lookback, config.stride);
    if (windows.empty()) {
      out.excluded.push_back(record.basin_id);
      continue;
    }
    BasinEstimate est;
    est.basin_id = record.basin_id;
    est.windows = static_cast<int>(windows.size());
    est.first_date = record.dates[static_cast<std::size_t>(windows.front().start_index)];
    const auto& last = windows.back();
    est.last_date = record.dates[static_cast<std::size_t>(last.start_index + last.length - 1)];
    const auto m = static_cast<Eigen::Index>(members.size());
    est.member_means = Matrix::Zero(m, d);
    est.member_variances = Matrix::Zero(m, d);
    est.temporal = Vector::Zero(d);
    std::vector<Vector> means, variances;
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto& member = members[static_cast<std::size_t>(i)];
      const Matrix h = model::encode_hidden(member, windows);
      const Matrix window_pred = model::regress_batch(member, h, model::zero_noise(member));
      est.temporal += losses::temporal_uncertainty(window_pred);
      Vector mean, var;
      if (member.bayesian()) {
        Rng rng(util::derive_seed(util::derive_seed(seed, static_cast<std::uint64_t>(i)), basin_index));
        Matrix draws(config.mc_samples, d);
        for (int s = 0; s < config.mc_samples; ++s) {
          draws.row(s) = model::regress_batch(member, h, model::draw_noise(member, rng)).colwise().mean();
        }
        const auto set = model::PosteriorSampleSet::from_draws(std::move(draws));
        mean = set.mean;
        var = set.std.cwiseAbs2();
      } else {
        mean = window_pred.colwise().mean().transpose();
        var = Vector::Zero(d);
      }
      est.member_means.row(i) = mean.transpose();
      est.member_variances.row(i) = var.transpose();
      means.push_back(std::move(mean));
      variances.push_back(std::move(var));
    }
    est.temporal /= static_cast<double>(m);
    const PooledMoments pooled = pool_members(means, variances);
    est.mean = pooled.mean;
    est.std = pooled.variance.cwiseMax(0.0).cwiseSqrt();
    out.basins.push_back(std::move(est));
  }
  return out;
}

// ---- Export ----------------------------------------------------------------

EstimateTable export_static_estimates(const std::vector<model::BimModel>& members, const data::Dataset& partition,
                                      const data::Normalizer& normalizer, const TrainConfig& config,
                                      std::uint64_t seed) {
  if (partition.period != data::Period::validation) {
    throw ContractError("static estimates may only be computed from validation-period data, got period '" +
                        std::string(data::to_string(partition.period)) + "'");
  }
  if (members.empty()) throw std::invalid_argument("export_static_estimates: no members");
  const EnsemblePrediction pred = predict_ensemble(members, partition, config, seed);
  const bool bayesian = members.front().bayesian();

  EstimateTable table;
  table.static_names = partition.static_names;
  if (table.static_names.empty()) {
    for (Eigen::Index j = 0; j < members.front().config.static_dim; ++j) {
      table.static_names.push_back("s" + std::to_string(j + 1));
    }
  }
  const auto n = static_cast<Eigen::Index>(pred.basins.size());
  const Eigen::Index d = members.front().config.static_dim;
  table.mean = Matrix(n, d);
  if (bayesian) table.std = Matrix(n, d);
  std::optional<data::Date> first, last;
  int windows = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& b = pred.basins[static_cast<std::size_t>(i)];
    table.basin_ids.push_back(b.basin_id);
    table.mean.row(i) = normalizer.denormalize_statics(b.mean).transpose();
    if (bayesian) table.std->row(i) = normalizer.denormalize_static_std(b.std).transpose();
    first = first ? std::min(*first, b.first_date) : b.first_date;
    last = last ? std::max(*last, b.last_date) : b.last_date;
    windows += b.windows;
  }
  table.excluded = pred.excluded;
  if (!table.excluded.empty()) logging::warn("estimates_excluded", {{"basins", table.excluded}});

  table.provenance = {{"period", data::to_string(partition.period)},
                      {"years", partition.years ? nlohmann::json(*partition.years) : nlohmann::json()},
                      {"first_date", first ? data::format_date(*first) : ""},
                      {"last_date", last ? data::format_date(*last) : ""},
                      {"basins", table.basin_ids.size()},
                      {"windows", windows},
                      {"members", members.size()},
                      {"mode", model::to_string(members.front().config.mode)},
                      {"mc_samples", bayesian ? config.mc_samples : 0},
                      {"excluded", table.excluded}};
  return table;
}

void write_estimates(const EstimateTable& table, const std::string& path) {
  std::ostringstream out;
  out << "basin_id";
  for (const auto& name : table.static_names) out << ',' << name << "_hat";
  if (table.std) {
    for (const auto& name : table.static_names) out << ',' << name << "_std";
  }
  out << '\n';
  for (std::size_t i = 0; i < table.basin_ids.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << table.basin_ids[i];
    for (Eigen::Index j = 0; j < table.mean.cols(); ++j) out << ',' << util::format_double(table.mean(r, j));
    if (table.std) {
      for (Eigen::Index j = 0; j < table.std->cols(); ++j) out << ',' << util::format_double((*table.std)(r, j));
    }
    out << '\n';
  }
  util::write_file(path, out.str());
  util::write_file(path + ".provenance.json", table.provenance.dump(2) + "\n");
}

EstimateTable read_estimates(const std::string& path) {
  std::istringstream in(util::read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path, 1, "empty estimates file");
  const auto header = util::split(line, ',');
  if (header.empty() || header.front() != "basin_id") throw SchemaError(path + ": first column must be basin_id");

  EstimateTable table;
  std::size_t hat = 0, sd = 0;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const auto& h = header[c];
    if (h.size() > 4 && h.ends_with("_hat")) {
      if (sd > 0) throw SchemaError(path + ": _hat columns must precede _std columns");
      table.static_names.push_back(h.substr(0, h.size() - 4));
      ++hat;
    } else if (h.size() > 4 && h.ends_with("_std")) {
      if (h.substr(0, h.size() - 4) != table.static_names.at(sd)) {
        throw SchemaError(path + ": column " + h + " does not match the _hat columns");
      }
      ++sd;
    } else {
      throw SchemaError(path + ": unexpected column '" + h + "'");
    }
  }
  if (hat == 0 || (sd != 0 && sd != hat)) throw SchemaError(path + ": inconsistent estimate columns");

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = util::split(line, ',');
    if (fields.size() != header.size()) {
      throw SchemaError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                        " fields, got " + std::to_string(fields.size()));
    }
    table.basin_ids.push_back(fields[0]);
    std::vector<double> values;
    for (std::size_t c = 1; c < fields.size(); ++c) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(fields[c], &used));
        if (used != fields[c].size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw ParseError(path, line_no, "bad number '" + fields[c] + "'");
      }
    }
    rows.push_back(std::move(values));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  table.mean = Matrix(n, static_cast<Eigen::Index>(hat));
  if (sd > 0) table.std = Matrix(n, static_cast<Eigen::Index>(sd));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < hat; ++j) table.mean(i, static_cast<Eigen::Index>(j)) = rows[static_cast<std::size_t>(i)][j];
    for (std::size_t j = 0; j < sd; ++j) {
      (*table.std)(i, static_cast<Eigen::Index>(j)) = rows[static_cast<std::size_t>(i)][hat + j];
    }
  }
  const std::string sidecar = path + ".provenance.json";
  if (std::filesystem::exists(sidecar)) table.provenance = nlohmann::json::parse(util::read_file(sidecar));
  return table;
}

}  // namespace inverse_uq::train
