#include "inverse_uq/pipeline.hpp"

#include "inverse_uq/errors.hpp"
#include "inverse_uq/logging.hpp"
#include "inverse_uq/metrics.hpp"
#include "inverse_uq/util.hpp"
#include "parallel.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <type_traits>

namespace inverse_uq::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kExportStream = 0x4558'504f'5254ULL;
constexpr std::uint64_t kEvaluateStream = 0x4556'414cULL;

// ---- Flat config keys -----------------------------------------------------------

struct Field {
  std::string key;
  std::string description;
  std::function<json(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const json&)> set;
};

template <typename T>
T checked_get(const json& j, const std::string& key) {
  bool ok = false;
  if constexpr (std::is_same_v<T, bool>) {
    ok = j.is_boolean();
  } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
    ok = j.is_number_unsigned() || (j.is_number_integer() && j.get<long long>() >= 0);
  } else if constexpr (std::is_integral_v<T>) {
    ok = j.is_number_integer();
  } else if constexpr (std::is_floating_point_v<T>) {
    ok = j.is_number();
  } else {
    ok = j.is_string();
  }
  if (!ok) throw ConfigError("config key '" + key + "' has the wrong type: " + j.dump());
  return j.get<T>();
}

template <typename T, typename Proj>
Field field(std::string key, std::string description, Proj proj) {
  return Field{key, std::move(description),
               [proj](const PipelineConfig& c) { return json(proj(const_cast<PipelineConfig&>(c))); },
               [proj, key](PipelineConfig& c, const json& j) { proj(c) = checked_get<T>(j, key); }};
}

Field years_field(std::string key, std::string description, data::YearRange PipelineConfig::*member) {
  return Field{key, std::move(description),
               [member](const PipelineConfig& c) { return json::array({(c.*member).begin, (c.*member).end}); },
               [member, key](PipelineConfig& c, const json& j) {
                 if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
                   throw ConfigError("config key '" + key + "' must be [begin, end) years");
                 }
                 c.*member = data::YearRange{j[0].get<int>(), j[1].get<int>()};
               }};
}

template <typename Proj>
Field optional_int_field(std::string key, std::string description, Proj proj) {
  return Field{key, std::move(description),
               [proj](const PipelineConfig& c) {
                 const auto& v = proj(const_cast<PipelineConfig&>(c));
                 return v ? json(*v) : json(nullptr);
               },
               [proj, key](PipelineConfig& c, const json& j) {
                 if (j.is_null()) {
                   proj(c).reset();
                 } else {
                   proj(c) = checked_get<int>(j, key);
                 }
               }};
}

const std::vector<Field>& fields() {
  using C = PipelineConfig;
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(field<std::string>("data.source", "synthetic or csv", [](C& c) -> auto& { return c.data_source; }));
    f.push_back(field<std::string>("data.dir", "directory holding drivers.csv, response.csv and statics.csv",
                                   [](C& c) -> auto& { return c.data_dir; }));
    f.push_back(field<std::string>("data.schema", "optional schema JSON naming the expected columns",
                                   [](C& c) -> auto& { return c.data_schema; }));
    f.push_back(field<int>("synthetic.basins", "number of synthetic basins", [](C& c) -> auto& { return c.synthetic.basins; }));
    f.push_back(field<int>("synthetic.days", "days per synthetic basin", [](C& c) -> auto& { return c.synthetic.days; }));
    f.push_back(field<std::uint64_t>("synthetic.seed", "generator seed", [](C& c) -> auto& { return c.synthetic.seed; }));
    f.push_back(field<int>("synthetic.distractors", "uninformative static columns",
                           [](C& c) -> auto& { return c.synthetic.distractors; }));
    f.push_back(field<double>("synthetic.noise_sigma_log", "lognormal observation noise",
                              [](C& c) -> auto& { return c.synthetic.noise_sigma_log; }));
    f.push_back(field<double>("synthetic.climate_spread", "0 shares one climate across basins, 1 varies it",
                              [](C& c) -> auto& { return c.synthetic.climate_spread; }));
    f.push_back(Field{"synthetic.start", "first date of the synthetic series",
                      [](const C& c) { return json(data::format_date(c.synthetic.start)); },
                      [](C& c, const json& j) {
                        try {
                          c.synthetic.start = data::parse_date(checked_get<std::string>(j, "synthetic.start"));
                        } catch (const ConfigError&) {
                          throw;
                        } catch (const std::exception& e) {
                          throw ConfigError(std::string("config key 'synthetic.start': ") + e.what());
                        }
                      }});
    f.push_back(field<std::size_t>("split.train_basins", "training basin count (0: 400/531 of the basins)",
                                   [](C& c) -> auto& { return c.train_basins; }));
    f.push_back(field<std::uint64_t>("split.seed", "basin shuffle seed", [](C& c) -> auto& { return c.split_seed; }));
    f.push_back(years_field("split.train_years", "training years [begin, end)", &C::train_years));
    f.push_back(years_field("split.val_years", "validation years [begin, end)", &C::val_years));
    f.push_back(years_field("split.test_years", "test years [begin, end)", &C::test_years));

    f.push_back(field<Eigen::Index>("model.hidden", "encoder LSTM width per direction",
                                    [](C& c) -> auto& { return c.train.model.hidden; }));
    f.push_back(field<Eigen::Index>("model.embed", "embedding width", [](C& c) -> auto& { return c.train.model.embed; }));
    f.push_back(field<Eigen::Index>("model.decoder_hidden", "decoder LSTM width",
                                    [](C& c) -> auto& { return c.train.model.decoder_hidden; }));
    f.push_back(field<Eigen::Index>("model.regressor_hidden", "regressor hidden width",
                                    [](C& c) -> auto& { return c.train.model.regressor_hidden; }));
    f.push_back(Field{"model.mode", "bayesian or deterministic",
                      [](const C& c) { return json(std::string(model::to_string(c.train.model.mode))); },
                      [](C& c, const json& j) {
                        try {
                          c.train.model.mode = model::mode_from_string(checked_get<std::string>(j, "model.mode"));
                        } catch (const ConfigError&) {
                          throw;
                        } catch (const std::exception& e) {
                          throw ConfigError(std::string("config key 'model.mode': ") + e.what());
                        }
                      }});
    f.push_back(field<double>("model.prior_std", "Gaussian weight prior std", [](C& c) -> auto& { return c.train.model.prior_std; }));
    f.push_back(field<double>("model.rho_init", "initial rho of the weight posterior",
                              [](C& c) -> auto& { return c.train.model.rho_init; }));
    f.push_back(field<bool>("model.variational_projection", "make the projection layer variational too",
                            [](C& c) -> auto& { return c.train.model.variational_projection; }));

    f.push_back(field<double>("loss.lambda_rec", "reconstruction weight", [](C& c) -> auto& { return c.train.loss.lambda_rec; }));
    f.push_back(field<double>("loss.lambda_cont", "contrastive weight", [](C& c) -> auto& { return c.train.loss.lambda_cont; }));
    f.push_back(field<double>("loss.lambda_inv", "supervised static weight", [](C& c) -> auto& { return c.train.loss.lambda_inv; }));
    f.push_back(field<double>("loss.tau", "contrastive temperature", [](C& c) -> auto& { return c.train.loss.tau; }));

    f.push_back(field<int>("train.epochs", "inverse training epochs", [](C& c) -> auto& { return c.train.epochs; }));
    f.push_back(field<int>("train.rounds_per_epoch", "passes over the basins per epoch",
                           [](C& c) -> auto& { return c.train.rounds_per_epoch; }));
    f.push_back(field<int>("train.batch_size", "basins per batch", [](C& c) -> auto& { return c.train.batch_size; }));
    f.push_back(field<double>("train.learning_rate", "Adam step size", [](C& c) -> auto& { return c.train.adam.learning_rate; }));
    f.push_back(field<double>("train.clip_norm", "gradient norm clip", [](C& c) -> auto& { return c.train.clip_norm; }));
    f.push_back(field<int>("train.patience", "early stopping patience (epochs)", [](C& c) -> auto& { return c.train.patience; }));
    f.push_back(field<std::uint64_t>("train.seed", "ensemble base seed", [](C& c) -> auto& { return c.train.seed; }));
    f.push_back(field<int>("train.ensemble_size", "inverse ensemble members", [](C& c) -> auto& { return c.train.ensemble_size; }));
    f.push_back(field<int>("train.mc_samples", "posterior draws per prediction", [](C& c) -> auto& { return c.train.mc_samples; }));
    f.push_back(Field{"train.kl_scale", "KL multiplier (null: batches per epoch / training windows)",
                      [](const C& c) { return c.train.kl_scale ? json(*c.train.kl_scale) : json(nullptr); },
                      [](C& c, const json& j) {
                        if (j.is_null()) {
                          c.train.kl_scale.reset();
                        } else {
                          c.train.kl_scale = checked_get<double>(j, "train.kl_scale");
                        }
                      }});
    f.push_back(field<Eigen::Index>("train.lookback", "window length (days)", [](C& c) -> auto& { return c.train.lookback; }));
    f.push_back(field<Eigen::Index>("train.stride", "window offset (days)", [](C& c) -> auto& { return c.train.stride; }));
    f.push_back(field<int>("train.threads", "concurrent members (0: INVERSE_UQ_THREADS or hardware)",
                           [](C& c) -> auto& { return c.train.threads; }));
    f.push_back(field<bool>("ubl.enabled", "two-phase uncertainty-weighted training", [](C& c) -> auto& { return c.train.ubl.enabled; }));
    f.push_back(field<double>("ubl.gamma", "share of the loss weight set by the penalty vector",
                              [](C& c) -> auto& { return c.train.ubl.gamma; }));
    f.push_back(optional_int_field("ubl.phase1_epochs", "phase 1 epochs (null: 70% of train.epochs)",
                                   [](C& c) -> auto& { return c.train.ubl.phase1_epochs; }));
    f.push_back(optional_int_field("ubl.phase2_epochs", "phase 2 epochs (null: the rest)",
                                   [](C& c) -> auto& { return c.train.ubl.phase2_epochs; }));

    f.push_back(field<Eigen::Index>("forward.hidden", "forward LSTM width", [](C& c) -> auto& { return c.forward.hidden; }));
    f.push_back(field<int>("forward.epochs", "forward training epochs", [](C& c) -> auto& { return c.forward.epochs; }));
    f.push_back(field<int>("forward.batch_size", "windows per batch", [](C& c) -> auto& { return c.forward.batch_size; }));
    f.push_back(field<double>("forward.learning_rate", "Adam step size", [](C& c) -> auto& { return c.forward.adam.learning_rate; }));
    f.push_back(field<int>("forward.patience", "early stopping patience (epochs)", [](C& c) -> auto& { return c.forward.patience; }));
    f.push_back(field<std::uint64_t>("forward.seed", "forward base seed", [](C& c) -> auto& { return c.forward.seed; }));
    f.push_back(field<Eigen::Index>("forward.lookback", "window length (days)", [](C& c) -> auto& { return c.forward.lookback; }));
    f.push_back(field<Eigen::Index>("forward.stride", "window offset (days)", [](C& c) -> auto& { return c.forward.stride; }));
    f.push_back(field<Eigen::Index>("forward.burn_in", "leading window steps left out of the loss",
                                    [](C& c) -> auto& { return c.forward.burn_in; }));
    f.push_back(field<std::string>("forward.aggregation", "median or mean NSE over basins",
                                   [](C& c) -> auto& { return c.forward.aggregation; }));
    f.push_back(field<int>("forward.runs", "forward ensemble members", [](C& c) -> auto& { return c.forward_runs; }));
    f.push_back(field<std::string>("forward.statics", "estimates, observed, zeros or a path to an estimates CSV",
                                   [](C& c) -> auto& { return c.forward_statics; }));
    f.push_back(field<std::string>("output.dir", "artifact directory", [](C& c) -> auto& { return c.output_dir; }));
    return f;
  }();
  return all;
}

// ---- Loaded data ----------------------------------------------------------------

struct Context {
  data::Dataset dataset;
  data::SplitSpec spec;
  data::SplitResult parts;
  data::Normalizer normalizer;
  std::string split_hash;
};

Context load_context(const PipelineConfig& config) {
  Context ctx;
  if (config.data_source == "synthetic") {
    ctx.dataset = synthetic::generate_dataset(config.synthetic).dataset;
  } else {
    const fs::path dir(config.data_dir);
    if (config.data_dir.empty() || !fs::is_directory(dir)) throw IoError("data directory not found: " + config.data_dir);
    const fs::path statics = dir / "statics.csv";
    const data::Schema schema = config.data_schema.empty() ? data::Schema{} : data::load_schema(config.data_schema);
    ctx.dataset = data::load_dataset((dir / "drivers.csv").string(), (dir / "response.csv").string(),
                                     fs::exists(statics) ? statics.string() : std::string(), schema);
  }
  const std::size_t count =
      config.train_basins > 0 ? config.train_basins : data::default_train_count(ctx.dataset.records.size());
  ctx.spec = data::make_split_spec(ctx.dataset, count, config.split_seed);
  ctx.spec.train_years = config.train_years;
  ctx.spec.val_years = config.val_years;
  ctx.spec.test_years = config.test_years;
  data::validate_split(ctx.spec, ctx.dataset);
  ctx.parts = data::split(ctx.dataset, ctx.spec);
  ctx.normalizer = data::fit_normalizer(ctx.parts.train_basins.train);
  ctx.split_hash = data::split_hash(ctx.spec);
  return ctx;
}

train::TrainConfig resolved_train_config(const PipelineConfig& config, const Context& ctx) {
  train::TrainConfig t = config.train;
  t.model.input_dim = ctx.dataset.driver_count() + 1;
  t.model.static_dim = ctx.dataset.static_count();
  return t;
}

// ---- Artifacts --------------------------------------------------------------------

fs::path out_dir(const PipelineConfig& c) { return fs::path(c.output_dir); }

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  util::write_file(path.string(), j.dump(2) + "\n");
}

json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing artifact: " + path.string());
  return json::parse(util::read_file(path.string()));
}

// Records a stage and its artifacts in manifest.json.
void record_stage(const PipelineConfig& config, const std::string& stage, const std::string& status,
                  const std::vector<std::string>& artifacts) {
  const fs::path path = out_dir(config) / "manifest.json";
  const std::string hash = config_hash(config);
  json m;
  if (fs::exists(path)) {
    try {
      m = json::parse(util::read_file(path.string()));
    } catch (const std::exception&) {
      m = json();
    }
  }
  if (!m.is_object() || m.value("config_hash", "") != hash) {
    m = {{"format", "inverse_uq.run"}, {"config", to_flat_json(config)}, {"config_hash", hash},
         {"stages", json::object()}, {"artifacts", json::object()}};
  }
  m["stages"][stage] = status;
  for (const auto& a : artifacts) m["artifacts"][a] = {{"stage", stage}, {"config_hash", hash}};
  write_json(path, m);
}

template <typename Fn>
void run_stage(const PipelineConfig& config, const std::string& stage, Fn body) {
  config.validate();
  logging::info("stage_start", {{"stage", stage}, {"config_hash", config_hash(config)}});
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::string> artifacts;
  try {
    body(artifacts);
  } catch (const std::exception& e) {
    try {
      record_stage(config, stage, std::string("failed: ") + e.what(), artifacts);
    } catch (const std::exception&) {
      // The original failure is the one worth reporting.
    }
    throw StageError(stage, e.what(), std::current_exception());
  }
  record_stage(config, stage, "ok", artifacts);
  logging::info("stage_done",
                {{"stage", stage},
                 {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}});
}

std::string member_path(int i) { return "inverse/member_" + std::to_string(i) + ".json"; }

std::vector<model::BimModel> load_members(const PipelineConfig& config) {
  const json index = read_json(out_dir(config) / "inverse/ensemble.json");
  std::vector<model::BimModel> members;
  const int count = index.at("members").get<int>();
  for (int i = 0; i < count; ++i) members.push_back(model::load_checkpoint((out_dir(config) / member_path(i)).string()));
  return members;
}

forward::StaticInputs resolve_statics(const PipelineConfig& config, const Context& ctx, const std::string& source) {
  if (source == "observed") return forward::observed_statics(ctx.normalizer.apply(ctx.dataset));
  if (source == "zeros") return forward::zero_statics(ctx.dataset, ctx.dataset.static_count(), ctx.dataset.static_names);
  const std::string path = source == "estimates" ? (out_dir(config) / "estimates.csv").string() : source;
  if (!fs::exists(path)) throw IoError("estimates file not found: " + path);
  auto statics = forward::estimated_statics(train::read_estimates(path), ctx.normalizer);
  if (statics.names != ctx.dataset.static_names) throw SchemaError("estimates columns do not match the dataset statics");
  return statics;
}

std::vector<metrics::StreamflowSeries> read_prediction_series(const fs::path& path) {
  std::vector<metrics::StreamflowSeries> out;
  std::istringstream in(util::read_file(path.string()));
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> obs, pred;
  std::string current;
  auto flush = [&] {
    if (current.empty()) return;
    out.push_back({current, Eigen::Map<const Eigen::VectorXd>(obs.data(), static_cast<Eigen::Index>(obs.size())),
                   Eigen::Map<const Eigen::VectorXd>(pred.data(), static_cast<Eigen::Index>(pred.size()))});
    obs.clear();
    pred.clear();
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto cells = util::split(line, ',');
    if (line_no == 1) {
      if (cells.size() < 4 || cells[2] != "y_obs" || cells[3] != "y_pred") throw SchemaError(path.string() + ": bad header");
      continue;
    }
    if (cells.size() < 4) throw ParseError(path.string(), line_no, "expected at least 4 fields");
    if (cells[0] != current) {
      flush();
      current = cells[0];
    }
    try {
      obs.push_back(cells[2].empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(cells[2]));
      pred.push_back(std::stod(cells[3]));
    } catch (const std::logic_error&) {
      throw ParseError(path.string(), line_no, "invalid number");
    }
  }
  flush();
  return out;
}

}  // namespace

// ---- Config -----------------------------------------------------------------------

void PipelineConfig::validate() const {
  if (data_source != "synthetic" && data_source != "csv") throw ConfigError("data.source must be synthetic or csv");
  if (data_source == "csv" && data_dir.empty()) throw ConfigError("data.dir is required for csv data");
  if (output_dir.empty()) throw ConfigError("output.dir must not be empty");
  if (forward_runs < 1) throw ConfigError("forward.runs must be at least 1");
  if (forward_statics.empty()) throw ConfigError("forward.statics must not be empty");
  try {
    train.validate();
    forward.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

json to_flat_json(const PipelineConfig& config) {
  json j = json::object();
  for (const auto& f : fields()) j[f.key] = f.get(config);
  return j;
}

PipelineConfig from_flat_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::map<std::string, const Field*> by_key;
  for (const auto& f : fields()) by_key[f.key] = &f;
  PipelineConfig c;
  for (const auto& [key, value] : j.items()) {
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->second->set(c, value);
    } catch (const ConfigError&) {
      throw;
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
  return c;
}

std::vector<std::pair<std::string, std::string>> describe_keys() {
  const PipelineConfig defaults;
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(defaults).dump() + "  " + f.description);
  return out;
}

PipelineConfig load_config(const std::string& path) {
  if (!fs::exists(path)) throw IoError("config file not found: " + path);
  json j;
  try {
    j = json::parse(util::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return from_flat_json(j);
}

std::string config_hash(const PipelineConfig& config) { return util::hex64(util::fnv1a64(to_flat_json(config).dump())); }

// ---- Stages -------------------------------------------------------------------------

void generate_synthetic(const synthetic::GeneratorConfig& config, const std::string& dir) {
  synthetic::write_synthetic(synthetic::generate_dataset(config), dir);
}

void train_inverse_stage(const PipelineConfig& config) {
  run_stage(config, "train-inverse", [&](std::vector<std::string>& artifacts) {
    const Context ctx = load_context(config);
    const train::TrainConfig tc = resolved_train_config(config, ctx);
    const train::InverseData data{ctx.normalizer.apply(ctx.parts.train_basins.train),
                                  ctx.normalizer.apply(ctx.parts.train_basins.val), ctx.split_hash};
    const fs::path root = out_dir(config);
    const std::string hash = config_hash(config);
    auto write_manifests = [&](const std::vector<train::RunManifest>& manifests) {
      for (std::size_t i = 0; i < manifests.size(); ++i) {
        json m = train::to_json(manifests[i]);
        m["config_hash"] = hash;
        const std::string rel = "inverse/member_" + std::to_string(i) + ".manifest.json";
        write_json(root / rel, m);
        artifacts.push_back(rel);
      }
    };

    train::EnsembleResult ens;
    try {
      ens = train::train_ensemble(data, tc);
    } catch (const train::EnsembleAborted& e) {
      write_manifests(e.manifests());
      throw;
    }
    write_manifests(ens.manifests);
    for (std::size_t i = 0; i < ens.members.size(); ++i) {
      const std::string rel = member_path(static_cast<int>(i));
      fs::create_directories((root / rel).parent_path());
      model::save_checkpoint(ens.members[i], (root / rel).string());
      artifacts.push_back(rel);
    }
    json normalizer = ctx.normalizer;
    write_json(root / "inverse/normalizer.json", {{"config_hash", hash}, {"normalizer", normalizer}});
    write_json(root / "inverse/split.json", {{"config_hash", hash}, {"split", ctx.spec}, {"split_hash", ctx.split_hash}});
    json index = {{"config_hash", hash}, {"members", ens.members.size()}, {"mode", model::to_string(tc.model.mode)}};
    if (ens.penalty) index["penalty"] = train::to_json(*ens.penalty);
    write_json(root / "inverse/ensemble.json", index);
    artifacts.insert(artifacts.end(), {"inverse/normalizer.json", "inverse/split.json", "inverse/ensemble.json"});
  });
}

void export_statics_stage(const PipelineConfig& config) {
  run_stage(config, "export-statics", [&](std::vector<std::string>& artifacts) {
    const Context ctx = load_context(config);
    const train::TrainConfig tc = resolved_train_config(config, ctx);
    const auto members = load_members(config);
    const data::Dataset validation =
        ctx.normalizer.apply(data::slice_years(ctx.dataset, config.val_years, data::Period::validation));
    train::EstimateTable table = train::export_static_estimates(members, validation, ctx.normalizer, tc,
                                                                util::derive_seed(tc.seed, kExportStream));
    table.provenance["config_hash"] = config_hash(config);
    train::write_estimates(table, (out_dir(config) / "estimates.csv").string());
    artifacts.insert(artifacts.end(), {"estimates.csv", "estimates.csv.provenance.json"});
  });
}

void train_forward_stage(const PipelineConfig& config, const std::string& statics_override) {
  run_stage(config, "train-forward", [&](std::vector<std::string>& artifacts) {
    const Context ctx = load_context(config);
    const std::string source = statics_override.empty() ? config.forward_statics : statics_override;
    const forward::StaticInputs statics = resolve_statics(config, ctx, source);
    const forward::ForwardConfig& fc = config.forward;
    const auto train_samples = forward::build_forward_samples(ctx.normalizer.apply(ctx.parts.train_basins.train),
                                                              statics, fc.lookback, fc.stride);
    const auto val_samples = forward::build_forward_samples(ctx.normalizer.apply(ctx.parts.train_basins.val), statics,
                                                            fc.lookback, fc.stride);
    const data::YearRange with_warmup{config.test_years.begin - 1, config.test_years.end};
    const data::Dataset test_basins = data::select_basins(ctx.dataset, ctx.spec.test_basins);
    const data::Dataset test =
        ctx.normalizer.apply(data::slice_years(test_basins, with_warmup, data::Period::test));

    const int runs = config.forward_runs;
    std::vector<forward::ForwardTrainResult> results(static_cast<std::size_t>(runs));
    std::vector<std::vector<forward::BasinSeries>> series(static_cast<std::size_t>(runs));
    detail::parallel_for(runs, train::resolve_threads(config.train.threads), [&](int r) {
      const auto i = static_cast<std::size_t>(r);
      results[i] = forward::train_forward(train_samples.samples, val_samples.samples, fc,
                                          util::derive_seed(fc.seed, static_cast<std::uint64_t>(r)));
      results[i].manifest.statics_source = statics.source;
      series[i] = forward::predict_streamflow(results[i].model, test, statics, ctx.normalizer, config.test_years);
    });

    const fs::path root = out_dir(config);
    const std::string hash = config_hash(config);
    for (int r = 0; r < runs; ++r) {
      const auto& res = results[static_cast<std::size_t>(r)];
      const std::string model_rel = "forward/run_" + std::to_string(r) + ".json";
      const std::string manifest_rel = "forward/run_" + std::to_string(r) + ".manifest.json";
      json m = forward::to_json(res.manifest);
      m["config_hash"] = hash;
      write_json(root / model_rel, forward::to_json(res.model));
      write_json(root / manifest_rel, m);
      artifacts.insert(artifacts.end(), {model_rel, manifest_rel});
    }
    const forward::ForwardEnsembleReport report = forward::forward_ensemble_report(series);
    forward::write_predictions((root / "forward/predictions.csv").string(), report.ensemble, series);
    json rj = forward::to_json(report);
    rj["statics_source"] = statics.source == "estimated" ? source : statics.source;
    rj["aggregation"] = fc.aggregation;
    rj["excluded_basins"] = train_samples.excluded;
    rj["config_hash"] = hash;
    write_json(root / "forward/report.json", rj);
    artifacts.insert(artifacts.end(), {"forward/predictions.csv", "forward/report.json"});
  });
}

void evaluate_stage(const PipelineConfig& config) {
  run_stage(config, "evaluate", [&](std::vector<std::string>& artifacts) {
    const Context ctx = load_context(config);
    const train::TrainConfig tc = resolved_train_config(config, ctx);
    const auto members = load_members(config);
    const data::Dataset test = ctx.normalizer.apply(ctx.parts.test_basins.test);
    const train::EnsemblePrediction pred =
        train::predict_ensemble(members, test, tc, util::derive_seed(tc.seed, kEvaluateStream));
    const bool bayesian = members.front().bayesian();

    metrics::StaticPredictions sp;
    metrics::ObservedStatics obs;
    sp.names = obs.names = ctx.dataset.static_names;
    std::vector<Eigen::VectorXd> means, stds, observed;
    for (const auto& b : pred.basins) {
      const data::BasinRecord* raw = ctx.dataset.find(b.basin_id);
      if (raw == nullptr || !raw->statics) continue;
      sp.basin_ids.push_back(b.basin_id);
      means.push_back(ctx.normalizer.denormalize_statics(b.mean));
      stds.push_back(ctx.normalizer.denormalize_static_std(b.std));
      observed.push_back(*raw->statics);
    }
    obs.basin_ids = sp.basin_ids;
    const auto n = static_cast<Eigen::Index>(sp.basin_ids.size());
    const Eigen::Index d = ctx.dataset.static_count();
    sp.mean.resize(n, d);
    obs.values.resize(n, d);
    Eigen::MatrixXd sd(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      sp.mean.row(i) = means[static_cast<std::size_t>(i)].transpose();
      sd.row(i) = stds[static_cast<std::size_t>(i)].transpose();
      obs.values.row(i) = observed[static_cast<std::size_t>(i)].transpose();
    }
    if (bayesian) sp.std = sd;

    const fs::path root = out_dir(config);
    const fs::path predictions = root / "forward/predictions.csv";
    std::optional<std::vector<metrics::StreamflowSeries>> flow;
    if (fs::exists(predictions)) flow = read_prediction_series(predictions);
    json meta = {{"config_hash", config_hash(config)},
                 {"mode", model::to_string(tc.model.mode)},
                 {"members", members.size()},
                 {"z_alpha", {{"coverage_68", metrics::kZ68}, {"coverage_95", metrics::kZ95}}},
                 {"static_partition", "test basins, test years"},
                 {"excluded_basins", pred.excluded}};
    metrics::UncertaintyReport report = metrics::assemble_report(sp, obs, flow ? &*flow : nullptr, meta);
    if (fs::exists(root / "forward/report.json")) {
      json fr = read_json(root / "forward/report.json");
      fr.erase("config_hash");
      report.aggregate["forward"] = fr;
    }
    write_json(root / "report.json", metrics::to_json(report));
    util::write_file((root / "report.csv").string(), metrics::to_csv(report));
    artifacts.insert(artifacts.end(), {"report.json", "report.csv"});
  });
}

void run_all(const PipelineConfig& config) {
  train_inverse_stage(config);
  export_statics_stage(config);
  train_forward_stage(config);
  evaluate_stage(config);
}

PipelineConfig demo_config(const std::string& output_dir) {
  PipelineConfig c;
  c.data_source = "synthetic";
  c.synthetic.basins = 20;
  c.synthetic.days = 2922;
  c.synthetic.seed = 7;
  c.train_basins = 15;
  c.split_seed = 1;
  c.train_years = {1980, 1984};
  c.val_years = {1984, 1986};
  c.test_years = {1986, 1988};
  c.train.model.hidden = c.train.model.embed = c.train.model.decoder_hidden = c.train.model.regressor_hidden = 8;
  c.train.epochs = 20;
  c.train.batch_size = 5;
  c.train.adam.learning_rate = 3e-3;
  c.train.ensemble_size = 2;
  c.train.mc_samples = 20;
  c.train.seed = 1;
  c.forward.hidden = 16;
  c.forward.epochs = 5;
  c.forward.adam.learning_rate = 3e-3;
  c.forward_runs = 2;
  c.output_dir = output_dir;
  return c;
}

}  // namespace inverse_uq::pipeline
