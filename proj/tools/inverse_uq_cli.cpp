// inverse_uq: command-line driver for the inverse-modeling pipeline.

#include "inverse_uq/errors.hpp"
#include "inverse_uq/logging.hpp"
#include "inverse_uq/pipeline.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace {

namespace pl = inverse_uq::pipeline;

constexpr int kExitOk = 0;
constexpr int kExitIo = 2;
constexpr int kExitUsage = 64;
constexpr int kExitInternal = 70;

// Training allocates and frees many same-sized graph buffers; keeping them in
// the heap avoids repeated page faults.
void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

int classify(const std::exception_ptr& error) {
  try {
    std::rethrow_exception(error);
  } catch (const pl::StageError& e) {
    return e.cause() ? classify(e.cause()) : kExitInternal;
  } catch (const inverse_uq::IoError&) {
    return kExitIo;
  } catch (const inverse_uq::ParseError&) {
    return kExitIo;
  } catch (const inverse_uq::SchemaError&) {
    return kExitIo;
  } catch (const inverse_uq::IntegrityError&) {
    return kExitIo;
  } catch (const std::filesystem::filesystem_error&) {
    return kExitIo;
  } catch (const pl::ConfigError&) {
    return kExitUsage;
  } catch (...) {
    return kExitInternal;
  }
}

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::string data_dir;
};

// `key=value` pairs where value is JSON, falling back to a plain string.
void apply_overrides(nlohmann::json& flat, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw pl::ConfigError("--set expects key=value, got '" + o + "'");
    const std::string key = o.substr(0, eq);
    const std::string value = o.substr(eq + 1);
    try {
      flat[key] = nlohmann::json::parse(value);
    } catch (const nlohmann::json::parse_error&) {
      flat[key] = value;
    }
  }
}

pl::PipelineConfig resolve_config(const Options& opt) {
  nlohmann::json flat =
      opt.config_path.empty() ? pl::to_flat_json(pl::PipelineConfig{}) : pl::to_flat_json(pl::load_config(opt.config_path));
  apply_overrides(flat, opt.overrides);
  if (!opt.out.empty()) flat["output.dir"] = opt.out;
  if (!opt.data_dir.empty()) {
    flat["data.source"] = "csv";
    flat["data.dir"] = opt.data_dir;
  }
  pl::PipelineConfig config = pl::from_flat_json(flat);
  config.validate();
  return config;
}

void add_common(CLI::App* cmd, Options& opt, bool config_required) {
  auto* c = cmd->add_option("--config,-c", opt.config_path, "flat JSON configuration file");
  if (config_required) c->required();
  cmd->add_option("--set", opt.overrides, "override a config key, key=value (repeatable)");
  cmd->add_option("--out,-o", opt.out, "artifact directory (overrides output.dir)");
  cmd->add_option("--data-dir", opt.data_dir, "CSV data directory (sets data.source=csv and data.dir)");
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Probabilistic inverse modeling of basin characteristics with a Bayesian sequence autoencoder"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug, info, warn or error")
      ->check(CLI::IsMember({"debug", "info", "warn", "error"}));

  inverse_uq::synthetic::GeneratorConfig gen;
  std::string gen_out;
  auto* generate = app.add_subcommand("generate-synthetic", "write a synthetic bucket-model dataset");
  generate->add_option("--basins", gen.basins, "number of basins")->capture_default_str();
  generate->add_option("--days", gen.days, "days per basin")->capture_default_str();
  generate->add_option("--seed", gen.seed, "generator seed")->capture_default_str();
  generate->add_option("--distractors", gen.distractors, "uninformative static columns")->capture_default_str();
  generate->add_option("--out", gen_out, "output directory")->required();

  Options opt;
  std::string mode;
  auto* train_inverse = app.add_subcommand("train-inverse", "train the inverse-model ensemble");
  add_common(train_inverse, opt, true);
  train_inverse->add_option("--mode", mode, "bayesian or deterministic")
      ->check(CLI::IsMember({"bayesian", "deterministic"}));
  bool ubl = false;
  train_inverse->add_flag("--ubl", ubl, "enable uncertainty-based two-phase training");

  auto* export_statics = app.add_subcommand("export-statics", "estimate statics from validation-period windows");
  add_common(export_statics, opt, true);

  std::string statics;
  auto* train_forward = app.add_subcommand("train-forward", "train the forward streamflow ensemble");
  add_common(train_forward, opt, true);
  train_forward->add_option("--statics", statics, "estimates, observed, zeros or a path to an estimates CSV");

  auto* evaluate = app.add_subcommand("evaluate", "write report.json and report.csv");
  add_common(evaluate, opt, true);

  auto* run_all = app.add_subcommand("run-all", "train-inverse, export-statics, train-forward and evaluate");
  add_common(run_all, opt, true);

  std::string demo_out = "demo_run";
  auto* demo = app.add_subcommand("demo", "small synthetic end-to-end run");
  demo->add_option("--out", demo_out, "artifact directory")->capture_default_str();

  auto* defaults = app.add_subcommand("config-defaults", "print every config key with its default");
  bool as_json = false;
  defaults->add_flag("--json", as_json, "print a complete default config file instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kExitUsage;
  }

  inverse_uq::logging::set_level(log_level == "debug"  ? inverse_uq::logging::Level::debug
                                 : log_level == "warn"  ? inverse_uq::logging::Level::warn
                                 : log_level == "error" ? inverse_uq::logging::Level::error
                                                        : inverse_uq::logging::Level::info);

  try {
    if (generate->parsed()) {
      pl::generate_synthetic(gen, gen_out);
    } else if (defaults->parsed()) {
      if (as_json) {
        std::cout << pl::to_flat_json(pl::PipelineConfig{}).dump(2) << '\n';
      } else {
        for (const auto& [key, text] : pl::describe_keys()) std::cout << key << " = " << text << '\n';
      }
    } else if (demo->parsed()) {
      const pl::PipelineConfig config = pl::demo_config(demo_out);
      std::filesystem::create_directories(demo_out);
      std::ofstream(std::filesystem::path(demo_out) / "config.json") << pl::to_flat_json(config).dump(2) << '\n';
      pl::run_all(config);
      std::cout << "demo artifacts in " << demo_out << '\n';
    } else {
      if (train_inverse->parsed()) {
        if (!mode.empty()) opt.overrides.push_back("model.mode=\"" + mode + "\"");
        if (ubl) opt.overrides.push_back("ubl.enabled=true");
      }
      const pl::PipelineConfig config = resolve_config(opt);
      if (train_inverse->parsed()) pl::train_inverse_stage(config);
      if (export_statics->parsed()) pl::export_statics_stage(config);
      if (train_forward->parsed()) pl::train_forward_stage(config, statics);
      if (evaluate->parsed()) pl::evaluate_stage(config);
      if (run_all->parsed()) pl::run_all(config);
    }
  } catch (...) {
    const std::exception_ptr error = std::current_exception();
    try {
      std::rethrow_exception(error);
    } catch (const pl::StageError& e) {
      std::cerr << "error: stage " << e.what() << '\n';
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
    } catch (...) {
      std::cerr << "error: unknown failure\n";
    }
    return classify(error);
  }
  return kExitOk;
}
