#include "inverse_uq/errors.hpp"
#include "inverse_uq/inverse_model.hpp"
#include "inverse_uq/pipeline.hpp"
#include "inverse_uq/util.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>
#include <sys/wait.h>

using namespace inverse_uq;
using namespace inverse_uq::pipeline;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

PipelineConfig tiny_config(const std::string& out) {
  PipelineConfig c;
  c.synthetic.basins = 6;
  c.synthetic.days = 1461;
  c.synthetic.seed = 3;
  c.synthetic.distractors = 1;
  c.train_basins = 4;
  c.split_seed = 2;
  c.train_years = {1980, 1982};
  c.val_years = {1982, 1983};
  c.test_years = {1983, 1984};
  c.train.model.hidden = c.train.model.embed = c.train.model.decoder_hidden = c.train.model.regressor_hidden = 4;
  c.train.epochs = 2;
  c.train.batch_size = 4;
  c.train.lookback = 60;
  c.train.stride = 60;
  c.train.ensemble_size = 2;
  c.train.mc_samples = 8;
  c.train.threads = 1;
  c.train.seed = 4;
  c.forward.hidden = 4;
  c.forward.epochs = 2;
  c.forward.lookback = 60;
  c.forward.stride = 60;
  c.forward.seed = 5;
  c.forward_runs = 2;
  c.output_dir = out;
  return c;
}

int run_cli(const std::string& args, const std::string& stderr_path = "/dev/null") {
  const std::string cmd = std::string("\"") + INVERSE_UQ_CLI_PATH + "\" --log-level error " + args + " >/dev/null 2>\"" +
                          stderr_path + "\"";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_config(const PipelineConfig& c, const std::string& path) {
  util::write_file(path, to_flat_json(c).dump(2) + "\n");
}

// Drops wall-clock fields, the only run-to-run variation in the artifacts.
void strip_timing(json& j) {
  if (j.is_object()) {
    j.erase("wall_seconds");
    for (auto& [k, v] : j.items()) strip_timing(v);
  } else if (j.is_array()) {
    for (auto& v : j) strip_timing(v);
  }
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::string text = util::read_file(e.path().string());
    if (e.path().extension() == ".json") {
      json j = json::parse(text);
      strip_timing(j);
      text = j.dump();
    }
    files[fs::relative(e.path(), root).string()] = text;
  }
  return files;
}

void expect_same_tree(const fs::path& a, const fs::path& b) {
  const auto sa = snapshot(a), sb = snapshot(b);
  std::set<std::string> na, nb;
  for (const auto& [k, v] : sa) na.insert(k);
  for (const auto& [k, v] : sb) nb.insert(k);
  ASSERT_EQ(na, nb);
  for (const auto& [name, text] : sa) EXPECT_EQ(text, sb.at(name)) << name;
}

}  // namespace

// ---- configuration ---------------------------------------------------------------------------

TEST(PipelineConfig, FlatJsonRoundTripAndSchema) {
  const PipelineConfig c = tiny_config("x");
  const json flat = to_flat_json(c);
  EXPECT_EQ(to_flat_json(from_flat_json(flat)), flat);
  std::set<std::string> described;
  for (const auto& [key, text] : describe_keys()) described.insert(key);
  for (const auto& [key, value] : flat.items()) EXPECT_TRUE(described.count(key)) << key;
  EXPECT_EQ(described.size(), flat.size());

  json unknown = flat;
  unknown["train.epochz"] = 3;
  EXPECT_THROW(from_flat_json(unknown), ConfigError);
  json wrong = flat;
  wrong["train.epochs"] = "many";
  EXPECT_THROW(from_flat_json(wrong), ConfigError);
  // Missing keys keep their defaults.
  EXPECT_EQ(to_flat_json(from_flat_json(json::object())), to_flat_json(PipelineConfig{}));
}

TEST(PipelineConfig, HashTracksEveryValue) {
  const PipelineConfig c = tiny_config("x");
  EXPECT_EQ(config_hash(c), config_hash(from_flat_json(to_flat_json(c))));
  PipelineConfig d = c;
  d.train.seed = 5;
  EXPECT_NE(config_hash(c), config_hash(d));
  EXPECT_THROW(load_config("/nonexistent/config.json"), IoError);
}

// ---- CLI exit codes ------------------------------------------------------------------------

TEST(Cli, UnknownOrMissingSubcommandIsUsageError) {
  EXPECT_EQ(run_cli("frobnicate"), 64);
  EXPECT_EQ(run_cli(""), 64);
  EXPECT_EQ(run_cli("train-inverse"), 64);  // --config is required
  EXPECT_EQ(run_cli("config-defaults"), 0);
}

TEST(Cli, MissingDataDirectoryIsIoErrorNamingThePath) {
  test_support::TempDir dir;
  write_config(tiny_config(dir.str("run")), dir.str("config.json"));
  EXPECT_EQ(run_cli("train-inverse -c " + dir.str("config.json") + " --data-dir /no/such/basins", dir.str("err.txt")),
            2);
  EXPECT_NE(util::read_file(dir.str("err.txt")).find("/no/such/basins"), std::string::npos);
  EXPECT_EQ(run_cli("evaluate -c " + dir.str("missing.json")), 2);
}

TEST(Cli, InvalidConfigValueIsUsageError) {
  test_support::TempDir dir;
  write_config(tiny_config(dir.str("run")), dir.str("config.json"));
  EXPECT_EQ(run_cli("train-inverse -c " + dir.str("config.json") + " --set train.epochz=3"), 64);
}

// ---- end-to-end runs ------------------------------------------------------------------------

TEST(Pipeline, RunAllEqualsSequentialSubcommandsAndIsDeterministic) {
  test_support::TempDir dir;
  const std::string run = dir.str("run");
  write_config(tiny_config(run), dir.str("config.json"));
  const std::string cfg = " -c " + dir.str("config.json");

  ASSERT_EQ(run_cli("run-all" + cfg), 0);
  fs::rename(run, dir.str("first"));
  for (const char* sub : {"train-inverse", "export-statics", "train-forward", "evaluate"}) {
    ASSERT_EQ(run_cli(std::string(sub) + cfg), 0) << sub;
  }
  expect_same_tree(dir.path() / "first", run);

  // A rerun reproduces report.json byte for byte.
  fs::rename(run, dir.str("second"));
  ASSERT_EQ(run_cli("run-all" + cfg), 0);
  EXPECT_EQ(util::read_file(dir.str("first/report.json")), util::read_file(run + "/report.json"));

  const json manifest = json::parse(util::read_file(run + "/manifest.json"));
  const std::string hash = manifest.at("config_hash");
  for (const char* stage : {"train-inverse", "export-statics", "train-forward", "evaluate"}) {
    EXPECT_EQ(manifest.at("stages").value(stage, ""), "ok") << stage;
  }
  for (const auto& [name, entry] : manifest.at("artifacts").items()) {
    EXPECT_EQ(entry.at("config_hash"), hash) << name;
    EXPECT_TRUE(fs::exists(fs::path(run) / name)) << name;
  }
  EXPECT_TRUE(fs::exists(run + "/estimates.csv"));
  EXPECT_TRUE(fs::exists(run + "/forward/predictions.csv"));
  const json report = json::parse(util::read_file(run + "/report.json"));
  EXPECT_TRUE(report.at("aggregate").contains("coverage_95_pooled"));
  EXPECT_TRUE(report.at("aggregate").contains("forward"));
}

TEST(Pipeline, DeterministicModeReportsNoCoverage) {
  test_support::TempDir dir;
  const std::string run = dir.str("run");
  PipelineConfig c = tiny_config(run);
  c.forward_runs = 1;
  write_config(c, dir.str("config.json"));
  const std::string cfg = " -c " + dir.str("config.json");
  ASSERT_EQ(run_cli("train-inverse --mode deterministic" + cfg), 0);
  ASSERT_EQ(run_cli("export-statics" + cfg), 0);
  ASSERT_EQ(run_cli("evaluate" + cfg), 0);
  const json report = json::parse(util::read_file(run + "/report.json"));
  EXPECT_FALSE(report.at("aggregate").contains("coverage_95_pooled"));
  for (const auto& row : metrics::per_characteristic_from_csv(util::read_file(run + "/report.csv"))) {
    EXPECT_FALSE(row.coverage_68.has_value()) << row.name;
    EXPECT_FALSE(row.coverage_95.has_value()) << row.name;
    EXPECT_FALSE(row.interval_width_95.has_value()) << row.name;
  }
  const std::string header = util::read_file(run + "/estimates.csv").substr(0, 200);
  EXPECT_EQ(header.find("_std"), std::string::npos);
}

TEST(Pipeline, CollapsedPosteriorGivesZeroIntervalWidth) {
  test_support::QuietLog quiet;
  test_support::TempDir dir;
  PipelineConfig c = tiny_config(dir.str("run"));
  c.train.ensemble_size = 1;
  train_inverse_stage(c);
  const std::string member = dir.str("run/inverse/member_0.json");
  model::BimModel m = model::load_checkpoint(member);
  for (auto* layer : m.variational_layers()) {
    layer->weight_rho.value.setConstant(-800.0);
    layer->bias_rho.value.setConstant(-800.0);
  }
  model::save_checkpoint(m, member);
  evaluate_stage(c);
  const auto report = metrics::report_from_json(json::parse(util::read_file(dir.str("run/report.json"))));
  for (const auto& row : report.per_characteristic) {
    ASSERT_TRUE(row.interval_width_95.has_value()) << row.name;
    EXPECT_EQ(*row.interval_width_95, 0.0) << row.name;
    EXPECT_EQ(*row.interval_width_68, 0.0) << row.name;
  }
}

TEST(Pipeline, FailedStageIsNamedAndRecorded) {
  test_support::QuietLog quiet;
  test_support::TempDir dir;
  const PipelineConfig c = tiny_config(dir.str("run"));
  try {
    evaluate_stage(c);
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "evaluate");
  }
  const json manifest = json::parse(util::read_file(dir.str("run/manifest.json")));
  EXPECT_EQ(manifest.at("stages").at("evaluate").get<std::string>().rfind("failed", 0), 0u);
  EXPECT_EQ(run_cli("train-forward -c " + dir.str("nothing.json")), 2);
}

TEST(Pipeline, CsvDataMatchesTheSyntheticRun) {
  test_support::QuietLog quiet;
  test_support::TempDir dir;
  PipelineConfig c = tiny_config(dir.str("a"));
  c.train.ensemble_size = 1;
  generate_synthetic(c.synthetic, dir.str("data"));
  train_inverse_stage(c);
  PipelineConfig d = c;
  d.output_dir = dir.str("b");
  d.data_source = "csv";
  d.data_dir = dir.str("data");
  train_inverse_stage(d);
  EXPECT_EQ(util::read_file(dir.str("a/inverse/member_0.json")), util::read_file(dir.str("b/inverse/member_0.json")));
}
