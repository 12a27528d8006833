#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ssmlab/experiment.hpp"

using namespace ssmlab;
namespace fs = std::filesystem;

namespace {

nlohmann::json base_config_json() {
  return {{"schema_version", 1},
          {"regime", "majority"},
          {"data", {{"d", 12}, {"L", 12}, {"alpha_r", 0.34}, {"alpha_c", 0.17}, {"tau", 0.01}}},
          {"train", {{"m", 8}, {"eta", 0.5}, {"T_max", 40}, {"eval_every", 5}}},
          {"trials", 1},
          {"N_train", 24},
          {"N_test", 24},
          {"output_dir", "unused"},
          {"master_seed", 7}};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ssmlab_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string invariant_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    return e.invariant();
  }
  return "";
}

}  // namespace

TEST_CASE("config parsing rejects unknown keys and bad schema") {
  nlohmann::json j = base_config_json();
  j["typo_key"] = 1;
  CHECK(invariant_of([&] { parse_experiment_config(j); }) == "unknown_config_key:typo_key");

  j = base_config_json();
  j["train"]["learning_rate"] = 0.1;
  CHECK(invariant_of([&] { parse_experiment_config(j); }) ==
        "unknown_config_key:train.learning_rate");

  j = base_config_json();
  j["schema_version"] = 2;
  CHECK(invariant_of([&] { parse_experiment_config(j); }) == "schema_version");
}

TEST_CASE("config parsing names the violated invariant") {
  nlohmann::json j = base_config_json();
  j["data"]["alpha_r"] = 0.1;
  j["data"]["alpha_c"] = 0.2;
  CHECK(invariant_of([&] { parse_experiment_config(j); }) ==
        "relevant_tokens_exceed_confusion_tokens");

  j = base_config_json();
  j["trials"] = 0;
  CHECK(invariant_of([&] { parse_experiment_config(j); }) == "trials_at_least_one");

  j = base_config_json();
  j["sweep"] = {{"parameter", "m"}, {"values", {1.0, 2.0}}};
  CHECK(invariant_of([&] { parse_experiment_config(j); }) == "sweep_parameter_unknown");

  j = base_config_json();
  j["sweep"] = {{"parameter", "delta_near"}, {"values", {2.0}}};
  CHECK(invariant_of([&] { parse_experiment_config(j); }) ==
        "sweep_parameter_requires_locality");
}

TEST_CASE("sweep value application touches only the swept parameter") {
  nlohmann::json j = base_config_json();
  const ExperimentConfig cfg = parse_experiment_config(j);
  const ExperimentConfig swept = cfg.with_sweep_value("alpha_r", 0.5);
  CHECK(std::get<MajorityVotingConfig>(swept.data).alpha_r == 0.5);
  CHECK(std::get<MajorityVotingConfig>(swept.data).alpha_c == 0.17);
  CHECK(swept.train.eta == cfg.train.eta);
  const ExperimentConfig swept_eta = cfg.with_sweep_value("eta", 0.25);
  CHECK(swept_eta.train.eta == 0.25);
}

TEST_CASE("gen-data writes balanced datasets deterministically") {
  nlohmann::json j = base_config_json();
  const fs::path dir = fresh_dir("gen_data");
  j["output_dir"] = dir.string();
  ExperimentConfig cfg = parse_experiment_config(j);

  std::ostringstream log1;
  REQUIRE(cmd_gen_data(cfg, log1) == kExitOk);
  CHECK(fs::exists(dir / "train.json"));
  CHECK(fs::exists(dir / "test.json"));
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(log1.str().find("12 positive / 12 negative") != std::string::npos);

  const Dataset loaded = load_dataset((dir / "train.json").string());
  CHECK(loaded.samples.size() == 24);

  const std::string train_bytes = read_file(dir / "train.json");
  const std::string test_bytes = read_file(dir / "test.json");
  std::ostringstream log2;
  REQUIRE(cmd_gen_data(cfg, log2) == kExitOk);
  CHECK(read_file(dir / "train.json") == train_bytes);
  CHECK(read_file(dir / "test.json") == test_bytes);
}

TEST_CASE("train writes trajectory, alignment, and manifest per trial") {
  nlohmann::json j = base_config_json();
  const fs::path dir = fresh_dir("train_one");
  j["output_dir"] = dir.string();
  ExperimentConfig cfg = parse_experiment_config(j);
  std::ostringstream log;
  REQUIRE(cmd_train(cfg, log) == kExitOk);
  CHECK(fs::exists(dir / "trajectory_000.csv"));
  CHECK(fs::exists(dir / "alignment_000.csv"));
  CHECK(fs::exists(dir / "manifest.json"));

  nlohmann::json manifest;
  std::ifstream(dir / "manifest.json") >> manifest;
  CHECK(manifest.at("command") == "train");
  CHECK(manifest.at("version").get<std::string>() != "");
  CHECK(manifest.at("effective_config").at("regime") == "majority");
  CHECK(manifest.at("trials").size() == 1);
}

TEST_CASE("train reruns are byte-identical and distinct seeds appear per trial") {
  nlohmann::json j = base_config_json();
  j["trials"] = 3;
  j["train"]["T_max"] = 20;
  const fs::path dir = fresh_dir("train_many");
  j["output_dir"] = dir.string();
  ExperimentConfig cfg = parse_experiment_config(j);
  std::ostringstream log;
  REQUIRE(cmd_train(cfg, log) == kExitOk);

  std::vector<std::string> bytes;
  for (int t = 0; t < 3; ++t)
    bytes.push_back(read_file(dir / ("trajectory_00" + std::to_string(t) + ".csv")));

  nlohmann::json manifest;
  std::ifstream(dir / "manifest.json") >> manifest;
  std::set<std::uint64_t> seeds;
  for (const auto& trial : manifest.at("trials"))
    seeds.insert(trial.at("trial_seed").get<std::uint64_t>());
  CHECK(seeds.size() == 3);

  std::ostringstream log2;
  REQUIRE(cmd_train(cfg, log2) == kExitOk);
  for (int t = 0; t < 3; ++t)
    CHECK(read_file(dir / ("trajectory_00" + std::to_string(t) + ".csv")) == bytes[t]);
}

TEST_CASE("single-value sweep degenerates to a train aggregate") {
  nlohmann::json j = base_config_json();
  j["trials"] = 2;
  j["train"]["T_max"] = 30;
  j["sweep"] = {{"parameter", "alpha_r"}, {"values", {0.34}}};
  const fs::path dir = fresh_dir("sweep_single");
  j["output_dir"] = dir.string();
  ExperimentConfig cfg = parse_experiment_config(j);
  std::ostringstream log;
  REQUIRE(cmd_sweep(cfg, log) == kExitOk);
  CHECK(fs::exists(dir / "sweep_summary.csv"));
  CHECK(fs::exists(dir / "sweep_trials.csv"));

  std::ifstream in(dir / "sweep_summary.csv");
  std::string header, row, extra;
  std::getline(in, header);
  CHECK(header == "value,mean_epochs,success_rate");
  REQUIRE(std::getline(in, row));
  CHECK_FALSE(std::getline(in, extra));
}

TEST_CASE("ablate-gating rejects a gating_enabled override and pairs seeds") {
  nlohmann::json j = base_config_json();
  j["train"]["gating_enabled"] = false;
  ExperimentConfig bad = parse_experiment_config(j);
  std::ostringstream sink;
  CHECK(invariant_of([&] { cmd_ablate_gating(bad, sink); }) == "gating_enabled_owned_by_ablate");

  nlohmann::json ok = base_config_json();
  ok["trials"] = 2;
  ok["train"]["T_max"] = 20;
  const fs::path dir = fresh_dir("ablate");
  ok["output_dir"] = dir.string();
  ExperimentConfig cfg = parse_experiment_config(ok);
  std::ostringstream log;
  REQUIRE(cmd_ablate_gating(cfg, log) == kExitOk);
  std::ifstream in(dir / "ablation.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "trial_seed,final_test_loss_gated,final_test_loss_ungated,epochs_gated,epochs_ungated");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 2);
}

TEST_CASE("grad-check passes on default sizes and fails under mutation") {
  nlohmann::json j = base_config_json();
  j["grad_check"] = {{"dims", {4, 6}}, {"lengths", {4}}, {"widths", {2}},
                     {"instances_per_case", 1}};
  const fs::path dir = fresh_dir("grad_check");
  j["output_dir"] = dir.string();
  ExperimentConfig cfg = parse_experiment_config(j);
  std::ostringstream log;
  REQUIRE(cmd_grad_check(cfg, log) == kExitOk);
  CHECK(fs::exists(dir / "grad_check.csv"));

  nlohmann::json mutated = j;
  mutated["grad_check"]["mutate_sign_flip"] = true;
  ExperimentConfig bad = parse_experiment_config(mutated);
  std::ostringstream log2;
  CHECK(cmd_grad_check(bad, log2) == kExitVerificationFailure);

  nlohmann::json zero = j;
  zero["grad_check"]["instances_per_case"] = 0;
  CHECK(invariant_of([&] { parse_experiment_config(zero); }) ==
        "grad_check_instances_positive");
}

TEST_CASE("the ssm-lab binary maps errors to exit codes") {
  const fs::path dir = fresh_dir("binary");
  const fs::path good = dir / "good.json";
  const fs::path bad = dir / "bad.json";
  {
    nlohmann::json j = base_config_json();
    j["output_dir"] = (dir / "out").string();
    std::ofstream(good) << j.dump(2);
    j["data"]["alpha_r"] = 0.05;
    std::ofstream(bad) << j.dump(2);
  }
  const std::string binary = SSMLAB_CLI_BINARY;
  auto run = [&](const std::string& args) {
    const std::string cmd = binary + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };
  CHECK(run("gen-data --config " + good.string()) == kExitOk);
  CHECK(run("gen-data --config " + bad.string()) == kExitInvalidConfig);
  CHECK(run("gen-data --config " + (dir / "missing.json").string()) == kExitInvalidConfig);
  CHECK(run("train --config " + good.string() + " --out " + (dir / "out2").string()) ==
        kExitOk);
  CHECK(fs::exists(dir / "out2" / "trajectory_000.csv"));
}
