#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssmlab/datagen.hpp"
#include "ssmlab/errors.hpp"
#include "ssmlab/trainer.hpp"

namespace ssmlab {

struct SweepSpec {
  std::string parameter;
  std::vector<double> values;
};

struct GradCheckSpec {
  std::vector<int> dims = {4, 8};
  std::vector<int> lengths = {4, 8};
  std::vector<int> widths = {2, 6};
  int instances_per_case = 1;  // per (regime, d, L, m, gating on/off) cell
  int samples_per_instance = 4;
  double h = 1e-5;
  double tolerance = 1e-4;
  bool mutate_sign_flip = false;  // test hook: corrupts the gating gradient
};

struct ExperimentConfig {
  std::string regime = "majority";
  RegimeConfig data = MajorityVotingConfig{};
  std::string basis_kind = "canonical";  // or "rotated"
  std::uint64_t basis_seed = 0;
  TrainConfig train;
  int trials = 1;
  int N_train = 400;
  int N_test = 1000;
  std::optional<SweepSpec> sweep;
  std::optional<GradCheckSpec> grad_check;
  std::string output_dir = "out";
  std::uint64_t master_seed = 0;
  bool train_block_present = false;
  bool gating_key_present = false;  // ablate-gating owns the flag and rejects it

  void validate() const {
    if (regime != "majority" && regime != "locality") throw ConfigError("regime_unknown");
    if (basis_kind != "canonical" && basis_kind != "rotated")
      throw ConfigError("basis_kind_unknown");
    std::visit([](const auto& c) { c.validate(); }, data);
    train.validate();
    if (trials < 1) throw ConfigError("trials_at_least_one");
    if (N_train < 2) throw ConfigError("n_train_min_size");
    if (N_test < 2) throw ConfigError("n_test_min_size");
    if (sweep) {
      static const std::set<std::string> allowed = {"alpha_r", "alpha_c", "delta_near",
                                                    "d",       "N_train", "eta",
                                                    "tau"};
      if (!allowed.count(sweep->parameter)) throw ConfigError("sweep_parameter_unknown");
      if (sweep->values.empty()) throw ConfigError("sweep_values_nonempty");
      if ((sweep->parameter == "alpha_r" || sweep->parameter == "alpha_c") &&
          regime != "majority")
        throw ConfigError("sweep_parameter_requires_majority");
      if (sweep->parameter == "delta_near" && regime != "locality")
        throw ConfigError("sweep_parameter_requires_locality");
    }
    if (grad_check) {
      if (grad_check->instances_per_case < 1) throw ConfigError("grad_check_instances_positive");
      if (grad_check->dims.empty() || grad_check->lengths.empty() || grad_check->widths.empty())
        throw ConfigError("grad_check_grid_nonempty");
      if (!(grad_check->h > 0.0)) throw ConfigError("grad_check_step_positive");
      if (grad_check->samples_per_instance < 2)
        throw ConfigError("grad_check_samples_min_size");
    }
  }

  FeatureBasis make_basis() const {
    const int d = std::visit([](const auto& c) { return c.d; }, data);
    return basis_kind == "canonical" ? build_canonical_basis(d)
                                     : build_rotated_basis(d, basis_seed);
  }

  // Returns a copy with one swept parameter overridden.
  ExperimentConfig with_sweep_value(const std::string& parameter, double value) const;
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& known,
                                const std::string& scope) {
  for (const auto& [key, val] : j.items()) {
    (void)val;
    if (!known.count(key))
      throw ConfigError("unknown_config_key:" + (scope.empty() ? key : scope + "." + key));
  }
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace detail

// Learning-rate defaults per regime, picked by a coarse grid so the slowest
// reference configuration still converges within its iteration budget.
inline double default_eta(const std::string& regime) {
  return regime == "locality" ? 8.0 : 4.0;
}

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config_not_an_object");
  detail::reject_unknown_keys(
      j,
      {"schema_version", "regime", "data", "basis", "basis_seed", "train", "trials",
       "N_train", "N_test", "sweep", "grad_check", "output_dir", "master_seed"},
      "");
  if (detail::get_or<int>(j, "schema_version", 0) != 1) throw ConfigError("schema_version");

  ExperimentConfig cfg;
  cfg.regime = detail::get_or<std::string>(j, "regime", "majority");
  cfg.basis_kind = detail::get_or<std::string>(j, "basis", "canonical");
  cfg.basis_seed = detail::get_or<std::uint64_t>(j, "basis_seed", 0);

  const nlohmann::json data = j.contains("data") ? j.at("data") : nlohmann::json::object();
  if (cfg.regime == "majority") {
    detail::reject_unknown_keys(data, {"d", "L", "alpha_r", "alpha_c", "tau", "placement"},
                                "data");
    MajorityVotingConfig mv;
    mv.d = detail::get_or(data, "d", mv.d);
    mv.L = detail::get_or(data, "L", mv.L);
    mv.alpha_r = detail::get_or(data, "alpha_r", mv.alpha_r);
    mv.alpha_c = detail::get_or(data, "alpha_c", mv.alpha_c);
    mv.tau = detail::get_or(data, "tau", mv.tau);
    const std::string placement = detail::get_or<std::string>(data, "placement", "shuffled");
    if (placement == "contiguous") mv.placement = Placement::contiguous;
    else if (placement == "shuffled") mv.placement = Placement::shuffled;
    else throw ConfigError("placement_unknown");
    cfg.data = mv;
  } else if (cfg.regime == "locality") {
    detail::reject_unknown_keys(data, {"d", "L", "tau", "delta_near", "delta_far"}, "data");
    LocalityConfig loc;
    loc.d = detail::get_or(data, "d", loc.d);
    loc.L = detail::get_or(data, "L", loc.L);
    loc.tau = detail::get_or(data, "tau", loc.tau);
    loc.delta_near = detail::get_or(data, "delta_near", loc.delta_near);
    loc.delta_far = detail::get_or(data, "delta_far", loc.delta_far);
    cfg.data = loc;
  } else {
    throw ConfigError("regime_unknown");
  }

  if (j.contains("train")) {
    cfg.train_block_present = true;
    const nlohmann::json& t = j.at("train");
    detail::reject_unknown_keys(
        t, {"m", "eta", "T_max", "c0", "stop_tol", "eval_every", "gating_enabled"}, "train");
    cfg.train.m = detail::get_or(t, "m", cfg.train.m);
    cfg.train.eta = detail::get_or(t, "eta", default_eta(cfg.regime));
    cfg.train.T_max = detail::get_or(t, "T_max", cfg.train.T_max);
    cfg.train.c0 = detail::get_or(t, "c0", cfg.train.c0);
    cfg.train.stop_tol = detail::get_or(t, "stop_tol", cfg.train.stop_tol);
    cfg.train.eval_every = detail::get_or(t, "eval_every", cfg.train.eval_every);
    cfg.gating_key_present = t.contains("gating_enabled");
    cfg.train.gating_enabled = detail::get_or(t, "gating_enabled", true);
  } else {
    cfg.train.eta = default_eta(cfg.regime);
  }

  cfg.trials = detail::get_or(j, "trials", cfg.trials);
  cfg.N_train = detail::get_or(j, "N_train", cfg.N_train);
  cfg.N_test = detail::get_or(j, "N_test", cfg.N_test);
  cfg.output_dir = detail::get_or(j, "output_dir", cfg.output_dir);
  cfg.master_seed = detail::get_or(j, "master_seed", cfg.master_seed);

  if (j.contains("sweep")) {
    const nlohmann::json& s = j.at("sweep");
    detail::reject_unknown_keys(s, {"parameter", "values"}, "sweep");
    SweepSpec spec;
    spec.parameter = s.at("parameter").get<std::string>();
    spec.values = s.at("values").get<std::vector<double>>();
    cfg.sweep = spec;
  }

  if (j.contains("grad_check")) {
    const nlohmann::json& g = j.at("grad_check");
    detail::reject_unknown_keys(g,
                                {"dims", "lengths", "widths", "instances_per_case",
                                 "samples_per_instance", "h", "tolerance", "mutate_sign_flip"},
                                "grad_check");
    GradCheckSpec spec;
    spec.dims = detail::get_or(g, "dims", spec.dims);
    spec.lengths = detail::get_or(g, "lengths", spec.lengths);
    spec.widths = detail::get_or(g, "widths", spec.widths);
    spec.instances_per_case = detail::get_or(g, "instances_per_case", spec.instances_per_case);
    spec.samples_per_instance =
        detail::get_or(g, "samples_per_instance", spec.samples_per_instance);
    spec.h = detail::get_or(g, "h", spec.h);
    spec.tolerance = detail::get_or(g, "tolerance", spec.tolerance);
    spec.mutate_sign_flip = detail::get_or(g, "mutate_sign_flip", spec.mutate_sign_flip);
    cfg.grad_check = spec;
  }

  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config_file_unreadable");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config_file_not_json");
  }
  return parse_experiment_config(j);
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j = {{"schema_version", 1},
                      {"regime", cfg.regime},
                      {"data", regime_config_to_json(cfg.data)},
                      {"basis", cfg.basis_kind},
                      {"train",
                       {{"m", cfg.train.m},
                        {"eta", cfg.train.eta},
                        {"T_max", cfg.train.T_max},
                        {"c0", cfg.train.c0},
                        {"stop_tol", cfg.train.stop_tol},
                        {"eval_every", cfg.train.eval_every},
                        {"gating_enabled", cfg.train.gating_enabled}}},
                      {"trials", cfg.trials},
                      {"N_train", cfg.N_train},
                      {"N_test", cfg.N_test},
                      {"output_dir", cfg.output_dir},
                      {"master_seed", cfg.master_seed}};
  if (cfg.basis_kind == "rotated") j["basis_seed"] = cfg.basis_seed;
  if (cfg.sweep) j["sweep"] = {{"parameter", cfg.sweep->parameter}, {"values", cfg.sweep->values}};
  if (cfg.grad_check)
    j["grad_check"] = {{"dims", cfg.grad_check->dims},
                       {"lengths", cfg.grad_check->lengths},
                       {"widths", cfg.grad_check->widths},
                       {"instances_per_case", cfg.grad_check->instances_per_case},
                       {"samples_per_instance", cfg.grad_check->samples_per_instance},
                       {"h", cfg.grad_check->h},
                       {"tolerance", cfg.grad_check->tolerance},
                       {"mutate_sign_flip", cfg.grad_check->mutate_sign_flip}};
  return j;
}

inline ExperimentConfig ExperimentConfig::with_sweep_value(const std::string& parameter,
                                                           double value) const {
  ExperimentConfig out = *this;
  if (parameter == "eta") {
    out.train.eta = value;
  } else if (parameter == "N_train") {
    out.N_train = static_cast<int>(std::lround(value));
  } else if (parameter == "tau") {
    std::visit([&](auto& c) { c.tau = value; }, out.data);
  } else if (parameter == "d") {
    std::visit([&](auto& c) { c.d = static_cast<int>(std::lround(value)); }, out.data);
  } else if (parameter == "alpha_r") {
    std::get<MajorityVotingConfig>(out.data).alpha_r = value;
  } else if (parameter == "alpha_c") {
    std::get<MajorityVotingConfig>(out.data).alpha_c = value;
  } else if (parameter == "delta_near") {
    std::get<LocalityConfig>(out.data).delta_near = static_cast<int>(std::lround(value));
  } else {
    throw ConfigError("sweep_parameter_unknown");
  }
  out.validate();
  return out;
}

}  // namespace ssmlab
