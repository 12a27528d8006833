#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ssmlab/config.hpp"
#include "ssmlab/csv.hpp"
#include "ssmlab/diagnostics.hpp"
#include "ssmlab/gradients.hpp"
#include "ssmlab/trainer.hpp"
#include "ssmlab/version.hpp"

namespace ssmlab {

// Exit codes shared by the CLI and the command implementations.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalidConfig = 1;
inline constexpr int kExitVerificationFailure = 2;
inline constexpr int kExitRuntimeDivergence = 3;

inline int worker_count() {
  if (const char* env = std::getenv("SSM_LAB_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Runs fn(0..n-1) on the work pool. Task outputs must go into per-index slots;
// the first exception is rethrown after all workers join.
inline void parallel_tasks(int n, const std::function<void(int)>& fn) {
  const int workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto body = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// --- seeds -------------------------------------------------------------------

// Stream tags; a trial's streams derive from master_seed + trial.
inline constexpr std::uint64_t kTrainDataStream = 101;
inline constexpr std::uint64_t kTestDataStream = 102;
inline constexpr std::uint64_t kInitStream = 103;

struct TrialSeeds {
  std::uint64_t trial_seed = 0;
  std::uint64_t train_data = 0;
  std::uint64_t test_data = 0;
  std::uint64_t init = 0;
};

inline TrialSeeds trial_seeds(std::uint64_t master_seed, int trial) {
  TrialSeeds s;
  s.trial_seed = master_seed + static_cast<std::uint64_t>(trial);
  const Rng root(s.trial_seed);
  s.train_data = root.split(kTrainDataStream).seed();
  s.test_data = root.split(kTestDataStream).seed();
  s.init = root.split(kInitStream).seed();
  return s;
}

struct TrialOutcome {
  TrialSeeds seeds;
  TrainResult result;
};

inline TrialOutcome run_trial(const ExperimentConfig& cfg, const FeatureBasis& basis,
                              int trial, std::optional<bool> gating_override = {}) {
  TrialOutcome out;
  out.seeds = trial_seeds(cfg.master_seed, trial);
  const Dataset train_set =
      gen_balanced_dataset(cfg.data, cfg.N_train, basis, Rng(out.seeds.train_data));
  const Dataset test_set =
      gen_balanced_dataset(cfg.data, cfg.N_test, basis, Rng(out.seeds.test_data));
  TrainConfig tc = cfg.train;
  tc.seed = out.seeds.init;
  if (gating_override) tc.gating_enabled = *gating_override;
  out.result = train(tc, train_set, test_set, basis);
  return out;
}

// --- output helpers ----------------------------------------------------------

namespace detail {

inline std::filesystem::path prepare_output_dir(const ExperimentConfig& cfg) {
  std::filesystem::path dir(cfg.output_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path.string());
  return out;
}

inline std::string trial_file(const std::string& stem, int trial) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03d.csv", stem.c_str(), trial);
  return buf;
}

inline void write_manifest(const std::filesystem::path& dir, const std::string& command,
                           const ExperimentConfig& cfg,
                           const std::vector<std::string>& outputs,
                           nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json manifest = {{"schema_version", 1},
                             {"command", command},
                             {"version", version_string()},
                             {"effective_config", experiment_config_to_json(cfg)},
                             {"outputs", outputs}};
  for (auto& [key, value] : extra.items()) manifest[key] = value;
  auto out = open_out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
}

inline void write_trajectory_csv(std::ostream& out, const TrainResult& result) {
  CsvWriter csv(out);
  csv.write_header({"iter", "train_loss", "test_loss", "test_acc"});
  for (const EvalPoint& pt : result.trajectory) {
    csv.begin_row();
    csv.field(pt.iter);
    csv.field(pt.train_loss);
    csv.field(pt.test_loss);
    csv.field(pt.test_acc);
    csv.end_row();
  }
}

}  // namespace detail

// --- commands ----------------------------------------------------------------

// Writes train.json / test.json derived from master_seed and prints a role
// census of the training split.
inline int cmd_gen_data(const ExperimentConfig& cfg, std::ostream& log) {
  const auto dir = detail::prepare_output_dir(cfg);
  const FeatureBasis basis = cfg.make_basis();
  const TrialSeeds seeds = trial_seeds(cfg.master_seed, 0);
  const Dataset train_set =
      gen_balanced_dataset(cfg.data, cfg.N_train, basis, Rng(seeds.train_data));
  const Dataset test_set =
      gen_balanced_dataset(cfg.data, cfg.N_test, basis, Rng(seeds.test_data));
  save_dataset(train_set, (dir / "train.json").string());
  save_dataset(test_set, (dir / "test.json").string());
  detail::write_manifest(dir, "gen-data", cfg, {"train.json", "test.json"},
                         {{"seeds", {{"train_data", seeds.train_data},
                                     {"test_data", seeds.test_data}}}});

  long positives = 0, relevant = 0, confusion = 0, irrelevant = 0;
  for (const Sample& s : train_set.samples) {
    positives += s.label > 0;
    const int rel = s.label > 0 ? 0 : 1;
    for (int r : s.roles) {
      if (r == rel) ++relevant;
      else if (r == 1 - rel) ++confusion;
      else ++irrelevant;
    }
  }
  log << "wrote " << (dir / "train.json").string() << " (" << train_set.samples.size()
      << " samples, " << positives << " positive / "
      << train_set.samples.size() - positives << " negative)\n"
      << "wrote " << (dir / "test.json").string() << " (" << test_set.samples.size()
      << " samples)\n"
      << "train token roles: relevant=" << relevant << " confusion=" << confusion
      << " irrelevant=" << irrelevant << "\n";
  return kExitOk;
}

// Runs `trials` independent seeded runs and writes per-trial trajectory and
// alignment CSVs plus the run manifest.
inline int cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  const auto dir = detail::prepare_output_dir(cfg);
  const FeatureBasis basis = cfg.make_basis();
  std::vector<TrialOutcome> outcomes(cfg.trials);
  parallel_tasks(cfg.trials, [&](int trial) { outcomes[trial] = run_trial(cfg, basis, trial); });

  std::vector<std::string> outputs;
  nlohmann::json trial_meta = nlohmann::json::array();
  for (int trial = 0; trial < cfg.trials; ++trial) {
    const TrialOutcome& oc = outcomes[trial];
    const std::string traj_name = detail::trial_file("trajectory", trial);
    const std::string align_name = detail::trial_file("alignment", trial);
    auto traj = detail::open_out(dir / traj_name);
    detail::write_trajectory_csv(traj, oc.result);
    auto align = detail::open_out(dir / align_name);
    export_traces(oc.result.alignment, align);
    outputs.push_back(traj_name);
    outputs.push_back(align_name);
    trial_meta.push_back({{"trial", trial},
                          {"trial_seed", oc.seeds.trial_seed},
                          {"train_data_seed", oc.seeds.train_data},
                          {"test_data_seed", oc.seeds.test_data},
                          {"init_seed", oc.seeds.init},
                          {"converged", oc.result.converged},
                          {"epochs", oc.result.epochs_to_converge
                                         ? nlohmann::json(*oc.result.epochs_to_converge)
                                         : nlohmann::json()}});
    log << "trial " << trial << ": "
        << (oc.result.converged ? "converged at iter " +
                                      std::to_string(*oc.result.epochs_to_converge)
                                : "did not converge")
        << ", final test loss " << oc.result.trajectory.back().test_loss << "\n";
  }
  detail::write_manifest(dir, "train", cfg, outputs, {{"trials", trial_meta}});
  return kExitOk;
}

struct SweepCell {
  double value = 0.0;
  int success_count = 0;
  int trial_count = 0;
  std::optional<double> mean_epochs;  // over successful trials only
};

struct SweepSummary {
  std::vector<SweepCell> cells;
};

// Trains trials x |values| runs and summarizes epochs-to-convergence per value.
inline int cmd_sweep(const ExperimentConfig& cfg, std::ostream& log) {
  if (!cfg.sweep) throw ConfigError("sweep_block_required");
  const auto dir = detail::prepare_output_dir(cfg);
  const int values = static_cast<int>(cfg.sweep->values.size());
  const int total = values * cfg.trials;

  std::vector<ExperimentConfig> point_cfg;
  point_cfg.reserve(values);
  for (double v : cfg.sweep->values)
    point_cfg.push_back(cfg.with_sweep_value(cfg.sweep->parameter, v));

  std::vector<TrialOutcome> outcomes(total);
  parallel_tasks(total, [&](int task) {
    const int vi = task / cfg.trials;
    const int trial = task % cfg.trials;
    const FeatureBasis basis = point_cfg[vi].make_basis();
    outcomes[task] = run_trial(point_cfg[vi], basis, trial);
  });

  SweepSummary summary;
  auto trials_out = detail::open_out(dir / "sweep_trials.csv");
  CsvWriter trials_csv(trials_out);
  trials_csv.write_header({"value", "trial", "trial_seed", "converged", "epochs",
                           "final_train_loss", "final_test_loss", "final_test_acc"});
  for (int vi = 0; vi < values; ++vi) {
    SweepCell cell;
    cell.value = cfg.sweep->values[vi];
    cell.trial_count = cfg.trials;
    double epoch_sum = 0.0;
    for (int trial = 0; trial < cfg.trials; ++trial) {
      const TrialOutcome& oc = outcomes[vi * cfg.trials + trial];
      const EvalPoint& last = oc.result.trajectory.back();
      trials_csv.begin_row();
      trials_csv.field(cell.value);
      trials_csv.field(trial);
      trials_csv.field(static_cast<unsigned long long>(oc.seeds.trial_seed));
      trials_csv.field(oc.result.converged ? 1 : 0);
      trials_csv.field(oc.result.epochs_to_converge ? *oc.result.epochs_to_converge : -1);
      trials_csv.field(last.train_loss);
      trials_csv.field(last.test_loss);
      trials_csv.field(last.test_acc);
      trials_csv.end_row();
      if (oc.result.converged) {
        ++cell.success_count;
        epoch_sum += static_cast<double>(*oc.result.epochs_to_converge);
      }
    }
    if (cell.success_count > 0) cell.mean_epochs = epoch_sum / cell.success_count;
    summary.cells.push_back(cell);
  }

  auto summary_out = detail::open_out(dir / "sweep_summary.csv");
  CsvWriter summary_csv(summary_out);
  summary_csv.write_header({"value", "mean_epochs", "success_rate"});
  for (const SweepCell& cell : summary.cells) {
    summary_csv.begin_row();
    summary_csv.field(cell.value);
    if (cell.mean_epochs) summary_csv.field(*cell.mean_epochs);
    else summary_csv.field("");
    summary_csv.field(static_cast<double>(cell.success_count) / cell.trial_count);
    summary_csv.end_row();
    log << cfg.sweep->parameter << "=" << cell.value << ": " << cell.success_count << "/"
        << cell.trial_count << " converged";
    if (cell.mean_epochs) log << ", mean epochs " << *cell.mean_epochs;
    log << "\n";
  }
  detail::write_manifest(dir, "sweep", cfg, {"sweep_summary.csv", "sweep_trials.csv"});
  return kExitOk;
}

// For each trial seed trains once gated and once ungated on identical data and
// writes the paired comparison.
inline int cmd_ablate_gating(const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.gating_key_present) throw ConfigError("gating_enabled_owned_by_ablate");
  const auto dir = detail::prepare_output_dir(cfg);
  const FeatureBasis basis = cfg.make_basis();

  std::vector<TrialOutcome> gated(cfg.trials), ungated(cfg.trials);
  parallel_tasks(2 * cfg.trials, [&](int task) {
    const int trial = task / 2;
    const bool gate = task % 2 == 0;
    (gate ? gated : ungated)[trial] = run_trial(cfg, basis, trial, gate);
  });

  auto out = detail::open_out(dir / "ablation.csv");
  CsvWriter csv(out);
  csv.write_header({"trial_seed", "final_test_loss_gated", "final_test_loss_ungated",
                    "epochs_gated", "epochs_ungated"});
  for (int trial = 0; trial < cfg.trials; ++trial) {
    const TrainResult& g = gated[trial].result;
    const TrainResult& u = ungated[trial].result;
    csv.begin_row();
    csv.field(static_cast<unsigned long long>(gated[trial].seeds.trial_seed));
    csv.field(g.trajectory.back().test_loss);
    csv.field(u.trajectory.back().test_loss);
    csv.field(g.epochs_to_converge ? *g.epochs_to_converge : -1);
    csv.field(u.epochs_to_converge ? *u.epochs_to_converge : -1);
    csv.end_row();
    log << "seed " << gated[trial].seeds.trial_seed << ": gated loss "
        << g.trajectory.back().test_loss << ", ungated loss " << u.trajectory.back().test_loss
        << "\n";
  }
  detail::write_manifest(dir, "ablate-gating", cfg, {"ablation.csv"});
  return kExitOk;
}

struct GradCheckRow {
  int instance = 0;
  std::string description;
  bool accepted = false;
  double err_WO = 0.0;
  double err_wdelta = 0.0;
};

// Compares analytic batch gradients against central finite differences over a
// grid of small instances. Exits nonzero unless every accepted instance passes
// the tolerance and at least one instance was accepted.
inline int cmd_grad_check(const ExperimentConfig& cfg, std::ostream& log) {
  if (!cfg.grad_check) throw ConfigError("grad_check_block_required");
  const GradCheckSpec& spec = *cfg.grad_check;
  const auto dir = detail::prepare_output_dir(cfg);

  struct Case {
    bool majority;
    int d, L, m;
    bool zero_gating;
    int repeat;
  };
  std::vector<Case> cases;
  for (bool majority : {true, false})
    for (int d : spec.dims)
      for (int L : spec.lengths)
        for (int m : spec.widths)
          for (bool zero_gating : {true, false})
            for (int r = 0; r < spec.instances_per_case; ++r)
              cases.push_back({majority, d, L, m, zero_gating, r});

  std::vector<GradCheckRow> rows(cases.size());
  parallel_tasks(static_cast<int>(cases.size()), [&](int idx) {
    const Case& c = cases[idx];
    GradCheckRow row;
    row.instance = idx;
    row.description = std::string(c.majority ? "majority" : "locality") + ";d=" +
                      std::to_string(c.d) + ";L=" + std::to_string(c.L) +
                      ";m=" + std::to_string(c.m) +
                      (c.zero_gating ? ";wdelta=0" : ";wdelta=rand");

    const std::uint64_t seed =
        Rng(cfg.master_seed).split(9000 + static_cast<std::uint64_t>(idx)).seed();
    const FeatureBasis basis = build_canonical_basis(c.d);
    Dataset data;
    if (c.majority) {
      MajorityVotingConfig mv;
      mv.d = c.d;
      mv.L = c.L;
      mv.alpha_r = 0.5;
      mv.alpha_c = 0.25;
      mv.tau = 0.05;
      data = gen_balanced_dataset(mv, spec.samples_per_instance, basis, Rng(seed));
    } else {
      LocalityConfig loc;
      loc.d = c.d;
      loc.L = c.L;
      loc.tau = 0.05;
      loc.delta_near = 1;
      loc.delta_far = c.L / 2 + 1;
      data = gen_balanced_dataset(loc, spec.samples_per_instance, basis, Rng(seed));
    }

    Rng prng = Rng(seed).split(1);
    ModelParams params;
    params.m = c.m;
    params.d = c.d;
    params.W_O.resize(c.m, c.d);
    for (int i = 0; i < c.m; ++i)
      for (int j = 0; j < c.d; ++j) params.W_O(i, j) = 0.3 * prng.normal();
    params.w_delta.resize(c.d);
    for (int j = 0; j < c.d; ++j)
      params.w_delta(j) = c.zero_gating ? 0.0 : 0.3 * prng.normal();
    const double mag = 1.0 / std::sqrt(static_cast<double>(c.m));
    params.v.resize(c.m);
    for (int i = 0; i < c.m; ++i) params.v(i) = prng.uniform() < 0.5 ? mag : -mag;

    const FdResult fd = fd_gradient(params, data, spec.h);
    if (!fd.accepted) {
      row.accepted = false;
      row.description += ";" + fd.reject_reason;
      rows[idx] = row;
      return;
    }
    const GradSet analytic =
        batch_grads(params, data,
                    spec.mutate_sign_flip ? GateGradVariant::sign_flipped
                                          : GateGradVariant::corrected);
    row.accepted = true;
    row.err_WO = relative_error(analytic.g_WO, fd.grads.g_WO);
    row.err_wdelta = relative_error(analytic.g_wdelta, fd.grads.g_wdelta);
    rows[idx] = row;
  });

  int accepted = 0, rejected = 0, failures = 0;
  auto out = detail::open_out(dir / "grad_check.csv");
  CsvWriter csv(out);
  csv.write_header({"instance", "case", "block", "max_rel_error", "status"});
  for (const GradCheckRow& row : rows) {
    if (!row.accepted) {
      ++rejected;
      csv.begin_row();
      csv.field(row.instance);
      csv.field(row.description);
      csv.field("-");
      csv.field("");
      csv.field("rejected");
      csv.end_row();
      continue;
    }
    ++accepted;
    for (const auto& [block, err] :
         {std::pair<const char*, double>{"W_O", row.err_WO}, {"w_delta", row.err_wdelta}}) {
      if (err >= spec.tolerance) ++failures;
      csv.begin_row();
      csv.field(row.instance);
      csv.field(row.description);
      csv.field(block);
      csv.field(err);
      csv.field("accepted");
      csv.end_row();
    }
  }
  detail::write_manifest(dir, "grad-check", cfg, {"grad_check.csv"},
                         {{"accepted", accepted},
                          {"rejected", rejected},
                          {"failures", failures}});
  log << "grad-check: " << accepted << " accepted, " << rejected
      << " rejected (kink-proximal), " << failures << " failures at tolerance "
      << spec.tolerance << "\n";
  if (accepted == 0) {
    log << "grad-check: no instance survived kink rejection; not a pass\n";
    return kExitVerificationFailure;
  }
  return failures == 0 ? kExitOk : kExitVerificationFailure;
}

}  // namespace ssmlab
