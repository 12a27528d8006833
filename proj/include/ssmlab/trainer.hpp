#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "ssmlab/diagnostics.hpp"
#include "ssmlab/errors.hpp"
#include "ssmlab/gradients.hpp"
#include "ssmlab/model.hpp"
#include "ssmlab/rng.hpp"

namespace ssmlab {

struct TrainConfig {
  int m = 50;                // hidden width
  double eta = 0.5;          // learning rate
  int T_max = 2000;          // iteration cap
  double c0 = 0.02;          // init std of W_O entries
  double stop_tol = 1e-3;    // early-stop threshold on test loss
  int eval_every = 5;
  bool gating_enabled = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (m < 1) throw ConfigError("width_at_least_one");
    if (!(eta > 0.0)) throw ConfigError("eta_positive");
    if (T_max < 1) throw ConfigError("t_max_at_least_one");
    if (c0 < 0.0) throw ConfigError("c0_nonnegative");
    if (!(stop_tol > 0.0)) throw ConfigError("stop_tol_positive");
    if (eval_every < 1) throw ConfigError("eval_every_at_least_one");
  }
};

struct EvalPoint {
  int iter = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;
};

struct TrainResult {
  ModelParams params;
  bool converged = false;
  std::optional<int> epochs_to_converge;
  std::vector<EvalPoint> trajectory;
  std::vector<AlignmentSnapshot> alignment;
  LuckySets lucky_at_init;
};

// W_O entries i.i.d. N(0, c0^2), w_delta = 0, v entries +-1/sqrt(m) with equal
// probability; W_B = W_C stay identity (implied). Deterministic in seed.
inline ModelParams init_params(int m, int d, double c0, std::uint64_t seed) {
  if (m < 1 || d < 3) throw std::invalid_argument("init_params: need m >= 1, d >= 3");
  if (c0 < 0.0) throw std::invalid_argument("init_params: c0 must be >= 0");
  ModelParams p;
  p.m = m;
  p.d = d;
  const Rng root(seed);
  Rng wo_rng = root.split(0);
  p.W_O.resize(m, d);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) p.W_O(i, j) = c0 * wo_rng.normal();
  Rng v_rng = root.split(1);
  const double mag = 1.0 / std::sqrt(static_cast<double>(m));
  p.v.resize(m);
  for (int i = 0; i < m; ++i) p.v(i) = v_rng.uniform() < 0.5 ? mag : -mag;
  p.w_delta = Eigen::VectorXd::Zero(d);
  return p;
}

struct StepOutcome {
  ModelParams params;
  double pre_step_train_loss = 0.0;
};

inline StepOutcome gd_step_with_loss(const ModelParams& params, const Dataset& dataset,
                                     double eta, bool gating_enabled) {
  BatchEval ev = batch_loss_and_grads(params, dataset);
  if (!ev.grads.is_finite())
    throw TrainingDiverged("non-finite gradients in full-batch step");
  StepOutcome out{params, ev.loss};
  out.params.W_O -= eta * ev.grads.g_WO;
  if (gating_enabled) out.params.w_delta -= eta * ev.grads.g_wdelta;
  return out;
}

// One full-batch GD step; v (and the identity projections) are never touched,
// and w_delta is untouched when gating is disabled.
inline ModelParams gd_step(const ModelParams& params, const Dataset& dataset, double eta,
                           bool gating_enabled) {
  return gd_step_with_loss(params, dataset, eta, gating_enabled).params;
}

// Mean hinge loss and sign accuracy; F = 0 counts as a misclassification for
// either label.
inline std::pair<double, double> evaluate(const ModelParams& params, const Dataset& dataset) {
  double loss = 0.0;
  int correct = 0;
  for (const Sample& s : dataset.samples) {
    const double F = forward(params, s.tokens);
    loss += hinge_loss(F, s.label);
    if ((s.label > 0 && F > 0.0) || (s.label < 0 && F < 0.0)) ++correct;
  }
  const double N = static_cast<double>(dataset.samples.size());
  return {loss / N, static_cast<double>(correct) / N};
}

inline constexpr double kDivergenceBound = 1e6;

// Full-batch GD with early stopping on the held-out loss. Evaluations (and
// alignment snapshots) happen at iteration 0, every eval_every iterations,
// and at the final iteration.
inline TrainResult train(const TrainConfig& cfg, const Dataset& train_set,
                         const Dataset& test_set, const FeatureBasis& basis) {
  cfg.validate();
  TrainResult result;
  result.params = init_params(cfg.m, basis.dim, cfg.c0, cfg.seed);
  result.lucky_at_init = lucky_sets(result.params, basis);

  auto record = [&](int iter) {
    const auto [train_loss, train_acc] = evaluate(result.params, train_set);
    (void)train_acc;
    const auto [test_loss, test_acc] = evaluate(result.params, test_set);
    result.trajectory.push_back({iter, train_loss, test_loss, test_acc});
    result.alignment.push_back(make_snapshot(iter, result.params, basis, result.lucky_at_init));
    return test_loss;
  };

  if (record(0) < cfg.stop_tol) {
    result.converged = true;
    result.epochs_to_converge = 0;
    return result;
  }

  for (int t = 1; t <= cfg.T_max; ++t) {
    StepOutcome step = gd_step_with_loss(result.params, train_set, cfg.eta, cfg.gating_enabled);
    if (!std::isfinite(step.pre_step_train_loss) || step.pre_step_train_loss > kDivergenceBound)
      throw TrainingDiverged("train loss exceeded divergence bound");
    result.params = std::move(step.params);
    if (t % cfg.eval_every == 0 || t == cfg.T_max) {
      if (record(t) < cfg.stop_tol) {
        result.converged = true;
        result.epochs_to_converge = t;
        break;
      }
    }
  }
  return result;
}

}  // namespace ssmlab
