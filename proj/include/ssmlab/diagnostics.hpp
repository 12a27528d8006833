#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <ostream>
#include <vector>

#include "ssmlab/csv.hpp"
#include "ssmlab/featurespace.hpp"
#include "ssmlab/model.hpp"

namespace ssmlab {

// Inner products and cosines of the gating vector against every basis
// direction, with the aggregates used in the trace files. The cosine of a
// (near-)zero gating vector is defined as 0 so iteration-0 rows stay plottable.
struct GateAlignment {
  Eigen::VectorXd inner;  // per feature index
  Eigen::VectorXd cosine;
  double inner_plus = 0.0, inner_minus = 0.0;
  double inner_irr_mean = 0.0, inner_irr_maxabs = 0.0;
  double cos_plus = 0.0, cos_minus = 0.0;
  double cos_irr_mean = 0.0, cos_irr_maxabs = 0.0;
};

inline GateAlignment gating_alignment(const ModelParams& params, const FeatureBasis& basis) {
  if (params.d != basis.dim) throw std::invalid_argument("basis dimension mismatch");
  GateAlignment a;
  a.inner = basis.vectors.transpose() * params.w_delta;
  const double norm = params.w_delta.norm();
  a.cosine = norm < 1e-12 ? Eigen::VectorXd::Zero(basis.dim).eval()
                          : (a.inner / norm).eval();
  a.inner_plus = a.inner(0);
  a.inner_minus = a.inner(1);
  a.cos_plus = a.cosine(0);
  a.cos_minus = a.cosine(1);
  const int irr = basis.dim - 2;
  a.inner_irr_mean = a.inner.tail(irr).mean();
  a.inner_irr_maxabs = a.inner.tail(irr).cwiseAbs().maxCoeff();
  a.cos_irr_mean = a.cosine.tail(irr).mean();
  a.cos_irr_maxabs = a.cosine.tail(irr).cwiseAbs().maxCoeff();
  return a;
}

// Lucky neurons: positive-output neurons already aligned with o_+ (W_set) and
// negative-output neurons aligned with o_- (U_set); strict inequalities.
struct LuckySets {
  std::vector<int> W_set;
  std::vector<int> U_set;
};

inline LuckySets lucky_sets(const ModelParams& params, const FeatureBasis& basis) {
  if (params.d != basis.dim) throw std::invalid_argument("basis dimension mismatch");
  LuckySets sets;
  const Eigen::VectorXd proj_plus = params.W_O * basis.positive();
  const Eigen::VectorXd proj_minus = params.W_O * basis.negative();
  for (int i = 0; i < params.m; ++i) {
    if (params.v(i) > 0.0 && proj_plus(i) > 0.0) sets.W_set.push_back(i);
    if (params.v(i) < 0.0 && proj_minus(i) > 0.0) sets.U_set.push_back(i);
  }
  return sets;
}

// Per-neuron projections onto o_+, o_- and one tracked irrelevant direction,
// plus subset means taken over the lucky sets frozen at iteration 0.
struct NeuronAlignment {
  Eigen::MatrixXd inner;  // m x 3: columns (o_+, o_-, tracked irrelevant)
  int tracked_irr_index = 2;
  double lucky_mean_plus = 0.0, unlucky_mean_plus = 0.0;
  double lucky_mean_minus = 0.0, unlucky_mean_minus = 0.0;
  double tracked_irr_mean = 0.0;  // over all neurons
};

inline NeuronAlignment neuron_alignment(const ModelParams& params, const FeatureBasis& basis,
                                        const LuckySets& frozen) {
  if (params.d != basis.dim) throw std::invalid_argument("basis dimension mismatch");
  NeuronAlignment a;
  a.inner.resize(params.m, 3);
  a.inner.col(0) = params.W_O * basis.positive();
  a.inner.col(1) = params.W_O * basis.negative();
  a.inner.col(2) = params.W_O * basis.vectors.col(a.tracked_irr_index);

  auto subset_mean = [&](const Eigen::VectorXd& values, auto keep) {
    double sum = 0.0;
    int count = 0;
    for (int i = 0; i < params.m; ++i)
      if (keep(i)) {
        sum += values(i);
        ++count;
      }
    return count > 0 ? sum / count : 0.0;
  };
  auto in = [](const std::vector<int>& set, int i) {
    return std::binary_search(set.begin(), set.end(), i);
  };

  a.lucky_mean_plus = subset_mean(a.inner.col(0), [&](int i) { return in(frozen.W_set, i); });
  a.unlucky_mean_plus = subset_mean(
      a.inner.col(0), [&](int i) { return params.v(i) > 0.0 && !in(frozen.W_set, i); });
  a.lucky_mean_minus = subset_mean(a.inner.col(1), [&](int i) { return in(frozen.U_set, i); });
  a.unlucky_mean_minus = subset_mean(
      a.inner.col(1), [&](int i) { return params.v(i) < 0.0 && !in(frozen.U_set, i); });
  a.tracked_irr_mean = a.inner.col(2).mean();
  return a;
}

struct AlignmentSnapshot {
  int iter = 0;
  GateAlignment gate;
  NeuronAlignment neuron;
  LuckySets lucky_now;  // membership at this iteration, for stability checks
};

inline AlignmentSnapshot make_snapshot(int iter, const ModelParams& params,
                                       const FeatureBasis& basis, const LuckySets& frozen) {
  return {iter, gating_alignment(params, basis), neuron_alignment(params, basis, frozen),
          lucky_sets(params, basis)};
}

inline const std::vector<std::string>& alignment_csv_header() {
  static const std::vector<std::string> header = {
      "iter",           "gate_inner_plus",     "gate_inner_minus", "gate_inner_irr_mean",
      "gate_inner_irr_maxabs", "gate_cos_plus", "gate_cos_minus",  "gate_cos_irr_mean",
      "lucky_mean_plus", "unlucky_mean_plus",  "lucky_mean_minus", "tracked_irr_mean"};
  return header;
}

inline void export_traces(const std::vector<AlignmentSnapshot>& snapshots, std::ostream& out) {
  CsvWriter csv(out);
  csv.write_header(alignment_csv_header());
  for (const AlignmentSnapshot& s : snapshots) {
    csv.begin_row();
    csv.field(s.iter);
    csv.field(s.gate.inner_plus);
    csv.field(s.gate.inner_minus);
    csv.field(s.gate.inner_irr_mean);
    csv.field(s.gate.inner_irr_maxabs);
    csv.field(s.gate.cos_plus);
    csv.field(s.gate.cos_minus);
    csv.field(s.gate.cos_irr_mean);
    csv.field(s.neuron.lucky_mean_plus);
    csv.field(s.neuron.unlucky_mean_plus);
    csv.field(s.neuron.lucky_mean_minus);
    csv.field(s.neuron.tracked_irr_mean);
    csv.end_row();
  }
}

}  // namespace ssmlab
