#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "ssmlab/diagnostics.hpp"
#include "ssmlab/trainer.hpp"

using namespace ssmlab;

TEST_CASE("zero gating vector has zero inner products and cosines") {
  const FeatureBasis basis = build_canonical_basis(8);
  const ModelParams p = init_params(4, 8, 0.1, 1);
  const GateAlignment a = gating_alignment(p, basis);
  CHECK(a.inner.cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.cosine.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gating vector along o_+ aligns exactly") {
  const FeatureBasis basis = build_canonical_basis(8);
  ModelParams p = init_params(4, 8, 0.1, 2);
  p.w_delta = 2.0 * basis.positive();
  const GateAlignment a = gating_alignment(p, basis);
  CHECK(a.inner_plus == 2.0);
  CHECK(a.cos_plus == 1.0);
  CHECK(a.inner_minus == 0.0);
  CHECK(a.inner_irr_maxabs == 0.0);
  CHECK(a.cos_irr_maxabs == 0.0);
  for (int k = 0; k < 8; ++k) {
    CHECK(a.cosine(k) >= -1.0);
    CHECK(a.cosine(k) <= 1.0);
  }
}

TEST_CASE("neuron alignment trivials") {
  const FeatureBasis basis = build_canonical_basis(8);
  ModelParams p = init_params(4, 8, 0.0, 3);
  const LuckySets frozen = lucky_sets(p, basis);
  CHECK(frozen.W_set.empty());  // strict inequality at W_O = 0
  CHECK(frozen.U_set.empty());
  const NeuronAlignment a = neuron_alignment(p, basis, frozen);
  CHECK(a.inner.cwiseAbs().maxCoeff() == 0.0);

  ModelParams q = p;
  q.W_O.row(1) = basis.positive().transpose();
  const NeuronAlignment b = neuron_alignment(q, basis, frozen);
  CHECK(b.inner(1, 0) == 1.0);
  CHECK(b.inner(1, 1) == 0.0);
}

TEST_CASE("lucky set membership follows the sign conditions") {
  const FeatureBasis basis = build_canonical_basis(8);
  ModelParams p = init_params(4, 8, 0.1, 4);
  p.W_O.row(0) = basis.positive().transpose();
  p.v(0) = std::abs(p.v(0));
  const LuckySets sets = lucky_sets(p, basis);
  CHECK(std::find(sets.W_set.begin(), sets.W_set.end(), 0) != sets.W_set.end());
  for (int i : sets.W_set) CHECK(p.v(i) > 0.0);
  for (int i : sets.U_set) CHECK(p.v(i) < 0.0);
}

TEST_CASE("expected lucky-set size at random init is about m/4") {
  const FeatureBasis basis = build_canonical_basis(8);
  const int m = 50;
  double total = 0.0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t)
    total += static_cast<double>(lucky_sets(init_params(m, 8, 0.02, 500 + t), basis).W_set.size());
  const double mean = total / trials;
  // |W| ~ Binomial(m, 1/4): sd = sqrt(m * 3/16), se = sd / sqrt(trials)
  const double se = std::sqrt(m * 3.0 / 16.0) / std::sqrt(static_cast<double>(trials));
  CHECK(std::abs(mean - m / 4.0) < 3.0 * se);
}

TEST_CASE("export_traces writes the pinned column order and round-trips") {
  std::ostringstream empty;
  export_traces({}, empty);
  CHECK(empty.str() ==
        "iter,gate_inner_plus,gate_inner_minus,gate_inner_irr_mean,gate_inner_irr_maxabs,"
        "gate_cos_plus,gate_cos_minus,gate_cos_irr_mean,lucky_mean_plus,unlucky_mean_plus,"
        "lucky_mean_minus,tracked_irr_mean\n");

  const FeatureBasis basis = build_canonical_basis(8);
  ModelParams p = init_params(5, 8, 0.07, 6);
  p.w_delta = 0.3 * basis.positive() - 0.125 * basis.vectors.col(3);
  const LuckySets frozen = lucky_sets(p, basis);
  const AlignmentSnapshot s0 = make_snapshot(0, p, basis, frozen);
  p.w_delta *= 1.75;
  const AlignmentSnapshot s1 = make_snapshot(5, p, basis, frozen);

  std::ostringstream out;
  export_traces({s0, s1}, out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);  // header
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::istringstream fields(line);
    std::string field;
    std::getline(fields, field, ',');
    CHECK(std::stoi(field) == (rows == 1 ? 0 : 5));
    std::getline(fields, field, ',');
    const double parsed = std::stod(field);
    CHECK(parsed == (rows == 1 ? s0.gate.inner_plus : s1.gate.inner_plus));
  }
  CHECK(rows == 2);
}

TEST_CASE("iteration-0 snapshots report zero gating alignment") {
  const FeatureBasis basis = build_canonical_basis(16);
  MajorityVotingConfig cfg;
  cfg.d = 16;
  cfg.L = 20;
  cfg.alpha_r = 0.3;
  cfg.alpha_c = 0.1;
  const Dataset train_set = gen_balanced_dataset(cfg, 16, basis, Rng(7));
  const Dataset test_set = gen_balanced_dataset(cfg, 16, basis, Rng(8));
  TrainConfig tc;
  tc.m = 6;
  tc.T_max = 10;
  tc.seed = 9;
  const TrainResult result = train(tc, train_set, test_set, basis);
  REQUIRE_FALSE(result.alignment.empty());
  CHECK(result.alignment.front().iter == 0);
  CHECK(result.alignment.front().gate.inner.cwiseAbs().maxCoeff() == 0.0);
  CHECK(result.alignment.front().gate.cosine.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gating alignment traces exchange under role swap with flipped labels") {
  const int d = 8, L = 12;
  const FeatureBasis basis = build_canonical_basis(d);
  MajorityVotingConfig cfg;
  cfg.d = d;
  cfg.L = L;
  cfg.alpha_r = 0.3;
  cfg.alpha_c = 0.1;
  cfg.tau = 0.01;
  const Dataset train_a = gen_balanced_dataset(cfg, 40, basis, Rng(31));

  // mirror image: swap coordinates 0 and 1 in every token, flip labels
  auto swap_dataset = [&](const Dataset& src) {
    Dataset out = src;
    for (Sample& s : out.samples) {
      s.tokens.row(0).swap(s.tokens.row(1));
      s.label = -s.label;
      for (int& r : s.roles)
        if (r < 2) r = 1 - r;
    }
    return out;
  };
  const Dataset train_b = swap_dataset(train_a);

  const int m = 10, T = 60, every = 5;
  const double eta = 0.4, c0 = 0.02;

  auto run_trace = [&](const Dataset& train_set, ModelParams params) {
    const LuckySets frozen = lucky_sets(params, basis);
    std::vector<AlignmentSnapshot> trace;
    trace.push_back(make_snapshot(0, params, basis, frozen));
    for (int t = 1; t <= T; ++t) {
      params = gd_step(params, train_set, eta, true);
      if (t % every == 0) trace.push_back(make_snapshot(t, params, basis, frozen));
    }
    return trace;
  };

  const ModelParams init_a = init_params(m, d, c0, 33);
  // the mirrored run starts from the mirrored initialization: columns 0 and 1
  // of W_O swapped, output signs flipped
  ModelParams init_b = init_a;
  init_b.W_O.col(0).swap(init_b.W_O.col(1));
  init_b.v = -init_b.v;

  const auto align_a = run_trace(train_a, init_a);
  const auto align_b = run_trace(train_b, init_b);

  REQUIRE(align_a.size() == align_b.size());
  bool moved = false;
  for (std::size_t k = 0; k < align_a.size(); ++k) {
    CHECK(std::abs(align_a[k].gate.inner_plus - align_b[k].gate.inner_minus) < 1e-6);
    CHECK(std::abs(align_a[k].gate.inner_minus - align_b[k].gate.inner_plus) < 1e-6);
    CHECK(std::abs(align_a[k].gate.cos_plus - align_b[k].gate.cos_minus) < 1e-6);
    moved |= std::abs(align_a[k].gate.inner_plus) > 1e-8;
  }
  CHECK(moved);  // the check is vacuous if the gate never trains
}
