#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ssmlab/datagen.hpp"
#include "ssmlab/model.hpp"

namespace ssmlab {

struct GradSet {
  Eigen::MatrixXd g_WO;      // m x d
  Eigen::VectorXd g_wdelta;  // d

  static GradSet zero(int m, int d) {
    return {Eigen::MatrixXd::Zero(m, d), Eigen::VectorXd::Zero(d)};
  }

  bool is_finite() const { return g_WO.allFinite() && g_wdelta.allFinite(); }
};

// Variants of the gating gradient. `corrected` is the true derivative of the
// carry-over product (per-j factor sigma(g_j)); `literal` replaces it with
// (1 - sigma(g_j)); `sign_flipped` negates the cross term and exists as a
// mutation control for the finite-difference check.
enum class GateGradVariant { corrected, literal, sign_flipped };

namespace detail {

struct SampleEval {
  double F = 0.0;
  double loss = 0.0;
  bool active = false;
  GradSet grads;
};

// Fused per-sample forward/backward. Works in the token Gram representation:
// with C(s,t) = sigma_s * prod_{j=s+1..t}(1-sigma_j) * <x_s,x_t> the
// pre-activations are (W_O X) C, and both gradients reduce to small matrix
// products plus an O(L^2) pass over the backpropagated coefficient matrix.
inline SampleEval sample_eval(const ModelParams& params, const Sample& sample,
                              bool want_grads,
                              GateGradVariant variant = GateGradVariant::corrected) {
  check_shapes(params, sample.tokens);
  const Eigen::MatrixXd& X = sample.tokens;
  const int L = static_cast<int>(X.cols());
  const int m = params.m;
  const double z = static_cast<double>(sample.label);

  SampleEval ev;
  const Eigen::VectorXd gates = gate_values(params, X);
  const Eigen::MatrixXd coef = scan_coefficients(X, gates);
  const Eigen::MatrixXd Q = params.W_O * X;  // m x L
  const Eigen::MatrixXd pre = Q * coef;      // m x L

  double acc = 0.0;
  for (int t = 0; t < L; ++t)
    for (int i = 0; i < m; ++i) acc += params.v(i) * relu(pre(i, t));
  ev.F = acc / static_cast<double>(L);
  ev.loss = hinge_loss(ev.F, sample.label);
  ev.active = 1.0 - z * ev.F > 0.0;
  if (!want_grads) return ev;

  ev.grads = GradSet::zero(m, params.d);
  if (!ev.active) return ev;

  // dl/dpre(i,t) for the active hinge
  Eigen::MatrixXd R(m, L);
  for (int t = 0; t < L; ++t)
    for (int i = 0; i < m; ++i)
      R(i, t) = -(z / static_cast<double>(L)) * params.v(i) * relu_prime(pre(i, t));

  ev.grads.g_WO = (R * coef.transpose()) * X.transpose();

  // dl/dC(s,t), masked to s <= t by the zero pattern of coef
  const Eigen::MatrixXd T = (Q.transpose() * R).cwiseProduct(coef);

  // dl/dgate_logit_k = (1-sigma_k) * sum_{t>=k} T(k,t)
  //                    - sigma_k * sum_{s<k} sum_{t>=k} T(s,t)
  Eigen::MatrixXd suffix = T;  // suffix(s,k) = sum_{t>=k} T(s,t)
  for (int s = 0; s < L; ++s)
    for (int t = L - 2; t >= 0; --t) suffix(s, t) += suffix(s, t + 1);

  Eigen::VectorXd dlogit(L);
  for (int k = 0; k < L; ++k) {
    const double own = suffix(k, k);
    double cross = 0.0;
    for (int s = 0; s < k; ++s) cross += suffix(s, k);
    switch (variant) {
      case GateGradVariant::corrected:
        dlogit(k) = (1.0 - gates(k)) * own - gates(k) * cross;
        break;
      case GateGradVariant::literal:
        dlogit(k) = (1.0 - gates(k)) * own - (1.0 - gates(k)) * cross;
        break;
      case GateGradVariant::sign_flipped:
        dlogit(k) = (1.0 - gates(k)) * own + gates(k) * cross;
        break;
    }
  }
  ev.grads.g_wdelta = X * dlogit;
  return ev;
}

}  // namespace detail

// Per-sample hinge gradient w.r.t. W_O; zero when the margin is met.
inline Eigen::MatrixXd grad_W_O(const ModelParams& params, const Sample& sample) {
  return detail::sample_eval(params, sample, true).grads.g_WO;
}

// Per-sample hinge gradient w.r.t. w_delta; zero when the margin is met.
inline Eigen::VectorXd grad_w_Delta(const ModelParams& params, const Sample& sample) {
  return detail::sample_eval(params, sample, true).grads.g_wdelta;
}

struct BatchEval {
  double loss = 0.0;
  GradSet grads;
};

// Mean loss and mean per-sample gradients, accumulated in ascending sample
// order for bit-reproducible sums.
inline BatchEval batch_loss_and_grads(
    const ModelParams& params, const Dataset& dataset,
    GateGradVariant variant = GateGradVariant::corrected) {
  const int N = static_cast<int>(dataset.samples.size());
  if (N == 0) throw std::invalid_argument("batch_loss_and_grads: empty dataset");
  BatchEval out;
  out.grads = GradSet::zero(params.m, params.d);
  for (int n = 0; n < N; ++n) {
    const auto ev = detail::sample_eval(params, dataset.samples[n], true, variant);
    out.loss += ev.loss;
    out.grads.g_WO += ev.grads.g_WO;
    out.grads.g_wdelta += ev.grads.g_wdelta;
  }
  out.loss /= static_cast<double>(N);
  out.grads.g_WO /= static_cast<double>(N);
  out.grads.g_wdelta /= static_cast<double>(N);
  return out;
}

inline GradSet batch_grads(const ModelParams& params, const Dataset& dataset,
                           GateGradVariant variant = GateGradVariant::corrected) {
  return batch_loss_and_grads(params, dataset, variant).grads;
}

// --- finite-difference oracle ------------------------------------------------

struct FdResult {
  bool accepted = false;
  std::string reject_reason;  // empty when accepted
  GradSet grads;              // valid only when accepted
};

// Central differences on the batch loss over every entry of W_O and w_delta.
// The instance is rejected when the base point sits within 10*h of a hinge or
// ReLU kink, where finite differences stop meaning anything.
inline FdResult fd_gradient(const ModelParams& params, const Dataset& dataset, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("fd_gradient: h must be positive");
  FdResult res;
  for (const Sample& s : dataset.samples) {
    const Eigen::VectorXd gates = detail::gate_values(params, s.tokens);
    const Eigen::MatrixXd pre =
        (params.W_O * s.tokens) * detail::scan_coefficients(s.tokens, gates);
    double acc = 0.0;
    for (int t = 0; t < pre.cols(); ++t) {
      for (int i = 0; i < params.m; ++i) {
        if (std::abs(pre(i, t)) < 10.0 * h) {
          res.reject_reason = "relu_kink_proximal";
          return res;
        }
        acc += params.v(i) * relu(pre(i, t));
      }
    }
    const double F = acc / static_cast<double>(pre.cols());
    if (std::abs(1.0 - s.label * F) < 10.0 * h) {
      res.reject_reason = "hinge_kink_proximal";
      return res;
    }
  }

  ModelParams probe = params;
  auto central = [&](double& slot) {
    const double saved = slot;
    slot = saved + h;
    const double up = batch_loss(probe, dataset);
    slot = saved - h;
    const double down = batch_loss(probe, dataset);
    slot = saved;
    return (up - down) / (2.0 * h);
  };

  res.grads = GradSet::zero(params.m, params.d);
  for (int i = 0; i < params.m; ++i)
    for (int j = 0; j < params.d; ++j) res.grads.g_WO(i, j) = central(probe.W_O(i, j));
  for (int j = 0; j < params.d; ++j) res.grads.g_wdelta(j) = central(probe.w_delta(j));
  res.accepted = true;
  return res;
}

// Max-abs deviation relative to the max-abs reference entry.
inline double relative_error(const Eigen::Ref<const Eigen::MatrixXd>& got,
                             const Eigen::Ref<const Eigen::MatrixXd>& want) {
  const double scale = std::max(want.cwiseAbs().maxCoeff(), 1e-12);
  return (got - want).cwiseAbs().maxCoeff() / scale;
}

// --- gating-gradient decomposition -------------------------------------------

// One (neuron, output position, source position) summand of the gating
// gradient: I = beta_ss * x_s - sum_j beta_sj * x_j for j = s+1..l.
struct GateGradTerm {
  int neuron = 0;
  int l = 0;  // output position
  int s = 0;  // source position
  double beta_ss = 0.0;
  std::vector<double> beta_sj;          // derived carry-over coefficients
  std::vector<double> beta_sj_literal;  // (1 - sigma(g_j)) in place of sigma(g_j)
  Eigen::VectorXd contribution;         // I_{l,s}, assembled with beta_sj
};

struct GateGradDecomposition {
  std::vector<GateGradTerm> terms;
  Eigen::VectorXd assembled;          // equals grad_w_Delta
  Eigen::VectorXd assembled_literal;  // side-by-side diagnostic
};

// Materializes every beta and I term of the gating gradient for one sample.
// O(m L^3 d) — a diagnostic and test oracle, not a training path.
inline GateGradDecomposition gate_grad_decompose(const ModelParams& params,
                                                 const Sample& sample) {
  detail::check_shapes(params, sample.tokens);
  const Eigen::MatrixXd& X = sample.tokens;
  const int L = static_cast<int>(X.cols());
  const int m = params.m;
  const double z = static_cast<double>(sample.label);

  const Eigen::VectorXd gates = detail::gate_values(params, X);
  const Eigen::MatrixXd gram = X.transpose() * X;
  const Eigen::MatrixXd Q = params.W_O * X;  // W_O(i,.) x_s
  const Eigen::MatrixXd pre = Q * detail::scan_coefficients(X, gates);

  double acc = 0.0;
  for (int t = 0; t < L; ++t)
    for (int i = 0; i < m; ++i) acc += params.v(i) * relu(pre(i, t));
  const double F = acc / static_cast<double>(L);
  const bool active = 1.0 - z * F > 0.0;

  GateGradDecomposition out;
  out.assembled = Eigen::VectorXd::Zero(params.d);
  out.assembled_literal = Eigen::VectorXd::Zero(params.d);
  out.terms.reserve(static_cast<std::size_t>(m) * L * (L + 1) / 2);

  for (int i = 0; i < m; ++i) {
    for (int l = 0; l < L; ++l) {
      const double outer = active ? -(z / static_cast<double>(L)) * params.v(i) *
                                        relu_prime(pre(i, l))
                                  : 0.0;
      for (int s = l; s >= 0; --s) {
        double carry = 1.0;
        for (int r = s + 1; r <= l; ++r) carry *= 1.0 - gates(r);
        const double amp = gram(s, l) * Q(i, s) * gates(s) * carry;

        GateGradTerm term;
        term.neuron = i;
        term.l = l;
        term.s = s;
        term.beta_ss = amp * (1.0 - gates(s));
        term.contribution = term.beta_ss * X.col(s);
        Eigen::VectorXd literal = term.contribution;
        for (int j = s + 1; j <= l; ++j) {
          term.beta_sj.push_back(amp * gates(j));
          term.beta_sj_literal.push_back(amp * (1.0 - gates(j)));
          term.contribution -= term.beta_sj.back() * X.col(j);
          literal -= term.beta_sj_literal.back() * X.col(j);
        }
        out.assembled += outer * term.contribution;
        out.assembled_literal += outer * literal;
        out.terms.push_back(std::move(term));
      }
    }
  }
  return out;
}

}  // namespace ssmlab
