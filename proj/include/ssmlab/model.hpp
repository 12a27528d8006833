#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssmlab/datagen.hpp"

namespace ssmlab {

// Parameter set of the selective-SSM classifier. The state projections are
// frozen at identity, so only the output weights W_O and the gating vector
// w_delta are stored; v is fixed after initialization.
struct ModelParams {
  int m = 0;  // hidden width
  int d = 0;  // token dimension
  Eigen::VectorXd v;        // m, entries +-1/sqrt(m), frozen
  Eigen::MatrixXd W_O;      // m x d, trainable
  Eigen::VectorXd w_delta;  // d, trainable

  void validate() const {
    if (m < 1 || d < 1) throw std::invalid_argument("params: m and d must be positive");
    if (v.size() != m || W_O.rows() != m || W_O.cols() != d || w_delta.size() != d)
      throw std::invalid_argument("params: shape mismatch");
    const double mag = 1.0 / std::sqrt(static_cast<double>(m));
    for (int i = 0; i < m; ++i)
      if (std::abs(std::abs(v(i)) - mag) > 1e-12 * mag)
        throw std::invalid_argument("params: |v_i| must equal 1/sqrt(m)");
  }
};

struct MambaOutputs {
  Eigen::MatrixXd Y;      // d x L, column l is the block output at position l
  Eigen::VectorXd gates;  // L, sigma(w_delta^T x_l)
};

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

// Subgradient convention: phi'(0) = 0.
inline double relu_prime(double x) { return x > 0.0 ? 1.0 : 0.0; }

namespace detail {

inline void check_shapes(const ModelParams& params, const Eigen::MatrixXd& X) {
  if (X.rows() != params.d) throw std::invalid_argument("token dimension mismatch");
  if (params.W_O.rows() != params.m || params.W_O.cols() != params.d ||
      params.v.size() != params.m || params.w_delta.size() != params.d)
    throw std::invalid_argument("params: shape mismatch");
}

inline Eigen::VectorXd gate_values(const ModelParams& params, const Eigen::MatrixXd& X) {
  const Eigen::VectorXd logits = X.transpose() * params.w_delta;
  Eigen::VectorXd g(logits.size());
  for (int t = 0; t < logits.size(); ++t) g(t) = sigmoid(logits(t));
  return g;
}

// Scan coefficients C(s,t) = sigma_s * prod_{j=s+1..t}(1-sigma_j) * <x_s, x_t>
// for s <= t (zero below the diagonal). The block output is Y = X * C and the
// hidden pre-activations are (W_O X) * C.
inline Eigen::MatrixXd scan_coefficients(const Eigen::MatrixXd& X,
                                         const Eigen::VectorXd& gates) {
  const int L = static_cast<int>(X.cols());
  const Eigen::MatrixXd gram = X.transpose() * X;
  Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(L, L);
  for (int t = 0; t < L; ++t) {
    double carry = 1.0;
    for (int s = t; s >= 0; --s) {
      coef(s, t) = gates(s) * carry * gram(s, t);
      carry *= 1.0 - gates(s);
    }
  }
  return coef;
}

}  // namespace detail

// Evaluates the gated recurrence H_t = (1-sigma_t) H_{t-1} + sigma_t x_t x_t^T
// with H_0 = 0 and y_t = H_t^T x_t.
inline MambaOutputs mamba_outputs_recurrent(const ModelParams& params,
                                            const Eigen::MatrixXd& X) {
  detail::check_shapes(params, X);
  const int L = static_cast<int>(X.cols());
  MambaOutputs out;
  out.gates = detail::gate_values(params, X);
  out.Y.resize(params.d, L);
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(params.d, params.d);
  for (int t = 0; t < L; ++t) {
    const double g = out.gates(t);
    H = (1.0 - g) * H + g * (X.col(t) * X.col(t).transpose());
    out.Y.col(t) = H.transpose() * X.col(t);
  }
  return out;
}

// Closed-form double sum: y_t = sum_{s<=t} prod_{j=s+1..t}(1-sigma_j) *
// sigma_s * <x_s, x_t> * x_s.
inline MambaOutputs mamba_outputs_unrolled(const ModelParams& params,
                                           const Eigen::MatrixXd& X) {
  detail::check_shapes(params, X);
  const int L = static_cast<int>(X.cols());
  MambaOutputs out;
  out.gates = detail::gate_values(params, X);
  out.Y = X * detail::scan_coefficients(X, out.gates);
  return out;
}

// Classifier output F(X) = (1/L) sum_l sum_i v_i relu(W_O(i,.) y_l).
inline double forward(const ModelParams& params, const Eigen::MatrixXd& X) {
  detail::check_shapes(params, X);
  const int L = static_cast<int>(X.cols());
  const Eigen::VectorXd gates = detail::gate_values(params, X);
  const Eigen::MatrixXd pre =
      (params.W_O * X) * detail::scan_coefficients(X, gates);  // m x L
  double acc = 0.0;
  for (int t = 0; t < L; ++t)
    for (int i = 0; i < params.m; ++i) acc += params.v(i) * relu(pre(i, t));
  return acc / static_cast<double>(L);
}

inline double hinge_loss(double F, int label) {
  if (label != 1 && label != -1) throw std::invalid_argument("label must be +1 or -1");
  const double margin = 1.0 - static_cast<double>(label) * F;
  return margin > 0.0 ? margin : 0.0;
}

inline double batch_loss(const ModelParams& params, const Dataset& dataset) {
  double acc = 0.0;
  for (const Sample& s : dataset.samples) acc += hinge_loss(forward(params, s.tokens), s.label);
  return acc / static_cast<double>(dataset.samples.size());
}

// --- JSON serialization (W_B/W_C omitted, identity implied) -----------------

inline nlohmann::json params_to_json(const ModelParams& params) {
  std::vector<double> wo;
  wo.reserve(static_cast<std::size_t>(params.m) * params.d);
  for (int i = 0; i < params.m; ++i)
    for (int j = 0; j < params.d; ++j) wo.push_back(params.W_O(i, j));
  return {{"m", params.m},
          {"d", params.d},
          {"v", std::vector<double>(params.v.data(), params.v.data() + params.m)},
          {"W_O", std::move(wo)},
          {"w_delta", std::vector<double>(params.w_delta.data(),
                                          params.w_delta.data() + params.d)}};
}

inline ModelParams params_from_json(const nlohmann::json& j) {
  ModelParams p;
  p.m = j.at("m").get<int>();
  p.d = j.at("d").get<int>();
  const auto v = j.at("v").get<std::vector<double>>();
  const auto wo = j.at("W_O").get<std::vector<double>>();
  const auto wd = j.at("w_delta").get<std::vector<double>>();
  if (static_cast<int>(v.size()) != p.m || static_cast<int>(wd.size()) != p.d ||
      static_cast<int>(wo.size()) != p.m * p.d)
    throw std::invalid_argument("params json: shape mismatch");
  p.v = Eigen::Map<const Eigen::VectorXd>(v.data(), p.m);
  p.w_delta = Eigen::Map<const Eigen::VectorXd>(wd.data(), p.d);
  p.W_O.resize(p.m, p.d);
  for (int i = 0; i < p.m; ++i)
    for (int j2 = 0; j2 < p.d; ++j2) p.W_O(i, j2) = wo[static_cast<std::size_t>(i) * p.d + j2];
  p.validate();
  return p;
}

}  // namespace ssmlab
