#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>

#include "ssmlab/rng.hpp"

namespace ssmlab {

enum class FeatureRole { class_positive, class_negative, irrelevant };

// Orthonormal feature dictionary. Column k of `vectors` is feature k; index 0
// is the class-positive direction, index 1 the class-negative one, 2..d-1 are
// irrelevant fillers.
struct FeatureBasis {
  int dim = 0;
  Eigen::MatrixXd vectors;  // d x d, one feature per column

  static FeatureRole role(int index) {
    if (index == 0) return FeatureRole::class_positive;
    if (index == 1) return FeatureRole::class_negative;
    return FeatureRole::irrelevant;
  }

  Eigen::VectorXd positive() const { return vectors.col(0); }
  Eigen::VectorXd negative() const { return vectors.col(1); }

  // Largest deviation of the Gram matrix from identity.
  double orthonormality_defect() const {
    const Eigen::MatrixXd gram = vectors.transpose() * vectors;
    return (gram - Eigen::MatrixXd::Identity(dim, dim)).cwiseAbs().maxCoeff();
  }
};

inline constexpr double kBasisTol = 1e-10;

inline FeatureBasis build_canonical_basis(int d) {
  if (d < 3)
    throw std::invalid_argument(
        "feature dimension must be at least 3 (positive, negative, and one "
        "irrelevant direction)");
  return FeatureBasis{d, Eigen::MatrixXd::Identity(d, d)};
}

// Orthonormalization of a seeded Gaussian matrix via modified Gram-Schmidt
// with one re-orthogonalization pass. A degenerate draw (near-zero pivot) is
// resampled with an incremented sub-seed, at most 8 retries.
inline FeatureBasis build_rotated_basis(int d, std::uint64_t seed) {
  if (d < 3)
    throw std::invalid_argument(
        "feature dimension must be at least 3 (positive, negative, and one "
        "irrelevant direction)");
  const Rng base(seed);
  for (int attempt = 0; attempt <= 8; ++attempt) {
    Rng rng = base.split(static_cast<std::uint64_t>(attempt));
    Eigen::MatrixXd a(d, d);
    for (int j = 0; j < d; ++j)
      for (int i = 0; i < d; ++i) a(i, j) = rng.normal();

    Eigen::MatrixXd q(d, d);
    bool degenerate = false;
    for (int j = 0; j < d && !degenerate; ++j) {
      Eigen::VectorXd v = a.col(j);
      for (int pass = 0; pass < 2; ++pass)
        for (int k = 0; k < j; ++k) v -= q.col(k).dot(v) * q.col(k);
      const double norm = v.norm();
      if (norm < 1e-8) {
        degenerate = true;
        break;
      }
      q.col(j) = v / norm;
    }
    if (degenerate) continue;

    FeatureBasis basis{d, std::move(q)};
    if (basis.orthonormality_defect() <= kBasisTol) return basis;
  }
  throw std::runtime_error("rotated basis: Gram-Schmidt failed after 8 retries");
}

// Noisy realization of feature `feature_index`: the basis vector plus i.i.d.
// Gaussian noise of standard deviation tau per coordinate. The noise draws are
// consumed even when tau is 0 so that streams line up across tau sweeps.
inline Eigen::VectorXd noisy_token(const FeatureBasis& basis, int feature_index,
                                   double tau, Rng& rng) {
  if (feature_index < 0 || feature_index >= basis.dim)
    throw std::out_of_range("noisy_token: feature index out of range");
  if (tau < 0) throw std::invalid_argument("noisy_token: tau must be >= 0");
  Eigen::VectorXd x = basis.vectors.col(feature_index);
  for (int i = 0; i < basis.dim; ++i) x(i) += tau * rng.normal();
  return x;
}

}  // namespace ssmlab
