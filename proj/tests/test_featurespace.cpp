#include <catch2/catch_amalgamated.hpp>

#include "ssmlab/featurespace.hpp"

using namespace ssmlab;

TEST_CASE("canonical basis is the coordinate basis with role tags") {
  const FeatureBasis b = build_canonical_basis(3);
  REQUIRE(b.dim == 3);
  CHECK((b.vectors.array() == Eigen::MatrixXd::Identity(3, 3).array()).all());
  CHECK(FeatureBasis::role(0) == FeatureRole::class_positive);
  CHECK(FeatureBasis::role(1) == FeatureRole::class_negative);
  CHECK(FeatureBasis::role(2) == FeatureRole::irrelevant);
}

TEST_CASE("canonical basis at d=32 has 32 unit coordinate vectors") {
  const FeatureBasis b = build_canonical_basis(32);
  REQUIRE(b.dim == 32);
  for (int j = 0; j < 32; ++j) CHECK(b.vectors.col(j).norm() == 1.0);
  CHECK(b.orthonormality_defect() == 0.0);
}

TEST_CASE("dimension below 3 is rejected") {
  CHECK_THROWS_AS(build_canonical_basis(2), std::invalid_argument);
  CHECK_THROWS_AS(build_rotated_basis(2, 1), std::invalid_argument);
}

TEST_CASE("rotated basis is deterministic in the seed") {
  const FeatureBasis a = build_rotated_basis(8, 1);
  const FeatureBasis b = build_rotated_basis(8, 1);
  CHECK((a.vectors.array() == b.vectors.array()).all());
}

TEST_CASE("rotated basis Gram matrix is identity within 1e-10") {
  for (std::uint64_t seed : {1u, 2u, 17u}) {
    const FeatureBasis b = build_rotated_basis(8, seed);
    CHECK(b.orthonormality_defect() <= 1e-10);
  }
  CHECK(build_rotated_basis(32, 5).orthonormality_defect() <= 1e-10);
}

TEST_CASE("different seeds give different bases") {
  const FeatureBasis a = build_rotated_basis(8, 1);
  const FeatureBasis b = build_rotated_basis(8, 2);
  CHECK((a.vectors.col(0) - b.vectors.col(0)).norm() > 1e-3);
}

TEST_CASE("noisy token with tau=0 is the feature itself") {
  const FeatureBasis b = build_canonical_basis(5);
  Rng rng(7);
  const Eigen::VectorXd x = noisy_token(b, 0, 0.0, rng);
  CHECK((x.array() == b.vectors.col(0).array()).all());
}

TEST_CASE("noisy token is reproducible and has the expected noise norm") {
  const FeatureBasis b = build_canonical_basis(32);
  Rng r1(3), r2(3);
  const Eigen::VectorXd x1 = noisy_token(b, 2, 0.01, r1);
  const Eigen::VectorXd x2 = noisy_token(b, 2, 0.01, r2);
  CHECK((x1.array() == x2.array()).all());
  CHECK((x1 - b.vectors.col(2)).norm() < 0.1);

  // E||xi|| ~= tau*sqrt(d); Monte-Carlo estimate over many draws
  const double tau = 0.01;
  Rng rng(11);
  double mean_norm = 0.0;
  const int n = 4000;
  for (int k = 0; k < n; ++k)
    mean_norm += (noisy_token(b, 4, tau, rng) - b.vectors.col(4)).norm();
  mean_norm /= n;
  CHECK(mean_norm == Catch::Approx(tau * std::sqrt(32.0)).margin(0.05 * tau * std::sqrt(32.0)));
}

TEST_CASE("noise draws keep streams aligned across tau values") {
  const FeatureBasis b = build_canonical_basis(4);
  Rng r1(9), r2(9);
  (void)noisy_token(b, 1, 0.0, r1);
  (void)noisy_token(b, 1, 0.5, r2);
  CHECK(r1.uniform() == r2.uniform());
}

TEST_CASE("feature index out of range is rejected") {
  const FeatureBasis b = build_canonical_basis(4);
  Rng rng(1);
  CHECK_THROWS_AS(noisy_token(b, -1, 0.1, rng), std::out_of_range);
  CHECK_THROWS_AS(noisy_token(b, 4, 0.1, rng), std::out_of_range);
}
