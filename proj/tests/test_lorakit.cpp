#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "muonlab/biaslab.hpp"
#include "muonlab/error.hpp"
#include "muonlab/linalg.hpp"
#include "muonlab/lorakit.hpp"
#include "oracles.hpp"

using namespace muonlab;

namespace {

Vector nonzero_vector(std::mt19937_64& rng, std::size_t n) {
  Vector v = oracle::random_vector(rng, n);
  while (norm_l2(v) < 1e-6) v = oracle::random_vector(rng, n);
  return v;
}

bool constant_magnitude_on_support(const Vector& z) {
  double mag = 0.0;
  for (double v : z) {
    if (v == 0.0) continue;
    if (mag == 0.0) mag = std::abs(v);
    if (std::abs(v) != mag) return false;
  }
  return true;
}

}  // namespace

TEST(Lora, ScaleRules) {
  EXPECT_EQ(lora_scale(LoraScaling::Classic, 8.0, 4), 2.0);
  EXPECT_EQ(lora_scale(LoraScaling::RankStabilized, 8.0, 4), 4.0);
  EXPECT_EQ(lora_scaling_from_string(to_string(LoraScaling::RankStabilized)), LoraScaling::RankStabilized);
  EXPECT_THROW(lora_scaling_from_string("dora"), ContractError);
}

TEST(Lora, InitStartsAtBaseWeights) {
  std::mt19937_64 rng(1);
  const Matrix w0 = oracle::random_matrix(rng, 5, 7);
  const auto ad = LoraAdapter::init(w0, 3, 6.0, LoraScaling::Classic, rng);
  EXPECT_EQ(ad.rank(), 3u);
  EXPECT_TRUE(ad.b.is_zero());
  EXPECT_FALSE(ad.a.is_zero());
  EXPECT_EQ(lora_forward(ad), w0);
  EXPECT_THROW(LoraAdapter::init(w0, 0, 1.0, LoraScaling::Classic, rng), ContractError);
  EXPECT_THROW(LoraAdapter::init(w0, 6, 1.0, LoraScaling::Classic, rng), ContractError);
}

TEST(Lora, DeltaIsLinearInB) {
  std::mt19937_64 rng(2);
  auto ad = LoraAdapter::init(oracle::random_matrix(rng, 4, 6), 2, 8.0, LoraScaling::RankStabilized, rng);
  ad.b = oracle::random_matrix(rng, 4, 2);
  const Matrix d1 = ad.delta();
  ad.b *= 2.0;
  EXPECT_EQ(ad.delta(), 2.0 * d1);
  EXPECT_LT(oracle::max_abs_diff(d1, ad.scale() * 0.5 * matmul(ad.b, ad.a)), 1e-15);
}

TEST(Lora, ForwardRejectsRankMismatch) {
  LoraAdapter ad;
  ad.w0 = Matrix(3, 4);
  ad.b = Matrix(3, 2);
  ad.a = Matrix(3, 4);
  EXPECT_THROW(lora_forward(ad), ContractError);
}

TEST(Lora, GradientZeroCases) {
  std::mt19937_64 rng(3);
  auto ad = LoraAdapter::init(oracle::random_matrix(rng, 4, 5), 2, 2.0, LoraScaling::Classic, rng);
  const auto zero = lora_grads(Matrix(4, 5), ad);
  EXPECT_TRUE(zero.db.is_zero());
  EXPECT_TRUE(zero.da.is_zero());
  const auto first = lora_grads(oracle::random_matrix(rng, 4, 5), ad);
  EXPECT_TRUE(first.da.is_zero());
  EXPECT_FALSE(first.db.is_zero());
}

TEST(Lora, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (auto rule : {LoraScaling::Classic, LoraScaling::RankStabilized}) {
    auto ad = LoraAdapter::init(oracle::random_matrix(rng, 5, 6), 3, 4.0, rule, rng);
    ad.b = oracle::random_matrix(rng, 5, 3);
    const Vector z = oracle::random_vector(rng, 6);
    const Vector b = oracle::random_vector(rng, 5);
    auto loss_of = [&](const LoraAdapter& a) {
      const Vector r = axpy(-1.0, b, matvec(lora_forward(a), z));
      return 0.5 * dot(r, r);
    };
    const Vector r = axpy(-1.0, b, matvec(lora_forward(ad), z));
    const auto g = lora_grads(Matrix::outer(r, z), ad);

    const Matrix fd_b = oracle::fd_gradient(
        [&](const Matrix& bb) {
          LoraAdapter probe = ad;
          probe.b = bb;
          return loss_of(probe);
        },
        ad.b);
    const Matrix fd_a = oracle::fd_gradient(
        [&](const Matrix& aa) {
          LoraAdapter probe = ad;
          probe.a = aa;
          return loss_of(probe);
        },
        ad.a);
    EXPECT_LT(oracle::rel_error(g.db, fd_b), 1e-5);
    EXPECT_LT(oracle::rel_error(g.da, fd_a), 1e-5);
  }
}

TEST(Budget, MaxHandExamples) {
  const Vector r0{3.0, 1.0};
  const Vector z{1.0, -1.0};
  EXPECT_DOUBLE_EQ(budget_error_max(r0, z, 0.0), 5.0);
  EXPECT_DOUBLE_EQ(budget_error_max(r0, z, 1.0), 0.5);
  EXPECT_EQ(budget_error_max(r0, z, 1.5), 0.0);
  EXPECT_NEAR(budget_oracle_max(r0, z, 1.0).error, 0.5, 1e-4);
  EXPECT_THROW(budget_error_max(r0, Vector{0.0, 0.0}, 1.0), DomainError);
  EXPECT_THROW(budget_error_max(r0, z, -1.0), ContractError);
}

TEST(Budget, SpecHandExamples) {
  const Vector r0{2.0, 0.0};
  const Vector z{0.6, 0.8};
  EXPECT_DOUBLE_EQ(budget_error_spec(r0, z, 0.0), 2.0);
  EXPECT_NEAR(budget_error_spec(r0, z, 1.0), 0.5, 1e-15);
  EXPECT_NEAR(budget_oracle_spec(r0, z, 1.0).error, 0.5, 1e-4);
  EXPECT_EQ(budget_error_spec(r0, z, 2.0), 0.0);
  EXPECT_THROW(budget_error_spec(r0, Vector{0.0, 0.0}, 1.0), DomainError);
}

TEST(Budget, ErrorsAreMonotoneInBudget) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector r0 = oracle::random_vector(rng, 4, -2.0, 2.0);
    const Vector z = nonzero_vector(rng, 6);
    double prev_max = INFINITY, prev_spec = INFINITY;
    for (int k = 0; k <= 40; ++k) {
      const double rho = 0.05 * k;
      const double em = budget_error_max(r0, z, rho);
      const double es = budget_error_spec(r0, z, rho);
      ASSERT_LE(em, prev_max);
      ASSERT_LE(es, prev_spec);
      prev_max = em;
      prev_spec = es;
    }
  }
}

TEST(Budget, ClosedFormsAgreeWithOracles) {
  std::mt19937_64 rng(6);
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t m = 2 + inst % 5;
    const std::size_t n = 2 + inst % 7;
    const Vector r0 = oracle::random_vector(rng, m, -2.0, 2.0);
    const Vector z = nonzero_vector(rng, n);
    const auto t = thresholds(r0, z);
    const double top = 1.5 * std::max(t.rho_a_star, t.rho_mu_star);
    for (int k = 0; k < 7; ++k) {
      const double rho = top * k / 6.0;
      const auto om = budget_oracle_max(r0, z, rho);
      const auto os = budget_oracle_spec(r0, z, rho);
      EXPECT_LE(max_norm(om.delta), rho + 1e-12);
      EXPECT_LE(spectral_norm(os.delta), rho * (1.0 + 1e-12) + 1e-15);
      EXPECT_NEAR(om.error, budget_error_max(r0, z, rho), 1e-4) << inst << " " << rho;
      EXPECT_NEAR(os.error, budget_error_spec(r0, z, rho), 1e-4) << inst << " " << rho;
      // No feasible point can beat the closed form.
      EXPECT_GE(om.error, budget_error_max(r0, z, rho) - 1e-12);
      EXPECT_GE(os.error, budget_error_spec(r0, z, rho) - 1e-12);
    }
    EXPECT_EQ(budget_error_max(r0, z, t.rho_a_star), 0.0);
    EXPECT_EQ(budget_error_spec(r0, z, t.rho_mu_star), 0.0);
  }
}

TEST(Thresholds, HandExamples) {
  const Vector e1{1.0, 0.0, 0.0};
  const auto a = thresholds(Vector{1.0, 2.0}, e1);
  EXPECT_EQ(a.inflation_max_geom, 1.0);
  EXPECT_EQ(a.inflation_spec_geom, 1.0);
  EXPECT_EQ(a.support, 1u);
  EXPECT_EQ(a.rank, 3u);

  const auto b = thresholds(Vector{1.0}, Vector{1.0, 0.5});
  EXPECT_NEAR(b.inflation_max_geom, 1.2, 1e-15);
  EXPECT_NEAR(b.inflation_spec_geom, std::sqrt(2.0) * std::sqrt(1.25) / 1.5, 1e-15);
  EXPECT_NEAR(b.inflation_spec_geom, 1.0541, 1e-4);

  const auto c = thresholds(Vector{1.0, -1.0}, Vector(5, 1.0));
  EXPECT_NEAR(c.inflation_max_geom, 1.0, 1e-15);
  EXPECT_EQ(c.bound_max, 5.0);

  EXPECT_THROW(thresholds(Vector{1.0}, Vector{0.0}), DomainError);
}

TEST(Thresholds, FormulasMatchDefinitions) {
  const Vector r0{3.0, -4.0};
  const Vector u{1.0, -2.0, 2.0};
  const auto t = thresholds(r0, u);
  EXPECT_DOUBLE_EQ(t.rho_a_star, 4.0 / 5.0);
  EXPECT_DOUBLE_EQ(t.rho_mu_star, 5.0 / 3.0);
  EXPECT_DOUBLE_EQ(t.tilde_rho_mu_max, 4.0 * 2.0 / 9.0);
  EXPECT_DOUBLE_EQ(t.tilde_rho_s_spec, std::sqrt(3.0) * 5.0 / 5.0);
  EXPECT_DOUBLE_EQ(t.inflation_max_geom, t.tilde_rho_mu_max / t.rho_a_star);
  EXPECT_NEAR(t.inflation_spec_geom, t.tilde_rho_s_spec / t.rho_mu_star, 1e-15);
}

TEST(Thresholds, MismatchedBudgetsNeverBeatMatchedOnes) {
  std::mt19937_64 rng(7);
  std::bernoulli_distribution drop(0.3);
  int strict_max = 0, strict_spec = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Vector r0 = oracle::random_vector(rng, 1 + trial % 6, -2.0, 2.0);
    Vector z = nonzero_vector(rng, 1 + trial % 10);
    if (trial % 3 == 0) {
      for (double& v : z) if (drop(rng)) v = 0.0;
      if (norm_l0(z) == 0) z[0] = 1.0;
    }
    if (trial % 50 == 0) for (double& v : z) v = v < 0 ? -0.5 : 0.5;
    const auto t = thresholds(r0, z);
    ASSERT_GE(t.tilde_rho_mu_max, t.rho_a_star * (1.0 - 1e-12));
    ASSERT_GE(t.tilde_rho_s_spec, t.rho_mu_star * (1.0 - 1e-12));
    if (norm_l0(z) > 1) {
      ASSERT_GT(t.tilde_rho_mu_max, t.rho_a_star * (1.0 + 1e-12)) << trial;
      ++strict_max;
    }
    if (!constant_magnitude_on_support(z)) {
      ASSERT_GT(t.tilde_rho_s_spec, t.rho_mu_star * (1.0 + 1e-12)) << trial;
      ++strict_spec;
    }
  }
  EXPECT_GT(strict_max, 500);
  EXPECT_GT(strict_spec, 500);
}

TEST(Thresholds, InflationBoundedBySupport) {
  std::mt19937_64 rng(8);
  std::bernoulli_distribution drop(0.25);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t r = 1 + trial % 8;
    const std::size_t n = r + trial % 9;
    Matrix a = oracle::random_matrix(rng, r, n);
    if (trial % 4 == 0) for (std::size_t i = 0; i < r; ++i) if (drop(rng)) for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.0;
    const Vector z = nonzero_vector(rng, n);
    const Vector u = matvec(a, z);
    if (support_size(u) == 0) continue;
    const auto t = thresholds(oracle::random_vector(rng, 3), u);
    ASSERT_LE(t.inflation_max_geom, static_cast<double>(t.support) * (1.0 + 1e-12));
    ASSERT_LE(t.inflation_spec_geom, std::sqrt(static_cast<double>(t.support)) * (1.0 + 1e-12));
    ASSERT_LE(t.support, r);
    ASSERT_GE(t.inflation_max_geom, 1.0 - 1e-12);
    ASSERT_GE(t.inflation_spec_geom, 1.0 - 1e-12);
  }
}

TEST(Surrogate, FixedPointHandExample) {
  const auto fp = surrogate_fixed_points(Vector{3.0}, Vector{1.0, -2.0});
  EXPECT_EQ(fp.b_s, Matrix::from_rows({{1.0, -1.0}}));
  EXPECT_LT(oracle::max_abs_diff(fp.b_mu, Matrix::from_rows({{0.6, -1.2}})), 1e-15);
}

TEST(Surrogate, RankOneFixedPointsCoincide) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector r0 = oracle::random_vector(rng, 1 + trial % 5);
    const Vector u = nonzero_vector(rng, 1);
    const auto fp = surrogate_fixed_points(r0, u);
    ASSERT_LT(oracle::max_abs_diff(fp.b_s, fp.b_mu), 1e-12);
  }
}

TEST(Surrogate, IdentityAdapterReproducesFullFineTuning) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + trial % 8;
    const Vector r0 = oracle::random_vector(rng, 1 + trial % 5);
    const Vector z = nonzero_vector(rng, n);
    const Vector u = matvec(Matrix::identity(n), z);
    const auto fp = surrogate_fixed_points(r0, u);
    ASSERT_LT(oracle::max_abs_diff(fp.b_s, signgd_solution(z, r0)), 1e-12);
    ASSERT_LT(oracle::max_abs_diff(fp.b_mu, muon_solution(z, r0)), 1e-12);
    const auto full = thresholds(r0, z);
    const auto sur = thresholds(r0, u);
    ASSERT_NEAR(sur.rho_a_star, full.rho_a_star, 1e-12);
    ASSERT_NEAR(sur.rho_mu_star, full.rho_mu_star, 1e-12);
  }
}

TEST(Surrogate, FixedPointsFitAndAttainTheirBudgets) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector r0 = oracle::random_vector(rng, 2 + trial % 4);
    const Vector u = nonzero_vector(rng, 1 + trial % 6);
    const auto fp = surrogate_fixed_points(r0, u);
    const auto t = thresholds(r0, u);
    ASSERT_LT(norm_l2(axpy(-1.0, r0, matvec(fp.b_s, u))), 1e-12);
    ASSERT_LT(norm_l2(axpy(-1.0, r0, matvec(fp.b_mu, u))), 1e-12);
    ASSERT_NEAR(max_norm(fp.b_s), t.rho_a_star, 1e-12);
    ASSERT_NEAR(spectral_norm(fp.b_mu), t.rho_mu_star, 1e-12);
    ASSERT_NEAR(spectral_norm(fp.b_s), t.tilde_rho_s_spec, 1e-12);
    ASSERT_NEAR(max_norm(fp.b_mu), t.tilde_rho_mu_max, 1e-12);
  }
}

TEST(Damage, HandExamples) {
  const Matrix d = Matrix::from_rows({{1.0, -1.0}});
  EXPECT_EQ(old_task_damage(d, Vector{1.0, 1.0}).damage, 0.0);
  const auto r = old_task_damage(d, Vector{1.0, -1.0});
  EXPECT_EQ(r.damage, 2.0);
  EXPECT_DOUBLE_EQ(r.bound_max, 0.5 * 1.0 * 1.0 * 4.0);
  EXPECT_NEAR(r.bound_spec, 0.5 * 2.0 * 2.0, 1e-14);
}

TEST(Damage, BoundsHoldOnRandomCorrections) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const Matrix d = oracle::random_matrix(rng, 1 + trial % 7, 1 + trial % 11);
    const Vector x = oracle::random_vector(rng, d.cols(), -3.0, 3.0);
    const auto r = old_task_damage(d, x);
    ASSERT_LE(r.damage, r.bound_max * (1.0 + 1e-12));
    ASSERT_LE(r.damage, r.bound_spec * (1.0 + 1e-12));
  }
}

TEST(Damage, SurrogateClosedFormMatchesDirectEvaluation) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t r = 1 + trial % 4;
    const std::size_t n = r + 1 + trial % 5;
    const Matrix a = oracle::random_matrix(rng, r, n);
    const Vector z = nonzero_vector(rng, n);
    const Vector x = oracle::random_vector(rng, n);
    const Vector r0 = oracle::random_vector(rng, 3);
    const Vector u = matvec(a, z);
    const auto fp = surrogate_fixed_points(r0, u);
    const auto sd = surrogate_damage(r0, a, z, x);
    const double direct_s = old_task_damage(matmul(fp.b_s, a), x).damage;
    const double direct_mu = old_task_damage(matmul(fp.b_mu, a), x).damage;
    ASSERT_NEAR(sd.signgd, direct_s, 1e-12 * std::max(1.0, direct_s));
    ASSERT_NEAR(sd.muon, direct_mu, 1e-12 * std::max(1.0, direct_mu));
  }
}
