#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "muonlab/biaslab.hpp"
#include "muonlab/error.hpp"
#include "muonlab/linalg.hpp"
#include "oracles.hpp"

using namespace muonlab;

namespace {

// Random N with N x = 0: R (I - x x^T / |x|^2).
Matrix null_perturbation(std::mt19937_64& rng, std::size_t m, const Vector& x, double scale) {
  const Matrix r = oracle::random_matrix(rng, m, x.size(), -scale, scale);
  const Vector rx = matvec(r, x);
  Matrix out = r - Matrix::outer(rx, x) * (1.0 / dot(x, x));
  return out;
}

}  // namespace

TEST(Regression, GradientHandExampleAndRankOne) {
  const auto p = RegressionProblem::make({1.0, -2.0}, {3.0});
  EXPECT_EQ(regression_grad(Matrix(1, 2), p), Matrix::from_rows({{-3.0, 6.0}}));

  std::mt19937_64 rng(1);
  const auto q = random_problem(rng, 4, 6);
  const Matrix g = regression_grad(oracle::random_matrix(rng, 4, 6), q);
  EXPECT_LT(singular_values(g)[1], 1e-12);
  EXPECT_EQ(regression_grad(signgd_solution(q.x, q.y), q).is_zero(), false);
  EXPECT_LT(oracle::max_abs(regression_grad(muon_solution(q.x, q.y), q)), 1e-15);
}

TEST(Regression, RejectsZeroInputAndBadShapes) {
  EXPECT_THROW(RegressionProblem::make({0.0, 0.0}, {1.0}), DomainError);
  EXPECT_THROW(RegressionProblem::make({1.0}, {1.0}, Matrix(2, 1)), ContractError);
  const auto p = RegressionProblem::make({1.0, 2.0}, {1.0});
  EXPECT_THROW(regression_grad(Matrix(2, 2), p), ContractError);
}

TEST(ClosedForms, SignGdHandExamples) {
  const Matrix w = signgd_solution(Vector{1.0, -2.0}, Vector{3.0});
  EXPECT_EQ(w, Matrix::from_rows({{1.0, -1.0}}));
  EXPECT_EQ(max_norm(w), 1.0);
  const Vector y{0.5, -2.0, 1.5};
  EXPECT_EQ(signgd_solution(Vector{1.0, 0.0, 0.0}, y), Matrix::outer(y, Vector{1.0, 0.0, 0.0}));
  EXPECT_EQ(signgd_solution(Vector{0.3, -0.7}, Vector{2.0, 4.0}),
            2.0 * signgd_solution(Vector{0.3, -0.7}, Vector{1.0, 2.0}));
  EXPECT_THROW(signgd_solution(Vector{0.0, 0.0}, Vector{1.0}), DomainError);
}

TEST(ClosedForms, MuonHandExamples) {
  const Matrix w = muon_solution(Vector{3.0, 4.0}, Vector{5.0});
  EXPECT_LT(oracle::max_abs_diff(w, Matrix::from_rows({{0.6, 0.8}})), 1e-15);
  EXPECT_NEAR(spectral_norm(w), 1.0, 1e-15);
  const Vector e1{1.0, 0.0, 0.0};
  const Vector y{2.0, -1.0};
  EXPECT_EQ(muon_solution(e1, y), signgd_solution(e1, y));
  EXPECT_NEAR(spectral_report(muon_solution(Vector{1, 2, 3}, Vector{4, 5})).stable_rank, 1.0, 1e-12);
  EXPECT_THROW(muon_solution(Vector{1.0}, Vector{0.0}), DomainError);
  EXPECT_THROW(muon_solution(Vector{0.0}, Vector{1.0}), DomainError);
}

TEST(ClosedForms, FeasibleAndNormIdentities) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = random_problem(rng, 1 + trial % 8, 1 + trial % 16);
    const Matrix ws = signgd_solution(p.x, p.y);
    const Matrix wm = muon_solution(p.x, p.y);
    EXPECT_LT(p.loss(ws), 1e-28);
    EXPECT_LT(p.loss(wm), 1e-28);
    EXPECT_NEAR(max_norm(ws), norm_linf(p.y) / norm_l1(p.x), 1e-15);
    EXPECT_NEAR(spectral_norm(wm), norm_l2(p.y) / norm_l2(p.x), 1e-12);
  }
}

TEST(ClosedForms, MinimumNormAmongFeasibleSolutions) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> scale(1e-3, 2.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto p = random_problem(rng, 1 + trial % 8, 2 + trial % 15);
    const Matrix ws = signgd_solution(p.x, p.y);
    const Matrix wm = muon_solution(p.x, p.y);
    const Matrix n = null_perturbation(rng, p.rows(), p.x, scale(rng));
    ASSERT_GE(max_norm(ws + n), max_norm(ws) - 1e-12);
    ASSERT_GE(spectral_norm(wm + n), spectral_norm(wm) - 1e-12);
  }
}

TEST(ScalarRecurrence, ZeroStaysZeroAndHarmonicConverges) {
  const auto h = StepSchedule::harmonic(1.0, 1.0);
  const auto zero = lemma_recurrence(0.0, h, 1000);
  for (double d : zero.values) ASSERT_EQ(d, 0.0);
  for (double d0 : {-5.0, 0.3, 5.0}) {
    EXPECT_LT(lemma_recurrence(d0, h, 1000000).final_abs(), 1e-3) << d0;
  }
}

TEST(ScalarRecurrence, ConstantStepOscillates) {
  const auto traj = lemma_recurrence(5.0, StepSchedule::constant(0.1), 2000);
  ASSERT_EQ(traj.values.size(), 2001u);
  double tail_min = INFINITY;
  bool above = false;
  for (std::size_t i = traj.values.size() - 100; i < traj.values.size(); ++i) {
    tail_min = std::min(tail_min, std::abs(traj.values[i]));
    above = above || std::abs(traj.values[i]) >= 1e-3;
  }
  EXPECT_LE(tail_min, 0.1);
  EXPECT_TRUE(above);
}

TEST(Descent, HandExamplesReachClosedForms) {
  const auto p = RegressionProblem::make({1.0, -2.0}, {3.0});
  const auto s = run_descent(p, {DescentOptimizer::SignGD});
  EXPECT_TRUE(s.converged);
  EXPECT_LT(oracle::max_abs_diff(s.final_w, Matrix::from_rows({{1.0, -1.0}})), 1e-3);

  const auto q = RegressionProblem::make({3.0, 4.0}, {5.0});
  const auto m = run_descent(q, {DescentOptimizer::ExactMuon});
  EXPECT_TRUE(m.converged);
  EXPECT_LT(oracle::max_abs_diff(m.final_w, Matrix::from_rows({{0.6, 0.8}})), 1e-3);
}

TEST(Descent, TrajectoryCsvLayout) {
  const auto p = RegressionProblem::make({1.0, -2.0}, {3.0});
  DescentOptions o;
  o.steps = 250;
  const auto r = run_descent(p, o);
  ASSERT_EQ(r.trajectory.records.size(), 4u);  // t = 0, 100, 200 and the final 250
  EXPECT_EQ(r.trajectory.records.back().t, 250);
  const std::string csv = r.trajectory.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,eta,loss,dist_max,dist_spec");
  for (const auto& rec : r.trajectory.records) EXPECT_GE(rec.loss, 0.0);
}

TEST(Descent, SignGdIteratesStayRankOneAlongSignX) {
  std::mt19937_64 rng(4);
  const auto p = random_problem(rng, 5, 9);
  const Vector sx = sign(p.x);
  const auto sched = StepSchedule::harmonic(0.5, 1.0);
  Matrix w(5, 9);
  for (int t = 0; t < 2000; ++t) {
    w = signgd_step(w, regression_grad(w, p), sched.eta(t));
    for (std::size_t i = 0; i < w.rows(); ++i) {
      const double coef = w(i, 0) * sx[0];
      for (std::size_t j = 0; j < w.cols(); ++j) ASSERT_NEAR(w(i, j), coef * sx[j], 1e-10);
    }
  }
}

// Roundoff in W x - y rotates the rank-one gradient by about eps |W| |x| / |r|,
// so the ray property is checked while |r| stays well above that floor.
TEST(Descent, ExactMuonIteratesStayOnTheClosedFormRay) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_problem(rng, 2 + trial % 7, 9 + trial % 8);
    const Matrix dir = muon_solution(p.x, p.y);
    const double dir_sq = dot(dir.entries(), dir.entries());
    const double floor = 1e-6 * norm_l2(p.y);
    const auto sched = StepSchedule::harmonic(0.5, 1.0);
    MuonState st(p.rows(), p.cols(), MuonConfig::idealized());
    Matrix w(p.rows(), p.cols());
    int checked = 0;
    for (int t = 0; t < 20000 && norm_l2(p.residual(w)) > floor; ++t, ++checked) {
      w = muon_step(st, w, regression_grad(w, p), sched.eta(t));
      const double alpha = dot(w.entries(), dir.entries()) / dir_sq;
      ASSERT_LT(oracle::max_abs_diff(w, alpha * dir), 1e-10) << "trial " << trial << " step " << t;
    }
    EXPECT_GT(checked, 10);
  }
}

TEST(Descent, ContinuationFromPretrainedWeights) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto base = random_problem(rng, 2 + trial % 6, 9 + trial % 7);
    Matrix w0 = oracle::random_matrix(rng, base.rows(), base.cols());
    w0 *= 1.0 / std::sqrt(static_cast<double>(base.cols()));
    const auto rp = ResidualProblem::make(w0, base.x, base.y);
    for (auto opt : {DescentOptimizer::SignGD, DescentOptimizer::ExactMuon}) {
      DescentOptions o;
      o.optimizer = opt;
      const auto r = run_descent(rp, o);
      const Matrix expected = w0 + (opt == DescentOptimizer::SignGD ? signgd_solution(rp.z, rp.r0)
                                                                    : muon_solution(rp.z, rp.r0));
      EXPECT_LT(oracle::max_abs_diff(r.final_w, expected), 1e-3);
    }
  }
}

TEST(Descent, LossVanishesOnAnEightBySixteenProblem) {
  std::mt19937_64 rng(9);
  const auto p = random_problem(rng, 8, 16);
  for (auto opt : {DescentOptimizer::SignGD, DescentOptimizer::ExactMuon, DescentOptimizer::Adam,
                   DescentOptimizer::NsMuon}) {
    DescentOptions o;
    o.optimizer = opt;
    const auto r = run_descent(p, o);
    EXPECT_LT(p.loss(r.final_w), 1e-6) << to_string(opt);
    EXPECT_LT(r.trajectory.records.back().loss, r.trajectory.records.front().loss);
  }
}

TEST(Descent, RandomProblemRespectsGeneratorContract) {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 200; ++i) {
    const auto p = random_problem(rng, 3, 1 + i % 16);
    EXPECT_GE(norm_l1(p.x), 0.1);
    EXPECT_EQ(norm_l0(p.x), p.x.size());
    EXPECT_TRUE(p.w0.is_zero());
  }
}

TEST(Descent, RejectsBadOptions) {
  const auto p = RegressionProblem::make({1.0}, {1.0});
  DescentOptions o;
  o.steps = -1;
  EXPECT_THROW(run_descent(p, o), ContractError);
  o.steps = 10;
  o.log_every = 0;
  EXPECT_THROW(run_descent(p, o), ContractError);
  EXPECT_THROW(descent_optimizer_from_string("sgd"), ContractError);
}
