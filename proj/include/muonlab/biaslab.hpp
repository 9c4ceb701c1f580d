#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "muonlab/matrix.hpp"
#include "muonlab/optim.hpp"

namespace muonlab {

/// L(W) = 1/2 |W x - y|^2 with starting point W0.
struct RegressionProblem {
  Vector x;
  Vector y;
  Matrix w0;

  /// W0 defaults to zero. Throws DomainError if x is the zero vector.
  static RegressionProblem make(Vector x, Vector y);
  static RegressionProblem make(Vector x, Vector y, Matrix w0);

  std::size_t rows() const { return y.size(); }
  std::size_t cols() const { return x.size(); }
  double loss(const Matrix& w) const;
  Vector residual(const Matrix& w) const;  // W x - y
};

/// Fine-tuning from a pretrained W0 on one sample (z, b), expressed through
/// the correction Delta = W - W0 and the residual r0 = b - W0 z.
struct ResidualProblem {
  Vector z;
  Vector b;
  Matrix w0;
  Vector r0;

  static ResidualProblem make(Matrix w0, Vector z, Vector b);
  /// Same loss, iterated on W directly from W0.
  RegressionProblem as_regression() const;
};

/// (W x - y) x^T
Matrix regression_grad(const Matrix& w, const RegressionProblem& p);

/// y sign(x)^T / |x|_1, the minimum max-norm interpolant.
Matrix signgd_solution(std::span<const double> x, std::span<const double> y);
/// y x^T / |x|_2^2, the minimum spectral-norm interpolant. Requires y != 0.
Matrix muon_solution(std::span<const double> x, std::span<const double> y);

struct ScalarTrajectory {
  std::vector<double> values;  // d_0 .. d_T
  double final_abs() const;
};

/// d_{t+1} = d_t - eta_t sign(d_t) for T steps.
ScalarTrajectory lemma_recurrence(double d0, const StepSchedule& schedule, std::int64_t steps);

enum class DescentOptimizer { SignGD, ExactMuon, Adam, NsMuon };

std::string to_string(DescentOptimizer opt);
DescentOptimizer descent_optimizer_from_string(const std::string& name);

/// The closed-form limit that matches the optimizer's geometry, continued
/// from W0: SignGD/Adam -> W0 + r0 sign(x)^T/|x|_1, Muon -> W0 + r0 x^T/|x|_2^2.
Matrix matched_limit(const RegressionProblem& p, DescentOptimizer opt);
Matrix signgd_limit(const RegressionProblem& p);
Matrix muon_limit(const RegressionProblem& p);

struct TrajectoryRecord {
  std::int64_t t = 0;
  double eta = 0.0;
  double loss = 0.0;
  double dist_max = 0.0;
  double dist_spec = 0.0;
};

struct Trajectory {
  std::vector<TrajectoryRecord> records;
  /// CSV with header t,eta,loss,dist_max,dist_spec.
  std::string to_csv() const;
};

struct DescentOptions {
  DescentOptimizer optimizer = DescentOptimizer::SignGD;
  StepSchedule schedule = StepSchedule::harmonic(0.5, 1.0);
  std::int64_t steps = 20000;
  double tol = 1e-3;
  /// Record every `log_every` steps (plus the initial and final state).
  /// dist_spec needs an SVD, so dense logging is not free.
  std::int64_t log_every = 100;
};

struct DescentResult {
  Trajectory trajectory;
  Matrix final_w;
  Matrix target;
  double final_dist_max = 0.0;
  /// First step at which the max-norm distance fell below tol, or -1.
  std::int64_t first_hit = -1;
  /// final_dist_max < tol after the full budget.
  bool converged = false;
};

DescentResult run_descent(const RegressionProblem& p, const DescentOptions& options);
DescentResult run_descent(const ResidualProblem& p, const DescentOptions& options);

/// x, y uniform in [-1, 1]; x redrawn until |x|_1 >= 0.1 and x has no zero entry.
RegressionProblem random_problem(std::mt19937_64& rng, std::size_t m, std::size_t n);

}  // namespace muonlab
