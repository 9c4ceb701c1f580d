#include "muonlab/biaslab.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include <fmt/format.h>

#include "muonlab/error.hpp"
#include "muonlab/linalg.hpp"

namespace muonlab {

namespace {

double max_dist(const Matrix& a, const Matrix& b) {
  double acc = 0.0;
  auto ea = a.entries();
  auto eb = b.entries();
  for (std::size_t k = 0; k < ea.size(); ++k) acc = std::max(acc, std::abs(ea[k] - eb[k]));
  return acc;
}

void require_nonzero(std::span<const double> v, const char* what) {
  if (norm_linf(v) == 0.0) throw DomainError(std::string(what) + " must be nonzero");
}

}  // namespace

RegressionProblem RegressionProblem::make(Vector x, Vector y) {
  if (x.empty() || y.empty()) throw ContractError("regression problem: empty x or y");
  Matrix w0(y.size(), x.size());
  return make(std::move(x), std::move(y), std::move(w0));
}

RegressionProblem RegressionProblem::make(Vector x, Vector y, Matrix w0) {
  require_nonzero(x, "regression problem: x");
  if (w0.rows() != y.size() || w0.cols() != x.size()) {
    throw ContractError("regression problem: W0 must be len(y) x len(x)");
  }
  return RegressionProblem{std::move(x), std::move(y), std::move(w0)};
}

Vector RegressionProblem::residual(const Matrix& w) const {
  Vector r = matvec(w, x);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= y[i];
  return r;
}

double RegressionProblem::loss(const Matrix& w) const {
  const Vector r = residual(w);
  return 0.5 * dot(r, r);
}

ResidualProblem ResidualProblem::make(Matrix w0, Vector z, Vector b) {
  require_nonzero(z, "residual problem: z");
  if (w0.rows() != b.size() || w0.cols() != z.size()) {
    throw ContractError("residual problem: W0 must be len(b) x len(z)");
  }
  Vector r0 = matvec(w0, z);
  for (std::size_t i = 0; i < r0.size(); ++i) r0[i] = b[i] - r0[i];
  return ResidualProblem{std::move(z), std::move(b), std::move(w0), std::move(r0)};
}

RegressionProblem ResidualProblem::as_regression() const {
  return RegressionProblem::make(z, b, w0);
}

Matrix regression_grad(const Matrix& w, const RegressionProblem& p) {
  if (w.rows() != p.rows() || w.cols() != p.cols()) {
    throw ContractError("regression_grad: W shape does not match the problem");
  }
  return Matrix::outer(p.residual(w), p.x);
}

Matrix signgd_solution(std::span<const double> x, std::span<const double> y) {
  require_nonzero(x, "signgd_solution: x");
  if (y.empty()) throw ContractError("signgd_solution: empty y");
  Matrix w = Matrix::outer(y, sign(x));
  w *= 1.0 / norm_l1(x);
  return w;
}

Matrix muon_solution(std::span<const double> x, std::span<const double> y) {
  require_nonzero(x, "muon_solution: x");
  require_nonzero(y, "muon_solution: y");
  Matrix w = Matrix::outer(y, x);
  w *= 1.0 / dot(x, x);
  return w;
}

double ScalarTrajectory::final_abs() const { return values.empty() ? 0.0 : std::abs(values.back()); }

ScalarTrajectory lemma_recurrence(double d0, const StepSchedule& schedule, std::int64_t steps) {
  if (steps < 0) throw ContractError("lemma_recurrence: step count must be >= 0");
  ScalarTrajectory out;
  out.values.reserve(static_cast<std::size_t>(steps) + 1);
  double d = d0;
  out.values.push_back(d);
  for (std::int64_t t = 0; t < steps; ++t) {
    d -= schedule.eta(t) * sign(d);
    out.values.push_back(d);
  }
  return out;
}

std::string to_string(DescentOptimizer opt) {
  switch (opt) {
    case DescentOptimizer::SignGD:
      return "signgd";
    case DescentOptimizer::ExactMuon:
      return "muon_exact";
    case DescentOptimizer::Adam:
      return "adam";
    case DescentOptimizer::NsMuon:
      return "muon_ns";
  }
  return "unknown";
}

DescentOptimizer descent_optimizer_from_string(const std::string& name) {
  if (name == "signgd") return DescentOptimizer::SignGD;
  if (name == "muon_exact") return DescentOptimizer::ExactMuon;
  if (name == "adam") return DescentOptimizer::Adam;
  if (name == "muon_ns") return DescentOptimizer::NsMuon;
  throw ContractError("unknown descent optimizer \"" + name +
                      "\" (expected signgd, muon_exact, adam, muon_ns)");
}

Matrix signgd_limit(const RegressionProblem& p) {
  const Vector r0 = axpy(-1.0, matvec(p.w0, p.x), p.y);
  if (norm_linf(r0) == 0.0) return p.w0;
  return p.w0 + signgd_solution(p.x, r0);
}

Matrix muon_limit(const RegressionProblem& p) {
  const Vector r0 = axpy(-1.0, matvec(p.w0, p.x), p.y);
  if (norm_linf(r0) == 0.0) return p.w0;
  return p.w0 + muon_solution(p.x, r0);
}

Matrix matched_limit(const RegressionProblem& p, DescentOptimizer opt) {
  switch (opt) {
    case DescentOptimizer::SignGD:
    case DescentOptimizer::Adam:
      return signgd_limit(p);
    case DescentOptimizer::ExactMuon:
    case DescentOptimizer::NsMuon:
      return muon_limit(p);
  }
  return signgd_limit(p);
}

std::string Trajectory::to_csv() const {
  std::string out = "t,eta,loss,dist_max,dist_spec\n";
  for (const auto& r : records) {
    out += fmt::format("{},{},{},{},{}\n", r.t, r.eta, r.loss, r.dist_max, r.dist_spec);
  }
  return out;
}

DescentResult run_descent(const RegressionProblem& p, const DescentOptions& options) {
  if (options.steps < 0) throw ContractError("run_descent: steps must be >= 0");
  if (options.log_every < 1) throw ContractError("run_descent: log_every must be >= 1");

  DescentResult result;
  result.target = matched_limit(p, options.optimizer);

  std::optional<AdamState> adam;
  std::optional<MuonState> muon;
  if (options.optimizer == DescentOptimizer::Adam) adam.emplace(p.rows(), p.cols());
  if (options.optimizer == DescentOptimizer::ExactMuon) {
    muon.emplace(p.rows(), p.cols(), MuonConfig::idealized());
  }
  if (options.optimizer == DescentOptimizer::NsMuon) {
    MuonConfig c = MuonConfig::idealized();
    c.exact = false;
    muon.emplace(p.rows(), p.cols(), c);
  }

  auto record = [&](std::int64_t t, const Matrix& w, double eta) {
    result.trajectory.records.push_back(
        {t, eta, p.loss(w), max_dist(w, result.target), spectral_norm(w - result.target)});
  };

  Matrix w = p.w0;
  for (std::int64_t t = 0; t < options.steps; ++t) {
    const double eta = options.schedule.eta(t);
    if (t % options.log_every == 0) record(t, w, eta);
    const Matrix g = regression_grad(w, p);
    switch (options.optimizer) {
      case DescentOptimizer::SignGD:
        w = signgd_step(w, g, eta);
        break;
      case DescentOptimizer::Adam:
        w = adam_step(*adam, w, g, eta);
        break;
      case DescentOptimizer::ExactMuon:
      case DescentOptimizer::NsMuon:
        w = muon_step(*muon, w, g, eta);
        break;
    }
    if (!w.all_finite()) throw NumericalError("run_descent: iterate became non-finite");
    if (result.first_hit < 0 && max_dist(w, result.target) < options.tol) result.first_hit = t + 1;
  }
  record(options.steps, w, options.schedule.eta(options.steps));

  result.final_dist_max = max_dist(w, result.target);
  result.converged = result.final_dist_max < options.tol;
  result.final_w = std::move(w);
  return result;
}

DescentResult run_descent(const ResidualProblem& p, const DescentOptions& options) {
  return run_descent(p.as_regression(), options);
}

RegressionProblem random_problem(std::mt19937_64& rng, std::size_t m, std::size_t n) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Vector x(n);
  Vector y(m);
  do {
    for (double& v : x) v = unit(rng);
  } while (norm_l1(x) < 0.1 || norm_l0(x) < n);
  for (double& v : y) v = unit(rng);
  return RegressionProblem::make(std::move(x), std::move(y));
}

}  // namespace muonlab
