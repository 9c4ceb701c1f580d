#include "muonlab/lorakit.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "muonlab/error.hpp"
#include "muonlab/linalg.hpp"

namespace muonlab {

namespace {

void require_nonzero(std::span<const double> v, const char* what) {
  if (v.empty() || norm_linf(v) == 0.0) throw DomainError(std::string(what) + " must be nonzero");
}

void require_budget(double rho, const char* what) {
  if (!(rho >= 0.0)) throw ContractError(std::string(what) + ": budget rho must be >= 0");
}

}  // namespace

std::string to_string(LoraScaling rule) {
  return rule == LoraScaling::Classic ? "classic" : "rs";
}

LoraScaling lora_scaling_from_string(const std::string& name) {
  if (name == "classic") return LoraScaling::Classic;
  if (name == "rs") return LoraScaling::RankStabilized;
  throw ContractError("unknown LoRA scaling rule \"" + name + "\" (expected classic, rs)");
}

double lora_scale(LoraScaling rule, double alpha, std::size_t rank) {
  if (rank == 0) throw ContractError("lora_scale: rank must be >= 1");
  const double r = static_cast<double>(rank);
  return rule == LoraScaling::Classic ? alpha / r : alpha / std::sqrt(r);
}

LoraAdapter LoraAdapter::init(Matrix w0, std::size_t rank, double alpha, LoraScaling rule,
                              std::mt19937_64& rng) {
  if (rank < 1 || rank > std::min(w0.rows(), w0.cols())) {
    throw ContractError("lora adapter: rank must lie in [1, min(m, n)]");
  }
  LoraAdapter adapter;
  adapter.b = Matrix(w0.rows(), rank);
  adapter.a = Matrix(rank, w0.cols());
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(w0.cols())));
  for (double& v : adapter.a.entries()) v = gauss(rng);
  adapter.w0 = std::move(w0);
  adapter.alpha = alpha;
  adapter.rule = rule;
  return adapter;
}

Matrix LoraAdapter::delta() const {
  if (b.cols() != a.rows()) throw ContractError("lora adapter: B and A ranks differ");
  if (b.rows() != w0.rows() || a.cols() != w0.cols()) {
    throw ContractError("lora adapter: factor shapes do not match W0");
  }
  return scale() * matmul(b, a);
}

Matrix lora_forward(const LoraAdapter& adapter) { return adapter.w0 + adapter.delta(); }

LoraGrads lora_grads(const Matrix& dl_dw, const LoraAdapter& adapter) {
  if (!dl_dw.same_shape(adapter.w0)) throw ContractError("lora_grads: gradient shape mismatch");
  if (adapter.b.cols() != adapter.a.rows()) throw ContractError("lora_grads: B and A ranks differ");
  const double s = adapter.scale();
  LoraGrads out{s * matmul_nt(dl_dw, adapter.a), Matrix(adapter.a.rows(), adapter.a.cols())};
  if (adapter.a_trainable) out.da = s * matmul_tn(adapter.b, dl_dw);
  return out;
}

// Both error formulas compare |r0_i| / |z| against rho so that rho equal to
// the exact-fit threshold (computed with the same division) yields exactly 0.

double budget_error_max(std::span<const double> r0, std::span<const double> z, double rho) {
  require_nonzero(z, "budget_error_max: z");
  require_budget(rho, "budget_error_max");
  const double z1 = norm_l1(z);
  double acc = 0.0;
  for (double r : r0) {
    const double excess = std::max(0.0, std::abs(r) / z1 - rho) * z1;
    acc += excess * excess;
  }
  return 0.5 * acc;
}

double budget_error_spec(std::span<const double> r0, std::span<const double> z, double rho) {
  require_nonzero(z, "budget_error_spec: z");
  require_budget(rho, "budget_error_spec");
  const double z2 = norm_l2(z);
  const double excess = std::max(0.0, norm_l2(r0) / z2 - rho) * z2;
  return 0.5 * excess * excess;
}

namespace {

double fit_error(const Matrix& delta, std::span<const double> z, std::span<const double> r0) {
  const Vector r = axpy(-1.0, matvec(delta, z), r0);
  return 0.5 * dot(r, r);
}

}  // namespace

BudgetOracleResult budget_oracle_max(std::span<const double> r0, std::span<const double> z,
                                     double rho, int iterations) {
  require_nonzero(z, "budget_oracle_max: z");
  require_budget(rho, "budget_oracle_max");
  const double step = 1.0 / dot(z, z);
  auto project = [rho](Matrix& d) {
    for (double& v : d.entries()) v = std::clamp(v, -rho, rho);
  };

  Matrix x(r0.size(), z.size());
  Matrix y = x;
  double t = 1.0;
  for (int k = 0; k < iterations; ++k) {
    const Vector r = axpy(-1.0, r0, matvec(y, z));
    Matrix next = y - step * Matrix::outer(r, z);
    project(next);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = next + ((t - 1.0) / t_next) * (next - x);
    project(y);
    x = std::move(next);
    t = t_next;
  }
  const double err = fit_error(x, z, r0);
  return {std::move(x), err};
}

BudgetOracleResult budget_oracle_spec(std::span<const double> r0, std::span<const double> z,
                                      double rho, int iterations) {
  require_nonzero(z, "budget_oracle_spec: z");
  require_budget(rho, "budget_oracle_spec");
  const double z2sq = dot(z, z);
  const double radius = rho * std::sqrt(z2sq);
  Vector u(r0.size(), 0.0);
  for (int k = 0; k < iterations; ++k) {
    // Step 1/2 on 1/2 |u - r0|^2, then project onto the ball.
    for (std::size_t i = 0; i < u.size(); ++i) u[i] -= 0.5 * (u[i] - r0[i]);
    const double len = norm_l2(u);
    if (len > radius) {
      for (double& v : u) v *= radius / len;
    }
  }
  Matrix delta = Matrix::outer(u, z);
  delta *= 1.0 / z2sq;
  const double err = fit_error(delta, z, r0);
  return {std::move(delta), err};
}

std::size_t support_size(std::span<const double> u, double snap) {
  return static_cast<std::size_t>(
      std::count_if(u.begin(), u.end(), [snap](double v) { return std::abs(v) > snap; }));
}

BudgetAnalysis thresholds(std::span<const double> r0, std::span<const double> u) {
  require_nonzero(u, "thresholds: u");
  require_nonzero(r0, "thresholds: r0");
  const double u1 = norm_l1(u);
  const double u2 = norm_l2(u);
  const double uinf = norm_linf(u);
  const double r2 = norm_l2(r0);
  const double rinf = norm_linf(r0);

  BudgetAnalysis a;
  a.support = support_size(u);
  a.rank = u.size();
  const double root_support = std::sqrt(static_cast<double>(a.support));
  a.rho_a_star = rinf / u1;
  a.rho_mu_star = r2 / u2;
  a.tilde_rho_mu_max = rinf * uinf / (u2 * u2);
  a.tilde_rho_s_spec = root_support * r2 / u1;
  a.inflation_max_geom = u1 * uinf / (u2 * u2);
  a.inflation_spec_geom = root_support * u2 / u1;
  a.bound_max = static_cast<double>(a.support);
  a.bound_spec = root_support;
  return a;
}

nlohmann::json BudgetAnalysis::to_json() const {
  return {{"rho_A_star", rho_a_star},
          {"rho_mu_star", rho_mu_star},
          {"tilde_rho_mu_max", tilde_rho_mu_max},
          {"tilde_rho_s_spec", tilde_rho_s_spec},
          {"inflation_max_geom", inflation_max_geom},
          {"inflation_spec_geom", inflation_spec_geom},
          {"support", support},
          {"rank", rank},
          {"bound_max", bound_max},
          {"bound_spec", bound_spec}};
}

SurrogateFixedPoints surrogate_fixed_points(std::span<const double> r0, std::span<const double> u) {
  require_nonzero(u, "surrogate_fixed_points: u");
  Matrix b_s = Matrix::outer(r0, sign(u));
  b_s *= 1.0 / norm_l1(u);
  Matrix b_mu = Matrix::outer(r0, u);
  b_mu *= 1.0 / dot(u, u);
  return {std::move(b_s), std::move(b_mu)};
}

DamageReport old_task_damage(const Matrix& delta, std::span<const double> x) {
  const Vector dx = matvec(delta, x);
  const double m = static_cast<double>(delta.rows());
  const double dmax = max_norm(delta);
  const double dspec = spectral_norm(delta);
  const double x1 = norm_l1(x);
  const double x2 = norm_l2(x);
  return {0.5 * dot(dx, dx), 0.5 * m * dmax * dmax * x1 * x1, 0.5 * dspec * dspec * x2 * x2};
}

SurrogateDamage surrogate_damage(std::span<const double> r0, const Matrix& a,
                                 std::span<const double> z, std::span<const double> x) {
  const Vector az = matvec(a, z);
  const Vector ax = matvec(a, x);
  require_nonzero(az, "surrogate_damage: Az");
  const double r2sq = dot(r0, r0);
  const double az1 = norm_l1(az);
  const double az2sq = dot(az, az);
  const double s_inner = dot(sign(az), ax);
  const double mu_inner = dot(az, ax);
  return {0.5 * r2sq * s_inner * s_inner / (az1 * az1),
          0.5 * r2sq * mu_inner * mu_inner / (az2sq * az2sq)};
}

}  // namespace muonlab
