#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "muonlab/matrix.hpp"

namespace muonlab {

enum class LoraScaling { Classic, RankStabilized };

std::string to_string(LoraScaling rule);
LoraScaling lora_scaling_from_string(const std::string& name);

/// alpha / r (Classic) or alpha / sqrt(r) (RankStabilized).
double lora_scale(LoraScaling rule, double alpha, std::size_t rank);

/// W = W0 + scale * B A with W0 frozen.
struct LoraAdapter {
  Matrix w0;
  Matrix b;  // m x r
  Matrix a;  // r x n
  double alpha = 1.0;
  LoraScaling rule = LoraScaling::Classic;
  bool a_trainable = true;

  /// B = 0 and A ~ N(0, 1/n) entrywise. Requires 1 <= rank <= min(m, n).
  static LoraAdapter init(Matrix w0, std::size_t rank, double alpha, LoraScaling rule,
                          std::mt19937_64& rng);

  std::size_t rank() const { return a.rows(); }
  double scale() const { return lora_scale(rule, alpha, rank()); }
  Matrix delta() const;
};

Matrix lora_forward(const LoraAdapter& adapter);

struct LoraGrads {
  Matrix db;
  Matrix da;  // zero-filled when A is frozen
};

/// dB = scale * G A^T, dA = scale * B^T G for G = dL/dW.
LoraGrads lora_grads(const Matrix& dl_dw, const LoraAdapter& adapter);

// ---------------------------------------------------------------------------
// Budgeted fine-tuning on one residual (r0, z).

/// min over |Delta|_max <= rho of 1/2 |Delta z - r0|^2
///   = 1/2 sum_i (|r0_i| - rho |z|_1)_+^2
double budget_error_max(std::span<const double> r0, std::span<const double> z, double rho);

/// min over |Delta|_2 <= rho of 1/2 |Delta z - r0|^2 = 1/2 (|r0|_2 - rho |z|_2)_+^2
double budget_error_spec(std::span<const double> r0, std::span<const double> z, double rho);

/// Numerical minimizers of the same two problems, used to cross-check the
/// closed forms. Both return a feasible Delta and its objective.
struct BudgetOracleResult {
  Matrix delta;
  double error = 0.0;
};

inline constexpr int kOracleIterations = 2000;

/// Accelerated projected gradient over Delta with step 1/|z|_2^2, projecting
/// onto the box |Delta_ij| <= rho.
BudgetOracleResult budget_oracle_max(std::span<const double> r0, std::span<const double> z,
                                     double rho, int iterations = kOracleIterations);

/// Projected gradient over u = Delta z in the ball |u|_2 <= rho |z|_2, then
/// Delta = u z^T / |z|_2^2, which has spectral norm |u|_2 / |z|_2.
BudgetOracleResult budget_oracle_spec(std::span<const double> r0, std::span<const double> z,
                                      double rho, int iterations = kOracleIterations);

/// Zero threshold for snapping |u|_0 of vectors produced by floating point.
inline constexpr double kSupportSnap = 1e-12;
std::size_t support_size(std::span<const double> u, double snap = kSupportSnap);

/// Exact-fit budgets for residual r0 and input geometry u (u = z for full
/// fine-tuning, u = A z under the fixed-subspace adapter).
struct BudgetAnalysis {
  double rho_a_star = 0.0;         // |r0|_inf / |u|_1
  double rho_mu_star = 0.0;        // |r0|_2 / |u|_2
  double tilde_rho_mu_max = 0.0;   // |r0|_inf |u|_inf / |u|_2^2
  double tilde_rho_s_spec = 0.0;   // sqrt(|u|_0) |r0|_2 / |u|_1
  double inflation_max_geom = 0.0; // |u|_1 |u|_inf / |u|_2^2
  double inflation_spec_geom = 0.0;// sqrt(|u|_0) |u|_2 / |u|_1
  std::size_t support = 0;         // |u|_0
  std::size_t rank = 0;            // len(u)
  double bound_max = 0.0;          // inflation_max_geom <= support <= rank
  double bound_spec = 0.0;         // inflation_spec_geom <= sqrt(support) <= sqrt(rank)

  nlohmann::json to_json() const;
};

BudgetAnalysis thresholds(std::span<const double> r0, std::span<const double> u);

struct SurrogateFixedPoints {
  Matrix b_s;   // r0 sign(u)^T / |u|_1
  Matrix b_mu;  // r0 u^T / |u|_2^2
};

SurrogateFixedPoints surrogate_fixed_points(std::span<const double> r0, std::span<const double> u);

struct DamageReport {
  double damage = 0.0;      // 1/2 |Delta x|^2
  double bound_max = 0.0;   // m/2 |Delta|_max^2 |x|_1^2
  double bound_spec = 0.0;  // 1/2 |Delta|_2^2 |x|_2^2
};

/// Old-task loss increase of a correction Delta, assuming W0 x = y.
DamageReport old_task_damage(const Matrix& delta, std::span<const double> x);

struct SurrogateDamage {
  double signgd = 0.0;  // 1/2 |r0|^2 <sign(Az), Ax>^2 / |Az|_1^2
  double muon = 0.0;    // 1/2 |r0|^2 <Az, Ax>^2 / |Az|_2^4
};

/// Closed-form old-task damage of the fixed-subspace fixed points.
SurrogateDamage surrogate_damage(std::span<const double> r0, const Matrix& a,
                                 std::span<const double> z, std::span<const double> x);

}  // namespace muonlab
