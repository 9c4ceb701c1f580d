#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "muonlab/matrix.hpp"

namespace muonlab {

/// Compact SVD: u is m x k, v is n x k, k = min(m, n); s is non-increasing.
struct Svd {
  Matrix u;
  std::vector<double> s;
  Matrix v;
};

/// Throws NumericalError if the backend does not converge or returns
/// non-finite factors.
Svd svd(const Matrix& m);
std::vector<double> singular_values(const Matrix& m);

/// Orthogonal polar factor U V^T restricted to the numerical rank.
///
/// Singular values at or below kRankTolerance * sigma_max are treated as
/// zero, so a rank-1 input maps to u v^T / (|u| |v|) and the zero matrix
/// maps to zero.
Matrix polar_ortho(const Matrix& m);
inline constexpr double kRankTolerance = 1e-12;

struct QuinticCoefficients {
  double a;
  double b;
  double c;
  friend bool operator==(const QuinticCoefficients&, const QuinticCoefficients&) = default;
};

/// Per-iteration coefficients for the odd quintic p(x) = a x + b x^3 + c x^5.
class CoefficientSchedule {
 public:
  explicit CoefficientSchedule(std::vector<QuinticCoefficients> steps);

  /// (3.4445, -4.7750, 2.0315) repeated `steps` times.
  static CoefficientSchedule fixed_quintic(std::size_t steps = 5);
  static CoefficientSchedule from_json(const nlohmann::json& doc);
  static CoefficientSchedule load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  std::span<const QuinticCoefficients> steps() const { return steps_; }
  std::size_t size() const { return steps_.size(); }

 private:
  std::vector<QuinticCoefficients> steps_;
};

inline constexpr QuinticCoefficients kFixedQuintic{3.4445, -4.7750, 2.0315};

/// Applies the schedule's composed quintic to a single singular value.
double scalar_ns_map(double x, const CoefficientSchedule& schedule);

/// Newton-Schulz orthogonalization. The input is first divided by
/// max(|M|_F, kNsNormGuard); a zero input returns zero.
Matrix newton_schulz(const Matrix& m, const CoefficientSchedule& schedule);
inline constexpr double kNsNormGuard = 1e-7;

/// Range of scalar_ns_map over an evenly spaced scan of [lo, hi].
struct NsEnvelope {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t points = 0;
  double min = 0.0;
  double max = 0.0;
};

struct NsScan {
  std::vector<double> x;
  std::vector<double> y;
  NsEnvelope envelope;
};

/// Throws ContractError for points == 0, lo < 0 or lo > hi.
NsScan ns_scan(const CoefficientSchedule& schedule, double lo, double hi, std::size_t points);

struct SpectralReport {
  double stable_rank = 0.0;
  double svd_entropy = 0.0;
  double max_norm = 0.0;
  double spectral_norm = 0.0;
  double frobenius_norm = 0.0;
  std::vector<double> singular_values;
};

/// Stable rank |W|_F^2 / |W|_2^2 and normalized SVD entropy over
/// p_i = s_i^2 / sum s_j^2 with log base count min(m, n). Entropy is 0 when
/// min(m, n) == 1. Throws DomainError for the zero matrix.
SpectralReport spectral_report(const Matrix& m);

struct MatrixNorms {
  double max = 0.0;
  double spectral = 0.0;
  double frobenius = 0.0;
};

struct VectorNorms {
  std::size_t l0 = 0;
  double l1 = 0.0;
  double l2 = 0.0;
  double linf = 0.0;
};

MatrixNorms norms(const Matrix& m);
VectorNorms norms(std::span<const double> v);

double max_norm(const Matrix& m);
double frobenius_norm(const Matrix& m);
double spectral_norm(const Matrix& m);

std::size_t norm_l0(std::span<const double> v);
double norm_l1(std::span<const double> v);
double norm_l2(std::span<const double> v);
double norm_linf(std::span<const double> v);

}  // namespace muonlab
