#include "muonlab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "muonlab/error.hpp"

namespace muonlab {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix from_eigen(const Eigen::MatrixXd& e) {
  Matrix out(static_cast<std::size_t>(e.rows()), static_cast<std::size_t>(e.cols()));
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    for (Eigen::Index j = 0; j < e.cols(); ++j) {
      out(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = e(i, j);
    }
  }
  return out;
}

}  // namespace

Svd svd(const Matrix& m) {
  if (!m.all_finite()) throw ContractError("svd: non-finite input");
  Eigen::Map<const RowMajor> view(m.entries().data(), static_cast<Eigen::Index>(m.rows()),
                                  static_cast<Eigen::Index>(m.cols()));
  Eigen::JacobiSVD<Eigen::MatrixXd> solver(view, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("svd: backend did not converge on a " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + " input");
  }
  Svd out{from_eigen(solver.matrixU()), {}, from_eigen(solver.matrixV())};
  const auto& s = solver.singularValues();
  out.s.assign(s.data(), s.data() + s.size());
  if (!out.u.all_finite() || !out.v.all_finite() ||
      std::any_of(out.s.begin(), out.s.end(), [](double v) { return !std::isfinite(v); })) {
    throw NumericalError("svd: backend returned non-finite factors");
  }
  return out;
}

std::vector<double> singular_values(const Matrix& m) {
  if (!m.all_finite()) throw ContractError("singular_values: non-finite input");
  Eigen::Map<const RowMajor> view(m.entries().data(), static_cast<Eigen::Index>(m.rows()),
                                  static_cast<Eigen::Index>(m.cols()));
  Eigen::JacobiSVD<Eigen::MatrixXd> solver(view);
  if (solver.info() != Eigen::Success) throw NumericalError("singular_values: no convergence");
  const auto& s = solver.singularValues();
  return {s.data(), s.data() + s.size()};
}

Matrix polar_ortho(const Matrix& m) {
  if (m.is_zero()) return Matrix(m.rows(), m.cols());
  const Svd d = svd(m);
  const double cutoff = kRankTolerance * d.s.front();
  std::size_t rank = 0;
  while (rank < d.s.size() && d.s[rank] > cutoff) ++rank;

  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < rank; ++k) acc += d.u(i, k) * d.v(j, k);
      out(i, j) = acc;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Newton-Schulz

CoefficientSchedule::CoefficientSchedule(std::vector<QuinticCoefficients> steps)
    : steps_(std::move(steps)) {
  if (steps_.empty()) throw ContractError("coefficient schedule must have at least one step");
  for (const auto& s : steps_) {
    if (!std::isfinite(s.a) || !std::isfinite(s.b) || !std::isfinite(s.c)) {
      throw ContractError("coefficient schedule entries must be finite");
    }
  }
}

CoefficientSchedule CoefficientSchedule::fixed_quintic(std::size_t steps) {
  return CoefficientSchedule(std::vector<QuinticCoefficients>(steps, kFixedQuintic));
}

CoefficientSchedule CoefficientSchedule::from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("steps") || !doc["steps"].is_array()) {
    throw ContractError("coefficient schedule: expected object with array field \"steps\"");
  }
  std::vector<QuinticCoefficients> steps;
  for (std::size_t i = 0; i < doc["steps"].size(); ++i) {
    const auto& triple = doc["steps"][i];
    if (!triple.is_array() || triple.size() != 3 ||
        !std::all_of(triple.begin(), triple.end(), [](const auto& v) { return v.is_number(); })) {
      throw ContractError("coefficient schedule: steps[" + std::to_string(i) +
                          "] must be an array of three numbers");
    }
    steps.push_back({triple[0].get<double>(), triple[1].get<double>(), triple[2].get<double>()});
  }
  return CoefficientSchedule(std::move(steps));
}

CoefficientSchedule CoefficientSchedule::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot open coefficient schedule " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ContractError("coefficient schedule " + path.string() + ": " + e.what());
  }
  return from_json(doc);
}

nlohmann::json CoefficientSchedule::to_json() const {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : steps_) steps.push_back({s.a, s.b, s.c});
  return {{"steps", steps}};
}

double scalar_ns_map(double x, const CoefficientSchedule& schedule) {
  for (const auto& s : schedule.steps()) {
    const double x2 = x * x;
    x = x * (s.a + x2 * (s.b + s.c * x2));
  }
  return x;
}

Matrix newton_schulz(const Matrix& m, const CoefficientSchedule& schedule) {
  if (m.is_zero()) return Matrix(m.rows(), m.cols());
  // Iterate on the wide orientation so the Gram matrix is the small one.
  const bool tall = m.rows() > m.cols();
  Matrix x = tall ? m.transposed() : m;
  x *= 1.0 / std::max(frobenius_norm(x), kNsNormGuard);
  for (const auto& s : schedule.steps()) {
    const Matrix gram = matmul_nt(x, x);
    Matrix poly = s.b * gram + s.c * matmul(gram, gram);
    Matrix next = matmul(poly, x);
    next += s.a * x;
    x = std::move(next);
  }
  return tall ? x.transposed() : x;
}

NsScan ns_scan(const CoefficientSchedule& schedule, double lo, double hi, std::size_t points) {
  if (points == 0) throw ContractError("ns scan: point count must be positive");
  if (!(lo >= 0.0) || !(hi >= lo) || !std::isfinite(hi)) {
    throw ContractError("ns scan: need 0 <= lo <= hi");
  }
  NsScan out;
  out.x.reserve(points);
  out.y.reserve(points);
  for (std::size_t i = 0; i < points; ++i) {
    const double t = points == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(points - 1);
    const double x = i + 1 == points ? hi : lo + (hi - lo) * t;
    out.x.push_back(x);
    out.y.push_back(scalar_ns_map(x, schedule));
  }
  const auto [mn, mx] = std::minmax_element(out.y.begin(), out.y.end());
  out.envelope = NsEnvelope{lo, hi, points, *mn, *mx};
  return out;
}

// ---------------------------------------------------------------------------
// Norms and spectral metrics

SpectralReport spectral_report(const Matrix& m) {
  if (m.is_zero()) throw DomainError("spectral_report: zero matrix has no spectrum");
  SpectralReport r;
  r.singular_values = singular_values(m);
  r.spectral_norm = r.singular_values.front();
  r.frobenius_norm = frobenius_norm(m);
  r.max_norm = max_norm(m);

  // Work with q_i = (s_i / s_1)^2 so that Q = sum q_i lies in [1, k]; then
  // H = log Q - sum q_i log q_i / Q, which is exact for equal singular values.
  double q_total = 0.0;
  double q_log_q = 0.0;
  for (double s : r.singular_values) {
    const double q = (s / r.spectral_norm) * (s / r.spectral_norm);
    q_total += q;
    if (q > 0.0) q_log_q += q * std::log(q);
  }
  r.stable_rank = q_total;

  const std::size_t k = r.singular_values.size();
  if (k > 1) {
    const double h = std::log(q_total) - q_log_q / q_total;
    r.svd_entropy = std::clamp(h / std::log(static_cast<double>(k)), 0.0, 1.0);
  }
  return r;
}

MatrixNorms norms(const Matrix& m) {
  return {max_norm(m), spectral_norm(m), frobenius_norm(m)};
}

VectorNorms norms(std::span<const double> v) {
  return {norm_l0(v), norm_l1(v), norm_l2(v), norm_linf(v)};
}

double max_norm(const Matrix& m) { return norm_linf(m.entries()); }

double frobenius_norm(const Matrix& m) { return norm_l2(m.entries()); }

double spectral_norm(const Matrix& m) {
  if (m.is_zero()) return 0.0;
  return singular_values(m).front();
}

std::size_t norm_l0(std::span<const double> v) {
  return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](double e) { return e != 0.0; }));
}

double norm_l1(std::span<const double> v) {
  double acc = 0.0;
  for (double e : v) acc += std::abs(e);
  return acc;
}

double norm_l2(std::span<const double> v) {
  // Scaled accumulation keeps tiny or huge entries from under/overflowing.
  const double scale = norm_linf(v);
  if (scale == 0.0) return 0.0;
  double acc = 0.0;
  for (double e : v) {
    const double r = e / scale;
    acc += r * r;
  }
  return scale * std::sqrt(acc);
}

double norm_linf(std::span<const double> v) {
  double acc = 0.0;
  for (double e : v) acc = std::max(acc, std::abs(e));
  return acc;
}

}  // namespace muonlab
