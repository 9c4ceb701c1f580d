#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>

#include <nlohmann/json_fwd.hpp>

#include "muonlab/linalg.hpp"
#include "muonlab/matrix.hpp"

namespace muonlab {

// ---------------------------------------------------------------------------
// Step-size schedules

/// Constant eta0; Harmonic eta0 / (1 + t / tau); CosineWarmup ramps linearly
/// to eta0 over the first warmup_ratio * total_steps steps and then follows a
/// half cosine down to 0 at total_steps.
class StepSchedule {
 public:
  enum class Kind { Constant, Harmonic, CosineWarmup };

  static StepSchedule constant(double eta0);
  static StepSchedule harmonic(double eta0, double tau);
  static StepSchedule cosine_warmup(double eta0, double warmup_ratio, std::int64_t total_steps);

  Kind kind() const { return kind_; }
  double eta0() const { return eta0_; }
  double tau() const { return tau_; }
  double warmup_ratio() const { return warmup_ratio_; }
  std::int64_t total_steps() const { return total_steps_; }
  std::int64_t warmup_steps() const;

  double eta(std::int64_t t) const;

  nlohmann::json to_json() const;
  static StepSchedule from_json(const nlohmann::json& doc);

 private:
  Kind kind_ = Kind::Constant;
  double eta0_ = 0.0;
  double tau_ = 1.0;
  double warmup_ratio_ = 0.0;
  std::int64_t total_steps_ = 1;
};

inline double schedule_eta(const StepSchedule& s, std::int64_t t) { return s.eta(t); }

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class AdamState {
 public:
  AdamState(std::size_t rows, std::size_t cols, AdamConfig config = {});

  const Matrix& first_moment() const { return m_; }
  const Matrix& second_moment() const { return v_; }
  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  friend Matrix adam_step(AdamState&, const Matrix&, const Matrix&, double);
  Matrix m_;
  Matrix v_;
  std::int64_t t_ = 0;
  AdamConfig config_;
};

/// One bias-corrected Adam step. Decoupled weight decay W <- W - eta*lambda*W
/// is applied before the moment update when weight_decay > 0.
Matrix adam_step(AdamState& state, const Matrix& w, const Matrix& g, double eta);

/// W - eta * sign(G), sign(0) = 0.
Matrix signgd_step(const Matrix& w, const Matrix& g, double eta);

// ---------------------------------------------------------------------------
// Muon

enum class MuonScaling { Original, Moonlight, None };

struct MuonConfig {
  double beta = 0.95;
  bool nesterov = true;
  MuonScaling scaling = MuonScaling::Moonlight;
  CoefficientSchedule schedule = CoefficientSchedule::fixed_quintic(5);
  bool exact = false;
  double weight_decay = 0.0;

  /// Momentum-free Muon with exact polar orthogonalization and unit scale,
  /// the form the implicit-bias results are stated for.
  static MuonConfig idealized();
};

/// Update multiplier: Original sqrt(max(1, m/n)), Moonlight 0.2 sqrt(max(m, n)), None 1.
double muon_scale(MuonScaling scaling, std::size_t rows, std::size_t cols);

class MuonState {
 public:
  MuonState(std::size_t rows, std::size_t cols, MuonConfig config = {});

  const Matrix& momentum() const { return momentum_; }
  const MuonConfig& config() const { return config_; }

 private:
  friend Matrix muon_step(MuonState&, const Matrix&, const Matrix&, double);
  Matrix momentum_;
  MuonConfig config_;
};

/// M <- beta M + G, then W <- W - eta * scale * ortho(N) where N is M, or
/// G + beta M with Nesterov. ortho is newton_schulz or, when exact is set,
/// polar_ortho.
Matrix muon_step(MuonState& state, const Matrix& w, const Matrix& g, double eta);

// ---------------------------------------------------------------------------
// Config-level optimizer selection used by the trainers and the CLI.

enum class OptimizerKind { Adam, SignGD, Muon };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::Adam;
  AdamConfig adam;
  MuonConfig muon;

  nlohmann::json to_json() const;
  static OptimizerSpec from_json(const nlohmann::json& doc);
};

/// Owns the per-parameter state for whichever optimizer the spec selects.
class ParamOptimizer {
 public:
  ParamOptimizer(const OptimizerSpec& spec, std::size_t rows, std::size_t cols);
  Matrix step(const Matrix& w, const Matrix& g, double eta);

 private:
  std::variant<AdamState, std::monostate, MuonState> state_;
};

}  // namespace muonlab
