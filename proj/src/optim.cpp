#include "muonlab/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "muonlab/error.hpp"
#include "muonlab/json_fields.hpp"

namespace muonlab {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ContractError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()));
  }
}

void require_eta(double eta, const char* what) {
  if (!(eta >= 0.0) || !std::isfinite(eta)) {
    throw ContractError(std::string(what) + ": learning rate must be finite and >= 0");
  }
}

void apply_weight_decay(Matrix& w, double eta, double lambda) {
  if (lambda > 0.0) w *= 1.0 - eta * lambda;
}

}  // namespace

// ---------------------------------------------------------------------------
// StepSchedule

StepSchedule StepSchedule::constant(double eta0) {
  if (!(eta0 >= 0.0)) throw ContractError("constant schedule: eta0 must be >= 0");
  StepSchedule s;
  s.kind_ = Kind::Constant;
  s.eta0_ = eta0;
  return s;
}

StepSchedule StepSchedule::harmonic(double eta0, double tau) {
  if (!(eta0 > 0.0) || !(tau > 0.0)) {
    throw ContractError("harmonic schedule: eta0 and tau must be positive");
  }
  StepSchedule s;
  s.kind_ = Kind::Harmonic;
  s.eta0_ = eta0;
  s.tau_ = tau;
  return s;
}

StepSchedule StepSchedule::cosine_warmup(double eta0, double warmup_ratio,
                                         std::int64_t total_steps) {
  if (!(eta0 >= 0.0)) throw ContractError("cosine schedule: eta0 must be >= 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    throw ContractError("cosine schedule: warmup_ratio must lie in [0, 1)");
  }
  if (total_steps < 1) throw ContractError("cosine schedule: total_steps must be >= 1");
  StepSchedule s;
  s.kind_ = Kind::CosineWarmup;
  s.eta0_ = eta0;
  s.warmup_ratio_ = warmup_ratio;
  s.total_steps_ = total_steps;
  return s;
}

std::int64_t StepSchedule::warmup_steps() const {
  if (kind_ != Kind::CosineWarmup) return 0;
  return static_cast<std::int64_t>(std::floor(warmup_ratio_ * static_cast<double>(total_steps_)));
}

double StepSchedule::eta(std::int64_t t) const {
  switch (kind_) {
    case Kind::Constant:
      return eta0_;
    case Kind::Harmonic:
      return eta0_ / (1.0 + static_cast<double>(t) / tau_);
    case Kind::CosineWarmup: {
      const std::int64_t warm = warmup_steps();
      if (t < warm) return eta0_ * static_cast<double>(t + 1) / static_cast<double>(warm);
      const double span = static_cast<double>(std::max<std::int64_t>(1, total_steps_ - warm));
      const double progress = std::min(1.0, static_cast<double>(t - warm) / span);
      return eta0_ * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
  }
  return eta0_;
}

nlohmann::json StepSchedule::to_json() const {
  switch (kind_) {
    case Kind::Constant:
      return {{"kind", "constant"}, {"eta0", eta0_}};
    case Kind::Harmonic:
      return {{"kind", "harmonic"}, {"eta0", eta0_}, {"tau", tau_}};
    case Kind::CosineWarmup:
      return {{"kind", "cosine_warmup"},
              {"eta0", eta0_},
              {"warmup_ratio", warmup_ratio_},
              {"total_steps", total_steps_}};
  }
  return {};
}

StepSchedule StepSchedule::from_json(const nlohmann::json& doc) {
  using namespace json_fields;
  const auto kind = require<std::string>(doc, "kind", "schedule");
  const auto eta0 = require<double>(doc, "eta0", "schedule");
  if (kind == "constant") return constant(eta0);
  if (kind == "harmonic") return harmonic(eta0, read_or<double>(doc, "tau", 1.0, "schedule"));
  if (kind == "cosine_warmup") {
    return cosine_warmup(eta0, read_or<double>(doc, "warmup_ratio", 0.03, "schedule"),
                         require<std::int64_t>(doc, "total_steps", "schedule"));
  }
  throw ContractError("schedule.kind: unknown schedule \"" + kind +
                      "\" (expected constant, harmonic, cosine_warmup)");
}

// ---------------------------------------------------------------------------
// Adam

AdamState::AdamState(std::size_t rows, std::size_t cols, AdamConfig config)
    : m_(rows, cols), v_(rows, cols), config_(config) {
  if (!(config.beta1 >= 0.0 && config.beta1 < 1.0) || !(config.beta2 >= 0.0 && config.beta2 < 1.0)) {
    throw ContractError("adam: betas must lie in [0, 1)");
  }
  if (!(config.eps > 0.0)) throw ContractError("adam: eps must be positive");
  if (!(config.weight_decay >= 0.0)) throw ContractError("adam: weight_decay must be >= 0");
}

Matrix adam_step(AdamState& state, const Matrix& w, const Matrix& g, double eta) {
  require_same_shape(w, g, "adam_step");
  require_same_shape(w, state.m_, "adam_step");
  require_eta(eta, "adam_step");
  const AdamConfig& c = state.config_;

  Matrix out = w;
  apply_weight_decay(out, eta, c.weight_decay);

  state.t_ += 1;
  const double t = static_cast<double>(state.t_);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);

  auto m = state.m_.entries();
  auto v = state.v_.entries();
  auto grad = g.entries();
  auto dst = out.entries();
  for (std::size_t k = 0; k < dst.size(); ++k) {
    m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * grad[k];
    v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * grad[k] * grad[k];
    const double m_hat = m[k] / correct1;
    const double v_hat = v[k] / correct2;
    dst[k] -= eta * m_hat / (std::sqrt(v_hat) + c.eps);
  }
  return out;
}

Matrix signgd_step(const Matrix& w, const Matrix& g, double eta) {
  require_same_shape(w, g, "signgd_step");
  require_eta(eta, "signgd_step");
  Matrix out = w;
  auto dst = out.entries();
  auto grad = g.entries();
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] -= eta * sign(grad[k]);
  return out;
}

// ---------------------------------------------------------------------------
// Muon

MuonConfig MuonConfig::idealized() {
  MuonConfig c;
  c.beta = 0.0;
  c.nesterov = false;
  c.scaling = MuonScaling::None;
  c.exact = true;
  c.weight_decay = 0.0;
  return c;
}

double muon_scale(MuonScaling scaling, std::size_t rows, std::size_t cols) {
  const double m = static_cast<double>(rows);
  const double n = static_cast<double>(cols);
  switch (scaling) {
    case MuonScaling::Original:
      return std::sqrt(std::max(1.0, m / n));
    case MuonScaling::Moonlight:
      return 0.2 * std::sqrt(std::max(m, n));
    case MuonScaling::None:
      return 1.0;
  }
  return 1.0;
}

MuonState::MuonState(std::size_t rows, std::size_t cols, MuonConfig config)
    : momentum_(rows, cols), config_(std::move(config)) {
  if (!(config_.beta >= 0.0 && config_.beta < 1.0)) throw ContractError("muon: beta must lie in [0, 1)");
  if (!(config_.weight_decay >= 0.0)) throw ContractError("muon: weight_decay must be >= 0");
}

Matrix muon_step(MuonState& state, const Matrix& w, const Matrix& g, double eta) {
  require_same_shape(w, g, "muon_step");
  require_same_shape(w, state.momentum_, "muon_step");
  require_eta(eta, "muon_step");
  const MuonConfig& c = state.config_;

  state.momentum_ *= c.beta;
  state.momentum_ += g;

  Matrix direction = c.nesterov ? g + c.beta * state.momentum_ : state.momentum_;
  const Matrix ortho = c.exact ? polar_ortho(direction) : newton_schulz(direction, c.schedule);

  Matrix out = w;
  apply_weight_decay(out, eta, c.weight_decay);
  const double step = eta * muon_scale(c.scaling, w.rows(), w.cols());
  auto dst = out.entries();
  auto o = ortho.entries();
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] -= step * o[k];
  return out;
}

// ---------------------------------------------------------------------------
// OptimizerSpec

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::Adam:
      return "adam";
    case OptimizerKind::SignGD:
      return "signgd";
    case OptimizerKind::Muon:
      return "muon";
  }
  return "unknown";
}

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "signgd") return OptimizerKind::SignGD;
  if (name == "muon") return OptimizerKind::Muon;
  throw ContractError("unknown optimizer \"" + name + "\" (expected adam, signgd, muon)");
}

namespace {

std::string scaling_name(MuonScaling s) {
  switch (s) {
    case MuonScaling::Original:
      return "original";
    case MuonScaling::Moonlight:
      return "moonlight";
    case MuonScaling::None:
      return "none";
  }
  return "none";
}

MuonScaling scaling_from_name(const std::string& s, const std::string& path) {
  if (s == "original") return MuonScaling::Original;
  if (s == "moonlight") return MuonScaling::Moonlight;
  if (s == "none") return MuonScaling::None;
  throw ContractError(path + ": unknown scaling \"" + s + "\" (expected original, moonlight, none)");
}

}  // namespace

nlohmann::json OptimizerSpec::to_json() const {
  nlohmann::json j{{"kind", muonlab::to_string(kind)}};
  if (kind == OptimizerKind::Adam) {
    j["beta1"] = adam.beta1;
    j["beta2"] = adam.beta2;
    j["eps"] = adam.eps;
    j["weight_decay"] = adam.weight_decay;
  } else if (kind == OptimizerKind::Muon) {
    j["beta"] = muon.beta;
    j["nesterov"] = muon.nesterov;
    j["scaling"] = scaling_name(muon.scaling);
    j["exact"] = muon.exact;
    j["weight_decay"] = muon.weight_decay;
    j["schedule"] = muon.schedule.to_json();
  }
  return j;
}

OptimizerSpec OptimizerSpec::from_json(const nlohmann::json& doc) {
  using namespace json_fields;
  OptimizerSpec spec;
  spec.kind = optimizer_kind_from_string(require<std::string>(doc, "kind", "optimizer"));
  if (spec.kind == OptimizerKind::Adam) {
    spec.adam.beta1 = read_or<double>(doc, "beta1", spec.adam.beta1, "optimizer");
    spec.adam.beta2 = read_or<double>(doc, "beta2", spec.adam.beta2, "optimizer");
    spec.adam.eps = read_or<double>(doc, "eps", spec.adam.eps, "optimizer");
    spec.adam.weight_decay = read_or<double>(doc, "weight_decay", 0.0, "optimizer");
  } else if (spec.kind == OptimizerKind::Muon) {
    spec.muon.beta = read_or<double>(doc, "beta", spec.muon.beta, "optimizer");
    spec.muon.nesterov = read_or<bool>(doc, "nesterov", spec.muon.nesterov, "optimizer");
    spec.muon.scaling = scaling_from_name(
        read_or<std::string>(doc, "scaling", scaling_name(spec.muon.scaling), "optimizer"),
        "optimizer.scaling");
    spec.muon.exact = read_or<bool>(doc, "exact", false, "optimizer");
    spec.muon.weight_decay = read_or<double>(doc, "weight_decay", 0.0, "optimizer");
    if (auto it = doc.find("schedule"); it != doc.end()) {
      if (it->is_string()) {
        spec.muon.schedule = CoefficientSchedule::load(it->get<std::string>());
      } else {
        spec.muon.schedule = CoefficientSchedule::from_json(*it);
      }
    } else if (auto ns = doc.find("ns_steps"); ns != doc.end()) {
      spec.muon.schedule =
          CoefficientSchedule::fixed_quintic(as<std::size_t>(*ns, "optimizer.ns_steps"));
    }
  }
  return spec;
}

ParamOptimizer::ParamOptimizer(const OptimizerSpec& spec, std::size_t rows, std::size_t cols)
    : state_(std::monostate{}) {
  switch (spec.kind) {
    case OptimizerKind::Adam:
      state_.emplace<AdamState>(rows, cols, spec.adam);
      break;
    case OptimizerKind::SignGD:
      break;
    case OptimizerKind::Muon:
      state_.emplace<MuonState>(rows, cols, spec.muon);
      break;
  }
}

Matrix ParamOptimizer::step(const Matrix& w, const Matrix& g, double eta) {
  if (auto* adam = std::get_if<AdamState>(&state_)) return adam_step(*adam, w, g, eta);
  if (auto* muon = std::get_if<MuonState>(&state_)) return muon_step(*muon, w, g, eta);
  return signgd_step(w, g, eta);
}

}  // namespace muonlab
