#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <fmt/format.h>

#include "muonlab/biaslab.hpp"
#include "muonlab/expcli.hpp"
#include "muonlab/json_fields.hpp"
#include "muonlab/linalg.hpp"
#include "muonlab/lorakit.hpp"
#include "muonlab/microtrain.hpp"

namespace muonlab::cli {

namespace {

using nlohmann::json;
using json_fields::as;
using json_fields::read_or;

std::vector<std::uint64_t> read_seeds(const json& config) {
  auto it = config.find("seeds");
  if (it == config.end() || !it->is_array() || it->empty()) {
    throw UsageError("seeds: expected non-empty array of integers");
  }
  std::vector<std::uint64_t> seeds;
  for (const auto& s : *it) seeds.push_back(as<std::uint64_t>(s, "seeds[]"));
  return seeds;
}

Vector read_vector(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) throw UsageError(path + ": expected non-empty array of numbers");
  Vector out;
  for (const auto& e : v) out.push_back(as<double>(e, path + "[]"));
  return out;
}

json vector_json(std::span<const double> v) { return json(std::vector<double>(v.begin(), v.end())); }

json matrix_json(const Matrix& m) {
  return {{"m", m.rows()}, {"n", m.cols()}, {"entries", vector_json(m.entries())}};
}

std::size_t dim_in(const json& config, const std::string& key, std::size_t lo, std::size_t hi) {
  const auto v = read_or<std::size_t>(config, key, 0);
  if (v < lo || v > hi) throw UsageError(fmt::format("{}: must lie in [{}, {}]", key, lo, hi));
  return v;
}

// ---------------------------------------------------------------------------

CommandResult implicit_bias(const json& config) {
  const auto seeds = read_seeds(config);
  DescentOptions base;
  base.steps = read_or<std::int64_t>(config, "steps", base.steps);
  base.tol = read_or<double>(config, "tol", base.tol);
  base.log_every = read_or<std::int64_t>(config, "log_every", base.log_every);
  if (auto it = config.find("schedule"); it != config.end()) base.schedule = StepSchedule::from_json(*it);
  if (base.steps < 1) throw UsageError("steps: must be >= 1");
  if (base.log_every < 1) throw UsageError("log_every: must be >= 1");
  if (!(base.tol > 0.0)) throw UsageError("tol: must be > 0");

  std::vector<DescentOptimizer> optimizers;
  const auto& names = config.at("optimizers");
  if (!names.is_array() || names.empty()) throw UsageError("optimizers: expected non-empty array");
  for (const auto& n : names) optimizers.push_back(descent_optimizer_from_string(as<std::string>(n, "optimizers[]")));

  const bool random_w0 = read_or<std::string>(config, "w0", "zero") == "random";
  if (!random_w0 && config.at("w0") != "zero") throw UsageError("w0: expected \"zero\" or \"random\"");

  std::optional<RegressionProblem> fixed;
  if (const auto& p = config.at("problem"); !p.is_null()) {
    if (!p.is_object()) throw UsageError("problem: expected object {x, y}");
    fixed = RegressionProblem::make(read_vector(p.at("x"), "problem.x"), read_vector(p.at("y"), "problem.y"));
  }
  const std::size_t m = fixed ? 0 : dim_in(config, "m", 1, 64);
  const std::size_t n = fixed ? 0 : dim_in(config, "n", 1, 64);

  CommandResult result;
  json runs = json::array();
  bool certified = true;
  for (auto seed : seeds) {
    std::mt19937_64 rng(seed);
    RegressionProblem p = fixed ? *fixed : random_problem(rng, m, n);
    if (random_w0) {
      std::uniform_real_distribution<double> unit(-1.0, 1.0);
      Matrix w0(p.rows(), p.cols());
      for (double& v : w0.entries()) v = unit(rng) / std::sqrt(static_cast<double>(p.cols()));
      p = RegressionProblem::make(p.x, p.y, std::move(w0));
    }
    const Matrix s_form = signgd_limit(p);
    const Matrix mu_form = muon_limit(p);
    for (auto opt : optimizers) {
      DescentOptions options = base;
      options.optimizer = opt;
      const DescentResult r = run_descent(p, options);
      result.outputs.add(fmt::format("trajectory_seed{}_{}.csv", seed, to_string(opt)),
                         r.trajectory.to_csv());
      const bool gated = opt == DescentOptimizer::SignGD || opt == DescentOptimizer::ExactMuon;
      if (gated && !r.converged) certified = false;
      runs.push_back({{"seed", seed},
                      {"optimizer", to_string(opt)},
                      {"m", p.rows()},
                      {"n", p.cols()},
                      {"final_loss", p.loss(r.final_w)},
                      {"dist_max_to_matched", r.final_dist_max},
                      {"dist_max_to_signgd_form", max_norm(r.final_w - s_form)},
                      {"dist_max_to_muon_form", max_norm(r.final_w - mu_form)},
                      {"dist_spec_to_signgd_form", spectral_norm(r.final_w - s_form)},
                      {"dist_spec_to_muon_form", spectral_norm(r.final_w - mu_form)},
                      {"final_max_norm", max_norm(r.final_w)},
                      {"final_spectral_norm", spectral_norm(r.final_w)},
                      {"first_hit", r.first_hit},
                      {"converged", r.converged},
                      {"certified", gated}});
    }
  }
  result.outputs.add("summary.json", json{{"runs", runs}, {"tol", base.tol}, {"all_converged", certified}}.dump(2) + "\n");
  if (!certified) {
    result.status = kNotConverged;
    result.message = "at least one SignGD / exact-Muon run did not reach its closed form within tol";
  }
  return result;
}

// ---------------------------------------------------------------------------

constexpr double kOracleSlack = 1e-4;

CommandResult budget_curves(const json& config) {
  const auto seeds = read_seeds(config);
  const std::size_t m = dim_in(config, "m", 1, 64);
  const std::size_t n = dim_in(config, "n", 1, 64);
  const auto points = read_or<std::size_t>(config, "grid_points", 7);
  const auto scale = read_or<double>(config, "rho_scale", 1.5);
  const auto rank = read_or<std::size_t>(config, "surrogate_rank", 2);
  const auto iterations = read_or<int>(config, "oracle_iterations", kOracleIterations);
  if (points < 2) throw UsageError("grid_points: must be >= 2");
  if (!(scale > 0.0)) throw UsageError("rho_scale: must be > 0");
  if (rank < 1 || rank > n) throw UsageError(fmt::format("surrogate_rank: must lie in [1, {}]", n));
  if (iterations < 1) throw UsageError("oracle_iterations: must be >= 1");

  CommandResult result;
  std::string csv =
      "seed,rho,E_max,E_max_oracle,E_spec,E_spec_oracle,rho_A_star,rho_mu_star,tilde_rho_mu_max,"
      "tilde_rho_s_spec,inflation_max_geom,inflation_spec_geom,at_rho_A_star,at_rho_mu_star\n";
  json instances = json::array();
  double worst = -std::numeric_limits<double>::infinity();
  bool zeros_ok = true;

  for (auto seed : seeds) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Vector r0(m), z(n);
    do {
      for (double& v : r0) v = unit(rng);
      for (double& v : z) v = unit(rng);
    } while (norm_linf(r0) == 0.0 || norm_linf(z) == 0.0);

    const BudgetAnalysis full = thresholds(r0, z);
    std::vector<double> grid;
    const double top = scale * std::max(full.rho_a_star, full.rho_mu_star);
    for (std::size_t k = 0; k < points; ++k) {
      grid.push_back(top * static_cast<double>(k) / static_cast<double>(points - 1));
    }
    grid.push_back(full.rho_a_star);
    grid.push_back(full.rho_mu_star);
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    for (double rho : grid) {
      const double e_max = budget_error_max(r0, z, rho);
      const double e_spec = budget_error_spec(r0, z, rho);
      const double o_max = budget_oracle_max(r0, z, rho, iterations).error;
      const double o_spec = budget_oracle_spec(r0, z, rho, iterations).error;
      worst = std::max({worst, e_max - o_max, e_spec - o_spec});
      const bool at_a = rho == full.rho_a_star;
      const bool at_mu = rho == full.rho_mu_star;
      if ((at_a && e_max != 0.0) || (at_mu && e_spec != 0.0)) zeros_ok = false;
      csv += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", seed, rho, e_max, o_max,
                         e_spec, o_spec, full.rho_a_star, full.rho_mu_star, full.tilde_rho_mu_max,
                         full.tilde_rho_s_spec, full.inflation_max_geom, full.inflation_spec_geom,
                         at_a ? 1 : 0, at_mu ? 1 : 0);
    }

    // Fixed-subspace adapter geometry u = A z for a random frozen A.
    auto surrogate = [&](std::size_t r) {
      std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(n)));
      Matrix a(r, n);
      for (double& v : a.entries()) v = gauss(rng);
      const Vector u = matvec(a, z);
      json entry{{"rank", r}, {"a", matrix_json(a)}, {"u", vector_json(u)}};
      if (norm_linf(u) == 0.0) {
        entry["degenerate"] = true;
        return entry;
      }
      const SurrogateFixedPoints fp = surrogate_fixed_points(r0, u);
      entry["analysis"] = thresholds(r0, u).to_json();
      entry["b_s"] = matrix_json(fp.b_s);
      entry["b_mu"] = matrix_json(fp.b_mu);
      entry["b_s_equals_b_mu"] = fp.b_s == fp.b_mu;
      entry["max_abs_diff"] = max_norm(fp.b_s - fp.b_mu);
      return entry;
    };

    instances.push_back({{"seed", seed},
                         {"r0", vector_json(r0)},
                         {"z", vector_json(z)},
                         {"full", full.to_json()},
                         {"surrogate", surrogate(rank)},
                         {"rank1", surrogate(1)}});
  }

  result.outputs.add("budget_curves.csv", std::move(csv));
  result.outputs.add("thresholds.json",
                     json{{"instances", instances},
                          {"max_closed_minus_oracle", worst},
                          {"oracle_slack", kOracleSlack},
                          {"zeros_at_thresholds", zeros_ok}}
                             .dump(2) + "\n");
  if (worst > kOracleSlack || !zeros_ok) {
    result.status = kNotConverged;
    result.message = fmt::format("closed form exceeds oracle by {} (slack {}) or a threshold error is nonzero",
                                 worst, kOracleSlack);
  }
  return result;
}

// ---------------------------------------------------------------------------

CoefficientSchedule resolve_schedule(const json& config) {
  const json& s = config.at("schedule");
  if (s.is_string()) {
    const auto name = s.get<std::string>();
    if (name == "fixed_quintic") {
      return CoefficientSchedule::fixed_quintic(read_or<std::size_t>(config, "steps", 5));
    }
    try {
      return CoefficientSchedule::load(name);
    } catch (const ContractError& e) {
      throw UsageError(std::string("schedule: ") + e.what());
    }
  }
  if (s.is_object()) return CoefficientSchedule::from_json(s);
  throw UsageError("schedule: expected \"fixed_quintic\", a file path or {\"steps\": [...]}");
}

CommandResult ns_scan_cmd(const json& config) {
  const CoefficientSchedule schedule = resolve_schedule(config);
  const auto lo = read_or<double>(config, "lo", 1e-3);
  const auto hi = read_or<double>(config, "hi", 1.0);
  const auto points = read_or<std::size_t>(config, "points", 10000);
  if (points == 0) throw UsageError("points: scan range has no rows");
  if (!(lo <= hi)) throw UsageError("lo/hi: empty scan range (lo > hi)");
  const NsScan scan = ns_scan(schedule, lo, hi, points);

  std::string csv = "x,y\n";
  for (std::size_t i = 0; i < scan.x.size(); ++i) csv += fmt::format("{},{}\n", scan.x[i], scan.y[i]);
  CommandResult result;
  result.outputs.add("ns_scan.csv", std::move(csv));
  const json envelope{{"lo", scan.envelope.lo},          {"hi", scan.envelope.hi},
                      {"points", scan.envelope.points},  {"steps", schedule.size()},
                      {"min", scan.envelope.min},        {"max", scan.envelope.max},
                      {"schedule", schedule.to_json()}};
  result.outputs.add("envelope.json", envelope.dump(2) + "\n");
  return result;
}

// ---------------------------------------------------------------------------

Matrix load_weights(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("weights: cannot open " + path);
  json doc = json::parse(f, nullptr, false);
  if (doc.is_discarded()) throw UsageError("weights: " + path + " is not valid JSON");
  const auto m = json_fields::require<std::size_t>(doc, "m", "weights");
  const auto n = json_fields::require<std::size_t>(doc, "n", "weights");
  const auto it = doc.find("entries");
  if (it == doc.end() || !it->is_array()) throw UsageError("weights.entries: expected array");
  std::vector<double> entries;
  for (const auto& v : *it) entries.push_back(as<double>(v, "weights.entries[]"));
  if (m == 0 || n == 0 || entries.size() != m * n) {
    throw UsageError(fmt::format("weights: {} has {} entries, expected m*n = {}", path, entries.size(), m * n));
  }
  return Matrix(m, n, std::move(entries));
}

CommandResult spectra(const json& config) {
  std::vector<std::string> paths;
  const json& w = config.at("weights");
  if (w.is_string()) {
    paths.push_back(w.get<std::string>());
  } else if (w.is_array() && !w.empty()) {
    for (const auto& p : w) paths.push_back(as<std::string>(p, "weights[]"));
  } else {
    throw UsageError("weights: expected a file path or a non-empty array of paths");
  }

  std::string csv = "file,m,n,stable_rank,svd_entropy,max_norm,spectral_norm,frobenius_norm\n";
  json reports = json::array();
  for (const auto& path : paths) {
    const Matrix m = load_weights(path);
    const SpectralReport s = spectral_report(m);
    csv += fmt::format("{},{},{},{},{},{},{},{}\n", path, m.rows(), m.cols(), s.stable_rank,
                       s.svd_entropy, s.max_norm, s.spectral_norm, s.frobenius_norm);
    reports.push_back({{"file", path},
                       {"m", m.rows()},
                       {"n", m.cols()},
                       {"stable_rank", s.stable_rank},
                       {"svd_entropy", s.svd_entropy},
                       {"max_norm", s.max_norm},
                       {"spectral_norm", s.spectral_norm},
                       {"frobenius_norm", s.frobenius_norm},
                       {"singular_values", s.singular_values}});
  }
  CommandResult result;
  result.outputs.add("spectra.csv", std::move(csv));
  result.outputs.add("spectra.json", json{{"reports", reports}}.dump(2) + "\n");
  return result;
}

// ---------------------------------------------------------------------------

std::string trajectory_rows(const std::string& key, const TrainResult& r) {
  std::string body = r.to_csv();
  body.erase(0, body.find('\n') + 1);
  std::string out;
  std::size_t start = 0;
  while (start < body.size()) {
    const std::size_t end = body.find('\n', start);
    out += key;
    out.append(body, start, end - start + 1);
    start = end + 1;
  }
  return out;
}

CommandResult microtrain_cmd(const json& config, unsigned threads) {
  const ExperimentConfig exp = ExperimentConfig::from_json(config);
  const GridReport report = mismatch_grid(exp, threads);

  const std::string columns = "step,eta,loss,srank_w1,entropy_w1,srank_w2,entropy_w2\n";
  std::string pre = "seed,optimizer,diverged," + columns;
  for (const auto& run : report.pretrain_runs) {
    pre += trajectory_rows(fmt::format("{},{},{},", run.seed, to_string(run.optimizer),
                                       run.result.diverged ? 1 : 0),
                           run.result);
  }
  std::string ft = "seed,pretrain,finetune,mode,lr,diverged," + columns;
  std::string runs = "seed,pretrain,finetune,mode,lr,eval_loss,pretrained_eval_loss,diverged\n";
  for (const auto& run : report.finetune_runs) {
    const std::string key = fmt::format("{},{},{},{},{},{},", run.seed, to_string(run.pretrain),
                                        to_string(run.finetune), to_string(run.mode), run.lr,
                                        run.result.diverged ? 1 : 0);
    ft += trajectory_rows(key, run.result);
    double baseline = 0.0;
    for (const auto& p : report.pretrain_runs) {
      if (p.seed == run.seed && p.optimizer == run.pretrain) baseline = p.finetune_baseline;
    }
    if (run.result.diverged) {
      runs += fmt::format("{},{},{},{},{},,{},1\n", run.seed, to_string(run.pretrain),
                          to_string(run.finetune), to_string(run.mode), run.lr, baseline);
    } else {
      runs += fmt::format("{},{},{},{},{},{},{},0\n", run.seed, to_string(run.pretrain),
                          to_string(run.finetune), to_string(run.mode), run.lr, run.eval_loss, baseline);
    }
  }

  CommandResult result;
  result.outputs.add("grid_table.json", report.table_json().dump(2) + "\n");
  result.outputs.add("lr_sweep.csv", report.sweep_csv());
  result.outputs.add("runs.csv", std::move(runs));
  result.outputs.add("pretrain_trajectories.csv", std::move(pre));
  result.outputs.add("finetune_trajectories.csv", std::move(ft));
  return result;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"implicit-bias", "budget-curves", "ns-scan",
                                              "microtrain", "spectra"};
  return names;
}

nlohmann::json default_config(const std::string& command) {
  if (command == "implicit-bias") {
    return {{"seeds", {1}},
            {"m", 4},
            {"n", 8},
            {"w0", "zero"},
            {"problem", nullptr},
            {"optimizers", {"signgd", "muon_exact"}},
            {"schedule", StepSchedule::harmonic(0.5, 1.0).to_json()},
            {"steps", 20000},
            {"tol", 1e-3},
            {"log_every", 100}};
  }
  if (command == "budget-curves") {
    return {{"seeds", {1}},       {"m", 4},
            {"n", 8},             {"grid_points", 7},
            {"rho_scale", 1.5},   {"surrogate_rank", 2},
            {"oracle_iterations", kOracleIterations}};
  }
  if (command == "ns-scan") {
    return {{"schedule", "fixed_quintic"}, {"steps", 5}, {"lo", 1e-3}, {"hi", 1.0}, {"points", 10000}};
  }
  if (command == "microtrain") return ExperimentConfig{}.to_json();
  if (command == "spectra") return {{"weights", nlohmann::json::array()}};
  throw UsageError("unknown command \"" + command + "\"");
}

CommandResult run_command(const std::string& command, const nlohmann::json& config,
                          unsigned threads) {
  if (command == "implicit-bias") return implicit_bias(config);
  if (command == "budget-curves") return budget_curves(config);
  if (command == "ns-scan") return ns_scan_cmd(config);
  if (command == "microtrain") return microtrain_cmd(config, threads);
  if (command == "spectra") return spectra(config);
  throw UsageError("unknown command \"" + command + "\"");
}

}  // namespace muonlab::cli
