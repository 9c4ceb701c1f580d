#include "muonlab/microtrain.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "muonlab/error.hpp"
#include "muonlab/json_fields.hpp"
#include "muonlab/linalg.hpp"

namespace muonlab {

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  Matrix out(rows, cols);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : out.entries()) v = dist(rng);
  return out;
}

double fan_in_std(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

// Stream offsets keep task data, student init and adapter init independent.
constexpr std::uint64_t kTaskStream = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kStudentStream = 0xbf58476d1ce4e5b9ULL;
constexpr std::uint64_t kAdapterStream = 0x94d049bb133111ebULL;

}  // namespace

MlpModel MlpModel::init(const MlpDims& dims, std::mt19937_64& rng) {
  MlpModel m;
  m.w1 = gaussian(dims.h, dims.d, fan_in_std(dims.d), rng);
  m.w2 = gaussian(dims.o, dims.h, fan_in_std(dims.h), rng);
  return m;
}

namespace {

struct Forward {
  Matrix pre;     // N x h
  Matrix hidden;  // N x h
  Matrix out;     // N x o
};

Forward forward(const MlpModel& model, const Matrix& inputs) {
  if (inputs.cols() != model.w1.cols() || model.w2.cols() != model.w1.rows()) {
    throw ContractError("mlp: input or layer shapes do not chain");
  }
  Forward f;
  f.pre = matmul_nt(inputs, model.w1);
  f.hidden = f.pre;
  for (double& v : f.hidden.entries()) v = std::max(0.0, v);
  f.out = matmul_nt(f.hidden, model.w2);
  return f;
}

double mean_squared(const Matrix& pred, const Matrix& targets) {
  if (!pred.same_shape(targets)) throw ContractError("mse: prediction/target shape mismatch");
  double acc = 0.0;
  auto p = pred.entries();
  auto t = targets.entries();
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double e = p[k] - t[k];
    acc += e * e;
  }
  return acc / static_cast<double>(p.size());
}

}  // namespace

Matrix predict(const MlpModel& model, const Matrix& inputs) { return forward(model, inputs).out; }

double mse(const MlpModel& model, const Dataset& data) {
  return mean_squared(predict(model, data.inputs), data.targets);
}

MlpGrads mlp_grads(const MlpModel& model, const Dataset& data) {
  Forward f = forward(model, data.inputs);
  MlpGrads g;
  g.loss = mean_squared(f.out, data.targets);

  Matrix d_out = f.out - data.targets;
  d_out *= 2.0 / static_cast<double>(d_out.size());
  g.dw2 = matmul_tn(d_out, f.hidden);
  Matrix d_pre = matmul(d_out, model.w2);
  auto pre = f.pre.entries();
  auto dp = d_pre.entries();
  for (std::size_t k = 0; k < dp.size(); ++k) {
    if (!(pre[k] > 0.0)) dp[k] = 0.0;
  }
  g.dw1 = matmul_tn(d_pre, data.inputs);
  return g;
}

TaskPair synth_tasks(std::uint64_t seed, const MlpDims& dims, std::size_t train_samples,
                     std::size_t eval_samples) {
  if (dims.d < 2 || dims.h < 2 || dims.o < 2) throw ContractError("synth_tasks: dims must be >= 2");
  if (train_samples == 0 || eval_samples == 0) {
    throw ContractError("synth_tasks: sample counts must be positive");
  }
  std::mt19937_64 rng(seed ^ kTaskStream);
  const MlpModel teacher_a = MlpModel::init(dims, rng);
  MlpModel teacher_b = teacher_a;
  // Task B keeps the shared features and perturbs the readout.
  teacher_b.w2 += gaussian(dims.o, dims.h, 0.5 * fan_in_std(dims.h), rng);

  auto sample = [&](const MlpModel& teacher, const Matrix& inputs) {
    return Dataset{inputs, predict(teacher, inputs)};
  };
  const Matrix train_a = gaussian(train_samples, dims.d, 1.0, rng);
  const Matrix eval_a = gaussian(eval_samples, dims.d, 1.0, rng);
  const Matrix train_b = gaussian(train_samples, dims.d, 1.0, rng);
  const Matrix eval_b = gaussian(eval_samples, dims.d, 1.0, rng);

  return TaskPair{Task{"A", teacher_a, sample(teacher_a, train_a), sample(teacher_a, eval_a)},
                  Task{"B", teacher_b, sample(teacher_b, train_b), sample(teacher_b, eval_b)}};
}

std::string to_string(TrainMode mode) { return mode == TrainMode::Full ? "full" : "lora"; }

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "full") return TrainMode::Full;
  if (name == "lora") return TrainMode::Lora;
  throw ContractError("unknown train mode \"" + name + "\" (expected full, lora)");
}

// ---------------------------------------------------------------------------
// Training

std::string TrainResult::to_csv() const {
  std::string out = "step,eta,loss,srank_w1,entropy_w1,srank_w2,entropy_w2\n";
  for (const auto& r : records) {
    if (r.spectral) {
      out += fmt::format("{},{},{},{},{},{},{}\n", r.step, r.eta, r.loss, r.srank_w1,
                         r.entropy_w1, r.srank_w2, r.entropy_w2);
    } else {
      out += fmt::format("{},{},{},,,,\n", r.step, r.eta, r.loss);
    }
  }
  return out;
}

namespace {

void log_spectrum(TrainRecord& rec, const MlpModel& effective) {
  const SpectralReport s1 = spectral_report(effective.w1);
  const SpectralReport s2 = spectral_report(effective.w2);
  rec.spectral = true;
  rec.srank_w1 = s1.stable_rank;
  rec.entropy_w1 = s1.svd_entropy;
  rec.srank_w2 = s2.stable_rank;
  rec.entropy_w2 = s2.svd_entropy;
}

}  // namespace

TrainResult train(const MlpModel& model, const Dataset& data, const TrainOptions& options) {
  if (options.steps < 0) throw ContractError("train: steps must be >= 0");
  if (options.log_every < 1) throw ContractError("train: log_every must be >= 1");

  TrainResult result;
  result.base = model;
  result.effective = model;
  const bool lora = options.mode == TrainMode::Lora;

  std::vector<ParamOptimizer> opts;
  if (lora) {
    std::mt19937_64 rng(options.adapter_seed ^ kAdapterStream);
    result.adapter1 = LoraAdapter::init(model.w1, options.lora.rank, options.lora.alpha,
                                        options.lora.rule, rng);
    result.adapter2 = LoraAdapter::init(model.w2, options.lora.rank, options.lora.alpha,
                                        options.lora.rule, rng);
    for (const LoraAdapter* ad : {&*result.adapter1, &*result.adapter2}) {
      opts.emplace_back(options.optimizer, ad->b.rows(), ad->b.cols());
      opts.emplace_back(options.optimizer, ad->a.rows(), ad->a.cols());
    }
  } else {
    opts.emplace_back(options.optimizer, model.w1.rows(), model.w1.cols());
    opts.emplace_back(options.optimizer, model.w2.rows(), model.w2.cols());
  }

  for (std::int64_t t = 0; t < options.steps; ++t) {
    const double eta = options.schedule.eta(t);
    const MlpGrads g = mlp_grads(result.effective, data);

    TrainRecord rec{t, eta, g.loss};
    if (!std::isfinite(g.loss) || g.loss > kDivergenceLoss) {
      result.diverged = true;
      result.diagnostic = fmt::format("diverged at step {}: loss {}", t, g.loss);
      result.records.push_back(rec);
      break;
    }
    if (t % options.log_every == 0) {
      log_spectrum(rec, result.effective);
      if (options.keep_checkpoints) result.checkpoints.push_back({t, result.effective});
    }
    result.records.push_back(rec);

    if (lora) {
      LoraAdapter* adapters[2] = {&*result.adapter1, &*result.adapter2};
      const Matrix* grads[2] = {&g.dw1, &g.dw2};
      for (int k = 0; k < 2; ++k) {
        const LoraGrads lg = lora_grads(*grads[k], *adapters[k]);
        adapters[k]->b = opts[2 * k].step(adapters[k]->b, lg.db, eta);
        if (adapters[k]->a_trainable) adapters[k]->a = opts[2 * k + 1].step(adapters[k]->a, lg.da, eta);
      }
      result.effective.w1 = lora_forward(*result.adapter1);
      result.effective.w2 = lora_forward(*result.adapter2);
    } else {
      result.effective.w1 = opts[0].step(result.effective.w1, g.dw1, eta);
      result.effective.w2 = opts[1].step(result.effective.w2, g.dw2, eta);
      result.base = result.effective;
    }

    if (!result.effective.all_finite()) {
      result.diverged = true;
      result.diagnostic = fmt::format("non-finite weights after step {} (eta {})", t, eta);
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Config

namespace {

std::vector<OptimizerKind> read_kinds(const nlohmann::json& doc, const std::string& key,
                                      std::vector<OptimizerKind> fallback,
                                      const std::string& prefix) {
  auto it = doc.find(key);
  if (it == doc.end()) return fallback;
  const std::string path = json_fields::join(prefix, key);
  if (!it->is_array()) throw ContractError(path + ": expected array of optimizer names");
  std::vector<OptimizerKind> out;
  for (const auto& v : *it) {
    const auto name = json_fields::as<std::string>(v, path + "[]");
    const auto kind = optimizer_kind_from_string(name);
    if (kind == OptimizerKind::SignGD) throw ContractError(path + ": expected adam or muon");
    out.push_back(kind);
  }
  return out;
}

std::map<OptimizerKind, double> read_lr_map(const nlohmann::json& doc, const std::string& key,
                                             std::map<OptimizerKind, double> fallback,
                                             const std::string& prefix) {
  auto it = doc.find(key);
  if (it == doc.end()) return fallback;
  const std::string path = json_fields::join(prefix, key);
  if (!it->is_object()) throw ContractError(path + ": expected object {optimizer: lr}");
  for (const auto& [name, v] : it->items()) {
    fallback[optimizer_kind_from_string(name)] = json_fields::as<double>(v, path + "." + name);
  }
  return fallback;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ContractError("seeds: must list at least one seed");
  if (dims.d < 2 || dims.h < 2 || dims.o < 2) throw ContractError("dims: every dimension must be >= 2");
  if (train_samples == 0 || eval_samples == 0) throw ContractError("samples: counts must be >= 1");
  if (log_every < 1) throw ContractError("log_every: must be >= 1");
  if (pretrain_task != "A" && pretrain_task != "B") throw ContractError("pretrain.task: expected A or B");
  if (finetune_task != "A" && finetune_task != "B") throw ContractError("finetune.task: expected A or B");
  if (pretrain_steps < 1) throw ContractError("pretrain.steps: must be >= 1");
  if (finetune_steps < 1) throw ContractError("finetune.steps: must be >= 1");
  if (pretrain_optimizers.empty()) throw ContractError("pretrain.optimizers: must not be empty");
  if (finetune_optimizers.empty()) throw ContractError("finetune.optimizers: must not be empty");
  if (modes.empty()) throw ContractError("finetune.modes: must not be empty");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw ContractError("warmup_ratio: must lie in [0, 1)");
  for (auto kind : pretrain_optimizers) {
    auto it = pretrain_lr.find(kind);
    if (it == pretrain_lr.end() || !(it->second >= 0.0)) {
      throw ContractError("pretrain.lr." + to_string(kind) + ": missing or negative");
    }
  }
  for (auto kind : finetune_optimizers) {
    auto it = lr_sweep.find(kind);
    if (it == lr_sweep.end() || it->second.empty()) {
      throw ContractError("finetune.lr_sweep." + to_string(kind) + ": lr list must be non-empty");
    }
    for (double lr : it->second) {
      if (!(lr >= 0.0)) throw ContractError("finetune.lr_sweep." + to_string(kind) + ": lr must be >= 0");
    }
  }
  if (std::find(modes.begin(), modes.end(), TrainMode::Lora) != modes.end()) {
    const std::size_t cap = std::min({dims.d, dims.h, dims.o});
    if (lora.rank < 1 || lora.rank > cap) {
      throw ContractError("finetune.lora.rank: must lie in [1, " + std::to_string(cap) + "]");
    }
  }
}

OptimizerSpec ExperimentConfig::spec_for(OptimizerKind kind) const {
  return kind == OptimizerKind::Muon ? muon : adam;
}

nlohmann::json ExperimentConfig::to_json() const {
  auto kinds = [](const std::vector<OptimizerKind>& ks) {
    nlohmann::json a = nlohmann::json::array();
    for (auto k : ks) a.push_back(to_string(k));
    return a;
  };
  nlohmann::json pre_lr = nlohmann::json::object();
  for (const auto& [k, v] : pretrain_lr) pre_lr[to_string(k)] = v;
  nlohmann::json sweep = nlohmann::json::object();
  for (const auto& [k, v] : lr_sweep) sweep[to_string(k)] = v;
  nlohmann::json mode_list = nlohmann::json::array();
  for (auto m : modes) mode_list.push_back(to_string(m));

  return {{"seeds", seeds},
          {"dims", {{"d", dims.d}, {"h", dims.h}, {"o", dims.o}}},
          {"samples", {{"train", train_samples}, {"eval", eval_samples}}},
          {"log_every", log_every},
          {"warmup_ratio", warmup_ratio},
          {"pretrain",
           {{"task", pretrain_task},
            {"steps", pretrain_steps},
            {"optimizers", kinds(pretrain_optimizers)},
            {"lr", pre_lr}}},
          {"finetune",
           {{"task", finetune_task},
            {"steps", finetune_steps},
            {"optimizers", kinds(finetune_optimizers)},
            {"modes", mode_list},
            {"lora",
             {{"rank", lora.rank}, {"alpha", lora.alpha}, {"rule", to_string(lora.rule)}}},
            {"lr_sweep", sweep}}},
          {"optimizers", {{"adam", adam.to_json()}, {"muon", muon.to_json()}}}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& doc) {
  using namespace json_fields;
  if (!doc.is_object()) throw ContractError("<root>: expected JSON object");
  ExperimentConfig c;
  if (auto it = doc.find("seeds"); it != doc.end()) {
    if (!it->is_array()) throw ContractError("seeds: expected array of integers");
    c.seeds.clear();
    for (const auto& s : *it) c.seeds.push_back(as<std::uint64_t>(s, "seeds[]"));
  }
  if (auto it = doc.find("dims"); it != doc.end()) {
    c.dims.d = read_or<std::size_t>(*it, "d", c.dims.d, "dims");
    c.dims.h = read_or<std::size_t>(*it, "h", c.dims.h, "dims");
    c.dims.o = read_or<std::size_t>(*it, "o", c.dims.o, "dims");
  }
  if (auto it = doc.find("samples"); it != doc.end()) {
    c.train_samples = read_or<std::size_t>(*it, "train", c.train_samples, "samples");
    c.eval_samples = read_or<std::size_t>(*it, "eval", c.eval_samples, "samples");
  }
  c.log_every = read_or<std::int64_t>(doc, "log_every", c.log_every);
  c.warmup_ratio = read_or<double>(doc, "warmup_ratio", c.warmup_ratio);

  if (auto it = doc.find("pretrain"); it != doc.end()) {
    const auto& p = *it;
    c.pretrain_task = read_or<std::string>(p, "task", c.pretrain_task, "pretrain");
    c.pretrain_steps = read_or<std::int64_t>(p, "steps", c.pretrain_steps, "pretrain");
    c.pretrain_optimizers = read_kinds(p, "optimizers", c.pretrain_optimizers, "pretrain");
    c.pretrain_lr = read_lr_map(p, "lr", c.pretrain_lr, "pretrain");
  }
  if (auto it = doc.find("finetune"); it != doc.end()) {
    const auto& f = *it;
    c.finetune_task = read_or<std::string>(f, "task", c.finetune_task, "finetune");
    c.finetune_steps = read_or<std::int64_t>(f, "steps", c.finetune_steps, "finetune");
    c.finetune_optimizers = read_kinds(f, "optimizers", c.finetune_optimizers, "finetune");
    if (auto m = f.find("modes"); m != f.end()) {
      if (!m->is_array()) throw ContractError("finetune.modes: expected array");
      c.modes.clear();
      for (const auto& v : *m) c.modes.push_back(train_mode_from_string(as<std::string>(v, "finetune.modes[]")));
    }
    if (auto l = f.find("lora"); l != f.end()) {
      c.lora.rank = read_or<std::size_t>(*l, "rank", c.lora.rank, "finetune.lora");
      c.lora.alpha = read_or<double>(*l, "alpha", c.lora.alpha, "finetune.lora");
      c.lora.rule = lora_scaling_from_string(
          read_or<std::string>(*l, "rule", to_string(c.lora.rule), "finetune.lora"));
    }
    if (auto s = f.find("lr_sweep"); s != f.end()) {
      if (!s->is_object()) throw ContractError("finetune.lr_sweep: expected object {optimizer: [lr...]}");
      for (const auto& [name, v] : s->items()) {
        const std::string path = "finetune.lr_sweep." + name;
        if (!v.is_array()) throw ContractError(path + ": expected array of numbers");
        std::vector<double> lrs;
        for (const auto& e : v) lrs.push_back(as<double>(e, path + "[]"));
        c.lr_sweep[optimizer_kind_from_string(name)] = std::move(lrs);
      }
    }
  }
  if (auto it = doc.find("optimizers"); it != doc.end()) {
    if (auto a = it->find("adam"); a != it->end()) {
      nlohmann::json spec = *a;
      spec["kind"] = "adam";
      c.adam = OptimizerSpec::from_json(spec);
    }
    if (auto m = it->find("muon"); m != it->end()) {
      nlohmann::json spec = *m;
      spec["kind"] = "muon";
      c.muon = OptimizerSpec::from_json(spec);
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Grid

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

namespace {

const Task& pick(const TaskPair& tasks, const std::string& name) {
  return name == "A" ? tasks.a : tasks.b;
}

std::string method_name(TrainMode mode, OptimizerKind ft) {
  return std::string(mode == TrainMode::Full ? "Full" : "LoRA") + "-" +
         (ft == OptimizerKind::Muon ? "Muon" : "Adam");
}

}  // namespace

GridReport mismatch_grid(const ExperimentConfig& config, unsigned threads) {
  config.validate();
  GridReport report;

  std::vector<TaskPair> tasks;
  for (auto seed : config.seeds) {
    tasks.push_back(synth_tasks(seed, config.dims, config.train_samples, config.eval_samples));
  }

  // Stage 1: pretraining, one run per (seed, optimizer).
  for (std::size_t s = 0; s < config.seeds.size(); ++s) {
    for (auto kind : config.pretrain_optimizers) {
      report.pretrain_runs.push_back(PretrainRun{config.seeds[s], kind, {}, 0.0});
    }
  }
  parallel_for(report.pretrain_runs.size(), threads, [&](std::size_t i) {
    PretrainRun& run = report.pretrain_runs[i];
    const std::size_t s = i / config.pretrain_optimizers.size();
    std::mt19937_64 rng(run.seed ^ kStudentStream);
    const MlpModel student = MlpModel::init(config.dims, rng);
    TrainOptions opt;
    opt.optimizer = config.spec_for(run.optimizer);
    opt.schedule = StepSchedule::cosine_warmup(config.pretrain_lr.at(run.optimizer),
                                               config.warmup_ratio, config.pretrain_steps);
    opt.steps = config.pretrain_steps;
    opt.log_every = config.log_every;
    run.result = train(student, pick(tasks[s], config.pretrain_task).train, opt);
    run.finetune_baseline = mse(run.result.effective, pick(tasks[s], config.finetune_task).eval);
  });

  // Stage 2: fine-tuning sweep.
  struct Job {
    std::size_t pretrain_index;
    std::size_t seed_index;
  };
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < report.pretrain_runs.size(); ++p) {
    const PretrainRun& pre = report.pretrain_runs[p];
    const std::size_t s = p / config.pretrain_optimizers.size();
    for (auto ft : config.finetune_optimizers) {
      for (auto mode : config.modes) {
        for (double lr : config.lr_sweep.at(ft)) {
          report.finetune_runs.push_back(FinetuneRun{pre.seed, pre.optimizer, ft, mode, lr, {}, 0.0});
          jobs.push_back({p, s});
        }
      }
    }
  }
  parallel_for(report.finetune_runs.size(), threads, [&](std::size_t i) {
    FinetuneRun& run = report.finetune_runs[i];
    const PretrainRun& pre = report.pretrain_runs[jobs[i].pretrain_index];
    const Task& task = pick(tasks[jobs[i].seed_index], config.finetune_task);
    TrainOptions opt;
    opt.optimizer = config.spec_for(run.finetune);
    opt.schedule = StepSchedule::cosine_warmup(run.lr, config.warmup_ratio, config.finetune_steps);
    opt.steps = config.finetune_steps;
    opt.mode = run.mode;
    opt.lora = config.lora;
    opt.log_every = config.log_every;
    opt.adapter_seed = run.seed;
    if (pre.result.diverged) {
      run.result.diverged = true;
      run.result.diagnostic = "pretraining diverged: " + pre.result.diagnostic;
      run.eval_loss = std::numeric_limits<double>::infinity();
      return;
    }
    run.result = train(pre.result.effective, task.train, opt);
    run.eval_loss = run.result.diverged ? std::numeric_limits<double>::infinity()
                                        : mse(run.result.effective, task.eval);
    if (!std::isfinite(run.eval_loss) && !run.result.diverged) {
      run.result.diverged = true;
      run.result.diagnostic = "non-finite eval loss";
    }
  });

  // Aggregation: seed-mean per lr, then the best lr per cell.
  const double seeds = static_cast<double>(config.seeds.size());
  for (auto kind : config.pretrain_optimizers) {
    double acc = 0.0;
    for (const auto& pre : report.pretrain_runs) {
      if (pre.optimizer == kind) acc += pre.finetune_baseline;
    }
    report.baseline[kind] = acc / seeds;
  }
  for (auto mode : config.modes) {
    for (auto ft : config.finetune_optimizers) {
      for (auto pre : config.pretrain_optimizers) {
        GridCell cell{pre, ft, mode, true, std::numeric_limits<double>::infinity(), 0.0, 0.0};
        for (double lr : config.lr_sweep.at(ft)) {
          double acc = 0.0;
          bool diverged = false;
          for (const auto& run : report.finetune_runs) {
            if (run.pretrain != pre || run.finetune != ft || run.mode != mode || run.lr != lr) continue;
            if (run.result.diverged) diverged = true;
            acc += run.eval_loss;
          }
          SweepPoint point{pre, ft, mode, lr, diverged, std::numeric_limits<double>::infinity(),
                           std::numeric_limits<double>::infinity()};
          if (!diverged) {
            point.mean_loss = acc / seeds;
            point.normalized = point.mean_loss / report.baseline.at(pre);
          }
          report.sweep.push_back(point);
          if (diverged) continue;
          const double mean = point.mean_loss;
          if (mean < cell.best_loss) {
            cell.best_loss = mean;
            cell.best_lr = lr;
            cell.diverged = false;
          }
        }
        if (!cell.diverged) cell.normalized = cell.best_loss / report.baseline.at(pre);
        report.cells.push_back(cell);
      }
    }
  }
  return report;
}

std::string GridReport::sweep_csv() const {
  std::string out = "pretrain,finetune,mode,lr,mean_eval_loss,normalized,diverged\n";
  for (const auto& p : sweep) {
    if (p.diverged) {
      out += fmt::format("{},{},{},{},,,1\n", to_string(p.pretrain), to_string(p.finetune),
                         to_string(p.mode), p.lr);
    } else {
      out += fmt::format("{},{},{},{},{},{},0\n", to_string(p.pretrain), to_string(p.finetune),
                         to_string(p.mode), p.lr, p.mean_loss, p.normalized);
    }
  }
  return out;
}

nlohmann::json GridReport::table_json() const {
  nlohmann::json columns = nlohmann::json::array();
  nlohmann::json baselines = nlohmann::json::object();
  for (const auto& [kind, value] : baseline) {
    columns.push_back(to_string(kind));
    baselines[to_string(kind)] = value;
  }
  nlohmann::json rows = nlohmann::json::array();
  std::vector<std::string> order;
  for (const auto& cell : cells) {
    const std::string name = method_name(cell.mode, cell.finetune);
    if (std::find(order.begin(), order.end(), name) == order.end()) order.push_back(name);
  }
  for (const auto& name : order) {
    nlohmann::json values = nlohmann::json::object();
    nlohmann::json best_lr = nlohmann::json::object();
    nlohmann::json diverged = nlohmann::json::object();
    for (const auto& cell : cells) {
      if (method_name(cell.mode, cell.finetune) != name) continue;
      const std::string col = to_string(cell.pretrain);
      values[col] = cell.diverged ? nlohmann::json(nullptr) : nlohmann::json(cell.normalized);
      best_lr[col] = cell.diverged ? nlohmann::json(nullptr) : nlohmann::json(cell.best_lr);
      diverged[col] = cell.diverged;
    }
    rows.push_back({{"method", name}, {"values", values}, {"best_lr", best_lr}, {"diverged", diverged}});
  }

  // Matched vs mismatched per (mode, pretrain column); reported, never gated.
  nlohmann::json mismatch = nlohmann::json::array();
  auto find = [&](TrainMode mode, OptimizerKind pre, OptimizerKind ft) -> const GridCell* {
    for (const auto& c : cells) {
      if (c.mode == mode && c.pretrain == pre && c.finetune == ft) return &c;
    }
    return nullptr;
  };
  for (const auto& [pre, unused] : baseline) {
    const OptimizerKind other = pre == OptimizerKind::Muon ? OptimizerKind::Adam : OptimizerKind::Muon;
    for (auto mode : {TrainMode::Full, TrainMode::Lora}) {
      const GridCell* matched = find(mode, pre, pre);
      const GridCell* mismatched = find(mode, pre, other);
      if (!matched || !mismatched) continue;
      nlohmann::json entry{{"pretrain", to_string(pre)}, {"mode", to_string(mode)}};
      if (matched->diverged || mismatched->diverged) {
        entry["gap"] = nullptr;
        entry["matched_better"] = nullptr;
      } else {
        entry["gap"] = mismatched->normalized - matched->normalized;
        entry["matched_better"] = matched->normalized < mismatched->normalized;
      }
      mismatch.push_back(entry);
    }
  }
  return {{"columns", columns},
          {"baseline", baselines},
          {"rows", rows},
          {"mismatch_report", mismatch},
          {"note", "values are best fine-tune eval mse over the lr sweep (seed mean) divided by "
                   "the pretrained model's eval mse on the fine-tune task"}};
}

}  // namespace muonlab
