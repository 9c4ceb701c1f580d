#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "muonlab/lorakit.hpp"
#include "muonlab/matrix.hpp"
#include "muonlab/optim.hpp"

namespace muonlab {

struct MlpDims {
  std::size_t d = 16;
  std::size_t h = 32;
  std::size_t o = 8;
};

/// y = W2 relu(W1 x). No biases: every parameter is a matrix.
struct MlpModel {
  Matrix w1;  // h x d
  Matrix w2;  // o x h

  /// W1 ~ N(0, 1/d), W2 ~ N(0, 1/h).
  static MlpModel init(const MlpDims& dims, std::mt19937_64& rng);
  bool all_finite() const { return w1.all_finite() && w2.all_finite(); }
  friend bool operator==(const MlpModel&, const MlpModel&) = default;
};

/// Rows are samples: inputs N x d, targets N x o.
struct Dataset {
  Matrix inputs;
  Matrix targets;
};

Matrix predict(const MlpModel& model, const Matrix& inputs);

/// Mean over all N*o entries of the squared error.
double mse(const MlpModel& model, const Dataset& data);

struct MlpGrads {
  Matrix dw1;
  Matrix dw2;
  double loss = 0.0;
};

/// Exact backpropagation of mse; relu'(0) is taken as 0.
MlpGrads mlp_grads(const MlpModel& model, const Dataset& data);

struct Task {
  std::string name;
  MlpModel teacher;
  Dataset train;
  Dataset eval;
};

struct TaskPair {
  Task a;
  Task b;
};

/// Two teachers sharing W1 with different second layers; inputs N(0, I).
/// Fully determined by the seed.
TaskPair synth_tasks(std::uint64_t seed, const MlpDims& dims = {}, std::size_t train_samples = 256,
                     std::size_t eval_samples = 256);

enum class TrainMode { Full, Lora };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

struct LoraSettings {
  std::size_t rank = 4;
  double alpha = 8.0;
  LoraScaling rule = LoraScaling::Classic;
};

struct TrainOptions {
  OptimizerSpec optimizer;
  StepSchedule schedule = StepSchedule::constant(0.0);
  std::int64_t steps = 0;
  TrainMode mode = TrainMode::Full;
  LoraSettings lora;
  std::int64_t log_every = 50;
  bool keep_checkpoints = false;
  std::uint64_t adapter_seed = 0;
};

struct TrainRecord {
  std::int64_t step = 0;
  double eta = 0.0;
  double loss = 0.0;
  bool spectral = false;
  double srank_w1 = 0.0;
  double entropy_w1 = 0.0;
  double srank_w2 = 0.0;
  double entropy_w2 = 0.0;
};

struct Checkpoint {
  std::int64_t step = 0;
  MlpModel effective;
};

struct TrainResult {
  MlpModel base;                        // frozen weights under LoRA, trained weights otherwise
  std::optional<LoraAdapter> adapter1;  // LoRA only
  std::optional<LoraAdapter> adapter2;
  MlpModel effective;
  std::vector<TrainRecord> records;
  std::vector<Checkpoint> checkpoints;
  bool diverged = false;
  std::string diagnostic;

  /// step,eta,loss,srank_w1,entropy_w1,srank_w2,entropy_w2; spectral columns
  /// are empty on rows where no spectrum was logged.
  std::string to_csv() const;
};

inline constexpr double kDivergenceLoss = 1e6;

/// Each record holds the loss of the weights the step's gradient was taken
/// at; spectra are logged on steps divisible by log_every.
TrainResult train(const MlpModel& model, const Dataset& data, const TrainOptions& options);

// ---------------------------------------------------------------------------
// Pretrain -> fine-tune mismatch grid

struct ExperimentConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  MlpDims dims;
  std::size_t train_samples = 256;
  std::size_t eval_samples = 256;
  std::int64_t log_every = 50;

  std::string pretrain_task = "A";
  std::int64_t pretrain_steps = 2000;
  std::vector<OptimizerKind> pretrain_optimizers{OptimizerKind::Muon, OptimizerKind::Adam};
  std::map<OptimizerKind, double> pretrain_lr{{OptimizerKind::Muon, 0.02},
                                              {OptimizerKind::Adam, 3e-2}};
  double warmup_ratio = 0.03;

  std::string finetune_task = "B";
  std::int64_t finetune_steps = 500;
  std::vector<OptimizerKind> finetune_optimizers{OptimizerKind::Muon, OptimizerKind::Adam};
  std::vector<TrainMode> modes{TrainMode::Full, TrainMode::Lora};
  LoraSettings lora;
  std::map<OptimizerKind, std::vector<double>> lr_sweep{
      {OptimizerKind::Muon, {3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0}},
      {OptimizerKind::Adam, {1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1}}};

  /// Hyperparameters shared by every Adam / Muon instance.
  OptimizerSpec adam{OptimizerKind::Adam, {}, {}};
  OptimizerSpec muon{OptimizerKind::Muon, {}, {}};

  /// Throws ContractError naming the offending field.
  void validate() const;
  OptimizerSpec spec_for(OptimizerKind kind) const;

  nlohmann::json to_json() const;
  /// Missing fields keep their defaults.
  static ExperimentConfig from_json(const nlohmann::json& doc);
};

struct PretrainRun {
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  TrainResult result;
  double finetune_baseline = 0.0;  // eval mse of the pretrained model on the fine-tune task
};

struct FinetuneRun {
  std::uint64_t seed = 0;
  OptimizerKind pretrain = OptimizerKind::Adam;
  OptimizerKind finetune = OptimizerKind::Adam;
  TrainMode mode = TrainMode::Full;
  double lr = 0.0;
  TrainResult result;
  double eval_loss = 0.0;
};

struct GridCell {
  OptimizerKind pretrain = OptimizerKind::Adam;
  OptimizerKind finetune = OptimizerKind::Adam;
  TrainMode mode = TrainMode::Full;
  bool diverged = false;  // every lr diverged for at least one seed
  double best_loss = 0.0; // min over lr of the seed-mean eval loss
  double best_lr = 0.0;
  double normalized = 0.0;  // best_loss / baseline of the pretrain column
};

/// One point of the lr sweep for a (pretrain, finetune, mode) cell.
struct SweepPoint {
  OptimizerKind pretrain = OptimizerKind::Adam;
  OptimizerKind finetune = OptimizerKind::Adam;
  TrainMode mode = TrainMode::Full;
  double lr = 0.0;
  bool diverged = false;   // at least one seed diverged
  double mean_loss = 0.0;  // seed-mean eval loss; +inf when diverged
  double normalized = 0.0;
};

struct GridReport {
  std::vector<PretrainRun> pretrain_runs;
  std::vector<FinetuneRun> finetune_runs;
  std::map<OptimizerKind, double> baseline;  // seed-mean pretrained fine-tune-task loss
  std::vector<SweepPoint> sweep;
  std::vector<GridCell> cells;

  /// pretrain,finetune,mode,lr,mean_eval_loss,normalized,diverged
  std::string sweep_csv() const;

  /// One row per method, one column per pretrain
  /// optimizer, plus a non-gating report of whether matched beat mismatched.
  nlohmann::json table_json() const;
};

/// Runs every (seed, pretrain, finetune, mode, lr) combination; independent
/// runs are spread over up to `threads` workers.
GridReport mismatch_grid(const ExperimentConfig& config, unsigned threads = 1);

/// Calls fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace muonlab
