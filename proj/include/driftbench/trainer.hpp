#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "driftbench/losses.hpp"
#include "driftbench/metrics.hpp"
#include "driftbench/model.hpp"
#include "driftbench/replay.hpp"
#include "driftbench/streams.hpp"

namespace driftbench {

enum class MethodKind { Dare, DarePlus, Er, Derpp, SgdSeq, Joint };

MethodKind method_from_string(const std::string& s);
std::string to_string(MethodKind m);
bool method_uses_buffer(MethodKind m);

enum class BufferStrategy { Reservoir, Irs };

BufferStrategy buffer_strategy_from_string(const std::string& s);
std::string to_string(BufferStrategy s);

struct TrainConfig {
  int epochs_per_task = 50;
  std::size_t batch_size = 32;
  double learning_rate = 0.04;
  double momentum = 0.0;
  LossWeights weights;
  SimilarityParams sim;
  std::size_t buffer_capacity = 50;
  BufferStrategy buffer_strategy = BufferStrategy::Irs;
  double irs_sigma = 0.0;  // <= 0 selects epochs_per_task / 6
  double ema_update_prob = 0.05;
  double ema_decay = 0.999;
  std::uint64_t eval_every = 50;  // iterations between accuracy/drift probes
  std::uint64_t seed = 1;
  std::vector<std::size_t> hidden_dims{64, 64};
};

// Task 1 trains plainly on the first-task loss; later tasks cycle
// Divergence -> Adaptation -> Refinement, one stage per epoch.
StageKind stage_for_epoch(int task_index, int epoch);

struct TrainHooks {
  std::function<void(int task, int epoch, StageKind, const DualHeadModel&)> on_epoch_start;
  std::function<void(int task, int epoch, StageKind, const DualHeadModel&)> on_epoch_end;
};

struct Task1AccuracyRecord {
  std::uint64_t iteration = 0;
  int task_id = 1;
  double accuracy = 0.0;
};

struct TaskLogitNorms {
  int task_id = 1;
  LogitNormStats stats;
};

struct ScopedCalibration {
  std::string scope;  // "all" or "task_<k>"
  CalibrationReport report;
};

struct MetricsReport {
  AccuracyMatrix matrix{1};
  std::vector<DriftRecord> drift;
  std::vector<Task1AccuracyRecord> task1_accuracy;
  std::vector<TaskLogitNorms> logit_norms;
  std::vector<ScopedCalibration> calibration;
  double a_last = 0.0;
  std::optional<double> bwt;  // empty when T < 2
};

struct RunOutput {
  MetricsReport report;
  std::shared_ptr<DualHeadModel> model;
  std::shared_ptr<ReplayBuffer> buffer;  // null for methods without one
};

// Trains the stream sequentially (or jointly), fills the full accuracy
// matrix after every task, probes task-1 accuracy and representation drift
// every eval_every iterations, and computes calibration/logit-norm stats at
// the end. Fully deterministic given cfg.seed.
RunOutput run_experiment(MethodKind method, const std::vector<DomainTask>& stream,
                         const TrainConfig& cfg, const TrainHooks* hooks = nullptr);

double evaluate_accuracy(const DualHeadModel& m, const Tensor& x, const std::vector<int>& y);

}  // namespace driftbench
