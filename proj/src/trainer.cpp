#include "driftbench/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "driftbench/errors.hpp"
#include "driftbench/rng.hpp"

namespace driftbench {

namespace {

constexpr std::uint64_t kStreamShuffle = 0x73687566;    // "shuf"
constexpr std::uint64_t kStreamReservoir = 0x72657376;  // "resv"
constexpr std::uint64_t kStreamGate = 0x67617465;       // "gate"
constexpr std::uint64_t kStreamReplay = 0x7265706c;     // "repl"
constexpr std::uint64_t kStreamEma = 0x656d6175;        // "emau"
constexpr std::uint64_t kStreamJoint = 0x6a6f696e;      // "join"

Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& idx) {
  const std::size_t d = src.cols();
  std::vector<double> vals;
  vals.reserve(idx.size() * d);
  for (std::size_t i : idx)
    vals.insert(vals.end(), src.values().begin() + static_cast<std::ptrdiff_t>(i * d),
                src.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  return Tensor::from({idx.size(), d}, std::move(vals));
}

std::vector<int> gather_labels(const std::vector<int>& src, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(src[i]);
  return out;
}

// Shuffled index batches. A trailing singleton is merged into the previous
// batch so pairwise losses always see at least two samples.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back()[0]);
    batches.pop_back();
  }
  return batches;
}

BufferBatch to_buffer_batch(const std::vector<BufferEntry>& entries) {
  BufferBatch out;
  if (entries.empty()) return out;
  const std::size_t d = entries.front().input.size();
  const std::size_t c = entries.front().zeta1.size();
  std::vector<double> xs, z1, z2;
  xs.reserve(entries.size() * d);
  z1.reserve(entries.size() * c);
  z2.reserve(entries.size() * c);
  for (const BufferEntry& e : entries) {
    xs.insert(xs.end(), e.input.begin(), e.input.end());
    z1.insert(z1.end(), e.zeta1.begin(), e.zeta1.end());
    z2.insert(z2.end(), e.zeta2.begin(), e.zeta2.end());
    out.labels.push_back(e.label);
  }
  out.inputs = Tensor::from({entries.size(), d}, std::move(xs));
  out.zeta1 = Tensor::from({entries.size(), c}, std::move(z1));
  out.zeta2 = Tensor::from({entries.size(), c}, std::move(z2));
  return out;
}

struct RunContext {
  MethodKind method;
  const TrainConfig& cfg;
  DualHeadModel& model;
  SgdOptimizer& opt;
  ReplayBuffer* buffer = nullptr;
  EmaModel* ema = nullptr;
  Rng reservoir_rng, gate_rng, replay_rng, ema_rng;
  std::uint64_t iteration = 0;
  std::function<void(std::uint64_t)> after_step;  // probe hook
  const TrainHooks* hooks = nullptr;

  RunContext(MethodKind m, const TrainConfig& c, DualHeadModel& mdl, SgdOptimizer& o)
      : method(m),
        cfg(c),
        model(mdl),
        opt(o),
        reservoir_rng(make_rng(c.seed, kStreamReservoir)),
        gate_rng(make_rng(c.seed, kStreamGate)),
        replay_rng(make_rng(c.seed, kStreamReplay)),
        ema_rng(make_rng(c.seed, kStreamEma)) {}

  void offer_batch(const Tensor& x, const std::vector<int>& labels, const Tensor& logits1,
                   const Tensor& logits2, int task_id, int epoch) {
    if (buffer == nullptr) return;
    const std::size_t d = x.cols(), c = logits1.cols();
    IrsConfig irs{cfg.irs_sigma, cfg.epochs_per_task};
    for (std::size_t i = 0; i < labels.size(); ++i) {
      BufferEntry e;
      e.input.assign(x.values().begin() + static_cast<std::ptrdiff_t>(i * d),
                     x.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
      e.label = labels[i];
      e.zeta1.assign(logits1.values().begin() + static_cast<std::ptrdiff_t>(i * c),
                     logits1.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
      e.zeta2.assign(logits2.values().begin() + static_cast<std::ptrdiff_t>(i * c),
                     logits2.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
      e.task_id = task_id;
      e.epoch_of_origin = epoch;
      if (cfg.buffer_strategy == BufferStrategy::Irs)
        buffer->irs_insert(std::move(e), epoch, irs, gate_rng, reservoir_rng);
      else
        buffer->reservoir_insert(std::move(e), reservoir_rng);
    }
  }

  void optimizer_step() {
    opt.step(model.trainable_parameters());
    if (ema != nullptr) ema->maybe_update(model, ema_rng);
    ++iteration;
    if (after_step) after_step(iteration);
  }

  BufferBatch sample_replay() {
    if (buffer == nullptr || buffer->empty())
      throw ReplayUnavailableError("trainer: replay requested before the buffer was seeded");
    return to_buffer_batch(buffer->sample_batch(cfg.batch_size, replay_rng));
  }
};

void set_stage_freeze(DualHeadModel& m, StageKind stage) {
  switch (stage) {
    case StageKind::Divergence:
      m.set_frozen(ModelPart::Encoder, true);
      m.set_frozen(ModelPart::Head1, false);
      m.set_frozen(ModelPart::Head2, false);
      break;
    case StageKind::Adaptation:
      m.set_frozen(ModelPart::Encoder, false);
      m.set_frozen(ModelPart::Head1, true);
      m.set_frozen(ModelPart::Head2, true);
      break;
    case StageKind::Refinement:
    case StageKind::FirstTaskPlain:
      m.set_frozen(ModelPart::Encoder, false);
      m.set_frozen(ModelPart::Head1, false);
      m.set_frozen(ModelPart::Head2, false);
      break;
  }
}

void train_task_dare(RunContext& ctx, const DomainTask& task) {
  const TrainConfig& cfg = ctx.cfg;
  if (task.task_id > 1 && cfg.epochs_per_task < 3)
    throw ConfigError("dare: epochs_per_task must be >= 3 so each stage occurs at least once");
  if (task.task_id > 1 && (ctx.buffer == nullptr || ctx.buffer->empty()))
    throw ReplayUnavailableError("dare: buffer is empty at the start of task " +
                                 std::to_string(task.task_id));
  Rng shuffle_rng = make_rng(cfg.seed, kStreamShuffle, static_cast<std::uint64_t>(task.task_id));
  for (int epoch = 0; epoch < cfg.epochs_per_task; ++epoch) {
    const StageKind stage = stage_for_epoch(task.task_id, epoch);
    set_stage_freeze(ctx.model, stage);
    if (ctx.hooks != nullptr && ctx.hooks->on_epoch_start)
      ctx.hooks->on_epoch_start(task.task_id, epoch, stage, ctx.model);
    for (const auto& idx : make_batches(task.train_y.size(), cfg.batch_size, shuffle_rng)) {
      Tensor x = gather_rows(task.train_x, idx);
      std::vector<int> y = gather_labels(task.train_y, idx);
      ctx.model.zero_grad();
      Tape::active().clear();
      BufferBatch replay;
      if (stage != StageKind::FirstTaskPlain) replay = ctx.sample_replay();
      StageLossResult result =
          stage_loss(stage, ctx.model, x, y, replay, cfg.weights, cfg.sim);
      Tape::active().backward(result.loss);
      ctx.optimizer_step();
      ctx.offer_batch(x, y, result.logits1, result.logits2, task.task_id, epoch);
    }
    if (ctx.hooks != nullptr && ctx.hooks->on_epoch_end)
      ctx.hooks->on_epoch_end(task.task_id, epoch, stage, ctx.model);
  }
  set_stage_freeze(ctx.model, StageKind::FirstTaskPlain);  // leave nothing frozen
}

// ER, DER++, SGD and Joint all train plain cross-entropy on head 1 and differ
// only in their replay term.
void train_task_replay_ce(RunContext& ctx, const DomainTask& task, std::uint64_t shuffle_substream) {
  const TrainConfig& cfg = ctx.cfg;
  Rng shuffle_rng = make_rng(cfg.seed, kStreamShuffle, shuffle_substream);
  for (int epoch = 0; epoch < cfg.epochs_per_task; ++epoch) {
    if (ctx.hooks != nullptr && ctx.hooks->on_epoch_start)
      ctx.hooks->on_epoch_start(task.task_id, epoch, StageKind::FirstTaskPlain, ctx.model);
    for (const auto& idx : make_batches(task.train_y.size(), cfg.batch_size, shuffle_rng)) {
      Tensor x = gather_rows(task.train_x, idx);
      std::vector<int> y = gather_labels(task.train_y, idx);
      ctx.model.zero_grad();
      Tape::active().clear();
      auto out = ctx.model.forward(x);
      Tensor loss = cross_entropy(out.logits1, y);
      if (ctx.method == MethodKind::Er && ctx.buffer != nullptr && !ctx.buffer->empty()) {
        BufferBatch replay = ctx.sample_replay();
        Tensor rep_logits = ctx.model.forward(replay.inputs).logits1;
        loss = add(loss, cross_entropy(rep_logits, replay.labels));
      } else if (ctx.method == MethodKind::Derpp && ctx.buffer != nullptr &&
                 !ctx.buffer->empty() &&
                 (cfg.weights.alpha != 0.0 || cfg.weights.beta != 0.0)) {
        BufferBatch replay = ctx.sample_replay();
        Tensor rep_logits = ctx.model.forward(replay.inputs).logits1;
        if (cfg.weights.alpha != 0.0)
          loss = add(loss, scale(mse(replay.zeta1, rep_logits), cfg.weights.alpha));
        if (cfg.weights.beta != 0.0)
          loss = add(loss, scale(cross_entropy(rep_logits, replay.labels), cfg.weights.beta));
      }
      Tape::active().backward(loss);
      ctx.optimizer_step();
      ctx.offer_batch(x, y, out.logits1, out.logits2, task.task_id, epoch);
    }
    if (ctx.hooks != nullptr && ctx.hooks->on_epoch_end)
      ctx.hooks->on_epoch_end(task.task_id, epoch, StageKind::FirstTaskPlain, ctx.model);
  }
}

}  // namespace

MethodKind method_from_string(const std::string& s) {
  if (s == "dare") return MethodKind::Dare;
  if (s == "dare++" || s == "dare_plus" || s == "darepp") return MethodKind::DarePlus;
  if (s == "er") return MethodKind::Er;
  if (s == "der++" || s == "derpp") return MethodKind::Derpp;
  if (s == "sgd" || s == "sgd_seq") return MethodKind::SgdSeq;
  if (s == "joint") return MethodKind::Joint;
  throw ConfigError("unknown method '" + s + "', expected dare|dare++|er|der++|sgd|joint");
}

std::string to_string(MethodKind m) {
  switch (m) {
    case MethodKind::Dare: return "dare";
    case MethodKind::DarePlus: return "dare++";
    case MethodKind::Er: return "er";
    case MethodKind::Derpp: return "der++";
    case MethodKind::SgdSeq: return "sgd";
    case MethodKind::Joint: return "joint";
  }
  return "?";
}

bool method_uses_buffer(MethodKind m) {
  return m == MethodKind::Dare || m == MethodKind::DarePlus || m == MethodKind::Er ||
         m == MethodKind::Derpp;
}

BufferStrategy buffer_strategy_from_string(const std::string& s) {
  if (s == "reservoir") return BufferStrategy::Reservoir;
  if (s == "irs") return BufferStrategy::Irs;
  throw ConfigError("unknown buffer strategy '" + s + "', expected reservoir|irs");
}

std::string to_string(BufferStrategy s) {
  return s == BufferStrategy::Reservoir ? "reservoir" : "irs";
}

StageKind stage_for_epoch(int task_index, int epoch) {
  if (epoch < 0) throw ValueError("stage_for_epoch: epoch must be >= 0");
  if (task_index == 1) return StageKind::FirstTaskPlain;
  switch (epoch % 3) {
    case 0: return StageKind::Divergence;
    case 1: return StageKind::Adaptation;
    default: return StageKind::Refinement;
  }
}

double evaluate_accuracy(const DualHeadModel& m, const Tensor& x, const std::vector<int>& y) {
  if (y.empty()) throw ValueError("evaluate_accuracy: empty test set");
  const std::vector<int> pred = m.predict(x);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (pred[i] == y[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(y.size());
}

RunOutput run_experiment(MethodKind method, const std::vector<DomainTask>& stream,
                         const TrainConfig& cfg, const TrainHooks* hooks) {
  if (stream.empty()) throw ConfigError("run_experiment: empty stream");
  if (cfg.epochs_per_task < 1) throw ConfigError("run_experiment: epochs_per_task must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("run_experiment: batch_size must be >= 1");
  const std::size_t T = stream.size();
  const std::size_t input_dim = stream.front().train_x.cols();
  const int num_classes = stream.front().num_classes;

  EncoderConfig enc_cfg;
  enc_cfg.input_dim = input_dim;
  enc_cfg.hidden_dims = cfg.hidden_dims;
  enc_cfg.num_classes = static_cast<std::size_t>(num_classes);
  auto model = std::make_shared<DualHeadModel>(enc_cfg, cfg.seed);
  SgdOptimizer opt(cfg.learning_rate, cfg.momentum);

  RunContext ctx(method, cfg, *model, opt);
  ctx.hooks = hooks;

  std::shared_ptr<ReplayBuffer> buffer;
  if (method_uses_buffer(method)) {
    buffer = std::make_shared<ReplayBuffer>(cfg.buffer_capacity, input_dim,
                                            static_cast<std::size_t>(num_classes));
    ctx.buffer = buffer.get();
  }
  std::unique_ptr<EmaModel> ema;
  if (method == MethodKind::DarePlus) {
    ema = std::make_unique<EmaModel>(*model, cfg.ema_decay, cfg.ema_update_prob);
    ctx.ema = ema.get();
  }

  auto inference_model = [&]() {
    return ema != nullptr ? ema->eval_model() : model->clone_for_eval();
  };

  MetricsReport report;
  report.matrix = AccuracyMatrix(T);

  // Probes fire every eval_every optimizer steps: task-1 accuracy plus the
  // encoder displacement of the current buffer contents since the last probe.
  int current_task = 1;
  bool drift_boundary_pending = true;
  std::optional<DualHeadModel> previous_probe_snapshot;
  ctx.after_step = [&](std::uint64_t iteration) {
    if (cfg.eval_every == 0 || iteration % cfg.eval_every != 0) return;
    report.task1_accuracy.push_back(
        {iteration, current_task,
         evaluate_accuracy(inference_model(), stream.front().test_x, stream.front().test_y)});
    if (buffer != nullptr && !buffer->empty()) {
      const BufferBatch probe = to_buffer_batch(buffer->entries());
      DualHeadModel snapshot = model->clone_for_eval();
      if (previous_probe_snapshot.has_value()) {
        const double value =
            representation_drift(snapshot, *previous_probe_snapshot, probe.inputs);
        report.drift.push_back({iteration, current_task, value, drift_boundary_pending});
        drift_boundary_pending = false;
      }
      previous_probe_snapshot = std::move(snapshot);
    }
  };

  auto evaluate_column = [&](std::size_t after_j) {
    DualHeadModel eval = inference_model();
    for (std::size_t k = 1; k <= T; ++k)
      report.matrix.set(k, after_j,
                        evaluate_accuracy(eval, stream[k - 1].test_x, stream[k - 1].test_y));
  };

  if (method == MethodKind::Joint) {
    const DomainTask joint = joint_view(stream, mix_seed(cfg.seed, kStreamJoint));
    train_task_replay_ce(ctx, joint, 1);
    // One training phase: every column of the matrix reports the same model.
    DualHeadModel eval = inference_model();
    for (std::size_t k = 1; k <= T; ++k) {
      const double acc = evaluate_accuracy(eval, stream[k - 1].test_x, stream[k - 1].test_y);
      for (std::size_t j = 1; j <= T; ++j) report.matrix.set(k, j, acc);
    }
  } else {
    for (std::size_t j = 1; j <= T; ++j) {
      const DomainTask& task = stream[j - 1];
      current_task = static_cast<int>(j);
      drift_boundary_pending = true;
      switch (method) {
        case MethodKind::Dare:
        case MethodKind::DarePlus:
          train_task_dare(ctx, task);
          break;
        case MethodKind::Er:
        case MethodKind::Derpp:
        case MethodKind::SgdSeq:
          train_task_replay_ce(ctx, task, static_cast<std::uint64_t>(task.task_id));
          break;
        case MethodKind::Joint:
          break;  // handled above
      }
      evaluate_column(j);
    }
  }

  // End-of-run analyses on the inference model: per-task logit norms, and
  // calibration per task plus pooled over every task's test set.
  {
    DualHeadModel eval = inference_model();
    std::vector<double> all_conf;
    std::vector<bool> all_correct;
    for (std::size_t k = 1; k <= T; ++k) {
      const DomainTask& task = stream[k - 1];
      auto out = eval.forward(task.test_x);
      report.logit_norms.push_back({task.task_id, logit_norm_stats(out.logits1)});
      Tensor log_probs = log_softmax(out.logits1);
      std::vector<double> conf(task.test_y.size());
      std::vector<bool> correct(task.test_y.size());
      for (std::size_t i = 0; i < task.test_y.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < static_cast<std::size_t>(num_classes); ++c)
          if (log_probs.at(i, c) > log_probs.at(i, best)) best = c;
        conf[i] = std::exp(log_probs.at(i, best));
        correct[i] = static_cast<int>(best) == task.test_y[i];
      }
      report.calibration.push_back({"task_" + std::to_string(task.task_id), ece(conf, correct, 10)});
      all_conf.insert(all_conf.end(), conf.begin(), conf.end());
      all_correct.insert(all_correct.end(), correct.begin(), correct.end());
    }
    report.calibration.push_back({"all", ece(all_conf, all_correct, 10)});
    Tape::active().clear();
  }

  report.a_last = last_accuracy(report.matrix);
  if (T >= 2) report.bwt = backward_transfer(report.matrix);
  return {std::move(report), std::move(model), std::move(buffer)};
}

}  // namespace driftbench
