#pragma once

#include <vector>

#include "driftbench/model.hpp"
#include "driftbench/tensor.hpp"

namespace driftbench {

// Parameters of the Gaussian similarity kernel applied to pairwise logit
// distances. With the defaults the kernel is exp(-d^2): c1 absorbs the
// Gaussian normalization so similarity(0) = 1 and values behave as Bernoulli
// parameters inside the discrepancy logs.
struct SimilarityParams {
  double c1 = 1.0;
  double mu = 0.0;
  double sigma_sq = 0.5;
  double clamp_eps = 1e-7;
};

struct LossWeights {
  double alpha = 0.1;   // replayed-logit consistency weight
  double beta = 0.2;    // replayed-sample classification weight
  double sw = 0.05;     // supervised-contrastive weight
  double st = 0.8;      // supervised-contrastive temperature
  double w_div = 0.1;   // discrepancy weight in the Divergence stage
  double w_adapt = 1.0; // discrepancy weight in the Adaptation stage
};

enum class StageKind { Divergence, Adaptation, Refinement, FirstTaskPlain };

// Mean over rows of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Supervised contrastive loss over l2-normalized rows. Anchors without a
// same-label positive contribute nothing; returns 0 when no anchor has one.
Tensor sup_contrastive(const Tensor& outputs, const std::vector<int>& labels,
                       double temperature);

// Gaussian similarity of distances, clamped into [clamp_eps, 1 - clamp_eps].
Tensor similarity(const Tensor& distances, const SimilarityParams& sp);
std::vector<double> similarity_values(const std::vector<double>& distances,
                                      const SimilarityParams& sp);

// Pairwise-similarity targets of one head's logits (constants, no gradient).
std::vector<double> similarity_targets(const Tensor& logits, const SimilarityParams& sp);

// Mean over pairs of [p log q + (1-p) log(1-q)] where p is a fixed target
// vector and q is the similarity of logits_live's pairwise distances.
Tensor discrepancy_to_targets(const std::vector<double>& targets, const Tensor& logits_live,
                              const SimilarityParams& sp);

// Discrepancy between two heads' pairwise-similarity structures. The
// reference side is treated as a constant target; minimizing the returned
// value pushes the live side's similarities away from the reference.
Tensor discrepancy(const Tensor& logits_ref, const Tensor& logits_live,
                   const SimilarityParams& sp);

// Exactly -discrepancy: minimizing drives the heads toward agreement.
Tensor adaptation_discrepancy(const Tensor& logits_ref, const Tensor& logits_live,
                              const SimilarityParams& sp);

// Average of both role orders so both heads are pushed symmetrically.
Tensor symmetric_discrepancy(const Tensor& logits1, const Tensor& logits2,
                             const SimilarityParams& sp);

Tensor mse(const Tensor& target, const Tensor& value);

struct BufferBatch {
  Tensor inputs;            // [k x D], constant
  std::vector<int> labels;
  Tensor zeta1;             // [k x C], constant (stored head-1 logits)
  Tensor zeta2;             // [k x C], constant (stored head-2 logits)

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
};

// alpha * (MSE(zeta1, f1) + MSE(zeta2, f2)) + beta * (CE(f1) + sw * SupCon(f2))
// over replayed samples. Terms with zero weight are skipped entirely so the
// documented reductions hold bit-exactly.
Tensor buffer_consistency(const DualHeadModel& m, const BufferBatch& replay,
                          const LossWeights& w);

// CE on head 1 plus sw-weighted SupCon on head 2, over a fresh batch.
Tensor first_task_loss(const DualHeadModel& m, const Tensor& x, const std::vector<int>& labels,
                       const LossWeights& w);
Tensor first_task_loss_from_logits(const Tensor& logits1, const Tensor& logits2,
                                   const std::vector<int>& labels, const LossWeights& w);

struct StageLossResult {
  Tensor loss;
  Tensor logits1;  // current-batch head-1 logits (reused for buffer offers)
  Tensor logits2;
};

// Composed per-stage objective:
//   Divergence:  w_div * symmetric discrepancy (current) + consistency (replay)
//   Adaptation:  w_adapt * negated symmetric discrepancy + consistency
//   Refinement:  first-task loss (current) + consistency
//   FirstTaskPlain: first-task loss only (replay may be empty).
StageLossResult stage_loss(StageKind stage, const DualHeadModel& m, const Tensor& x,
                           const std::vector<int>& labels, const BufferBatch& replay,
                           const LossWeights& w, const SimilarityParams& sp);

}  // namespace driftbench
