#include "driftbench/losses.hpp"

#include <cmath>
#include <string>

#include "driftbench/errors.hpp"

namespace driftbench {

namespace {

void require_min_batch(std::size_t n, const char* op) {
  if (n < 2) {
    throw ValueError(std::string(op) + ": batch too small, need at least 2 samples, got " +
                     std::to_string(n));
  }
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  return nll_from_log_probs(log_softmax(logits), labels);
}

Tensor sup_contrastive(const Tensor& outputs, const std::vector<int>& labels,
                       double temperature) {
  const std::size_t n = outputs.rows();
  require_min_batch(n, "sup_contrastive");
  if (labels.size() != n)
    throw ShapeError("sup_contrastive: label count does not match batch size");
  if (!(temperature > 0.0)) throw ValueError("sup_contrastive: temperature must be positive");

  // Positive sets and anchor weights are data, not traced values.
  std::vector<std::size_t> positives(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < n; ++p)
      if (p != i && labels[p] == labels[i]) ++positives[i];
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (positives[i] > 0) ++anchors;
  if (anchors == 0) return Tensor::scalar(0.0);

  Tensor v = l2_normalize_rows(outputs);
  Tensor sims = scale(matmul(v, transpose(v)), 1.0 / temperature);  // [n x n]

  // Denominators exclude the anchor itself.
  std::vector<double> offdiag(n * n, 1.0);
  for (std::size_t i = 0; i < n; ++i) offdiag[i * n + i] = 0.0;
  Tensor denom = rowsum(mul(exp(sims), Tensor::from({n, n}, std::move(offdiag))));
  Tensor log_denom = log(denom);

  // loss = sum_i w_i * log denom_i - sum_{i,p} W_ip * sims_ip with
  // W_ip = 1/(|P_i| * anchors) over positives, w_i = sum_p W_ip.
  std::vector<double> pair_w(n * n, 0.0);
  std::vector<double> anchor_w(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (positives[i] == 0) continue;
    const double w = 1.0 / (static_cast<double>(positives[i]) * static_cast<double>(anchors));
    for (std::size_t p = 0; p < n; ++p)
      if (p != i && labels[p] == labels[i]) pair_w[i * n + p] = w;
    anchor_w[i] = 1.0 / static_cast<double>(anchors);
  }
  Tensor pos_term = sum(mul(sims, Tensor::from({n, n}, std::move(pair_w))));
  Tensor den_term = sum(mul(log_denom, Tensor::from({n}, std::move(anchor_w))));
  return sub(den_term, pos_term);
}

Tensor similarity(const Tensor& distances, const SimilarityParams& sp) {
  if (!(sp.sigma_sq > 0.0)) throw ValueError("similarity: sigma_sq must be positive");
  Tensor centered = add_const(distances, -sp.mu);
  Tensor raw = scale(exp(scale(mul(centered, centered), -1.0 / (2.0 * sp.sigma_sq))), sp.c1);
  return clamp(raw, sp.clamp_eps, 1.0 - sp.clamp_eps);
}

std::vector<double> similarity_values(const std::vector<double>& distances,
                                      const SimilarityParams& sp) {
  if (!(sp.sigma_sq > 0.0)) throw ValueError("similarity: sigma_sq must be positive");
  std::vector<double> out(distances.size());
  for (std::size_t i = 0; i < distances.size(); ++i) {
    const double d = distances[i] - sp.mu;
    const double raw = sp.c1 * std::exp(-d * d / (2.0 * sp.sigma_sq));
    out[i] = std::min(std::max(raw, sp.clamp_eps), 1.0 - sp.clamp_eps);
  }
  return out;
}

std::vector<double> similarity_targets(const Tensor& logits, const SimilarityParams& sp) {
  Tensor dist = pairwise_distances(l2_normalize_rows(detach(logits)));
  return similarity_values(dist.values(), sp);
}

Tensor discrepancy_to_targets(const std::vector<double>& targets, const Tensor& logits_live,
                              const SimilarityParams& sp) {
  require_min_batch(logits_live.rows(), "discrepancy");
  const std::size_t pairs = logits_live.rows() * (logits_live.rows() - 1) / 2;
  if (targets.size() != pairs)
    throw ShapeError("discrepancy: target count does not match pair count");
  Tensor q = similarity(pairwise_distances(l2_normalize_rows(logits_live)), sp);
  std::vector<double> p(targets);
  std::vector<double> one_minus_p(targets.size());
  std::vector<double> ones(targets.size(), 1.0);
  for (std::size_t i = 0; i < targets.size(); ++i) one_minus_p[i] = 1.0 - targets[i];
  Tensor p_t = Tensor::from({pairs}, std::move(p));
  Tensor p1m_t = Tensor::from({pairs}, std::move(one_minus_p));
  Tensor q1m = sub(Tensor::from({pairs}, std::move(ones)), q);
  return mean(add(mul(p_t, log(q)), mul(p1m_t, log(q1m))));
}

Tensor discrepancy(const Tensor& logits_ref, const Tensor& logits_live,
                   const SimilarityParams& sp) {
  require_min_batch(logits_ref.rows(), "discrepancy");
  if (logits_ref.rows() != logits_live.rows())
    throw ShapeError("discrepancy: head outputs disagree on batch size");
  return discrepancy_to_targets(similarity_targets(logits_ref, sp), logits_live, sp);
}

Tensor adaptation_discrepancy(const Tensor& logits_ref, const Tensor& logits_live,
                              const SimilarityParams& sp) {
  return scale(discrepancy(logits_ref, logits_live, sp), -1.0);
}

Tensor symmetric_discrepancy(const Tensor& logits1, const Tensor& logits2,
                             const SimilarityParams& sp) {
  return scale(add(discrepancy(logits1, logits2, sp), discrepancy(logits2, logits1, sp)), 0.5);
}

Tensor mse(const Tensor& target, const Tensor& value) {
  Tensor diff = sub(target, value);
  return mean(mul(diff, diff));
}

Tensor buffer_consistency(const DualHeadModel& m, const BufferBatch& replay,
                          const LossWeights& w) {
  if (replay.empty()) throw ReplayUnavailableError("buffer_consistency: empty replay batch");
  const std::size_t c = m.config().num_classes;
  if (replay.zeta1.cols() != c || replay.zeta2.cols() != c) {
    throw SchemaError("buffer_consistency: stored logit width " +
                      std::to_string(replay.zeta1.cols()) + " does not match num_classes " +
                      std::to_string(c));
  }
  auto out = m.forward(replay.inputs);
  Tensor loss;
  if (w.alpha != 0.0) {
    loss = scale(add(mse(replay.zeta1, out.logits1), mse(replay.zeta2, out.logits2)), w.alpha);
  }
  if (w.beta != 0.0) {
    Tensor cls = cross_entropy(out.logits1, replay.labels);
    if (w.sw != 0.0 && replay.size() >= 2)
      cls = add(cls, scale(sup_contrastive(out.logits2, replay.labels, w.st), w.sw));
    Tensor weighted = scale(cls, w.beta);
    loss = loss.defined() ? add(loss, weighted) : weighted;
  }
  return loss.defined() ? loss : Tensor::scalar(0.0);
}

Tensor first_task_loss_from_logits(const Tensor& logits1, const Tensor& logits2,
                                   const std::vector<int>& labels, const LossWeights& w) {
  Tensor loss = cross_entropy(logits1, labels);
  if (w.sw != 0.0 && labels.size() >= 2)
    loss = add(loss, scale(sup_contrastive(logits2, labels, w.st), w.sw));
  return loss;
}

Tensor first_task_loss(const DualHeadModel& m, const Tensor& x, const std::vector<int>& labels,
                       const LossWeights& w) {
  auto out = m.forward(x);
  return first_task_loss_from_logits(out.logits1, out.logits2, labels, w);
}

StageLossResult stage_loss(StageKind stage, const DualHeadModel& m, const Tensor& x,
                           const std::vector<int>& labels, const BufferBatch& replay,
                           const LossWeights& w, const SimilarityParams& sp) {
  auto out = m.forward(x);
  if (stage == StageKind::FirstTaskPlain) {
    return {first_task_loss_from_logits(out.logits1, out.logits2, labels, w), out.logits1,
            out.logits2};
  }
  if (replay.empty()) {
    throw ReplayUnavailableError(
        "stage_loss: replay batch is empty; stage losses need a seeded buffer");
  }
  Tensor loss;
  switch (stage) {
    case StageKind::Divergence:
      loss = w.w_div != 0.0 ? scale(symmetric_discrepancy(out.logits1, out.logits2, sp), w.w_div)
                            : Tensor();
      break;
    case StageKind::Adaptation:
      loss = w.w_adapt != 0.0
                 ? scale(symmetric_discrepancy(out.logits1, out.logits2, sp), -w.w_adapt)
                 : Tensor();
      break;
    case StageKind::Refinement:
      loss = first_task_loss_from_logits(out.logits1, out.logits2, labels, w);
      break;
    case StageKind::FirstTaskPlain:
      break;  // handled above
  }
  Tensor consistency = buffer_consistency(m, replay, w);
  loss = loss.defined() ? add(loss, consistency) : consistency;
  return {loss, out.logits1, out.logits2};
}

}  // namespace driftbench
