#include "driftbench/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "driftbench/errors.hpp"

namespace driftbench {

AccuracyMatrix::AccuracyMatrix(std::size_t num_tasks)
    : num_tasks_(num_tasks),
      values_(num_tasks * num_tasks, 0.0),
      filled_(num_tasks * num_tasks, false) {
  if (num_tasks == 0) throw ValueError("accuracy matrix: needs at least one task");
}

void AccuracyMatrix::check_index(std::size_t task_k, std::size_t after_j) const {
  if (task_k < 1 || task_k > num_tasks_ || after_j < 1 || after_j > num_tasks_)
    throw ValueError("accuracy matrix: index out of range (indices are 1-based)");
}

void AccuracyMatrix::set(std::size_t task_k, std::size_t after_j, double accuracy) {
  check_index(task_k, after_j);
  if (accuracy < 0.0 || accuracy > 1.0)
    throw ValueError("accuracy matrix: accuracy must lie in [0, 1]");
  values_[(task_k - 1) * num_tasks_ + (after_j - 1)] = accuracy;
  filled_[(task_k - 1) * num_tasks_ + (after_j - 1)] = true;
}

double AccuracyMatrix::at(std::size_t task_k, std::size_t after_j) const {
  check_index(task_k, after_j);
  if (!filled(task_k, after_j))
    throw StateError("accuracy matrix: entry (" + std::to_string(task_k) + ", " +
                     std::to_string(after_j) + ") not populated");
  return values_[(task_k - 1) * num_tasks_ + (after_j - 1)];
}

bool AccuracyMatrix::filled(std::size_t task_k, std::size_t after_j) const {
  check_index(task_k, after_j);
  return filled_[(task_k - 1) * num_tasks_ + (after_j - 1)];
}

double last_accuracy(const AccuracyMatrix& m) {
  const std::size_t T = m.num_tasks();
  double acc = 0.0;
  for (std::size_t k = 1; k <= T; ++k) acc += m.at(k, T);
  return acc / static_cast<double>(T);
}

double backward_transfer(const AccuracyMatrix& m) {
  const std::size_t T = m.num_tasks();
  if (T < 2) throw StateError("backward_transfer: undefined for fewer than 2 tasks");
  double acc = 0.0;
  for (std::size_t j = 1; j < T; ++j) acc += m.at(j, T) - m.at(j, j);
  return acc / static_cast<double>(T - 1);
}

double representation_drift(const DualHeadModel& a, const DualHeadModel& b,
                            const Tensor& probe_inputs) {
  if (a.config() != b.config())
    throw StateError("representation_drift: snapshots disagree on architecture");
  if (probe_inputs.rank() != 2 || probe_inputs.rows() == 0)
    throw StateError("representation_drift: empty probe set");
  Tensor za = a.clone_for_eval().encode(probe_inputs);
  Tensor zb = b.clone_for_eval().encode(probe_inputs);
  const std::size_t n = za.rows(), d = za.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = za.at(i, j) - zb.at(i, j);
      sq += diff * diff;
    }
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(n);
}

CalibrationReport ece(const std::vector<double>& confidences, const std::vector<bool>& correct,
                      std::size_t bins) {
  if (confidences.empty()) throw ValueError("ece: needs at least one sample");
  if (confidences.size() != correct.size())
    throw ValueError("ece: confidence and correctness counts differ");
  if (bins < 1) throw ValueError("ece: needs at least one bin");
  for (double c : confidences)
    if (c < 0.0 || c > 1.0)
      throw ValueError("ece: confidence " + std::to_string(c) + " outside [0, 1]");

  CalibrationReport report;
  report.bins = bins;
  report.bin_data.resize(bins);
  std::vector<double> conf_sum(bins, 0.0);
  std::vector<std::size_t> hits(bins, 0);
  for (std::size_t b = 0; b < bins; ++b) {
    report.bin_data[b].lo = static_cast<double>(b) / static_cast<double>(bins);
    report.bin_data[b].hi = static_cast<double>(b + 1) / static_cast<double>(bins);
  }
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    // Right-closed bins; confidence 0 lands in the first bin.
    std::size_t b = 0;
    if (confidences[i] > 0.0) {
      b = static_cast<std::size_t>(
          std::ceil(confidences[i] * static_cast<double>(bins)) - 1.0);
      b = std::min(b, bins - 1);
    }
    ++report.bin_data[b].count;
    conf_sum[b] += confidences[i];
    if (correct[i]) ++hits[b];
  }
  const double total = static_cast<double>(confidences.size());
  double e = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    auto& bin = report.bin_data[b];
    if (bin.count == 0) continue;
    bin.mean_confidence = conf_sum[b] / static_cast<double>(bin.count);
    bin.accuracy = static_cast<double>(hits[b]) / static_cast<double>(bin.count);
    e += (static_cast<double>(bin.count) / total) * std::abs(bin.mean_confidence - bin.accuracy);
  }
  report.ece = e;
  return report;
}

LogitNormStats logit_norm_stats(const Tensor& logits) {
  if (logits.rank() != 2 || logits.rows() == 0)
    throw ValueError("logit_norm_stats: needs a nonempty logits matrix");
  const std::size_t n = logits.rows(), c = logits.cols();
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < c; ++j) sq += logits.at(i, j) * logits.at(i, j);
    norms[i] = std::sqrt(sq);
  }
  LogitNormStats stats;
  stats.count = n;
  for (double v : norms) stats.mean += v;
  stats.mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : norms) var += (v - stats.mean) * (v - stats.mean);
  stats.stddev = std::sqrt(var / static_cast<double>(n));
  return stats;
}

}  // namespace driftbench
