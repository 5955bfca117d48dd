#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "driftbench/model.hpp"
#include "driftbench/tensor.hpp"

namespace driftbench {

// a[k][j] = accuracy on task k's test set after finishing task j (1-based).
class AccuracyMatrix {
 public:
  explicit AccuracyMatrix(std::size_t num_tasks);

  void set(std::size_t task_k, std::size_t after_j, double accuracy);
  double at(std::size_t task_k, std::size_t after_j) const;
  bool filled(std::size_t task_k, std::size_t after_j) const;
  std::size_t num_tasks() const { return num_tasks_; }

 private:
  void check_index(std::size_t task_k, std::size_t after_j) const;

  std::size_t num_tasks_;
  std::vector<double> values_;
  std::vector<bool> filled_;
};

// Mean of the final column: (1/T) sum_k a[k][T].
double last_accuracy(const AccuracyMatrix& m);

// (1/(T-1)) sum_{j<T} (a[j][T] - a[j][j]); negative values mean forgetting.
double backward_transfer(const AccuracyMatrix& m);

// Mean over probe rows of the l2 displacement of the encoder representation
// between two parameter snapshots.
double representation_drift(const DualHeadModel& a, const DualHeadModel& b,
                            const Tensor& probe_inputs);

struct DriftRecord {
  std::uint64_t iteration = 0;
  int task_id = 1;
  double value = 0.0;
  bool task_boundary = false;  // first drift probe within a task
};

struct CalibrationBin {
  double lo = 0.0;
  double hi = 0.0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

struct CalibrationReport {
  std::size_t bins = 10;
  std::vector<CalibrationBin> bin_data;
  double ece = 0.0;
};

// Equal-width bins over [0,1]; bin b covers (b/B, (b+1)/B] with 0 landing in
// the first bin. ECE = sum (count/total) * |mean confidence - accuracy|.
CalibrationReport ece(const std::vector<double>& confidences, const std::vector<bool>& correct,
                      std::size_t bins);

struct LogitNormStats {
  double mean = 0.0;
  double stddev = 0.0;  // population
  std::size_t count = 0;
};

// Row-wise l2 norms of raw logits.
LogitNormStats logit_norm_stats(const Tensor& logits);

}  // namespace driftbench
