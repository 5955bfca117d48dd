#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "driftbench/rng.hpp"

namespace driftbench {

struct BufferEntry {
  std::vector<double> input;   // width D
  int label = 0;
  std::vector<double> zeta1;   // stored head-1 logits, width C
  std::vector<double> zeta2;   // stored head-2 logits, width C
  int task_id = 1;             // >= 1
  int epoch_of_origin = 0;     // >= 0
};

// Gaussian gate over the epoch index; the mean is pinned to the middle of the
// task (E/2) so buffered entries concentrate at intermediate training stages.
struct IrsConfig {
  double sigma = 0.0;      // <= 0 selects the default E/6
  int epochs_per_task = 1;

  double effective_sigma() const {
    return sigma > 0.0 ? sigma : static_cast<double>(epochs_per_task) / 6.0;
  }
};

double gate_probability(int epoch, const IrsConfig& cfg);

// Bounded episodic memory. seen_count tracks offers that reached the
// reservoir logic; IRS offers rejected by the gate do not advance it, which
// keeps the n/N inclusion guarantee valid over the gated stream.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t input_dim, std::size_t num_classes);

  bool reservoir_insert(BufferEntry entry, Rng& rng);
  bool irs_insert(BufferEntry entry, int epoch, const IrsConfig& cfg, Rng& gate_rng,
                  Rng& reservoir_rng);

  // k entries uniformly without replacement; all entries (shuffled) when the
  // buffer holds fewer than k.
  std::vector<BufferEntry> sample_batch(std::size_t k, Rng& rng) const;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t seen_count() const { return seen_; }
  std::uint64_t offered_count() const { return offered_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t num_classes() const { return num_classes_; }
  const std::vector<BufferEntry>& entries() const { return entries_; }

  std::vector<std::uint8_t> snapshot() const;
  static ReplayBuffer restore(const std::vector<std::uint8_t>& bytes);

  void save_file(const std::filesystem::path& path) const;
  static ReplayBuffer restore_file(const std::filesystem::path& path);

 private:
  void validate_entry(const BufferEntry& entry) const;

  std::size_t capacity_;
  std::size_t input_dim_;
  std::size_t num_classes_;
  std::uint64_t seen_ = 0;     // offers that reached the reservoir logic
  std::uint64_t offered_ = 0;  // all offers, including gate rejections
  std::vector<BufferEntry> entries_;
};

}  // namespace driftbench
