#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "driftbench/tensor.hpp"

namespace driftbench {

struct DomainTask {
  int task_id = 1;  // 1-based
  int num_classes = 0;
  Tensor train_x;   // [n_tr x D]
  std::vector<int> train_y;
  Tensor test_x;    // [n_te x D]
  std::vector<int> test_y;
};

enum class StreamKind { RotatedBlobs, PermutedFeatures, NoisyChannels };

StreamKind stream_kind_from_string(const std::string& s);
std::string to_string(StreamKind kind);

// Deterministic synthetic domain-incremental stream: same label set in every
// domain, input distribution shifting per domain.
struct StreamSpec {
  StreamKind kind = StreamKind::RotatedBlobs;
  int num_domains = 5;
  int num_classes = 4;
  std::size_t input_dim = 16;
  std::size_t samples_per_domain = 500;  // train samples; test = fraction of this
  double test_fraction = 0.25;
  std::uint64_t seed = 7;

  void validate() const;
};

std::vector<DomainTask> generate(const StreamSpec& spec);

// Dataset file layout documented in docs/formats.md (versioned header, then
// fixed-width rows of D doubles plus one label).
std::vector<DomainTask> load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, const std::vector<DomainTask>& tasks);

// Concatenation of all tasks' train/test sets, deterministically shuffled.
DomainTask joint_view(const std::vector<DomainTask>& tasks, std::uint64_t seed);

}  // namespace driftbench
