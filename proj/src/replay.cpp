#include "driftbench/replay.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>

#include "driftbench/errors.hpp"

namespace driftbench {

double gate_probability(int epoch, const IrsConfig& cfg) {
  if (cfg.epochs_per_task < 1) throw ValueError("irs: epochs_per_task must be >= 1");
  if (epoch < 0 || epoch >= cfg.epochs_per_task) {
    throw ValueError("irs: epoch " + std::to_string(epoch) + " outside [0, " +
                     std::to_string(cfg.epochs_per_task) + ")");
  }
  const double sigma = cfg.effective_sigma();
  const double mean = static_cast<double>(cfg.epochs_per_task) / 2.0;
  const double d = static_cast<double>(epoch) - mean;
  const double raw =
      std::exp(-d * d / (2.0 * sigma * sigma)) / (sigma * std::sqrt(2.0 * std::numbers::pi));
  return std::min(std::max(raw, 0.0), 1.0);
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::size_t input_dim, std::size_t num_classes)
    : capacity_(capacity), input_dim_(input_dim), num_classes_(num_classes) {}

void ReplayBuffer::validate_entry(const BufferEntry& entry) const {
  if (entry.input.size() != input_dim_)
    throw ValueError("buffer: entry input width " + std::to_string(entry.input.size()) +
                     " does not match " + std::to_string(input_dim_));
  if (entry.zeta1.size() != num_classes_ || entry.zeta2.size() != num_classes_)
    throw ValueError("buffer: stored logit width does not match num_classes");
  if (entry.label < 0 || static_cast<std::size_t>(entry.label) >= num_classes_)
    throw ValueError("buffer: label " + std::to_string(entry.label) + " out of range");
  if (entry.task_id < 1) throw ValueError("buffer: task_id must be >= 1");
  if (entry.epoch_of_origin < 0) throw ValueError("buffer: epoch_of_origin must be >= 0");
}

bool ReplayBuffer::reservoir_insert(BufferEntry entry, Rng& rng) {
  validate_entry(entry);
  ++offered_;
  bool inserted = false;
  if (entries_.size() < capacity_) {
    entries_.push_back(std::move(entry));
    inserted = true;
  } else {
    const std::uint64_t i = std::uniform_int_distribution<std::uint64_t>(0, seen_)(rng);
    if (i < capacity_) {
      entries_[static_cast<std::size_t>(i)] = std::move(entry);
      inserted = true;
    }
  }
  ++seen_;
  return inserted;
}

bool ReplayBuffer::irs_insert(BufferEntry entry, int epoch, const IrsConfig& cfg, Rng& gate_rng,
                              Rng& reservoir_rng) {
  validate_entry(entry);
  const double gate = gate_probability(epoch, cfg);
  // A saturated gate needs no draw, which keeps the reservoir stream aligned
  // with plain reservoir sampling when the gate is clamped to 1.
  if (gate < 1.0 && uniform01(gate_rng) >= gate) {
    ++offered_;
    return false;
  }
  return reservoir_insert(std::move(entry), reservoir_rng);
}

std::vector<BufferEntry> ReplayBuffer::sample_batch(std::size_t k, Rng& rng) const {
  if (k == 0) return {};
  if (entries_.empty())
    throw ReplayUnavailableError("sample_batch: replay buffer is empty");
  const std::size_t n = entries_.size();
  const std::size_t take = std::min(k, n);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  // Partial Fisher-Yates: the first `take` slots are a uniform sample.
  for (std::size_t i = 0; i < take && i + 1 < n; ++i) {
    const std::size_t j =
        std::uniform_int_distribution<std::size_t>(i, n - 1)(rng);
    std::swap(idx[i], idx[j]);
  }
  std::vector<BufferEntry> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(entries_[idx[i]]);
  return out;
}

namespace {

constexpr char kBufferMagic[4] = {'D', 'B', 'U', 'F'};
constexpr std::uint32_t kBufferVersion = 1;

template <typename T>
void append_pod(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take_pod(const std::vector<std::uint8_t>& in, std::size_t& pos, const char* what) {
  if (pos + sizeof(T) > in.size())
    throw DecodeError(std::string("buffer snapshot: truncated while reading ") + what);
  T v{};
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::vector<std::uint8_t> ReplayBuffer::snapshot() const {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kBufferMagic, kBufferMagic + 4);
  append_pod<std::uint32_t>(out, kBufferVersion);
  append_pod<std::uint64_t>(out, capacity_);
  append_pod<std::uint64_t>(out, input_dim_);
  append_pod<std::uint64_t>(out, num_classes_);
  append_pod<std::uint64_t>(out, seen_);
  append_pod<std::uint64_t>(out, offered_);
  append_pod<std::uint64_t>(out, entries_.size());
  for (const BufferEntry& e : entries_) {
    for (double v : e.input) append_pod<double>(out, v);
    append_pod<std::int32_t>(out, e.label);
    for (double v : e.zeta1) append_pod<double>(out, v);
    for (double v : e.zeta2) append_pod<double>(out, v);
    append_pod<std::int32_t>(out, e.task_id);
    append_pod<std::int32_t>(out, e.epoch_of_origin);
  }
  return out;
}

ReplayBuffer ReplayBuffer::restore(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kBufferMagic, 4) != 0)
    throw DecodeError("buffer snapshot: bad magic");
  pos = 4;
  if (take_pod<std::uint32_t>(bytes, pos, "version") != kBufferVersion)
    throw DecodeError("buffer snapshot: unsupported version");
  const auto capacity = take_pod<std::uint64_t>(bytes, pos, "capacity");
  const auto input_dim = take_pod<std::uint64_t>(bytes, pos, "input_dim");
  const auto num_classes = take_pod<std::uint64_t>(bytes, pos, "num_classes");
  const auto seen = take_pod<std::uint64_t>(bytes, pos, "seen_count");
  const auto offered = take_pod<std::uint64_t>(bytes, pos, "offered_count");
  const auto count = take_pod<std::uint64_t>(bytes, pos, "entry count");
  if (count > capacity) throw DecodeError("buffer snapshot: entry count exceeds capacity");
  const std::size_t record =
      input_dim * sizeof(double) + 2 * num_classes * sizeof(double) + 3 * sizeof(std::int32_t);
  if (bytes.size() - pos != count * record)
    throw DecodeError("buffer snapshot: payload size does not match entry count");

  ReplayBuffer buf(static_cast<std::size_t>(capacity), static_cast<std::size_t>(input_dim),
                   static_cast<std::size_t>(num_classes));
  buf.seen_ = seen;
  buf.offered_ = offered;
  buf.entries_.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    BufferEntry e;
    e.input.resize(static_cast<std::size_t>(input_dim));
    for (double& v : e.input) v = take_pod<double>(bytes, pos, "input");
    e.label = take_pod<std::int32_t>(bytes, pos, "label");
    e.zeta1.resize(static_cast<std::size_t>(num_classes));
    for (double& v : e.zeta1) v = take_pod<double>(bytes, pos, "zeta1");
    e.zeta2.resize(static_cast<std::size_t>(num_classes));
    for (double& v : e.zeta2) v = take_pod<double>(bytes, pos, "zeta2");
    e.task_id = take_pod<std::int32_t>(bytes, pos, "task_id");
    e.epoch_of_origin = take_pod<std::int32_t>(bytes, pos, "epoch_of_origin");
    buf.validate_entry(e);
    buf.entries_.push_back(std::move(e));
  }
  return buf;
}

void ReplayBuffer::save_file(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("buffer snapshot: cannot open " + path.string() + " for writing");
  const auto bytes = snapshot();
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("buffer snapshot: write to " + path.string() + " failed");
}

ReplayBuffer ReplayBuffer::restore_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("buffer snapshot: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  return restore(bytes);
}

}  // namespace driftbench
