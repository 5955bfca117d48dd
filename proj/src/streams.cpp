#include "driftbench/streams.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include "driftbench/errors.hpp"
#include "driftbench/rng.hpp"

namespace driftbench {

namespace {

constexpr std::uint64_t kStreamCentroids = 0x63656e74;  // "cent"
constexpr std::uint64_t kStreamTrain = 0x7472616e;      // "tran"
constexpr std::uint64_t kStreamTest = 0x74657374;       // "test"
constexpr std::uint64_t kStreamPermute = 0x7065726d;    // "perm"
constexpr std::uint64_t kStreamChannels = 0x6368616e;   // "chan"

constexpr double kBlobRadius = 2.0;
constexpr double kBlobNoise = 0.3;
constexpr double kBaseCentroidScale = 1.5;
constexpr double kBaseNoise = 0.3;

std::vector<std::size_t> class_counts(std::size_t total, int num_classes) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes),
                                  total / static_cast<std::size_t>(num_classes));
  for (std::size_t k = 0; k < total % static_cast<std::size_t>(num_classes); ++k) ++counts[k];
  return counts;
}

struct Split {
  std::vector<double> x;
  std::vector<int> y;
};

// Samples one class-balanced split; `emit` maps (class, gaussian noise draw)
// to a feature row.
template <typename Emit>
Split sample_split(std::size_t total, int num_classes, std::size_t dim, Rng& rng, Emit&& emit) {
  Split out;
  out.x.reserve(total * dim);
  out.y.reserve(total);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto counts = class_counts(total, num_classes);
  std::vector<double> noise(dim);
  for (int cls = 0; cls < num_classes; ++cls) {
    for (std::size_t i = 0; i < counts[static_cast<std::size_t>(cls)]; ++i) {
      for (double& v : noise) v = gauss(rng);
      const std::vector<double> row = emit(cls, noise);
      out.x.insert(out.x.end(), row.begin(), row.end());
      out.y.push_back(cls);
    }
  }
  return out;
}

std::size_t test_count(const StreamSpec& spec) {
  const auto n = static_cast<double>(spec.samples_per_domain) * spec.test_fraction;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n)));
}

DomainTask make_task(const StreamSpec& spec, int task_id, Split train, Split test) {
  DomainTask task;
  task.task_id = task_id;
  task.num_classes = spec.num_classes;
  task.train_x = Tensor::from({train.y.size(), spec.input_dim}, std::move(train.x));
  task.train_y = std::move(train.y);
  task.test_x = Tensor::from({test.y.size(), spec.input_dim}, std::move(test.x));
  task.test_y = std::move(test.y);
  return task;
}

std::vector<DomainTask> generate_rotated_blobs(const StreamSpec& spec) {
  if (spec.input_dim < 2)
    throw ConfigError("rotated_blobs: input_dim must be at least 2");
  const int T = spec.num_domains;
  std::vector<DomainTask> tasks;
  for (int t = 1; t <= T; ++t) {
    // Domain 1 is the base dataset; later domains rotate the class centroids
    // within the first two coordinates, up to (T-1)/T of a half turn.
    const double angle = static_cast<double>(t - 1) * std::numbers::pi / static_cast<double>(T);
    const double noise_scale =
        kBlobNoise * (1.0 + 0.5 * static_cast<double>(t - 1) / std::max(1, T - 1));
    auto emit = [&](int cls, const std::vector<double>& noise) {
      const double theta =
          2.0 * std::numbers::pi * static_cast<double>(cls) / static_cast<double>(spec.num_classes) +
          angle;
      std::vector<double> row(spec.input_dim, 0.0);
      row[0] = kBlobRadius * std::cos(theta);
      row[1] = kBlobRadius * std::sin(theta);
      for (std::size_t d = 0; d < spec.input_dim; ++d) row[d] += noise_scale * noise[d];
      return row;
    };
    Rng train_rng = make_rng(spec.seed, kStreamTrain, static_cast<std::uint64_t>(t));
    Rng test_rng = make_rng(spec.seed, kStreamTest, static_cast<std::uint64_t>(t));
    Split train = sample_split(spec.samples_per_domain, spec.num_classes, spec.input_dim,
                               train_rng, emit);
    Split test = sample_split(test_count(spec), spec.num_classes, spec.input_dim, test_rng, emit);
    tasks.push_back(make_task(spec, t, std::move(train), std::move(test)));
  }
  return tasks;
}

std::vector<std::vector<double>> base_centroids(const StreamSpec& spec) {
  Rng rng = make_rng(spec.seed, kStreamCentroids);
  std::normal_distribution<double> gauss(0.0, kBaseCentroidScale);
  std::vector<std::vector<double>> centroids(static_cast<std::size_t>(spec.num_classes));
  for (auto& c : centroids) {
    c.resize(spec.input_dim);
    for (double& v : c) v = gauss(rng);
  }
  return centroids;
}

std::vector<DomainTask> generate_permuted_features(const StreamSpec& spec) {
  const auto centroids = base_centroids(spec);
  std::vector<DomainTask> tasks;
  for (int t = 1; t <= spec.num_domains; ++t) {
    std::vector<std::size_t> perm(spec.input_dim);
    std::iota(perm.begin(), perm.end(), 0);
    if (t > 1) {
      Rng perm_rng = make_rng(spec.seed, kStreamPermute, static_cast<std::uint64_t>(t));
      for (std::size_t i = spec.input_dim - 1; i > 0; --i) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i)(perm_rng);
        std::swap(perm[i], perm[j]);
      }
    }
    auto emit = [&](int cls, const std::vector<double>& noise) {
      std::vector<double> row(spec.input_dim);
      const auto& c = centroids[static_cast<std::size_t>(cls)];
      for (std::size_t d = 0; d < spec.input_dim; ++d)
        row[d] = c[perm[d]] + kBaseNoise * noise[d];
      return row;
    };
    Rng train_rng = make_rng(spec.seed, kStreamTrain, static_cast<std::uint64_t>(t));
    Rng test_rng = make_rng(spec.seed, kStreamTest, static_cast<std::uint64_t>(t));
    Split train = sample_split(spec.samples_per_domain, spec.num_classes, spec.input_dim,
                               train_rng, emit);
    Split test = sample_split(test_count(spec), spec.num_classes, spec.input_dim, test_rng, emit);
    tasks.push_back(make_task(spec, t, std::move(train), std::move(test)));
  }
  return tasks;
}

std::vector<DomainTask> generate_noisy_channels(const StreamSpec& spec) {
  const auto centroids = base_centroids(spec);
  std::vector<DomainTask> tasks;
  for (int t = 1; t <= spec.num_domains; ++t) {
    std::vector<double> channel_scale(spec.input_dim, 1.0);
    double extra_noise = 0.0;
    if (t > 1) {
      Rng chan_rng = make_rng(spec.seed, kStreamChannels, static_cast<std::uint64_t>(t));
      std::vector<std::size_t> coords(spec.input_dim);
      std::iota(coords.begin(), coords.end(), 0);
      for (std::size_t i = spec.input_dim - 1; i > 0; --i) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i)(chan_rng);
        std::swap(coords[i], coords[j]);
      }
      const double factor = (t % 2 == 0) ? 1.0 + 0.4 * t : 1.0 / (1.0 + 0.4 * t);
      for (std::size_t i = 0; i < spec.input_dim / 2; ++i) channel_scale[coords[i]] = factor;
      extra_noise = 0.05 * static_cast<double>(t - 1);
    }
    auto emit = [&](int cls, const std::vector<double>& noise) {
      std::vector<double> row(spec.input_dim);
      const auto& c = centroids[static_cast<std::size_t>(cls)];
      for (std::size_t d = 0; d < spec.input_dim; ++d)
        row[d] = channel_scale[d] * c[d] + (kBaseNoise + extra_noise) * noise[d];
      return row;
    };
    Rng train_rng = make_rng(spec.seed, kStreamTrain, static_cast<std::uint64_t>(t));
    Rng test_rng = make_rng(spec.seed, kStreamTest, static_cast<std::uint64_t>(t));
    Split train = sample_split(spec.samples_per_domain, spec.num_classes, spec.input_dim,
                               train_rng, emit);
    Split test = sample_split(test_count(spec), spec.num_classes, spec.input_dim, test_rng, emit);
    tasks.push_back(make_task(spec, t, std::move(train), std::move(test)));
  }
  return tasks;
}

}  // namespace

StreamKind stream_kind_from_string(const std::string& s) {
  if (s == "rotated_blobs") return StreamKind::RotatedBlobs;
  if (s == "permuted_features") return StreamKind::PermutedFeatures;
  if (s == "noisy_channels") return StreamKind::NoisyChannels;
  throw ConfigError("unknown stream kind '" + s +
                    "', expected rotated_blobs|permuted_features|noisy_channels");
}

std::string to_string(StreamKind kind) {
  switch (kind) {
    case StreamKind::RotatedBlobs: return "rotated_blobs";
    case StreamKind::PermutedFeatures: return "permuted_features";
    case StreamKind::NoisyChannels: return "noisy_channels";
  }
  return "?";
}

void StreamSpec::validate() const {
  if (num_domains < 1) throw ConfigError("stream: num_domains must be >= 1");
  if (num_classes < 1) throw ConfigError("stream: num_classes must be >= 1");
  if (input_dim < 1) throw ConfigError("stream: input_dim must be >= 1");
  if (samples_per_domain < 1) throw ConfigError("stream: samples_per_domain must be >= 1");
  if (test_fraction <= 0.0 || test_fraction > 1.0)
    throw ConfigError("stream: test_fraction must be in (0, 1]");
  if (kind == StreamKind::RotatedBlobs && input_dim < 2)
    throw ConfigError("rotated_blobs: input_dim must be at least 2");
}

std::vector<DomainTask> generate(const StreamSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case StreamKind::RotatedBlobs: return generate_rotated_blobs(spec);
    case StreamKind::PermutedFeatures: return generate_permuted_features(spec);
    case StreamKind::NoisyChannels: return generate_noisy_channels(spec);
  }
  throw ConfigError("stream: unknown kind");
}

DomainTask joint_view(const std::vector<DomainTask>& tasks, std::uint64_t seed) {
  if (tasks.empty()) throw SchemaError("joint_view: no tasks");
  const std::size_t dim = tasks.front().train_x.cols();
  const int num_classes = tasks.front().num_classes;
  for (const DomainTask& t : tasks) {
    if (t.train_x.cols() != dim || t.test_x.cols() != dim)
      throw SchemaError("joint_view: tasks disagree on input width");
    if (t.num_classes != num_classes)
      throw SchemaError("joint_view: tasks disagree on class count");
  }
  std::vector<double> train_x, test_x;
  std::vector<int> train_y, test_y;
  for (const DomainTask& t : tasks) {
    train_x.insert(train_x.end(), t.train_x.values().begin(), t.train_x.values().end());
    train_y.insert(train_y.end(), t.train_y.begin(), t.train_y.end());
    test_x.insert(test_x.end(), t.test_x.values().begin(), t.test_x.values().end());
    test_y.insert(test_y.end(), t.test_y.begin(), t.test_y.end());
  }
  auto shuffle_rows = [&](std::vector<double>& x, std::vector<int>& y, std::uint64_t substream) {
    Rng rng = make_rng(seed, 0x6a6f696e /* "join" */, substream);
    const std::size_t n = y.size();
    for (std::size_t i = n - 1; i > 0; --i) {
      const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i)(rng);
      std::swap(y[i], y[j]);
      for (std::size_t d = 0; d < dim; ++d) std::swap(x[i * dim + d], x[j * dim + d]);
    }
  };
  if (!train_y.empty()) shuffle_rows(train_x, train_y, 1);
  if (!test_y.empty()) shuffle_rows(test_x, test_y, 2);

  DomainTask joint;
  joint.task_id = 1;
  joint.num_classes = num_classes;
  joint.train_x = Tensor::from({train_y.size(), dim}, std::move(train_x));
  joint.train_y = std::move(train_y);
  joint.test_x = Tensor::from({test_y.size(), dim}, std::move(test_x));
  joint.test_y = std::move(test_y);
  return joint;
}

namespace {

constexpr char kDatasetMagic[4] = {'D', 'B', 'D', 'S'};
constexpr std::uint32_t kDatasetVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw SchemaError("dataset: truncated while reading " + what);
  return v;
}

void write_rows(std::ostream& os, const Tensor& x, const std::vector<int>& y) {
  const std::size_t dim = x.cols();
  for (std::size_t i = 0; i < y.size(); ++i) {
    os.write(reinterpret_cast<const char*>(x.values().data() + i * dim),
             static_cast<std::streamsize>(dim * sizeof(double)));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(y[i]));
  }
}

void read_rows(std::istream& is, std::size_t count, std::size_t dim, std::uint32_t num_classes,
               std::vector<double>& x, std::vector<int>& y, std::size_t& record_index) {
  for (std::size_t i = 0; i < count; ++i, ++record_index) {
    std::vector<double> row(dim);
    is.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(dim * sizeof(double)));
    if (!is) throw SchemaError("dataset: truncated record #" + std::to_string(record_index));
    const auto label = read_pod<std::uint32_t>(is, "label of record #" +
                                                       std::to_string(record_index));
    if (label >= num_classes) {
      throw SchemaError("dataset: record #" + std::to_string(record_index) + " has label " +
                        std::to_string(label) + " >= num_classes " + std::to_string(num_classes));
    }
    x.insert(x.end(), row.begin(), row.end());
    y.push_back(static_cast<int>(label));
  }
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const std::vector<DomainTask>& tasks) {
  if (tasks.empty()) throw SchemaError("save_dataset: no tasks");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("dataset: cannot open " + path.string() + " for writing");
  os.write(kDatasetMagic, 4);
  write_pod<std::uint32_t>(os, kDatasetVersion);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tasks.size()));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tasks.front().num_classes));
  write_pod<std::uint64_t>(os, tasks.front().train_x.cols());
  for (const DomainTask& t : tasks) {
    write_pod<std::uint64_t>(os, t.train_y.size());
    write_pod<std::uint64_t>(os, t.test_y.size());
  }
  for (const DomainTask& t : tasks) {
    write_rows(os, t.train_x, t.train_y);
    write_rows(os, t.test_x, t.test_y);
  }
  if (!os) throw IoError("dataset: write to " + path.string() + " failed");
}

std::vector<DomainTask> load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("dataset: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kDatasetMagic, 4) != 0)
    throw SchemaError("dataset: bad magic in " + path.string());
  if (read_pod<std::uint32_t>(is, "version") != kDatasetVersion)
    throw SchemaError("dataset: unsupported version");
  const auto num_tasks = read_pod<std::uint32_t>(is, "task count");
  const auto num_classes = read_pod<std::uint32_t>(is, "class count");
  const auto dim = read_pod<std::uint64_t>(is, "input_dim");
  if (num_tasks == 0 || num_classes == 0 || dim == 0)
    throw SchemaError("dataset: empty header fields");
  std::vector<std::pair<std::uint64_t, std::uint64_t>> counts;
  counts.reserve(num_tasks);
  for (std::uint32_t t = 0; t < num_tasks; ++t) {
    const auto n_train = read_pod<std::uint64_t>(is, "train count");
    const auto n_test = read_pod<std::uint64_t>(is, "test count");
    counts.emplace_back(n_train, n_test);
  }
  std::vector<DomainTask> tasks;
  std::size_t record_index = 0;
  for (std::uint32_t t = 0; t < num_tasks; ++t) {
    DomainTask task;
    task.task_id = static_cast<int>(t) + 1;
    task.num_classes = static_cast<int>(num_classes);
    std::vector<double> train_x, test_x;
    read_rows(is, counts[t].first, dim, num_classes, train_x, task.train_y, record_index);
    read_rows(is, counts[t].second, dim, num_classes, test_x, task.test_y, record_index);
    task.train_x = Tensor::from({task.train_y.size(), dim}, std::move(train_x));
    task.test_x = Tensor::from({task.test_y.size(), dim}, std::move(test_x));
    tasks.push_back(std::move(task));
  }
  return tasks;
}

}  // namespace driftbench
