#include "driftbench/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "driftbench/errors.hpp"

namespace driftbench {

namespace {

constexpr std::uint64_t kInitStream = 0x6d6f64656c;  // "model"

Tensor init_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng, bool trainable) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> vals(fan_in * fan_out);
  for (double& v : vals) v = dist(rng);
  return Tensor::from({fan_in, fan_out}, std::move(vals), trainable);
}

}  // namespace

void EncoderConfig::validate() const {
  if (input_dim < 1) throw ConfigError("encoder config: input_dim must be >= 1");
  if (num_classes < 1) throw ConfigError("encoder config: num_classes must be >= 1");
  if (hidden_dims.empty()) throw ConfigError("encoder config: hidden_dims must not be empty");
  for (std::size_t h : hidden_dims)
    if (h < 1) throw ConfigError("encoder config: hidden widths must be >= 1");
}

DualHeadModel::DualHeadModel(EncoderConfig cfg, std::uint64_t seed, bool trainable)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng = make_rng(seed, kInitStream);
  std::size_t in = cfg_.input_dim;
  for (std::size_t width : cfg_.hidden_dims) {
    enc_weights_.push_back(init_weight(in, width, rng, trainable));
    enc_biases_.push_back(Tensor::zeros({width}, trainable));
    in = width;
  }
  const std::size_t d = cfg_.repr_dim();
  const std::size_t c = cfg_.num_classes;
  head1_weight_ = init_weight(d, c, rng, trainable);
  head1_bias_ = Tensor::zeros({c}, trainable);
  head2_weight_ = init_weight(d, c, rng, trainable);
  head2_bias_ = Tensor::zeros({c}, trainable);
}

Tensor DualHeadModel::encode(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != cfg_.input_dim) {
    throw ShapeError("forward: input shape " + shape_to_string(x.shape()) +
                     " does not match input_dim " + std::to_string(cfg_.input_dim));
  }
  Tensor h = x;
  for (std::size_t l = 0; l < enc_weights_.size(); ++l)
    h = relu(add_rowvec(matmul(h, enc_weights_[l]), enc_biases_[l]));
  return h;
}

DualHeadModel::Outputs DualHeadModel::forward(const Tensor& x) const {
  Tensor z = encode(x);
  Tensor logits1 = add_rowvec(matmul(z, head1_weight_), head1_bias_);
  Tensor logits2 = add_rowvec(matmul(z, head2_weight_), head2_bias_);
  return {z, logits1, logits2};
}

std::vector<int> DualHeadModel::predict(const Tensor& x) const {
  DualHeadModel eval = clone_for_eval();
  Tensor logits = add_rowvec(matmul(eval.encode(x), eval.head1_weight_), eval.head1_bias_);
  const std::size_t n = logits.rows(), c = logits.cols();
  std::vector<int> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

void DualHeadModel::set_frozen(ModelPart part, bool frozen) {
  frozen_[static_cast<int>(part)] = frozen;
}

bool DualHeadModel::frozen(ModelPart part) const { return frozen_[static_cast<int>(part)]; }

std::vector<Tensor> DualHeadModel::part_parameters(ModelPart part) const {
  std::vector<Tensor> out;
  switch (part) {
    case ModelPart::Encoder:
      for (std::size_t l = 0; l < enc_weights_.size(); ++l) {
        out.push_back(enc_weights_[l]);
        out.push_back(enc_biases_[l]);
      }
      break;
    case ModelPart::Head1:
      out = {head1_weight_, head1_bias_};
      break;
    case ModelPart::Head2:
      out = {head2_weight_, head2_bias_};
      break;
  }
  return out;
}

std::vector<Tensor> DualHeadModel::parameters() const {
  std::vector<Tensor> out = part_parameters(ModelPart::Encoder);
  for (const auto& p : part_parameters(ModelPart::Head1)) out.push_back(p);
  for (const auto& p : part_parameters(ModelPart::Head2)) out.push_back(p);
  return out;
}

std::vector<Tensor> DualHeadModel::trainable_parameters() const {
  std::vector<Tensor> out;
  for (ModelPart part : {ModelPart::Encoder, ModelPart::Head1, ModelPart::Head2}) {
    if (frozen(part)) continue;
    for (const auto& p : part_parameters(part)) out.push_back(p);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> DualHeadModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t l = 0; l < enc_weights_.size(); ++l) {
    out.emplace_back("encoder.w" + std::to_string(l), enc_weights_[l]);
    out.emplace_back("encoder.b" + std::to_string(l), enc_biases_[l]);
  }
  out.emplace_back("head1.w", head1_weight_);
  out.emplace_back("head1.b", head1_bias_);
  out.emplace_back("head2.w", head2_weight_);
  out.emplace_back("head2.b", head2_bias_);
  return out;
}

void DualHeadModel::zero_grad() const {
  for (Tensor p : parameters()) p.zero_grad();
}

std::vector<double> DualHeadModel::flat_parameters() const {
  std::vector<double> flat;
  for (const Tensor& p : parameters())
    flat.insert(flat.end(), p.values().begin(), p.values().end());
  return flat;
}

void DualHeadModel::load_flat_parameters(const std::vector<double>& flat) {
  std::size_t offset = 0;
  for (Tensor p : parameters()) {
    if (offset + p.size() > flat.size())
      throw StateError("load_flat_parameters: parameter vector too short");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(offset),
              flat.begin() + static_cast<std::ptrdiff_t>(offset + p.size()), p.values().begin());
    offset += p.size();
  }
  if (offset != flat.size())
    throw StateError("load_flat_parameters: parameter vector size mismatch");
}

DualHeadModel DualHeadModel::clone_for_eval() const {
  DualHeadModel out;
  out.cfg_ = cfg_;
  for (std::size_t l = 0; l < enc_weights_.size(); ++l) {
    out.enc_weights_.push_back(enc_weights_[l].copy(false));
    out.enc_biases_.push_back(enc_biases_[l].copy(false));
  }
  out.head1_weight_ = head1_weight_.copy(false);
  out.head1_bias_ = head1_bias_.copy(false);
  out.head2_weight_ = head2_weight_.copy(false);
  out.head2_bias_ = head2_bias_.copy(false);
  return out;
}

EmaModel::EmaModel(const DualHeadModel& source, double decay, double update_prob)
    : cfg_(source.config()),
      shadow_(source.flat_parameters()),
      decay_(decay),
      update_prob_(update_prob) {
  if (decay < 0.0 || decay >= 1.0) throw ConfigError("ema: decay must be in [0, 1)");
  if (!(update_prob > 0.0) || update_prob > 1.0)
    throw ConfigError("ema: update_prob must be in (0, 1]");
}

bool EmaModel::maybe_update(const DualHeadModel& working, Rng& rng) {
  if (uniform01(rng) < update_prob_) {
    apply_update(working);
    return true;
  }
  return false;
}

void EmaModel::apply_update(const DualHeadModel& working) {
  const std::vector<double> current = working.flat_parameters();
  if (current.size() != shadow_.size())
    throw StateError("ema: working model shapes do not match the shadow copy");
  for (std::size_t i = 0; i < shadow_.size(); ++i)
    shadow_[i] = decay_ * shadow_[i] + (1.0 - decay_) * current[i];
}

DualHeadModel EmaModel::eval_model() const {
  DualHeadModel m(cfg_, 0, false);
  m.load_flat_parameters(shadow_);
  return m;
}

std::vector<int> predict(const DualHeadModel& m, const Tensor& x, bool use_ema,
                         const EmaModel* ema) {
  if (use_ema) {
    if (ema == nullptr) throw ConfigError("predict: use_ema requested without an EMA model");
    return ema->eval_model().predict(x);
  }
  return m.predict(x);
}

namespace {

constexpr char kCheckpointMagic[4] = {'D', 'B', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DecodeError(std::string("checkpoint: truncated while reading ") + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DualHeadModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open " + path.string() + " for writing");
  os.write(kCheckpointMagic, 4);
  write_pod<std::uint32_t>(os, kCheckpointVersion);
  const EncoderConfig& cfg = model.config();
  write_pod<std::uint64_t>(os, cfg.input_dim);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.hidden_dims.size()));
  for (std::size_t h : cfg.hidden_dims) write_pod<std::uint64_t>(os, h);
  write_pod<std::uint64_t>(os, cfg.num_classes);
  const auto named = model.named_parameters();
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, tensor] : named) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t e : tensor.shape()) write_pod<std::uint64_t>(os, e);
    os.write(reinterpret_cast<const char*>(tensor.values().data()),
             static_cast<std::streamsize>(tensor.size() * sizeof(double)));
  }
  if (!os) throw IoError("checkpoint: write to " + path.string() + " failed");
}

DualHeadModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw DecodeError("checkpoint: bad magic in " + path.string());
  if (read_pod<std::uint32_t>(is, "version") != kCheckpointVersion)
    throw DecodeError("checkpoint: unsupported version");
  EncoderConfig cfg;
  cfg.input_dim = read_pod<std::uint64_t>(is, "input_dim");
  const std::uint32_t n_hidden = read_pod<std::uint32_t>(is, "hidden count");
  if (n_hidden == 0 || n_hidden > 1024) throw DecodeError("checkpoint: bad hidden layer count");
  cfg.hidden_dims.clear();
  for (std::uint32_t i = 0; i < n_hidden; ++i)
    cfg.hidden_dims.push_back(read_pod<std::uint64_t>(is, "hidden width"));
  cfg.num_classes = read_pod<std::uint64_t>(is, "num_classes");
  cfg.validate();

  DualHeadModel model(cfg, 0, true);
  auto named = model.named_parameters();
  const std::uint32_t count = read_pod<std::uint32_t>(is, "tensor count");
  if (count != named.size()) throw DecodeError("checkpoint: tensor count does not match config");
  for (auto& [name, tensor] : named) {
    const std::uint32_t name_len = read_pod<std::uint32_t>(is, "name length");
    std::string stored(name_len, '\0');
    is.read(stored.data(), name_len);
    if (!is || stored != name)
      throw DecodeError("checkpoint: unexpected tensor name '" + stored + "'");
    const std::uint32_t rank = read_pod<std::uint32_t>(is, "rank");
    if (rank != tensor.rank()) throw DecodeError("checkpoint: rank mismatch for " + name);
    for (std::size_t e : tensor.shape()) {
      if (read_pod<std::uint64_t>(is, "extent") != e)
        throw DecodeError("checkpoint: extent mismatch for " + name);
    }
    is.read(reinterpret_cast<char*>(tensor.values().data()),
            static_cast<std::streamsize>(tensor.size() * sizeof(double)));
    if (!is) throw DecodeError("checkpoint: truncated values for " + name);
  }
  return model;
}

}  // namespace driftbench
