#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "driftbench/rng.hpp"
#include "driftbench/tensor.hpp"

namespace driftbench {

struct EncoderConfig {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden_dims{64, 64};
  std::size_t num_classes = 2;

  // The representation width is the last hidden layer's output width.
  std::size_t repr_dim() const { return hidden_dims.back(); }
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

enum class ModelPart { Encoder, Head1, Head2 };

// Shared encoder feeding two linear heads. Freezing a part only removes its
// parameters from optimizer steps; gradients still flow through frozen parts
// to whatever remains trainable.
class DualHeadModel {
 public:
  DualHeadModel(EncoderConfig cfg, std::uint64_t seed, bool trainable = true);

  struct Outputs {
    Tensor z;
    Tensor logits1;
    Tensor logits2;
  };

  Outputs forward(const Tensor& x) const;
  Tensor encode(const Tensor& x) const;
  // Argmax over logits1; ties resolve to the lowest class index. Runs on a
  // grad-free clone so it never records onto the caller's tape.
  std::vector<int> predict(const Tensor& x) const;

  void set_frozen(ModelPart part, bool frozen);
  bool frozen(ModelPart part) const;

  std::vector<Tensor> parameters() const;
  std::vector<Tensor> trainable_parameters() const;
  std::vector<Tensor> part_parameters(ModelPart part) const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  void zero_grad() const;

  std::vector<double> flat_parameters() const;
  void load_flat_parameters(const std::vector<double>& flat);
  DualHeadModel clone_for_eval() const;

  const EncoderConfig& config() const { return cfg_; }

 private:
  DualHeadModel() = default;

  EncoderConfig cfg_;
  std::vector<Tensor> enc_weights_;
  std::vector<Tensor> enc_biases_;
  Tensor head1_weight_, head1_bias_;
  Tensor head2_weight_, head2_bias_;
  bool frozen_[3] = {false, false, false};
};

// Exponential-moving-average shadow of a model's parameters, updated with
// probability update_prob per call ("semantic memory" used at inference).
class EmaModel {
 public:
  EmaModel(const DualHeadModel& source, double decay = 0.999, double update_prob = 0.05);

  // Draws once; applies the EMA rule with probability update_prob.
  bool maybe_update(const DualHeadModel& working, Rng& rng);
  void apply_update(const DualHeadModel& working);

  DualHeadModel eval_model() const;
  const std::vector<double>& shadow() const { return shadow_; }
  double decay() const { return decay_; }
  double update_prob() const { return update_prob_; }

 private:
  EncoderConfig cfg_;
  std::vector<double> shadow_;
  double decay_;
  double update_prob_;
};

std::vector<int> predict(const DualHeadModel& m, const Tensor& x, bool use_ema,
                         const EmaModel* ema);

// Binary checkpoint of named parameter tensors; layout documented in
// docs/formats.md and stable across versions.
void save_checkpoint(const std::filesystem::path& path, const DualHeadModel& model);
DualHeadModel load_checkpoint(const std::filesystem::path& path);

}  // namespace driftbench
