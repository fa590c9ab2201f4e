#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtlab/backbone.hpp"
#include "dtlab/conditioning.hpp"
#include "dtlab/diffusion.hpp"
#include "dtlab/synthetic.hpp"

namespace dtlab {

/// Toy stand-in for a pretrained text encoder: a token table plus a
/// positional table, both [*, text_dim].
class TextEmbedder {
 public:
  TextEmbedder(std::size_t vocab, std::size_t text_len, std::size_t text_dim, std::uint64_t seed);

  /// ids holds B*text_len entries; returns [B*text_len, text_dim].
  Var embed(Tape<float>& tape, std::span<const int> ids);

  ParameterSet<float>& parameters() { return params_; }
  const ParameterSet<float>& parameters() const { return params_; }
  std::size_t text_len() const { return text_len_; }
  std::size_t text_dim() const { return text_dim_; }

 private:
  ParameterSet<float> params_;
  std::size_t text_len_, text_dim_;
};

/// Backbone, text embedder, and vocabulary trained together.
struct Denoiser {
  std::unique_ptr<Network<float>> net;
  std::unique_ptr<TextEmbedder> text;
  Vocabulary vocab;

  static Denoiser create(const ArchConfig& config, std::uint64_t seed, const ConditioningSpec& conditioning = {});

  /// Encodes captions to ids and key mask; dropped entries get the null caption.
  void encode(const std::vector<std::string>& captions, std::span<const std::uint8_t> drop, std::vector<int>& ids,
              std::vector<std::uint8_t>& mask) const;

  Var predict(Tape<float>& tape, const Tensor<float>& x_t, std::span<const int> timesteps, std::span<const int> ids,
              std::span<const std::uint8_t> mask, const Tensor<float>* condition) const;

  /// Epsilon closure for the sampler over a fixed batch of captions.
  EpsFn eps_fn(const std::vector<std::string>& captions, const Tensor<float>* condition) const;
};

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t steps = 1000;
  double lr = 8e-5;
  std::size_t warmup = 100;
  double weight_decay = 0.0;
  double text_lr = 8e-6;
  double text_weight_decay = 1e-4;
  bool text_frozen = true;
  std::uint64_t seed = 0;
  double p_uncond = kPUncond;
  std::uint64_t dataset_seed = 1;
  std::vector<double> mixture_weights{1.0};
  std::array<double, 2> caption_probs{0.5, 0.5};  // short, long

  /// Desk-scale defaults: the paper's 8e-5 / 8e-6 rates need far more steps.
  static TrainConfig toy();
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainLogRow {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  std::uint64_t data_hash = 0;

  /// Mean loss over the last `window` steps.
  double smoothed_loss(std::size_t window = 100) const;
  std::string csv() const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One data source per mixture weight, seeded from dataset_seed.
std::vector<DataSource> default_sources(const TrainConfig& config, std::size_t side);

/// The input batch one step consumes.
struct Batch {
  Tensor<float> x0;                   // [B, 4, S, S]
  std::vector<std::string> captions;  // B
  std::vector<Scene> scenes;          // B
};

Batch make_batch(DataStream& stream, std::size_t batch_size);

/// Trains in place. Throws TrainingError on a non-finite loss with the step,
/// learning rate, and gradient norm.
TrainLog train(Denoiser& model, const TrainConfig& config);
TrainLog train(Denoiser& model, const TrainConfig& config, DataStream& stream);

/// Condition tensor for a batch, per the model's conditioning kind. Inpainting
/// masks come from `rng`; the mask is returned through `mask` when non-null.
Tensor<float> make_condition(const ConditioningSpec& spec, const Tensor<float>& x0, Rng& rng,
                             Tensor<float>* mask = nullptr);

}  // namespace dtlab
