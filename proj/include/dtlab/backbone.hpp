#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dtlab/arch_config.hpp"
#include "dtlab/autodiff.hpp"
#include "dtlab/conditioning_spec.hpp"
#include "dtlab/tensor.hpp"

namespace dtlab {

/// Layer-norm and attention stabilizer shared by every block.
inline constexpr double kLayerNormEps = 1e-6;

enum class InitScheme {
  Standard,  // truncated normal(0.02) projections, zero output head
  Dense,     // no zero weights, fan-in scaled linears; used by gradient checks
};

template <typename T>
struct DenoiserInput {
  const Tensor<T>* noisy = nullptr;        // [B, C, S, S]
  std::span<const int> timesteps;          // B entries
  Var text;                                // [B*L, text_dim] on the same tape
  std::span<const std::uint8_t> text_mask; // B*L entries, 0 = padding; empty = all valid
  const Tensor<T>* condition = nullptr;    // [B, Cc, Sc, Sc] for conditioned networks
};

/// A denoiser predicting epsilon with the latent's shape.
template <typename T>
class Network {
 public:
  virtual ~Network() = default;

  const ArchConfig& config() const { return config_; }
  const ConditioningSpec& conditioning() const { return conditioning_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.element_count(); }

  /// Tokens this network attends over per sample (self-attention length).
  virtual std::size_t sequence_length() const = 0;
  virtual Var forward(Tape<T>& tape, const DenoiserInput<T>& in) = 0;

 protected:
  Network(ArchConfig config, ConditioningSpec conditioning)
      : config_(std::move(config)), conditioning_(conditioning) {}

  ArchConfig config_;
  ConditioningSpec conditioning_;
  ParameterSet<T> params_;
};

/// Builds and initializes a network. Throws ConfigError on an invalid config
/// or an unsupported conditioning combination.
template <typename T>
std::unique_ptr<Network<T>> build(const ArchConfig& config, std::uint64_t seed,
                                  const ConditioningSpec& conditioning = {}, InitScheme init = InitScheme::Standard);

/// (source block, target block) pairs for U-ViT long skips: source output
/// after block i is fused before block d-1-i, for i < d/2.
std::vector<std::pair<std::size_t, std::size_t>> skip_pairing(std::size_t depth);

/// [B, C, S, S] -> [B*(S/p)^2, p*p*C]; patch features are ordered (py, px, c).
template <typename T>
Tensor<T> patchify(const Tensor<T>& latent, std::size_t patch);
/// Index map for the inverse of patchify, consumed by op::gather.
std::vector<std::uint32_t> unpatchify_index(std::size_t batch, std::size_t channels, std::size_t side, std::size_t patch);

/// [B, F] cos/sin timestep features.
template <typename T>
Tensor<T> timestep_features(std::span<const int> timesteps, std::size_t dim);

/// Concatenates two [B, C, S, S] tensors along channels.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Checkpoint: `<dir>/manifest.json` (config, conditioning, parameter names
/// and shapes) and `<dir>/params.bin` (binary tensors in manifest order).
void save_checkpoint(const Network<float>& net, const std::string& dir);
std::unique_ptr<Network<float>> load_checkpoint(const std::string& dir);

/// Copies every parameter that exists in `from` under the same name and shape.
template <typename T>
std::size_t copy_matching_parameters(const Network<T>& from, Network<T>& to);

}  // namespace dtlab
