#pragma once

#include <memory>

#include "dtlab/backbone.hpp"
#include "dtlab/conditioning_spec.hpp"
#include "dtlab/random.hpp"
#include "dtlab/tensor.hpp"

namespace dtlab {

/// Rebuilds `base` with a condition stream and copies every parameter whose
/// name and shape are unchanged. Throws ConfigError for token concatenation on
/// a cross-attention family or a channel-concatenated condition whose side
/// differs from the noise latent.
template <typename T>
std::unique_ptr<Network<T>> attach_condition(const Network<T>& base, const ConditioningSpec& spec,
                                             std::uint64_t seed = 0);

/// Tokens a conditioned network carries: arch-config counts plus condition tokens.
TokenBreakdown conditioned_token_counts(const ArchConfig& config, const ConditioningSpec& spec,
                                        std::size_t image_resolution);

struct MaskConfig {
  double min_coverage = 0.10;
  double max_coverage = 0.60;
  /// Probability of a two-rectangle mask instead of a single rectangle.
  double two_rect_probability = 0.5;

  double mean_coverage() const { return 0.5 * (min_coverage + max_coverage); }
};

/// [S, S] binary mask, 1 = region to regenerate. Coverage is drawn uniformly
/// from [min, max] and realized exactly up to one pixel of rounding, clamped
/// into the range.
Tensor<float> random_mask(std::size_t side, Rng& rng, const MaskConfig& config = {});

struct InpaintBatch {
  Tensor<float> masked_latent;  // x0 * (1 - mask), [B, C, S, S]
  Tensor<float> mask;           // [B, 1, S, S]
  Tensor<float> target;         // x0
  /// masked_latent and mask stacked on channels, the network's condition input.
  Tensor<float> condition() const;
};

InpaintBatch make_inpaint_batch(const Tensor<float>& x0, Rng& rng, const MaskConfig& config = {});
/// Same with a caller-provided [B, 1, S, S] mask.
InpaintBatch make_inpaint_batch(const Tensor<float>& x0, const Tensor<float>& mask);

inline constexpr float kEdgeThreshold = 0.25f;

/// Binary [B, 1, S, S] edge proxy: forward-difference gradient magnitude,
/// maximized over channels, above `threshold`. The last row and column use a
/// zero difference across the border.
Tensor<float> make_edge_batch(const Tensor<float>& x0, float threshold = kEdgeThreshold);

/// Keeps the known region during inpainting: x = mask * x + (1 - mask) * known_t.
void paste_known(Tensor<float>& x, const Tensor<float>& known, const Tensor<float>& mask);

}  // namespace dtlab
