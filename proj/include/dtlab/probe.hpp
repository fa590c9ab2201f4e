#pragma once

// Rule-based alignment probe for the toy scenes: a color classifier on the
// object pixels, a left/right mass test, and a shape template match. It is a
// desk-scale substitute for VQA-based alignment scoring.

#include <functional>
#include <vector>

#include "dtlab/diffusion.hpp"
#include "dtlab/synthetic.hpp"
#include "dtlab/tensor.hpp"

namespace dtlab {

struct Denoiser;

struct Classification {
  int color = -1;
  int shape = -1;
  int position = -1;
};

/// Classifies sample `index` of a [B, 4, S, S] latent.
Classification classify_latent(const Tensor<float>& latent, std::size_t index = 0);

/// Produces a [B, 4, S, S] latent for each requested scene.
using Generator = std::function<Tensor<float>(const std::vector<Scene>&)>;

struct ProbeResult {
  double score = 0.0;  // fraction of (sample, attribute) checks passed
  double color = 0.0;
  double shape = 0.0;
  double position = 0.0;
  std::size_t samples = 0;
};

/// Scores `n_samples` balanced held-out scenes drawn from `seed`.
ProbeResult alignment_probe(const Generator& generator, std::size_t n_samples, std::uint64_t seed, std::size_t side);

/// Expected score of a generator whose output ignores the caption: the mean of
/// 1/K over the probed attributes.
double probe_chance_level();

Generator oracle_generator(std::size_t side);
Generator noise_generator(std::size_t side, std::uint64_t seed);

/// Text-to-latent sampling from the long caption of each scene.
Generator model_generator(const Denoiser& model, const SamplerConfig& sampler);

/// Inpainting: each scene is rendered, masked with a random mask from `seed`,
/// and regenerated with the known region pasted back at every step.
Generator inpaint_generator(const Denoiser& model, const SamplerConfig& sampler, std::uint64_t seed);

}  // namespace dtlab
