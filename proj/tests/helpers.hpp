#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dtlab/arch_config.hpp"
#include "dtlab/backbone.hpp"
#include "dtlab/random.hpp"

namespace dtlab::testing {

/// Smallest useful instance of a family: 4x4 latent, 4 image tokens.
inline ArchConfig tiny(Family f, std::size_t depth = 2) {
  ArchConfig c = make_config(f);
  c.name = "tiny";
  c.hidden_dim = 8;
  c.depth = depth;
  c.num_heads = 2;
  c.patch_size = 2;
  c.text_dim = 6;
  c.text_len = 3;
  c.image_resolution = 32;
  c.time_freq_dim = 8;
  return c;
}

inline const Family kFamilies[] = {Family::UViT, Family::CrossAttnAdaLNSingle, Family::CrossAttnAdaLNPerBlock};

/// Random inputs for one forward pass.
template <typename T>
struct Inputs {
  Tensor<T> noisy;
  std::vector<int> timesteps;
  Tensor<T> text;
  std::vector<std::uint8_t> mask;
  Tensor<T> condition;

  Inputs(const ArchConfig& c, std::size_t batch, std::uint64_t seed, const ConditioningSpec& cond = {}) {
    Rng rng(seed);
    const std::size_t s = c.latent_side();
    noisy = rng.normal_tensor<T>({batch, c.latent_channels, s, s});
    for (std::size_t i = 0; i < batch; ++i) timesteps.push_back(rng.uniform_int(1, 1000));
    text = rng.normal_tensor<T>({batch * c.text_len, c.text_dim});
    if (cond.active()) {
      const std::size_t cs = cond.latent_side ? cond.latent_side : s;
      condition = rng.normal_tensor<T>({batch, cond.channels, cs, cs});
    }
  }

  Var run(Network<T>& net, Tape<T>& tape, const Tensor<T>* text_override = nullptr) const {
    DenoiserInput<T> in;
    in.noisy = &noisy;
    in.timesteps = timesteps;
    in.text = tape.constant(text_override ? *text_override : text);
    in.text_mask = mask;
    if (!condition.empty()) in.condition = &condition;
    return net.forward(tape, in);
  }
};

}  // namespace dtlab::testing
