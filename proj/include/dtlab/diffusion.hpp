#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dtlab/autodiff.hpp"
#include "dtlab/random.hpp"
#include "dtlab/tensor.hpp"

namespace dtlab {

/// Timesteps run 1..T; alpha_bar(t) = prod_{i<=t} (1 - beta_i).
struct DiffusionSchedule {
  std::size_t train_steps = 0;
  std::vector<double> beta;       // beta[t-1]
  std::vector<double> alpha_bar;  // alpha_bar[t-1]
  double beta_start = 0.0;
  double beta_end = 0.0;
  /// SNR divisor applied on top of the base schedule.
  double snr_shift = 1.0;

  double alpha_bar_at(int t) const;
  double snr_at(int t) const;
};

inline constexpr std::size_t kTrainSteps = 1000;
inline constexpr double kBetaStart = 8.5e-4;
inline constexpr double kBetaEnd = 1.2e-2;
inline constexpr double kPUncond = 0.1;

/// beta_t = (linspace(sqrt(beta_start), sqrt(beta_end), T)[t-1])^2.
DiffusionSchedule scaled_linear_schedule(std::size_t train_steps = kTrainSteps, double beta_start = kBetaStart,
                                         double beta_end = kBetaEnd);

/// Divides SNR(t) by (resolution/256)^2 by remapping alpha_bar. Supported
/// resolutions are 256, 512, and 1024; 256 returns `base` unchanged.
DiffusionSchedule shifted_schedule(const DiffusionSchedule& base, std::size_t resolution);

class DiffusionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) noise, with one timestep per leading
/// (batch) index of x0.
Tensor<float> q_sample(const Tensor<float>& x0, std::span<const int> timesteps, const Tensor<float>& noise,
                       const DiffusionSchedule& schedule);
Tensor<float> q_sample(const Tensor<float>& x0, int t, const Tensor<float>& noise, const DiffusionSchedule& schedule);

/// Predicts epsilon on `tape` for x_t at per-sample timesteps. `drop_text[i]`
/// replaces sample i's caption with the null caption.
using TapeDenoiser = std::function<Var(Tape<float>& tape, const Tensor<float>& x_t, std::span<const int> timesteps,
                                       std::span<const std::uint8_t> drop_text)>;

/// The randomness one loss evaluation consumes.
struct LossDraw {
  std::vector<int> timesteps;
  Tensor<float> noise;
  std::vector<std::uint8_t> drop_text;
};

LossDraw draw_loss_inputs(const Shape& x0_shape, const DiffusionSchedule& schedule, Rng& rng,
                          double p_uncond = kPUncond);

/// Mean squared error between the drawn noise and the model's prediction.
Var training_loss(Tape<float>& tape, const TapeDenoiser& model, const Tensor<float>& x0,
                  const DiffusionSchedule& schedule, const LossDraw& draw);
Var training_loss(Tape<float>& tape, const TapeDenoiser& model, const Tensor<float>& x0,
                  const DiffusionSchedule& schedule, Rng& rng, double p_uncond = kPUncond);

struct SamplerConfig {
  std::size_t ddim_steps = 50;
  double cfg_scale = 7.5;
  std::uint64_t seed = 0;
  double eta = 0.0;  // only the deterministic sampler is implemented
};

/// Epsilon for x_t at timestep t (shared by the batch), conditional or with
/// the null caption.
using EpsFn = std::function<Tensor<float>(const Tensor<float>& x_t, int t, bool conditional)>;

/// Called after each step with the new latent and the timestep it now sits
/// at (0 after the final step).
using StepHook = std::function<void(Tensor<float>& x, int t)>;

/// Trailing spacing: t_i = T - floor(i*T/S) for i in [0, S).
std::vector<int> ddim_timesteps(std::size_t train_steps, std::size_t ddim_steps);

/// eps_u + s (eps_c - eps_u); s == 1 returns eps_c and s == 0 returns eps_u
/// exactly.
Tensor<float> guided_epsilon(const Tensor<float>& eps_uncond, const Tensor<float>& eps_cond, double scale);

/// Deterministic DDIM from x_T ~ N(0, I) drawn with config.seed.
Tensor<float> ddim_sample(const EpsFn& eps, const SamplerConfig& config, const DiffusionSchedule& schedule,
                          const Shape& shape, const StepHook& hook = {});
/// Same, from a given starting latent.
Tensor<float> ddim_sample_from(const EpsFn& eps, const SamplerConfig& config, const DiffusionSchedule& schedule,
                               Tensor<float> x_t, const StepHook& hook = {});

/// One deterministic update from t to t_prev (t_prev == 0 means alpha_bar = 1).
void ddim_step(Tensor<float>& x, const Tensor<float>& eps, int t, int t_prev, const DiffusionSchedule& schedule);

/// Writes channels 0..2 of sample `index` of a [B,C,S,S] latent as a binary PPM,
/// mapping [-1,1] to [0,255] and upscaling each latent pixel by `scale`.
void write_ppm(const std::string& path, const Tensor<float>& latent, std::size_t index = 0, std::size_t scale = 8);

}  // namespace dtlab
