#include "dtlab/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace dtlab {

double DiffusionSchedule::alpha_bar_at(int t) const {
  if (t < 1 || static_cast<std::size_t>(t) > train_steps) {
    throw DiffusionError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(train_steps) + "]");
  }
  return alpha_bar[static_cast<std::size_t>(t) - 1];
}

double DiffusionSchedule::snr_at(int t) const {
  const double ab = alpha_bar_at(t);
  return ab / (1.0 - ab);
}

DiffusionSchedule scaled_linear_schedule(std::size_t train_steps, double beta_start, double beta_end) {
  if (train_steps < 2) throw DiffusionError("schedule needs at least two timesteps");
  if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0)) {
    throw DiffusionError("need 0 < beta_start < beta_end < 1");
  }
  DiffusionSchedule s;
  s.train_steps = train_steps;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta.resize(train_steps);
  s.alpha_bar.resize(train_steps);
  const double a = std::sqrt(beta_start), b = std::sqrt(beta_end);
  double prod = 1.0;
  for (std::size_t i = 0; i < train_steps; ++i) {
    const double r = a + (b - a) * static_cast<double>(i) / static_cast<double>(train_steps - 1);
    s.beta[i] = r * r;
    prod *= 1.0 - s.beta[i];
    s.alpha_bar[i] = prod;
  }
  return s;
}

DiffusionSchedule shifted_schedule(const DiffusionSchedule& base, std::size_t resolution) {
  if (resolution != 256 && resolution != 512 && resolution != 1024) {
    throw DiffusionError("unsupported schedule resolution " + std::to_string(resolution) + " (expected 256, 512, 1024)");
  }
  if (resolution == 256) return base;
  const double ratio = static_cast<double>(resolution) / 256.0;
  const double k = ratio * ratio;
  DiffusionSchedule s = base;
  s.snr_shift = base.snr_shift * k;
  double prev = 1.0;
  for (std::size_t i = 0; i < s.train_steps; ++i) {
    const double ab = base.alpha_bar[i];
    s.alpha_bar[i] = ab / (ab + k * (1.0 - ab));
    s.beta[i] = 1.0 - s.alpha_bar[i] / prev;
    prev = s.alpha_bar[i];
  }
  return s;
}

Tensor<float> q_sample(const Tensor<float>& x0, std::span<const int> timesteps, const Tensor<float>& noise,
                       const DiffusionSchedule& schedule) {
  if (noise.shape() != x0.shape()) throw ShapeError("q_sample noise", x0.shape(), noise.shape());
  if (x0.rank() == 0 || timesteps.size() != x0.dim(0)) {
    throw ShapeError("q_sample timesteps", Shape{timesteps.size()}, x0.shape());
  }
  Tensor<float> out(x0.shape());
  const std::size_t per = x0.size() / x0.dim(0);
  for (std::size_t b = 0; b < timesteps.size(); ++b) {
    const double ab = schedule.alpha_bar_at(timesteps[b]);
    const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      out[i] = static_cast<float>(sa * x0[i] + sn * noise[i]);
    }
  }
  return out;
}

Tensor<float> q_sample(const Tensor<float>& x0, int t, const Tensor<float>& noise, const DiffusionSchedule& schedule) {
  std::vector<int> ts(x0.rank() == 0 ? 0 : x0.dim(0), t);
  return q_sample(x0, ts, noise, schedule);
}

LossDraw draw_loss_inputs(const Shape& shape, const DiffusionSchedule& schedule, Rng& rng, double p_uncond) {
  LossDraw d;
  const std::size_t b = shape.at(0);
  d.timesteps.resize(b);
  for (auto& t : d.timesteps) t = rng.uniform_int(1, static_cast<int>(schedule.train_steps));
  d.noise = rng.normal_tensor<float>(shape);
  d.drop_text.resize(b);
  for (auto& f : d.drop_text) f = rng.bernoulli(p_uncond) ? 1 : 0;
  return d;
}

Var training_loss(Tape<float>& tape, const TapeDenoiser& model, const Tensor<float>& x0,
                  const DiffusionSchedule& schedule, const LossDraw& draw) {
  const Tensor<float> x_t = q_sample(x0, draw.timesteps, draw.noise, schedule);
  const Var pred = model(tape, x_t, draw.timesteps, draw.drop_text);
  return op::mse(tape, pred, tape.constant(draw.noise));
}

Var training_loss(Tape<float>& tape, const TapeDenoiser& model, const Tensor<float>& x0,
                  const DiffusionSchedule& schedule, Rng& rng, double p_uncond) {
  return training_loss(tape, model, x0, schedule, draw_loss_inputs(x0.shape(), schedule, rng, p_uncond));
}

std::vector<int> ddim_timesteps(std::size_t train_steps, std::size_t ddim_steps) {
  if (ddim_steps == 0 || ddim_steps > train_steps) {
    throw DiffusionError("ddim_steps must be in [1, " + std::to_string(train_steps) + "], got " +
                         std::to_string(ddim_steps));
  }
  std::vector<int> ts(ddim_steps);
  for (std::size_t i = 0; i < ddim_steps; ++i) {
    ts[i] = static_cast<int>(train_steps - (i * train_steps) / ddim_steps);
  }
  return ts;
}

Tensor<float> guided_epsilon(const Tensor<float>& eps_u, const Tensor<float>& eps_c, double scale) {
  if (eps_u.shape() != eps_c.shape()) throw ShapeError("guided_epsilon", eps_u.shape(), eps_c.shape());
  if (scale == 1.0) return eps_c;
  if (scale == 0.0) return eps_u;
  Tensor<float> out(eps_u.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = eps_u[i];
    out[i] = static_cast<float>(u + scale * (static_cast<double>(eps_c[i]) - u));
  }
  return out;
}

void ddim_step(Tensor<float>& x, const Tensor<float>& eps, int t, int t_prev, const DiffusionSchedule& schedule) {
  if (eps.shape() != x.shape()) throw ShapeError("ddim_step", x.shape(), eps.shape());
  const double ab = schedule.alpha_bar_at(t);
  const double ab_prev = t_prev > 0 ? schedule.alpha_bar_at(t_prev) : 1.0;
  const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
  const double sa_prev = std::sqrt(ab_prev), sn_prev = std::sqrt(1.0 - ab_prev);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = eps[i];
    const double x0 = (static_cast<double>(x[i]) - sn * e) / sa;
    x[i] = static_cast<float>(sa_prev * x0 + sn_prev * e);
  }
}

Tensor<float> ddim_sample_from(const EpsFn& eps, const SamplerConfig& config, const DiffusionSchedule& schedule,
                               Tensor<float> x, const StepHook& hook) {
  if (config.eta != 0.0) throw DiffusionError("only eta = 0 is supported");
  if (config.cfg_scale < 0.0) throw DiffusionError("cfg_scale must be non-negative");
  const auto ts = ddim_timesteps(schedule.train_steps, config.ddim_steps);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    Tensor<float> e;
    if (config.cfg_scale == 1.0) {
      e = eps(x, t, true);
    } else if (config.cfg_scale == 0.0) {
      e = eps(x, t, false);
    } else {
      e = guided_epsilon(eps(x, t, false), eps(x, t, true), config.cfg_scale);
    }
    ddim_step(x, e, t, t_prev, schedule);
    if (hook) hook(x, t_prev);
  }
  return x;
}

Tensor<float> ddim_sample(const EpsFn& eps, const SamplerConfig& config, const DiffusionSchedule& schedule,
                          const Shape& shape, const StepHook& hook) {
  Rng rng(config.seed);
  return ddim_sample_from(eps, config, schedule, rng.normal_tensor<float>(shape), hook);
}

void write_ppm(const std::string& path, const Tensor<float>& latent, std::size_t index, std::size_t scale) {
  if (latent.rank() != 4 || latent.dim(1) < 3 || index >= latent.dim(0)) {
    throw ShapeError("write_ppm expects [B,C>=3,H,W], got " + shape_str(latent.shape()));
  }
  const std::size_t c = latent.dim(1), h = latent.dim(2), w = latent.dim(3);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P6\n" << w * scale << ' ' << h * scale << "\n255\n";
  for (std::size_t y = 0; y < h * scale; ++y) {
    for (std::size_t x = 0; x < w * scale; ++x) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const float v = latent[((index * c + ch) * h + y / scale) * w + x / scale];
        const float u = std::clamp((v + 1.0f) * 0.5f, 0.0f, 1.0f);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(u * 255.0f))));
      }
    }
  }
}

}  // namespace dtlab
