#include "dtlab/probe.hpp"

#include <array>

#include "dtlab/conditioning.hpp"
#include "dtlab/trainer.hpp"

namespace dtlab {

Classification classify_latent(const Tensor<float>& latent, std::size_t index) {
  if (latent.rank() != 4 || latent.dim(1) != kSceneChannels || latent.dim(2) != latent.dim(3) || index >= latent.dim(0)) {
    throw ShapeError("classify_latent expects [B,4,S,S], got " + shape_str(latent.shape()));
  }
  const std::size_t side = latent.dim(2), hw = side * side, cell = cell_size(side);
  const float* base = latent.data() + index * kSceneChannels * hw;
  auto fg = [&](std::size_t y, std::size_t x) { return base[3 * hw + y * side + x] > 0.0f; };

  Classification c;
  std::array<std::size_t, 2> mass{};
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) mass[x / cell] += fg(y, x) ? 1 : 0;
  }
  if (mass[0] + mass[1] == 0) return c;
  c.position = mass[1] > mass[0] ? 1 : 0;
  const std::size_t x_off = static_cast<std::size_t>(c.position) * cell;

  std::array<double, 3> mean{};
  std::array<std::size_t, 2> cell_mass{};
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = x_off; x < x_off + cell; ++x) {
      if (!fg(y, x)) continue;
      for (std::size_t ch = 0; ch < 3; ++ch) mean[ch] += base[ch * hw + y * side + x];
      ++cell_mass[y / cell];
    }
  }
  double best = -1e300;
  for (int k = 0; k < kNumColors; ++k) {
    const auto v = color_vector(k);
    const double score = mean[0] * v[0] + mean[1] * v[1] + mean[2] * v[2];
    if (score > best) {
      best = score;
      c.color = k;
    }
  }

  const std::size_t y_off = (cell_mass[1] > cell_mass[0] ? 1 : 0) * cell;
  const std::size_t o = cell * 3 / 4, slack = cell - o;
  std::size_t best_match = 0;
  for (int s = 0; s < kNumShapes; ++s) {
    const auto tmpl = shape_template(s, o);
    for (std::size_t oy = 0; oy <= slack; ++oy) {
      for (std::size_t ox = 0; ox <= slack; ++ox) {
        std::size_t agree = 0;
        for (std::size_t y = 0; y < cell; ++y) {
          for (std::size_t x = 0; x < cell; ++x) {
            const bool inside = y >= oy && y < oy + o && x >= ox && x < ox + o;
            const bool want = inside && tmpl[(y - oy) * o + (x - ox)];
            agree += want == fg(y_off + y, x_off + x) ? 1 : 0;
          }
        }
        if (agree > best_match) {
          best_match = agree;
          c.shape = s;
        }
      }
    }
  }
  return c;
}

ProbeResult alignment_probe(const Generator& generator, std::size_t n_samples, std::uint64_t seed, std::size_t side) {
  ProbeResult r;
  if (n_samples == 0) return r;
  const auto scenes = balanced_scenes(n_samples, seed, side);
  const Tensor<float> out = generator(scenes);
  if (out.rank() != 4 || out.dim(0) != scenes.size()) {
    throw ShapeError("probe generator output", out.shape(), Shape{scenes.size(), kSceneChannels, side, side});
  }
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Classification c = classify_latent(out, i);
    r.color += c.color == scenes[i].color ? 1.0 : 0.0;
    r.shape += c.shape == scenes[i].shape ? 1.0 : 0.0;
    r.position += c.position == scenes[i].position ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(scenes.size());
  r.color /= n;
  r.shape /= n;
  r.position /= n;
  r.score = (r.color + r.shape + r.position) / 3.0;
  r.samples = scenes.size();
  return r;
}

double probe_chance_level() { return (1.0 / kNumColors + 1.0 / kNumShapes + 1.0 / 2.0) / 3.0; }

namespace {

Tensor<float> render_all(const std::vector<Scene>& scenes, std::size_t side) {
  const std::size_t per = kSceneChannels * side * side;
  Tensor<float> out({scenes.size(), kSceneChannels, side, side});
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto img = render_scene(scenes[i], side);
    std::copy(img.storage().begin(), img.storage().end(), out.data() + i * per);
  }
  return out;
}

}  // namespace

Generator oracle_generator(std::size_t side) {
  return [side](const std::vector<Scene>& scenes) { return render_all(scenes, side); };
}

Generator noise_generator(std::size_t side, std::uint64_t seed) {
  return [side, seed](const std::vector<Scene>& scenes) {
    Rng rng(seed);
    return rng.normal_tensor<float>({scenes.size(), kSceneChannels, side, side});
  };
}

Generator model_generator(const Denoiser& model, const SamplerConfig& sampler) {
  return [&model, sampler](const std::vector<Scene>& scenes) {
    std::vector<std::string> captions;
    for (const auto& s : scenes) captions.push_back(long_caption(s));
    const auto& cfg = model.net->config();
    const std::size_t side = cfg.latent_side();
    return ddim_sample(model.eps_fn(captions, nullptr), sampler, scaled_linear_schedule(),
                       {scenes.size(), cfg.latent_channels, side, side});
  };
}

Generator inpaint_generator(const Denoiser& model, const SamplerConfig& sampler, std::uint64_t seed) {
  return [&model, sampler, seed](const std::vector<Scene>& scenes) {
    std::vector<std::string> captions;
    for (const auto& s : scenes) captions.push_back(long_caption(s));
    const std::size_t side = model.net->config().latent_side();
    const Tensor<float> x0 = render_all(scenes, side);
    Rng mask_rng = Rng(seed).fork(0);
    Tensor<float> mask;
    const Tensor<float> condition = make_condition(model.net->conditioning(), x0, mask_rng, &mask);
    if (mask.empty()) mask = Tensor<float>({scenes.size(), 1, side, side}, 1.0f);
    const Tensor<float> known_noise = Rng(seed).fork(1).normal_tensor<float>(x0.shape());
    const DiffusionSchedule schedule = scaled_linear_schedule();
    const StepHook paste = [&](Tensor<float>& x, int t) {
      paste_known(x, t > 0 ? q_sample(x0, t, known_noise, schedule) : x0, mask);
    };
    return ddim_sample(model.eps_fn(captions, &condition), sampler, schedule, x0.shape(), paste);
  };
}

}  // namespace dtlab
