#include "dtlab/conditioning.hpp"

#include <algorithm>
#include <cmath>

namespace dtlab {

template <typename T>
std::unique_ptr<Network<T>> attach_condition(const Network<T>& base, const ConditioningSpec& spec, std::uint64_t seed) {
  auto net = build<T>(base.config(), seed, spec);
  copy_matching_parameters(base, *net);
  return net;
}

template std::unique_ptr<Network<float>> attach_condition<float>(const Network<float>&, const ConditioningSpec&,
                                                                 std::uint64_t);
template std::unique_ptr<Network<double>> attach_condition<double>(const Network<double>&, const ConditioningSpec&,
                                                                   std::uint64_t);

TokenBreakdown conditioned_token_counts(const ArchConfig& config, const ConditioningSpec& spec,
                                        std::size_t image_resolution) {
  std::size_t nc = 0;
  if (spec.mode == ConditionMode::TokenConcat) {
    const std::size_t side = spec.latent_side ? spec.latent_side : image_resolution / config.vae_downsample;
    if (spec.patch_size == 0 || side % spec.patch_size != 0) throw ConfigError("condition patch does not tile condition latent");
    nc = (side / spec.patch_size) * (side / spec.patch_size);
  }
  return token_counts(config, image_resolution, nc);
}

namespace {

// Fills exactly k pixels of the w_region x h_region window at (ox, oy) with
// a w x (k / w) block plus a partial row below it.
void place_block(Tensor<float>& mask, std::size_t side, std::size_t ox, std::size_t oy, std::size_t region_w,
                 std::size_t region_h, std::size_t k, Rng& rng) {
  if (k == 0) return;
  const std::size_t w_min = (k + region_h - 1) / region_h;
  const std::size_t w_max = std::min(region_w, k);
  const auto w = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(w_min), static_cast<int>(w_max)));
  const std::size_t rows = k / w, rem = k % w;
  const std::size_t height = rows + (rem ? 1 : 0);
  const auto x0 = ox + static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(region_w - w)));
  const auto y0 = oy + static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(region_h - height)));
  for (std::size_t y = 0; y < rows; ++y) {
    for (std::size_t x = 0; x < w; ++x) mask[(y0 + y) * side + x0 + x] = 1.0f;
  }
  for (std::size_t x = 0; x < rem; ++x) mask[(y0 + rows) * side + x0 + x] = 1.0f;
}

}  // namespace

Tensor<float> random_mask(std::size_t side, Rng& rng, const MaskConfig& cfg) {
  if (side < 2) throw ShapeError("random_mask needs side >= 2");
  const double area = static_cast<double>(side * side);
  const auto k_min = static_cast<std::size_t>(std::ceil(cfg.min_coverage * area - 1e-9));
  const auto k_max = static_cast<std::size_t>(std::floor(cfg.max_coverage * area + 1e-9));
  const double target = rng.uniform(cfg.min_coverage, cfg.max_coverage);
  const auto k = std::clamp(static_cast<std::size_t>(std::llround(target * area)), k_min, k_max);

  Tensor<float> mask({side, side});
  const bool two = rng.bernoulli(cfg.two_rect_probability);
  const std::size_t half = side / 2;
  // Two rectangles live in disjoint halves, so each must fit in half the canvas.
  if (two && k >= 2 && (k - k / 2) <= (side - half) * side && k / 2 <= half * side) {
    place_block(mask, side, 0, 0, half, side, k / 2, rng);
    place_block(mask, side, half, 0, side - half, side, k - k / 2, rng);
  } else {
    place_block(mask, side, 0, 0, side, side, k, rng);
  }
  return mask;
}

Tensor<float> InpaintBatch::condition() const { return concat_channels(masked_latent, mask); }

InpaintBatch make_inpaint_batch(const Tensor<float>& x0, const Tensor<float>& mask) {
  if (x0.rank() != 4 || mask.rank() != 4 || mask.dim(0) != x0.dim(0) || mask.dim(1) != 1 ||
      mask.dim(2) != x0.dim(2) || mask.dim(3) != x0.dim(3)) {
    throw ShapeError("make_inpaint_batch", x0.shape(), mask.shape());
  }
  InpaintBatch b;
  b.target = x0;
  b.mask = mask;
  b.masked_latent = Tensor<float>(x0.shape());
  const std::size_t c = x0.dim(1), hw = x0.dim(2) * x0.dim(3);
  for (std::size_t n = 0; n < x0.dim(0); ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < hw; ++i) {
        b.masked_latent[(n * c + ch) * hw + i] = x0[(n * c + ch) * hw + i] * (1.0f - mask[n * hw + i]);
      }
    }
  }
  return b;
}

InpaintBatch make_inpaint_batch(const Tensor<float>& x0, Rng& rng, const MaskConfig& cfg) {
  if (x0.rank() != 4 || x0.dim(2) != x0.dim(3)) throw ShapeError("make_inpaint_batch expects [B,C,S,S], got " + shape_str(x0.shape()));
  const std::size_t b = x0.dim(0), side = x0.dim(2);
  Tensor<float> mask({b, 1, side, side});
  for (std::size_t n = 0; n < b; ++n) {
    const Tensor<float> m = random_mask(side, rng, cfg);
    std::copy(m.storage().begin(), m.storage().end(), mask.data() + n * side * side);
  }
  return make_inpaint_batch(x0, mask);
}

Tensor<float> make_edge_batch(const Tensor<float>& x0, float threshold) {
  if (x0.rank() != 4) throw ShapeError("make_edge_batch expects [B,C,H,W], got " + shape_str(x0.shape()));
  const std::size_t b = x0.dim(0), c = x0.dim(1), h = x0.dim(2), w = x0.dim(3);
  Tensor<float> edges({b, 1, h, w});
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        float best = 0.0f;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const float* img = x0.data() + (n * c + ch) * h * w;
          const float v = img[y * w + x];
          const float dx = x + 1 < w ? img[y * w + x + 1] - v : 0.0f;
          const float dy = y + 1 < h ? img[(y + 1) * w + x] - v : 0.0f;
          best = std::max(best, std::sqrt(dx * dx + dy * dy));
        }
        edges[(n * h + y) * w + x] = best > threshold ? 1.0f : 0.0f;
      }
    }
  }
  return edges;
}

void paste_known(Tensor<float>& x, const Tensor<float>& known, const Tensor<float>& mask) {
  if (x.shape() != known.shape()) throw ShapeError("paste_known", x.shape(), known.shape());
  const std::size_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (mask.size() != b * hw) throw ShapeError("paste_known mask", mask.shape(), Shape{b, 1, x.dim(2), x.dim(3)});
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < hw; ++i) {
        const float m = mask[n * hw + i];
        float& v = x[(n * c + ch) * hw + i];
        v = m * v + (1.0f - m) * known[(n * c + ch) * hw + i];
      }
    }
  }
}

}  // namespace dtlab
