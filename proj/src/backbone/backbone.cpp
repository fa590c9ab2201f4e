#include "dtlab/backbone.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dtlab/random.hpp"

namespace dtlab {

std::vector<std::pair<std::size_t, std::size_t>> skip_pairing(std::size_t depth) {
  if (depth < 2) throw ConfigError("skip pairing needs depth >= 2, got " + std::to_string(depth));
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < depth / 2; ++i) pairs.emplace_back(i, depth - 1 - i);
  return pairs;
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& latent, std::size_t p) {
  if (latent.rank() != 4 || latent.dim(2) != latent.dim(3) || p == 0 || latent.dim(2) % p != 0) {
    throw ShapeError("patchify: expected [B,C,S,S] with S divisible by " + std::to_string(p) + ", got " +
                     shape_str(latent.shape()));
  }
  const std::size_t b = latent.dim(0), c = latent.dim(1), s = latent.dim(2), g = s / p;
  const std::size_t feat = p * p * c;
  Tensor<T> out({b * g * g, feat});
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
          const std::size_t tok = (y / p) * g + x / p;
          const std::size_t f = ((y % p) * p + x % p) * c + ci;
          out[(bi * g * g + tok) * feat + f] = latent[((bi * c + ci) * s + y) * s + x];
        }
      }
    }
  }
  return out;
}

std::vector<std::uint32_t> unpatchify_index(std::size_t b, std::size_t c, std::size_t s, std::size_t p) {
  const std::size_t g = s / p, feat = p * p * c;
  std::vector<std::uint32_t> idx(b * c * s * s);
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
          const std::size_t tok = (y / p) * g + x / p;
          const std::size_t f = ((y % p) * p + x % p) * c + ci;
          idx[((bi * c + ci) * s + y) * s + x] = static_cast<std::uint32_t>((bi * g * g + tok) * feat + f);
        }
      }
    }
  }
  return idx;
}

template <typename T>
Tensor<T> timestep_features(std::span<const int> timesteps, std::size_t dim) {
  const std::size_t half = dim / 2;
  Tensor<T> out({timesteps.size(), dim});
  for (std::size_t b = 0; b < timesteps.size(); ++b) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      const double arg = static_cast<double>(timesteps[b]) * freq;
      out[b * dim + i] = static_cast<T>(std::cos(arg));
      out[b * dim + half + i] = static_cast<T>(std::sin(arg));
    }
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels", a.shape(), b.shape());
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor<T> out({n, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
    std::copy_n(b.data() + i * cb * hw, cb * hw, out.data() + (i * (ca + cb) + ca) * hw);
  }
  return out;
}

namespace {

constexpr double kInitStd = 0.02;

struct Linear {
  std::size_t w = 0;
  std::size_t b = 0;
};

struct AffineNorm {
  std::size_t gamma = 0;
  std::size_t beta = 0;
};

// Shared construction and forward helpers for every family.
template <typename T>
class NetworkBase : public Network<T> {
 protected:
  NetworkBase(const ArchConfig& config, const ConditioningSpec& cond, std::uint64_t seed, InitScheme init)
      : Network<T>(config, cond), rng_(seed), init_(init) {}

  Tensor<T> trunc_normal(Shape shape, double std = kInitStd) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(rng_.truncated_normal(std));
    return t;
  }

  // Zero under the standard scheme, small random values under Dense.
  Tensor<T> zero_or_random(Shape shape) {
    if (init_ == InitScheme::Dense) return trunc_normal(std::move(shape));
    return Tensor<T>(std::move(shape));
  }

  std::size_t add(const std::string& name, Tensor<T> value) { return this->params_.add(name, std::move(value)); }

  Linear make_linear(const std::string& name, std::size_t in, std::size_t out, bool zero = false,
                     double std = kInitStd) {
    Linear l;
    // Dense weights are fan-in scaled so activations stay O(1) at tiny widths;
    // at std 0.02 layer norms see near-zero inputs, where they are sharply
    // curved and finite differences lose accuracy.
    if (init_ == InitScheme::Dense) std = 1.0 / std::sqrt(static_cast<double>(in));
    l.w = add(name + ".weight", zero && init_ == InitScheme::Standard ? Tensor<T>({in, out}) : trunc_normal({in, out}, std));
    l.b = add(name + ".bias", init_ == InitScheme::Dense ? trunc_normal({out}) : Tensor<T>({out}));
    return l;
  }

  AffineNorm make_norm(const std::string& name, std::size_t h) {
    AffineNorm n;
    Tensor<T> gamma({1, h}, T{1});
    if (init_ == InitScheme::Dense) {
      for (auto& v : gamma.values()) v += static_cast<T>(rng_.truncated_normal(kInitStd));
    }
    n.gamma = add(name + ".weight", std::move(gamma));
    n.beta = add(name + ".bias", init_ == InitScheme::Dense ? trunc_normal({1, h}) : Tensor<T>({1, h}));
    return n;
  }

  Var param(Tape<T>& t, std::size_t id) { return t.parameter(this->params_[id]); }

  Var linear(Tape<T>& t, Var x, const Linear& l) { return op::linear(t, x, param(t, l.w), param(t, l.b)); }

  Var norm(Tape<T>& t, Var x) { return op::layernorm(t, x, static_cast<T>(kLayerNormEps)); }

  Var affine_norm(Tape<T>& t, Var x, const AffineNorm& n) {
    Var y = norm(t, x);
    y = op::mul_bcast(t, y, param(t, n.gamma));
    return op::add_bcast(t, y, param(t, n.beta));
  }

  // x * (1 + scale) + shift with per-sample [B, H] vectors.
  Var modulate(Tape<T>& t, Var x, Var shift, Var scale) {
    Var y = op::mul_bcast(t, x, op::add_scalar(t, scale, T{1}));
    return op::add_bcast(t, y, shift);
  }

  Var mlp(Tape<T>& t, Var x, const Linear& fc1, const Linear& fc2) { return linear(t, op::gelu(t, linear(t, x, fc1)), fc2); }

  struct TimeMlp {
    Linear fc1, fc2;
  };

  TimeMlp make_time_mlp(std::size_t out) {
    const auto& c = this->config_;
    return {make_linear("time_embed.fc1", c.time_freq_dim, out), make_linear("time_embed.fc2", out, out)};
  }

  Var time_embedding(Tape<T>& t, std::span<const int> timesteps, const TimeMlp& m) {
    Var f = t.constant(timestep_features<T>(timesteps, this->config_.time_freq_dim));
    return linear(t, op::silu(t, linear(t, f, m.fc1)), m.fc2);
  }

  // Validates the input against the config and returns the batch size.
  std::size_t check_input(Tape<T>& t, const DenoiserInput<T>& in) const {
    const auto& c = this->config_;
    if (!in.noisy) throw ShapeError("forward: missing noisy latent");
    const auto& x = *in.noisy;
    const std::size_t side = c.latent_side();
    if (x.rank() != 4 || x.dim(1) != c.latent_channels || x.dim(2) != side || x.dim(3) != side) {
      throw ShapeError("forward: latent", x.shape(), Shape{0, c.latent_channels, side, side});
    }
    const std::size_t b = x.dim(0);
    if (in.timesteps.size() != b) throw ShapeError("forward: timesteps", Shape{in.timesteps.size()}, Shape{b});
    const auto& tv = t.value(in.text);
    if (tv.rows() != b * c.text_len || tv.cols() != c.text_dim) {
      throw ShapeError("forward: text tokens (token-length/positional-embedding mismatch)", tv.shape(),
                       Shape{b * c.text_len, c.text_dim});
    }
    if (!in.text_mask.empty() && in.text_mask.size() != b * c.text_len) {
      throw ShapeError("forward: text mask", Shape{in.text_mask.size()}, Shape{b * c.text_len});
    }
    const auto& cond = this->conditioning_;
    if (cond.active()) {
      if (!in.condition) throw ShapeError("forward: conditioned network needs a condition tensor");
      const auto& cv = *in.condition;
      const std::size_t cs = cond.latent_side ? cond.latent_side : side;
      if (cv.rank() != 4 || cv.dim(0) != b || cv.dim(1) != cond.channels || cv.dim(2) != cs || cv.dim(3) != cs) {
        throw ShapeError("forward: condition", cv.shape(), Shape{b, cond.channels, cs, cs});
      }
    }
    return b;
  }

  // Patch-embedded noisy latent (with condition channels when channel-concatenated).
  Var embed_latent(Tape<T>& t, const DenoiserInput<T>& in, const Linear& patch) {
    const auto& c = this->config_;
    Tensor<T> tokens = this->conditioning_.mode == ConditionMode::ChannelConcat
                           ? patchify(concat_channels(*in.noisy, *in.condition), c.patch_size)
                           : patchify(*in.noisy, c.patch_size);
    return linear(t, t.constant(std::move(tokens)), patch);
  }

  std::size_t patch_in_channels() const {
    const auto& c = this->config_;
    std::size_t ch = c.latent_channels;
    if (this->conditioning_.mode == ConditionMode::ChannelConcat) ch += this->conditioning_.channels;
    return c.patch_size * c.patch_size * ch;
  }

  Var unpatchify(Tape<T>& t, Var tokens, std::size_t batch) {
    const auto& c = this->config_;
    const std::size_t s = c.latent_side();
    const auto idx = unpatchify_index(batch, c.latent_channels, s, c.patch_size);
    return op::gather(t, tokens, std::span<const std::uint32_t>(idx), Shape{batch, c.latent_channels, s, s});
  }

  Rng rng_;
  InitScheme init_;
};

// ------------------------------------------------------------------------ U-ViT

template <typename T>
class UViTNetwork final : public NetworkBase<T> {
 public:
  UViTNetwork(const ArchConfig& config, const ConditioningSpec& cond, std::uint64_t seed, InitScheme init)
      : NetworkBase<T>(config, cond, seed, init) {
    const auto& c = this->config_;
    const std::size_t h = c.hidden_dim;
    patch_ = this->make_linear("patch_embed", this->patch_in_channels(), h);
    text_proj_ = this->make_linear("text_proj", c.text_dim, h);
    time_ = this->make_time_mlp(h);
    pos_ = this->add("pos_embed", this->trunc_normal({c.positional_tokens(), h}));
    if (cond.mode == ConditionMode::TokenConcat) {
      const std::size_t cs = cond.latent_side ? cond.latent_side : c.latent_side();
      cond_tokens_ = (cs / cond.patch_size) * (cs / cond.patch_size);
      cond_patch_ = this->make_linear("cond_embed", cond.patch_size * cond.patch_size * cond.channels, h);
      cond_pos_ = this->add("cond_pos_embed", this->trunc_normal({cond_tokens_, h}));
    }
    for (std::size_t i = 0; i < c.depth; ++i) {
      const std::string p = "blocks." + std::to_string(i);
      Block b;
      b.norm1 = this->make_norm(p + ".norm1", h);
      b.qkv = this->make_linear(p + ".attn.qkv", h, 3 * h);
      b.proj = this->make_linear(p + ".attn.proj", h, h);
      b.norm2 = this->make_norm(p + ".norm2", h);
      b.fc1 = this->make_linear(p + ".mlp.fc1", h, 4 * h);
      b.fc2 = this->make_linear(p + ".mlp.fc2", 4 * h, h);
      blocks_.push_back(b);
    }
    if (c.use_skip && c.depth >= 2) {
      pairs_ = skip_pairing(c.depth);
      for (std::size_t k = 0; k < pairs_.size(); ++k) {
        // The fusion replaces the residual stream rather than adding to it, so
        // its weights are fan-in scaled to keep the stream's magnitude. At
        // widths near 1024 this is the usual 0.02.
        skips_.push_back(this->make_linear("skips." + std::to_string(k), 2 * h, h, false,
                                           1.0 / std::sqrt(static_cast<double>(2 * h))));
      }
    }
    final_norm_ = this->make_norm("final_norm", h);
    head_ = this->make_linear("head", h, c.patch_dim(), /*zero=*/true);
  }

  std::size_t sequence_length() const override {
    return this->config_.positional_tokens() + cond_tokens_;
  }

  Var forward(Tape<T>& t, const DenoiserInput<T>& in) override {
    const std::size_t b = this->check_input(t, in);
    const auto& c = this->config_;
    const std::size_t h = c.hidden_dim, L = c.text_len, n_img = c.image_tokens();

    Var pos = this->param(t, pos_);
    Var time_tok = this->time_embedding(t, in.timesteps, time_);
    time_tok = op::add_bcast(t, time_tok, op::slice_tokens(t, pos, 1, 0, 1), Broadcast::Tiled);
    Var text = this->linear(t, in.text, text_proj_);
    text = op::add_bcast(t, text, op::slice_tokens(t, pos, 1, 1, L), Broadcast::Tiled);
    Var img = this->embed_latent(t, in, patch_);
    img = op::add_bcast(t, img, op::slice_tokens(t, pos, 1, 1 + L, n_img), Broadcast::Tiled);

    std::vector<Var> parts{time_tok, text};
    if (cond_tokens_ > 0) {
      Var ct = this->linear(t, t.constant(patchify(*in.condition, this->conditioning_.patch_size)), cond_patch_);
      parts.push_back(op::add_bcast(t, ct, this->param(t, cond_pos_), Broadcast::Tiled));
    }
    parts.push_back(img);
    Var x = op::concat_tokens(t, std::span<const Var>(parts), b);

    const std::size_t seq = sequence_length();
    std::vector<std::uint8_t> mask;
    if (!in.text_mask.empty()) {
      mask.assign(b * seq, 1);
      for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t j = 0; j < L; ++j) mask[bi * seq + 1 + j] = in.text_mask[bi * L + j];
      }
    }

    std::vector<Var> saved(c.depth);
    for (std::size_t i = 0; i < c.depth; ++i) {
      for (std::size_t k = 0; k < pairs_.size(); ++k) {
        if (pairs_[k].second == i) {
          const Var both[] = {x, saved[pairs_[k].first]};
          x = this->linear(t, op::concat_cols(t, std::span<const Var>(both)), skips_[k]);
        }
      }
      const Block& blk = blocks_[i];
      Var y = this->affine_norm(t, x, blk.norm1);
      Var qkv = this->linear(t, y, blk.qkv);
      const std::size_t widths[] = {h, h, h};
      auto qkv_parts = op::split_cols(t, qkv, std::span<const std::size_t>(widths));
      Var a = op::attention(t, qkv_parts[0], qkv_parts[1], qkv_parts[2], b, c.num_heads,
                            std::span<const std::uint8_t>(mask));
      x = op::add(t, x, this->linear(t, a, blk.proj));
      x = op::add(t, x, this->mlp(t, this->affine_norm(t, x, blk.norm2), blk.fc1, blk.fc2));
      saved[i] = x;
    }
    Var out = op::slice_tokens(t, x, b, seq - n_img, n_img);
    out = this->linear(t, this->affine_norm(t, out, final_norm_), head_);
    return this->unpatchify(t, out, b);
  }

 private:
  struct Block {
    AffineNorm norm1, norm2;
    Linear qkv, proj, fc1, fc2;
  };
  Linear patch_, text_proj_, cond_patch_, head_;
  typename NetworkBase<T>::TimeMlp time_;
  std::size_t pos_ = 0, cond_pos_ = 0, cond_tokens_ = 0;
  std::vector<Block> blocks_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  std::vector<Linear> skips_;
  AffineNorm final_norm_;
};

// ------------------------------------------------------------ cross-attention DiT

template <typename T>
class CrossAttnDiTNetwork final : public NetworkBase<T> {
 public:
  CrossAttnDiTNetwork(const ArchConfig& config, const ConditioningSpec& cond, std::uint64_t seed, InitScheme init)
      : NetworkBase<T>(config, cond, seed, init) {
    const auto& c = this->config_;
    const std::size_t h = c.hidden_dim, m = c.time_embed_dim();
    single_ = c.family == Family::CrossAttnAdaLNSingle;
    patch_ = this->make_linear("patch_embed", this->patch_in_channels(), h);
    time_ = this->make_time_mlp(m);
    if (single_) t_block_ = this->make_linear("t_block", m, 6 * h);
    pos_ = this->add("pos_embed", this->trunc_normal({c.positional_tokens(), h}));
    for (std::size_t i = 0; i < c.depth; ++i) {
      const std::string p = "blocks." + std::to_string(i);
      Block b;
      if (single_) {
        b.table = this->add(p + ".scale_shift_table", this->zero_or_random({1, 6 * h}));
      } else {
        b.ada = this->make_linear(p + ".adaLN", m, 6 * h);
      }
      b.qkv = this->make_linear(p + ".attn.qkv", h, 3 * h);
      b.proj = this->make_linear(p + ".attn.proj", h, h);
      if (single_) b.cross_q = this->make_linear(p + ".cross.q", h, h);
      b.cross_kv = this->make_linear(p + ".cross.kv", c.text_dim, 2 * h);
      if (single_) b.cross_proj = this->make_linear(p + ".cross.proj", h, h);
      b.fc1 = this->make_linear(p + ".mlp.fc1", h, 4 * h);
      b.fc2 = this->make_linear(p + ".mlp.fc2", 4 * h, h);
      blocks_.push_back(b);
    }
    if (single_) {
      final_table_ = this->add("final.scale_shift_table", this->zero_or_random({2, h}));
    } else {
      final_ada_ = this->make_linear("final.adaLN", m, 2 * h);
    }
    head_ = this->make_linear("head", h, c.patch_dim(), /*zero=*/true);
  }

  std::size_t sequence_length() const override { return this->config_.image_tokens(); }

  Var forward(Tape<T>& t, const DenoiserInput<T>& in) override {
    const std::size_t b = this->check_input(t, in);
    const auto& c = this->config_;
    const std::size_t h = c.hidden_dim;

    Var x = this->embed_latent(t, in, patch_);
    x = op::add_bcast(t, x, this->param(t, pos_), Broadcast::Tiled);
    Var temb = this->time_embedding(t, in.timesteps, time_);
    Var temb_act = op::silu(t, temb);
    Var shared_mod = single_ ? this->linear(t, temb_act, t_block_) : Var{};
    const std::size_t six[] = {h, h, h, h, h, h};
    const std::span<const std::uint8_t> text_mask = in.text_mask;

    for (const Block& blk : blocks_) {
      Var mod = single_ ? op::add_bcast(t, shared_mod, this->param(t, blk.table))
                        : this->linear(t, temb_act, blk.ada);
      auto m = op::split_cols(t, mod, std::span<const std::size_t>(six));
      // m: shift_msa, scale_msa, gate_msa, shift_mlp, scale_mlp, gate_mlp
      Var y = this->modulate(t, this->norm(t, x), m[0], m[1]);
      Var qkv = this->linear(t, y, blk.qkv);
      const std::size_t three[] = {h, h, h};
      auto q = op::split_cols(t, qkv, std::span<const std::size_t>(three));
      Var kv_txt = this->linear(t, in.text, blk.cross_kv);
      const std::size_t two[] = {h, h};
      auto kvt = op::split_cols(t, kv_txt, std::span<const std::size_t>(two));
      Var a = op::attention(t, q[0], q[1], q[2], b, c.num_heads);
      if (single_) {
        x = op::add(t, x, op::mul_bcast(t, this->linear(t, a, blk.proj), m[2]));
        // PixArt-style cross-attention: separate query and output projections.
        Var cq = this->linear(t, x, blk.cross_q);
        Var ca = op::attention(t, cq, kvt[0], kvt[1], b, c.num_heads, text_mask);
        x = op::add(t, x, this->linear(t, ca, blk.cross_proj));
      } else {
        // LargeDiT-style: text keys/values share the self-attention query and
        // output projection.
        Var ca = op::attention(t, q[0], kvt[0], kvt[1], b, c.num_heads, text_mask);
        x = op::add(t, x, op::mul_bcast(t, this->linear(t, op::add(t, a, ca), blk.proj), m[2]));
      }
      Var z = this->modulate(t, this->norm(t, x), m[3], m[4]);
      x = op::add(t, x, op::mul_bcast(t, this->mlp(t, z, blk.fc1, blk.fc2), m[5]));
    }

    Var shift, scale;
    if (single_) {
      Var table = this->param(t, final_table_);
      shift = op::add_bcast(t, temb, op::slice_tokens(t, table, 1, 0, 1));
      scale = op::add_bcast(t, temb, op::slice_tokens(t, table, 1, 1, 1));
    } else {
      const std::size_t two[] = {h, h};
      auto fm = op::split_cols(t, this->linear(t, temb_act, final_ada_), std::span<const std::size_t>(two));
      shift = fm[0];
      scale = fm[1];
    }
    Var out = this->linear(t, this->modulate(t, this->norm(t, x), shift, scale), head_);
    return this->unpatchify(t, out, b);
  }

 private:
  struct Block {
    std::size_t table = 0;
    Linear ada, qkv, proj, cross_q, cross_kv, cross_proj, fc1, fc2;
  };
  bool single_ = true;
  Linear patch_, t_block_, final_ada_, head_;
  typename NetworkBase<T>::TimeMlp time_;
  std::size_t pos_ = 0, final_table_ = 0;
  std::vector<Block> blocks_;
};

}  // namespace

template <typename T>
std::unique_ptr<Network<T>> build(const ArchConfig& config, std::uint64_t seed, const ConditioningSpec& cond,
                                  InitScheme init) {
  const auto v = validate(config);
  if (!v.ok()) {
    std::string msg = "invalid config '" + config.name + "':";
    for (const auto& s : v.violations) msg += " " + s + ";";
    throw ConfigError(msg);
  }
  if (cond.active()) {
    if (cond.channels == 0) throw ConfigError("condition must have at least one channel");
    if (cond.mode == ConditionMode::TokenConcat) {
      if (!config.is_uvit()) {
        throw ConfigError("token concatenation requires the U-ViT family (cross-attention models have no joint sequence)");
      }
      const std::size_t cs = cond.latent_side ? cond.latent_side : config.latent_side();
      if (cond.patch_size == 0 || cs % cond.patch_size != 0) throw ConfigError("condition patch does not tile condition latent");
    } else if (cond.latent_side != 0 && cond.latent_side != config.latent_side()) {
      throw ConfigError("channel concatenation requires the condition to match the noise latent resolution (" +
                        std::to_string(cond.latent_side) + " vs " + std::to_string(config.latent_side()) + ")");
    }
  }
  if (config.is_uvit()) return std::make_unique<UViTNetwork<T>>(config, cond, seed, init);
  return std::make_unique<CrossAttnDiTNetwork<T>>(config, cond, seed, init);
}

template <typename T>
std::size_t copy_matching_parameters(const Network<T>& from, Network<T>& to) {
  std::size_t copied = 0;
  for (auto& p : to.parameters()) {
    if (auto id = from.parameters().find(p.name)) {
      const auto& src = from.parameters()[*id];
      if (src.value.shape() == p.value.shape()) {
        p.value = src.value;
        ++copied;
      }
    }
  }
  return copied;
}

void save_checkpoint(const Network<float>& net, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["config"] = to_json(net.config());
  manifest["conditioning"] = to_json(net.conditioning());
  manifest["parameters"] = nlohmann::json::array();
  std::ofstream bin(fs::path(dir) / "params.bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write checkpoint in " + dir);
  for (const auto& p : net.parameters()) {
    manifest["parameters"].push_back({{"name", p.name}, {"shape", p.value.shape()}});
    write_tensor(bin, p.value);
  }
  std::ofstream(fs::path(dir) / "manifest.json") << manifest.dump(2) << '\n';
}

std::unique_ptr<Network<float>> load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("no checkpoint manifest in " + dir);
  nlohmann::json manifest;
  mf >> manifest;
  auto net = build<float>(config_from_json(manifest.at("config")), 0, conditioning_from_json(manifest.at("conditioning")));
  std::ifstream bin(fs::path(dir) / "params.bin", std::ios::binary);
  if (!bin) throw std::runtime_error("no checkpoint tensors in " + dir);
  for (const auto& entry : manifest.at("parameters")) {
    const auto name = entry.at("name").get<std::string>();
    Tensor<float> value = read_tensor(bin);
    auto id = net->parameters().find(name);
    if (!id) throw std::runtime_error("checkpoint parameter not in network: " + name);
    auto& p = net->parameters()[*id];
    if (p.value.shape() != value.shape()) throw ShapeError("checkpoint " + name, p.value.shape(), value.shape());
    p.value = std::move(value);
  }
  return net;
}

template std::unique_ptr<Network<float>> build<float>(const ArchConfig&, std::uint64_t, const ConditioningSpec&, InitScheme);
template std::unique_ptr<Network<double>> build<double>(const ArchConfig&, std::uint64_t, const ConditioningSpec&, InitScheme);
template Tensor<float> patchify<float>(const Tensor<float>&, std::size_t);
template Tensor<double> patchify<double>(const Tensor<double>&, std::size_t);
template Tensor<float> timestep_features<float>(std::span<const int>, std::size_t);
template Tensor<double> timestep_features<double>(std::span<const int>, std::size_t);
template Tensor<float> concat_channels<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> concat_channels<double>(const Tensor<double>&, const Tensor<double>&);
template std::size_t copy_matching_parameters<float>(const Network<float>&, Network<float>&);
template std::size_t copy_matching_parameters<double>(const Network<double>&, Network<double>&);

}  // namespace dtlab
