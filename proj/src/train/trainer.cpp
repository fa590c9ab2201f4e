#include "dtlab/trainer.hpp"

#include <cmath>

#include <fmt/format.h>

#include "dtlab/optimizer.hpp"

namespace dtlab {

TextEmbedder::TextEmbedder(std::size_t vocab, std::size_t text_len, std::size_t text_dim, std::uint64_t seed)
    : text_len_(text_len), text_dim_(text_dim) {
  Rng rng(seed);
  // Unit-scale token vectors stand in for a pretrained encoder's outputs.
  params_.add("text.token_embed", rng.normal_tensor<float>({vocab, text_dim}, 1.0));
  Tensor<float> pos({text_len, text_dim});
  for (auto& v : pos.values()) v = static_cast<float>(rng.truncated_normal(0.02));
  params_.add("text.pos_embed", std::move(pos));
}

Var TextEmbedder::embed(Tape<float>& tape, std::span<const int> ids) {
  if (ids.size() % text_len_ != 0) throw ShapeError("text ids", Shape{ids.size()}, Shape{text_len_});
  Var tok = op::embedding(tape, tape.parameter(params_[0]), ids);
  return op::add_bcast(tape, tok, tape.parameter(params_[1]), Broadcast::Tiled);
}

Denoiser Denoiser::create(const ArchConfig& config, std::uint64_t seed, const ConditioningSpec& conditioning) {
  Denoiser d;
  d.net = build<float>(config, seed, conditioning);
  d.text = std::make_unique<TextEmbedder>(d.vocab.size(), config.text_len, config.text_dim, Rng(seed).fork(7).next_u64());
  return d;
}

void Denoiser::encode(const std::vector<std::string>& captions, std::span<const std::uint8_t> drop, std::vector<int>& ids,
                      std::vector<std::uint8_t>& mask) const {
  const std::size_t L = text->text_len();
  ids.clear();
  mask.clear();
  std::vector<std::uint8_t> m;
  for (std::size_t i = 0; i < captions.size(); ++i) {
    const bool dropped = !drop.empty() && drop[i];
    const auto row = dropped ? vocab.null_caption(L, &m) : vocab.encode(captions[i], L, &m);
    ids.insert(ids.end(), row.begin(), row.end());
    mask.insert(mask.end(), m.begin(), m.end());
  }
}

Var Denoiser::predict(Tape<float>& tape, const Tensor<float>& x_t, std::span<const int> timesteps,
                      std::span<const int> ids, std::span<const std::uint8_t> mask,
                      const Tensor<float>* condition) const {
  DenoiserInput<float> in;
  in.noisy = &x_t;
  in.timesteps = timesteps;
  in.text = text->embed(tape, ids);
  in.text_mask = mask;
  in.condition = condition;
  return net->forward(tape, in);
}

EpsFn Denoiser::eps_fn(const std::vector<std::string>& captions, const Tensor<float>* condition) const {
  std::vector<int> cond_ids, null_ids;
  std::vector<std::uint8_t> cond_mask, null_mask;
  encode(captions, {}, cond_ids, cond_mask);
  const std::vector<std::uint8_t> all(captions.size(), 1);
  encode(captions, all, null_ids, null_mask);
  return [this, cond_ids, cond_mask, null_ids, null_mask, condition](const Tensor<float>& x, int t, bool conditional) {
    Tape<float> tape;
    const std::vector<int> ts(x.dim(0), t);
    const Var out = conditional ? predict(tape, x, ts, cond_ids, cond_mask, condition)
                                : predict(tape, x, ts, null_ids, null_mask, condition);
    return tape.value(out);
  };
}

TrainConfig TrainConfig::toy() {
  TrainConfig c;
  c.lr = 1e-3;
  c.text_lr = 1e-3;
  c.warmup = 100;
  c.batch_size = 16;
  c.steps = 1000;
  return c;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (warmup > steps) throw ConfigError("warmup must not exceed total steps");
  if (lr < 0.0 || text_lr < 0.0) throw ConfigError("learning rates must be non-negative");
  if (p_uncond < 0.0 || p_uncond > 1.0) throw ConfigError("p_uncond must be in [0, 1]");
  if (mixture_weights.empty()) throw ConfigError("at least one dataset source is required");
  if (std::abs(caption_probs[0] + caption_probs[1] - 1.0) > 1e-9) throw ConfigError("caption probabilities must sum to 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{{"batch_size", c.batch_size},
                        {"steps", c.steps},
                        {"lr", c.lr},
                        {"warmup", c.warmup},
                        {"weight_decay", c.weight_decay},
                        {"text_lr", c.text_lr},
                        {"text_weight_decay", c.text_weight_decay},
                        {"text_frozen", c.text_frozen},
                        {"seed", c.seed},
                        {"p_uncond", c.p_uncond},
                        {"dataset_seed", c.dataset_seed},
                        {"mixture_weights", c.mixture_weights},
                        {"caption_probs", c.caption_probs}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c = TrainConfig::toy();
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("batch_size", c.batch_size);
    get("steps", c.steps);
    get("lr", c.lr);
    get("warmup", c.warmup);
    get("weight_decay", c.weight_decay);
    get("text_lr", c.text_lr);
    get("text_weight_decay", c.text_weight_decay);
    get("text_frozen", c.text_frozen);
    get("seed", c.seed);
    get("p_uncond", c.p_uncond);
    get("dataset_seed", c.dataset_seed);
    get("mixture_weights", c.mixture_weights);
    get("caption_probs", c.caption_probs);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad train config field: ") + e.what());
  }
  return c;
}

double TrainLog::smoothed_loss(std::size_t window) const {
  if (rows.empty()) return 0.0;
  const std::size_t n = std::min(window, rows.size());
  double sum = 0.0;
  for (std::size_t i = rows.size() - n; i < rows.size(); ++i) sum += rows[i].loss;
  return sum / static_cast<double>(n);
}

std::string TrainLog::csv() const {
  std::string out = "step,loss,lr,grad_norm\n";
  for (const auto& r : rows) out += fmt::format("{},{:.9g},{:.9g},{:.9g}\n", r.step, r.loss, r.lr, r.grad_norm);
  return out;
}

std::vector<DataSource> default_sources(const TrainConfig& config, std::size_t side) {
  std::vector<DataSource> sources;
  for (std::size_t i = 0; i < config.mixture_weights.size(); ++i) {
    sources.push_back({"synthetic-" + std::to_string(i), SyntheticDataset(config.dataset_seed + i, side)});
  }
  return sources;
}

Batch make_batch(DataStream& stream, std::size_t batch_size) {
  Batch b;
  const std::size_t side = stream.sources().front().dataset.side();
  const std::size_t per = kSceneChannels * side * side;
  b.x0 = Tensor<float>({batch_size, kSceneChannels, side, side});
  for (std::size_t i = 0; i < batch_size; ++i) {
    const Draw d = stream.next();
    const auto& ds = stream.sources()[d.source].dataset;
    if (ds.side() != side) throw ShapeError("data sources disagree on latent side");
    const Scene s = ds.scene(d.index);
    const Tensor<float> img = render_scene(s, side);
    std::copy(img.storage().begin(), img.storage().end(), b.x0.data() + i * per);
    b.captions.push_back(d.long_caption ? long_caption(s) : short_caption(s));
    b.scenes.push_back(s);
  }
  return b;
}

Tensor<float> make_condition(const ConditioningSpec& spec, const Tensor<float>& x0, Rng& rng, Tensor<float>* mask) {
  if (spec.kind == ConditionKind::EdgeMap) return make_edge_batch(x0);
  InpaintBatch ib = make_inpaint_batch(x0, rng);
  if (mask) *mask = ib.mask;
  return ib.condition();
}

TrainLog train(Denoiser& model, const TrainConfig& config) {
  config.validate();
  const std::size_t side = model.net->config().latent_side();
  DataStream stream = mix_datasets(default_sources(config, side), config.mixture_weights, config.caption_probs,
                                   Rng(config.seed).fork(0).next_u64());
  return train(model, config, stream);
}

TrainLog train(Denoiser& model, const TrainConfig& config, DataStream& stream) {
  config.validate();
  if (model.net->config().latent_channels != kSceneChannels) {
    throw ConfigError("toy training needs latent_channels = " + std::to_string(kSceneChannels));
  }
  const DiffusionSchedule schedule = scaled_linear_schedule();
  Rng loss_rng = Rng(config.seed).fork(1);
  Rng cond_rng = Rng(config.seed).fork(2);

  auto& net_params = model.net->parameters();
  auto& text_params = model.text->parameters();
  text_params.set_trainable(!config.text_frozen);
  AdamW opt(config.warmup);
  opt.add_group(net_params, config.lr, config.weight_decay);
  if (!config.text_frozen) opt.add_group(text_params, config.text_lr, config.text_weight_decay);

  const ConditioningSpec& spec = model.net->conditioning();
  TrainLog log;
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    const Batch batch = make_batch(stream, config.batch_size);
    Tensor<float> condition;
    if (spec.active()) condition = make_condition(spec, batch.x0, cond_rng);
    const LossDraw draw = draw_loss_inputs(batch.x0.shape(), schedule, loss_rng, config.p_uncond);

    net_params.zero_grad();
    text_params.zero_grad();
    Tape<float> tape;
    const TapeDenoiser fn = [&](Tape<float>& t, const Tensor<float>& x_t, std::span<const int> ts,
                                std::span<const std::uint8_t> drop) {
      model.encode(batch.captions, drop, ids, mask);
      return model.predict(t, x_t, ts, ids, mask, spec.active() ? &condition : nullptr);
    };
    const Var loss = training_loss(tape, fn, batch.x0, schedule, draw);
    const double lv = tape.value(loss)[0];
    const double lr = warmup_lr(config.lr, step, config.warmup);
    const double last_gn = log.rows.empty() ? 0.0 : log.rows.back().grad_norm;
    if (!std::isfinite(lv)) {
      throw TrainingError(fmt::format("non-finite loss at step {} (lr {:.3g}, previous grad norm {:.3g})", step, lr, last_gn));
    }
    tape.backward(loss);
    const double gn = grad_norm({&net_params, &text_params});
    if (!std::isfinite(gn)) {
      throw TrainingError(fmt::format("non-finite gradient norm at step {} (lr {:.3g}, loss {:.6g})", step, lr, lv));
    }
    opt.step();
    log.rows.push_back({step, lv, lr, gn});
  }
  log.data_hash = stream.hash();
  return log;
}

}  // namespace dtlab
