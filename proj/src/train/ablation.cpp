#include "dtlab/ablation.hpp"

#include <set>

#include <fmt/format.h>

namespace dtlab {

namespace {

nlohmann::json variant_json(const AblationVariant& v) {
  return nlohmann::json{{"config", to_json(v.config)}, {"conditioning", to_json(v.conditioning)}, {"train", to_json(v.train)}};
}

}  // namespace

std::vector<std::string> differing_factors(const std::vector<AblationVariant>& variants) {
  std::set<std::string> keys;
  if (variants.empty()) return {};
  const auto base = variant_json(variants.front()).flatten();
  for (std::size_t i = 1; i < variants.size(); ++i) {
    const auto other = variant_json(variants[i]).flatten();
    for (const auto& [k, v] : base.items()) {
      if (!other.contains(k) || other.at(k) != v) keys.insert(k);
    }
    for (const auto& [k, v] : other.items()) {
      if (!base.contains(k)) keys.insert(k);
    }
  }
  return {keys.begin(), keys.end()};
}

AblationReport run_ablation(const std::string& name, const std::vector<AblationVariant>& variants,
                            const AblationOptions& options) {
  if (variants.empty()) throw AblationError("ablation '" + name + "' has no variants");
  const auto factors = differing_factors(variants);
  if (factors.size() > 1) {
    std::string msg = "ablation '" + name + "': variants differ in more than one factor:";
    for (const auto& f : factors) msg += " " + f;
    throw AblationError(msg);
  }
  AblationReport report;
  report.name = name;
  report.factor = factors.empty() ? "" : factors.front();
  for (const auto& v : variants) {
    Denoiser model = Denoiser::create(v.config, v.train.seed, v.conditioning);
    VariantResult r;
    r.label = v.label;
    r.log = train(model, v.train);
    r.smoothed_loss = r.log.smoothed_loss(options.smoothing_window);
    if (options.probe_samples > 0) {
      SamplerConfig sc = options.sampler;
      sc.seed = options.probe_seed;
      const Generator gen = v.conditioning.active() ? inpaint_generator(model, sc, options.probe_seed)
                                                    : model_generator(model, sc);
      r.probe = alignment_probe(gen, options.probe_samples, options.probe_seed, v.config.latent_side());
    }
    report.results.push_back(std::move(r));
  }
  return report;
}

std::string AblationReport::summary_csv() const {
  std::string out = "ablation,factor,variant,steps,smoothed_loss,probe_score,data_hash\n";
  for (const auto& r : results) {
    out += fmt::format("{},{},{},{},{:.9g},{},{:016x}\n", name, factor, r.label, r.log.rows.size(), r.smoothed_loss,
                       r.probe ? fmt::format("{:.6f}", r.probe->score) : std::string(), r.log.data_hash);
  }
  return out;
}

std::string AblationReport::curves_csv() const {
  std::string out = "variant,step,loss,lr,grad_norm\n";
  for (const auto& r : results) {
    for (const auto& row : r.log.rows) {
      out += fmt::format("{},{},{:.9g},{:.9g},{:.9g}\n", r.label, row.step, row.loss, row.lr, row.grad_norm);
    }
  }
  return out;
}

std::vector<AblationVariant> standard_variants(const std::string& study, const TrainConfig& train,
                                               const std::optional<ArchConfig>& base) {
  auto pick = [&](const char* fallback) { return base ? *base : preset(fallback); };
  std::vector<AblationVariant> v;
  if (study == "skip") {
    ArchConfig on = pick("toy-uvit");
    if (!on.is_uvit()) throw AblationError("the skip study needs a U-ViT preset");
    on.use_skip = true;
    ArchConfig off = on;
    off.use_skip = false;
    v.push_back({"skip-on", on, {}, train});
    v.push_back({"skip-off", off, {}, train});
  } else if (study == "text-encoder") {
    ArchConfig cfg = pick("toy-pixart");
    TrainConfig frozen = train, trainable = train;
    frozen.text_frozen = true;
    trainable.text_frozen = false;
    v.push_back({"trainable", cfg, {}, trainable});
    v.push_back({"frozen", cfg, {}, frozen});
  } else if (study == "condition") {
    ArchConfig cfg = pick("toy-uvit");
    v.push_back({"token", cfg, inpaint_condition(ConditionMode::TokenConcat, cfg.latent_channels), train});
    v.push_back({"channel", cfg, inpaint_condition(ConditionMode::ChannelConcat, cfg.latent_channels), train});
  } else {
    throw AblationError("unknown ablation '" + study + "' (expected skip, text-encoder, condition)");
  }
  return v;
}

}  // namespace dtlab
