// Command-line entry point. Every subcommand writes its CSV outputs and a
// manifest.json holding the resolved arguments; `dtlab rerun --manifest`
// replays a manifest into a new output directory.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "dtlab/ablation.hpp"
#include "dtlab/backbone.hpp"
#include "dtlab/caption_analysis.hpp"
#include "dtlab/conditioning.hpp"
#include "dtlab/cost_model.hpp"
#include "dtlab/diffusion.hpp"
#include "dtlab/probe.hpp"
#include "dtlab/sweep.hpp"
#include "dtlab/trainer.hpp"

namespace fs = std::filesystem;
using namespace dtlab;

namespace {

enum Exit { kOk = 0, kConfigError = 1, kRuntimeError = 2, kCheckFailed = 3 };

struct Common {
  std::string preset;
  std::string config;
  std::size_t resolution = 256;
  std::string mode = "projection";
  std::string condition = "none";
  std::uint64_t seed = 0;
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool with_resolution = false) {
  app->add_option("--preset", c.preset, "Named configuration");
  app->add_option("--config", c.config, "JSON configuration file");
  if (with_resolution) {
    app->add_option("--resolution", c.resolution, "Image resolution")->check(CLI::IsMember({256, 512, 1024}));
  }
  app->add_option("--seed", c.seed, "Random seed");
  app->add_option("--out", c.out, "Output directory");
}

ArchConfig resolve_config(const Common& c, const std::string& fallback) {
  if (!c.config.empty()) return load_config(c.config);
  return preset(c.preset.empty() ? fallback : c.preset);
}

/// Writes `text` to <out>/<name>, or to stdout when no directory was given.
void emit(const Common& c, const std::string& name, const std::string& text) {
  if (c.out.empty()) {
    std::cout << text;
    return;
  }
  fs::create_directories(c.out);
  std::ofstream f(fs::path(c.out) / name, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + (fs::path(c.out) / name).string());
  f << text;
}

void write_manifest(const Common& c, const std::string& command, const std::vector<std::string>& args,
                    nlohmann::json resolved) {
  if (c.out.empty()) return;
  nlohmann::json m{{"command", command}, {"args", args}, {"resolved", std::move(resolved)}};
  emit(c, "manifest.json", m.dump(2) + "\n");
}

// ----------------------------------------------------------------------------

int cost_report_cmd(const Common& c, bool latency, std::size_t latency_steps, std::size_t latency_runs,
                    const std::vector<std::string>& args) {
  const MacsMode mode = parse_macs_mode(c.mode);
  std::vector<ArchConfig> configs;
  if (c.preset.empty() && c.config.empty()) {
    for (const auto& row : table1()) configs.push_back(preset(row.preset));
  } else {
    configs.push_back(resolve_config(c, ""));
  }
  std::string csv = cost_csv_header() + "\n";
  nlohmann::json resolved = nlohmann::json::array();
  for (const auto& cfg : configs) {
    csv += cost_csv_row(cost_report(cfg, mode)) + "\n";
    resolved.push_back(to_json(cfg));
  }
  emit(c, "cost.csv", csv);
  if (latency) {
    std::string lat = "name,resolution,ddim_steps,median_seconds,runs,hardware,error\n";
    for (const auto& cfg : configs) {
      const auto r = latency_bench(cfg, c.resolution, latency_steps, latency_runs, c.seed);
      lat += fmt::format("{},{},{},{:.6f},{},\"{}\",{}\n", r.name, r.resolution, r.ddim_steps, r.median,
                         r.seconds.size(), r.hardware, r.error);
    }
    if (c.out.empty()) std::cout << "\n";
    emit(c, "latency.csv", lat);
  }
  write_manifest(c, "cost-report", args, {{"configs", resolved}, {"mode", macs_mode_name(mode)}});
  return kOk;
}

int build_check_cmd(const Common& c, const std::vector<std::string>& args) {
  std::string csv = "preset,quantity,computed,published,rel_error,tolerance,status\n";
  bool ok = true;
  nlohmann::json resolved = nlohmann::json::array();
  auto table_row = [](const std::string& name) -> const Table1Row* {
    for (const auto& r : table1()) {
      if (r.preset == name) return &r;
    }
    return nullptr;
  };
  std::vector<ArchConfig> configs;
  if (c.preset.empty() && c.config.empty()) {
    for (const auto& row : table1()) configs.push_back(preset(row.preset));
  } else {
    configs.push_back(resolve_config(c, ""));
  }
  const ConditioningSpec cond = c.condition == "none"
                                    ? ConditioningSpec{}
                                    : inpaint_condition(parse_condition_mode(c.condition), 4);
  for (const auto& cfg : configs) {
    resolved.push_back(to_json(cfg));
    if (const Table1Row* row = table_row(cfg.name); row && c.config.empty()) {
      for (const auto& chk : check_table1(*row)) {
        ok = ok && (chk.passed || !chk.gated);
        const char* status = chk.passed ? "pass" : chk.gated ? "FAIL" : "info";
        csv += fmt::format("{},{},{:.4f},{:.4f},{:.4f},{:.2f},{}\n", chk.preset, chk.quantity, chk.computed,
                           chk.published, chk.rel_error, chk.tolerance, status);
      }
    } else {
      // Not a published row: build it and compare the formula with enumeration.
      const auto net = build<float>(cfg, c.seed, cond);
      const auto formula = param_count(cfg, cond);
      const auto enumerated = net->parameter_count();
      const bool pass = formula == enumerated;
      ok = ok && pass;
      csv += fmt::format("{},params_exact,{},{},{},0,{}\n", cfg.name, formula, enumerated, pass ? 0 : 1,
                         pass ? "pass" : "FAIL");
    }
  }
  emit(c, "build_check.csv", csv);
  write_manifest(c, "build-check", args, {{"configs", resolved}, {"condition", c.condition}});
  return ok ? kOk : kCheckFailed;
}

struct TrainArgs {
  std::size_t steps = 200;
  std::size_t batch = 16;
  double lr = 1e-3;
  std::size_t warmup = 20;
  bool text_trainable = false;
  std::string kind = "inpaint";
};

ConditioningSpec condition_from(const Common& c, const std::string& kind, std::size_t latent_channels) {
  const ConditionMode mode = parse_condition_mode(c.condition);
  if (kind == "edge") return edge_condition(mode);
  if (kind == "inpaint") return inpaint_condition(mode, latent_channels);
  throw ConfigError("unknown condition kind '" + kind + "' (expected inpaint or edge)");
}

void save_text_embedder(const TextEmbedder& t, const fs::path& dir) {
  std::ofstream bin(dir / "text.bin", std::ios::binary);
  for (const auto& p : t.parameters()) write_tensor(bin, p.value);
}

Denoiser load_denoiser(const std::string& dir) {
  Denoiser d;
  d.net = load_checkpoint(dir);
  const auto& cfg = d.net->config();
  d.text = std::make_unique<TextEmbedder>(d.vocab.size(), cfg.text_len, cfg.text_dim, 0);
  std::ifstream bin(fs::path(dir) / "text.bin", std::ios::binary);
  if (!bin) throw std::runtime_error("checkpoint has no text embedder: " + dir);
  for (auto& p : d.text->parameters()) {
    Tensor<float> v = read_tensor(bin);
    if (v.shape() != p.value.shape()) throw ShapeError("text embedder " + p.name, p.value.shape(), v.shape());
    p.value = std::move(v);
  }
  return d;
}

int train_cmd(const Common& c, const TrainArgs& a, const std::vector<std::string>& args) {
  const ArchConfig cfg = resolve_config(c, "toy-uvit");
  const ConditioningSpec cond = condition_from(c, a.kind, cfg.latent_channels);
  TrainConfig tc = TrainConfig::toy();
  tc.steps = a.steps;
  tc.batch_size = a.batch;
  tc.lr = a.lr;
  tc.text_lr = a.lr;
  tc.warmup = std::min(a.warmup, a.steps);
  tc.text_frozen = !a.text_trainable;
  tc.seed = c.seed;
  Denoiser model = Denoiser::create(cfg, c.seed, cond);
  const TrainLog log = train(model, tc);
  emit(c, "train_log.csv", log.csv());
  if (!c.out.empty()) {
    const fs::path ck = fs::path(c.out) / "checkpoint";
    save_checkpoint(*model.net, ck.string());
    save_text_embedder(*model.text, ck);
  }
  write_manifest(c, "train", args,
                 {{"config", to_json(cfg)}, {"conditioning", to_json(cond)}, {"train", to_json(tc)},
                  {"data_hash", fmt::format("{:016x}", log.data_hash)}});
  return kOk;
}

int ablate_cmd(const Common& c, const std::string& name, std::size_t steps, std::size_t probe_samples,
               const std::vector<std::string>& args) {
  TrainConfig tc = TrainConfig::toy();
  tc.steps = steps;
  tc.warmup = std::min<std::size_t>(tc.warmup, steps);
  tc.seed = c.seed;
  std::optional<ArchConfig> base;
  if (!c.preset.empty() || !c.config.empty()) base = resolve_config(c, "");
  const auto variants = standard_variants(name, tc, base);
  AblationOptions opt;
  opt.probe_samples = probe_samples;
  const AblationReport report = run_ablation(name, variants, opt);
  emit(c, "ablation_summary.csv", report.summary_csv());
  if (!c.out.empty()) emit(c, "ablation_curves.csv", report.curves_csv());
  nlohmann::json vj = nlohmann::json::array();
  for (const auto& v : variants) {
    vj.push_back({{"label", v.label}, {"config", to_json(v.config)}, {"conditioning", to_json(v.conditioning)},
                  {"train", to_json(v.train)}});
  }
  write_manifest(c, "ablate", args, {{"study", name}, {"variants", vj}, {"probe_samples", probe_samples}});
  return kOk;
}

int sample_cmd(const Common& c, const std::string& checkpoint, std::vector<std::string> prompts, std::size_t steps,
               double cfg_scale, const std::vector<std::string>& args) {
  Denoiser model = checkpoint.empty() ? Denoiser::create(resolve_config(c, "toy-uvit"), c.seed) : load_denoiser(checkpoint);
  if (model.net->conditioning().active()) {
    throw ConfigError("sample generates from text only; this checkpoint expects a condition input");
  }
  if (prompts.empty()) prompts.push_back("one red square on the left with a dark background");
  SamplerConfig sc;
  sc.ddim_steps = steps;
  sc.cfg_scale = cfg_scale;
  sc.seed = c.seed;
  const auto& cfg = model.net->config();
  const std::size_t side = cfg.latent_side();
  const Tensor<float> out =
      ddim_sample(model.eps_fn(prompts, nullptr), sc, scaled_linear_schedule(), {prompts.size(), cfg.latent_channels, side, side});

  std::string csv = "index,prompt,mean,std,color,shape,position\n";
  const std::size_t per = out.size() / prompts.size();
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t k = i * per; k < (i + 1) * per; ++k) {
      mean += out[k];
      sq += static_cast<double>(out[k]) * out[k];
    }
    mean /= static_cast<double>(per);
    const double sd = std::sqrt(std::max(0.0, sq / static_cast<double>(per) - mean * mean));
    std::string cls = ",,";
    if (cfg.latent_channels == kSceneChannels) {
      const auto k = classify_latent(out, i);
      auto word = [](int v, auto fn) { return v < 0 ? std::string("none") : std::string(fn(v)); };
      cls = word(k.color, [](int v) { return color_word(v); }) + "," +
            word(k.shape, [](int v) { return shape_word(v); }) + "," + (k.position < 0 ? "none" : k.position ? "right" : "left");
    }
    csv += fmt::format("{},\"{}\",{:.9g},{:.9g},{}\n", i, prompts[i], mean, sd, cls);
  }
  emit(c, "samples.csv", csv);
  if (!c.out.empty()) {
    save_tensor((fs::path(c.out) / "samples.bin").string(), out);
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      write_ppm((fs::path(c.out) / fmt::format("sample_{}.ppm", i)).string(), out, i);
    }
  }
  write_manifest(c, "sample", args,
                 {{"config", to_json(cfg)}, {"checkpoint", checkpoint}, {"prompts", prompts},
                  {"ddim_steps", steps}, {"cfg_scale", cfg_scale}});
  return kOk;
}

int caption_stats_cmd(const Common& c, const std::vector<std::string>& corpora, const std::string& lexicon_path,
                      std::size_t bucket_width, bool stem, const std::vector<std::string>& args) {
  if (corpora.empty()) throw ConfigError("caption-stats needs at least one --corpus name=path");
  std::vector<std::pair<std::string, CaptionCorpus>> loaded;
  for (const auto& spec : corpora) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw ConfigError("--corpus expects name=path, got '" + spec + "'");
    loaded.emplace_back(spec.substr(0, eq), read_corpus(spec.substr(eq + 1)));
  }
  std::string hist = "corpus,bucket_start,bucket_end,count\n";
  for (const auto& [name, corpus] : loaded) {
    const auto h = length_histogram(corpus, bucket_width);
    for (const auto& [b, n] : h.counts) {
      hist += fmt::format("{},{},{},{}\n", name, b * bucket_width, (b + 1) * bucket_width, n);
    }
  }
  emit(c, "length_histogram.csv", hist);
  if (!lexicon_path.empty()) {
    const ElementLexicon lex = read_lexicon(lexicon_path);
    MatchOptions opt;
    opt.stem = stem;
    std::string dens;
    if (loaded.size() >= 2) {
      dens = density_csv(density_report(loaded, lex, opt));
    } else {
      const auto m = match_elements(loaded.front().second, lex, opt);
      dens = "type," + loaded.front().first + "\n";
      for (const auto& t : lex.types()) dens += fmt::format("{},{:.4f}\n", t, m.at(t));
    }
    if (c.out.empty()) std::cout << "\n";
    emit(c, "element_density.csv", dens);
  }
  write_manifest(c, "caption-stats", args,
                 {{"corpora", corpora}, {"lexicon", lexicon_path}, {"bucket_width", bucket_width}, {"stem", stem}});
  return kOk;
}

int sweep_cmd(const Common& c, const std::string& spec_path, const std::vector<std::string>& presets,
              const std::vector<std::string>& args) {
  SweepSpec spec;
  if (!spec_path.empty()) {
    std::ifstream in(spec_path);
    if (!in) throw ConfigError("cannot open sweep spec " + spec_path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("cannot parse " + spec_path + ": " + e.what());
    }
    spec = sweep_from_json(j);
  } else {
    if (!c.config.empty()) {
      std::ifstream in(c.config);
      spec.base = nlohmann::json::parse(in);
    } else if (!c.preset.empty()) {
      spec.base = {{"preset", c.preset}};
    }
    for (const auto& p : presets) spec.overrides.push_back({{"preset", p}});
    spec.mode = parse_macs_mode(c.mode);
  }
  const SweepResult r = run_sweep(spec, c.out);
  if (c.out.empty()) std::cout << r.csv();
  write_manifest(c, "sweep", args, {{"spec", to_json(spec)}});
  return r.all_ok() ? kOk : kRuntimeError;
}

int run(int argc, char** argv);

int rerun_cmd(const std::string& manifest_path, const std::string& out) {
  std::ifstream in(manifest_path);
  if (!in) throw ConfigError("cannot open manifest " + manifest_path);
  const nlohmann::json m = nlohmann::json::parse(in);
  std::vector<std::string> args = m.at("args").get<std::vector<std::string>>();
  // Replace the recorded output directory.
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--out") args[i + 1] = out;
  }
  std::vector<char*> argv{const_cast<char*>("dtlab")};
  for (auto& a : args) argv.push_back(a.data());
  return run(static_cast<int>(argv.size()), argv.data());
}

int run(int argc, char** argv) {
  CLI::App app{"Diffusion-transformer architecture lab"};
  app.require_subcommand(1);
  std::vector<std::string> args(argv + 1, argv + argc);

  Common common;

  auto* cost = app.add_subcommand("cost-report", "Parameter and MACs table (CSV)");
  add_common(cost, common, true);
  cost->add_option("--mode", common.mode, "projection or full")->check(CLI::IsMember({"projection", "full", "projection_only", "with_attention_matmuls"}));
  bool latency = false;
  std::size_t latency_steps = 10, latency_runs = 5;
  cost->add_flag("--latency", latency, "Also time end-to-end sampling (latency.csv)");
  cost->add_option("--latency-steps", latency_steps, "DDIM steps per timed run");
  cost->add_option("--latency-runs", latency_runs, "Timed runs (median reported)");

  auto* check = app.add_subcommand("build-check", "Compare counts with the published table; exit 3 on mismatch");
  add_common(check, common);
  check->add_option("--condition", common.condition, "none, token, or channel");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Toy diffusion training");
  add_common(trn, common);
  trn->add_option("--condition", common.condition, "none, token, or channel");
  trn->add_option("--condition-kind", ta.kind, "inpaint or edge");
  trn->add_option("--steps", ta.steps, "Optimizer steps");
  trn->add_option("--batch", ta.batch, "Batch size");
  trn->add_option("--lr", ta.lr, "Learning rate");
  trn->add_option("--warmup", ta.warmup, "Warmup steps");
  trn->add_flag("--text-trainable", ta.text_trainable, "Fine-tune the text embedder");

  std::string study = "skip";
  std::size_t ablate_steps = 1000, probe_samples = 0;
  auto* abl = app.add_subcommand("ablate", "Single-factor ablation study");
  add_common(abl, common);
  abl->add_option("--name", study, "skip, text-encoder, or condition");
  abl->add_option("--steps", ablate_steps, "Steps per variant");
  abl->add_option("--probe-samples", probe_samples, "Alignment-probe samples per variant");

  std::string checkpoint;
  std::vector<std::string> prompts;
  std::size_t ddim_steps = 50;
  double cfg_scale = 7.5;
  auto* smp = app.add_subcommand("sample", "DDIM sampling with classifier-free guidance");
  add_common(smp, common);
  smp->add_option("--checkpoint", checkpoint, "Directory written by train");
  smp->add_option("--prompt", prompts, "Caption (repeatable)");
  smp->add_option("--steps", ddim_steps, "DDIM steps");
  smp->add_option("--cfg", cfg_scale, "Guidance scale");

  std::vector<std::string> corpora;
  std::string lexicon;
  std::size_t bucket_width = 5;
  bool stem = false;
  auto* cap = app.add_subcommand("caption-stats", "Caption length histograms and element-phrase density");
  cap->add_option("--corpus", corpora, "name=path, TAB-separated source and caption (repeatable)");
  cap->add_option("--lexicon", lexicon, "type<TAB>phrase file");
  cap->add_option("--bucket-width", bucket_width, "Histogram bucket width in tokens");
  cap->add_flag("--stem", stem, "Strip common suffixes before matching");
  cap->add_option("--out", common.out, "Output directory");

  std::string spec_path;
  std::vector<std::string> sweep_presets;
  auto* swp = app.add_subcommand("sweep", "Cost (and optional toy training) sweep");
  add_common(swp, common);
  swp->add_option("--spec", spec_path, "Sweep JSON");
  swp->add_option("--presets", sweep_presets, "Presets to sweep")->delimiter(',');
  swp->add_option("--mode", common.mode, "projection or full");

  std::string manifest;
  auto* rer = app.add_subcommand("rerun", "Replay a manifest into a new output directory");
  rer->add_option("--manifest", manifest, "manifest.json")->required();
  rer->add_option("--out", common.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*cost) return cost_report_cmd(common, latency, latency_steps, latency_runs, args);
    if (*check) return build_check_cmd(common, args);
    if (*trn) return train_cmd(common, ta, args);
    if (*abl) return ablate_cmd(common, study, ablate_steps, probe_samples, args);
    if (*smp) return sample_cmd(common, checkpoint, prompts, ddim_steps, cfg_scale, args);
    if (*cap) return caption_stats_cmd(common, corpora, lexicon, bucket_width, stem, args);
    if (*swp) return sweep_cmd(common, spec_path, sweep_presets, args);
    if (*rer) return rerun_cmd(manifest, common.out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const AblationError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const CaptionError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kConfigError;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
