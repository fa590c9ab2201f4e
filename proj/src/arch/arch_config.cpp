#include "dtlab/arch_config.hpp"

#include <algorithm>
#include <fstream>

namespace dtlab {

std::string_view family_name(Family f) {
  switch (f) {
    case Family::UViT: return "uvit";
    case Family::CrossAttnAdaLNSingle: return "crossattn-adaln-single";
    case Family::CrossAttnAdaLNPerBlock: return "crossattn-adaln-perblock";
  }
  return "unknown";
}

Family parse_family(std::string_view s) {
  if (s == "uvit" || s == "u-vit") return Family::UViT;
  if (s == "crossattn-adaln-single" || s == "pixart") return Family::CrossAttnAdaLNSingle;
  if (s == "crossattn-adaln-perblock" || s == "largedit") return Family::CrossAttnAdaLNPerBlock;
  throw ConfigError("unknown family '" + std::string(s) +
                    "' (expected uvit, crossattn-adaln-single/pixart, crossattn-adaln-perblock/largedit)");
}

std::string_view time_conditioning_name(TimeConditioning t) {
  return t == TimeConditioning::TimeToken ? "time_token" : "adaln";
}

std::size_t ArchConfig::time_embed_dim() const {
  return family == Family::CrossAttnAdaLNPerBlock ? std::min<std::size_t>(hidden_dim, 1024) : hidden_dim;
}

std::size_t ArchConfig::positional_tokens() const {
  if (is_uvit()) return 1 + text_len + image_tokens();
  return image_tokens();
}

ArchConfig make_config(Family family) {
  ArchConfig c;
  c.family = family;
  c.time_conditioning = family == Family::UViT ? TimeConditioning::TimeToken : TimeConditioning::AdaLN;
  return c;
}

ValidationResult validate(const ArchConfig& c) {
  ValidationResult r;
  auto need_positive = [&](std::size_t v, const char* what) {
    if (v == 0) r.violations.push_back(std::string(what) + " must be positive");
  };
  need_positive(c.hidden_dim, "hidden_dim");
  need_positive(c.depth, "depth");
  need_positive(c.num_heads, "num_heads");
  need_positive(c.patch_size, "patch_size");
  need_positive(c.text_dim, "text_dim");
  need_positive(c.text_len, "text_len");
  need_positive(c.latent_channels, "latent_channels");
  need_positive(c.vae_downsample, "vae_downsample");
  need_positive(c.image_resolution, "image_resolution");
  need_positive(c.time_freq_dim, "time_freq_dim");
  if (c.time_freq_dim % 2 != 0) r.violations.push_back("time_freq_dim must be even");
  if (c.num_heads && c.hidden_dim % c.num_heads != 0) r.violations.push_back("h mod n != 0");
  if (c.vae_downsample && c.image_resolution % c.vae_downsample != 0) {
    r.violations.push_back("resolution not divisible by vae_downsample");
  } else if (c.patch_size && c.vae_downsample && c.latent_side() % c.patch_size != 0) {
    r.violations.push_back("patch does not tile latent");
  }
  if (c.is_uvit() && c.time_conditioning != TimeConditioning::TimeToken) {
    r.violations.push_back("uvit supports time_token conditioning only");
  }
  if (!c.is_uvit() && c.time_conditioning != TimeConditioning::AdaLN) {
    r.violations.push_back("cross-attention families support adaln time conditioning only");
  }
  return r;
}

namespace {

ArchConfig paper_row(std::string name, Family family, std::size_t h, std::size_t d, std::size_t n) {
  ArchConfig c = make_config(family);
  c.name = std::move(name);
  c.hidden_dim = h;
  c.depth = d;
  c.num_heads = n;
  c.patch_size = 2;
  c.text_dim = 1024;
  c.text_len = 77;
  c.image_resolution = 256;
  return c;
}

ArchConfig toy(std::string name, Family family) {
  ArchConfig c = make_config(family);
  c.name = std::move(name);
  c.hidden_dim = 32;
  c.depth = 4;
  c.num_heads = 4;
  c.patch_size = 2;
  c.text_dim = 64;
  c.text_len = 12;
  c.image_resolution = 64;  // 8x8 latent, 16 image tokens
  c.time_freq_dim = 32;
  return c;
}

std::map<std::string, ArchConfig> make_presets() {
  std::map<std::string, ArchConfig> m;
  auto put = [&](ArchConfig c) { m.emplace(c.name, std::move(c)); };
  put(paper_row("pixart-0.6b", Family::CrossAttnAdaLNSingle, 1152, 28, 16));
  put(paper_row("largedit-5b", Family::CrossAttnAdaLNPerBlock, 3072, 32, 32));
  put(paper_row("largedit-7b", Family::CrossAttnAdaLNPerBlock, 4096, 32, 32));
  put(paper_row("uvit-large", Family::UViT, 1024, 20, 16));
  put(paper_row("uvit-huge", Family::UViT, 1152, 28, 16));
  put(paper_row("uvit-1.3b", Family::UViT, 1536, 42, 16));
  put(paper_row("uvit-1.8b", Family::UViT, 2048, 32, 16));
  put(paper_row("uvit-2.3b", Family::UViT, 2048, 42, 16));
  put(paper_row("uvit-3.6b", Family::UViT, 2048, 64, 16));
  put(paper_row("uvit-4.0b", Family::UViT, 3072, 32, 32));
  put(paper_row("uvit-5.3b", Family::UViT, 3072, 42, 32));
  put(paper_row("uvit-6.0b", Family::UViT, 3072, 48, 32));
  put(paper_row("uvit-8.0b", Family::UViT, 3072, 64, 32));
  put(toy("toy-uvit", Family::UViT));
  put(toy("toy-pixart", Family::CrossAttnAdaLNSingle));
  put(toy("toy-largedit", Family::CrossAttnAdaLNPerBlock));
  return m;
}

}  // namespace

const std::map<std::string, ArchConfig>& preset_table() {
  static const std::map<std::string, ArchConfig> table = make_presets();
  return table;
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& [k, v] : preset_table()) names.push_back(k);
  return names;
}

ArchConfig preset(std::string_view name) {
  const auto& table = preset_table();
  if (auto it = table.find(std::string(name)); it != table.end()) return it->second;
  std::string msg = "unknown preset '" + std::string(name) + "'; available:";
  for (const auto& n : preset_names()) msg += " " + n;
  throw ConfigError(msg);
}

TokenBreakdown token_counts(const ArchConfig& c, std::size_t image_resolution, std::size_t condition_tokens) {
  const std::size_t stride = c.vae_downsample * c.patch_size;
  if (stride == 0 || image_resolution == 0 || image_resolution % stride != 0) {
    throw ConfigError("resolution " + std::to_string(image_resolution) + " is not divisible by vae_downsample*patch_size = " +
                      std::to_string(stride));
  }
  TokenBreakdown t;
  const std::size_t side = image_resolution / stride;
  t.image_tokens = side * side;
  t.text_tokens = c.text_len;
  t.condition_tokens = condition_tokens;
  if (c.is_uvit()) {
    t.time_tokens = c.time_conditioning == TimeConditioning::TimeToken ? 1 : 0;
    t.self_attention_tokens = t.image_tokens + t.text_tokens + t.time_tokens + condition_tokens;
    t.total = t.self_attention_tokens;
  } else {
    t.self_attention_tokens = t.image_tokens + condition_tokens;
    t.total = t.self_attention_tokens + t.text_tokens;
  }
  return t;
}

nlohmann::json to_json(const ArchConfig& c) {
  return nlohmann::json{{"name", c.name},
                        {"family", family_name(c.family)},
                        {"hidden_dim", c.hidden_dim},
                        {"depth", c.depth},
                        {"num_heads", c.num_heads},
                        {"patch_size", c.patch_size},
                        {"text_dim", c.text_dim},
                        {"text_len", c.text_len},
                        {"latent_channels", c.latent_channels},
                        {"vae_downsample", c.vae_downsample},
                        {"use_skip", c.use_skip},
                        {"time_conditioning", time_conditioning_name(c.time_conditioning)},
                        {"image_resolution", c.image_resolution},
                        {"time_freq_dim", c.time_freq_dim}};
}

ArchConfig config_from_json(const nlohmann::json& j) {
  // A config may start from a preset and override individual fields.
  ArchConfig c;
  if (j.contains("preset")) {
    c = preset(j.at("preset").get<std::string>());
  } else if (j.contains("family")) {
    c = make_config(parse_family(j.at("family").get<std::string>()));
  }
  try {
    if (j.contains("family")) {
      const Family f = parse_family(j.at("family").get<std::string>());
      if (f != c.family) {
        c.family = f;
        c.time_conditioning = make_config(f).time_conditioning;
      }
    }
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("name", c.name);
    get("hidden_dim", c.hidden_dim);
    get("depth", c.depth);
    get("num_heads", c.num_heads);
    get("patch_size", c.patch_size);
    get("text_dim", c.text_dim);
    get("text_len", c.text_len);
    get("latent_channels", c.latent_channels);
    get("vae_downsample", c.vae_downsample);
    get("use_skip", c.use_skip);
    get("image_resolution", c.image_resolution);
    get("time_freq_dim", c.time_freq_dim);
    if (j.contains("time_conditioning")) {
      const auto s = j.at("time_conditioning").get<std::string>();
      if (s == "time_token") c.time_conditioning = TimeConditioning::TimeToken;
      else if (s == "adaln") c.time_conditioning = TimeConditioning::AdaLN;
      else throw ConfigError("unknown time_conditioning '" + s + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config field: ") + e.what());
  }
  return c;
}

ArchConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse " + path + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace dtlab
