#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace dtlab {

enum class Family {
  UViT,                  // in-context conditioning, long skips
  CrossAttnAdaLNSingle,  // PixArt-alpha style: one shared modulation MLP + per-block offsets
  CrossAttnAdaLNPerBlock // LargeDiT style: modulation MLP in every block
};

enum class TimeConditioning { TimeToken, AdaLN };

std::string_view family_name(Family f);
Family parse_family(std::string_view s);
std::string_view time_conditioning_name(TimeConditioning t);

struct ArchConfig {
  std::string name = "custom";
  Family family = Family::UViT;
  std::size_t hidden_dim = 64;
  std::size_t depth = 4;
  std::size_t num_heads = 4;
  std::size_t patch_size = 2;
  std::size_t text_dim = 64;
  std::size_t text_len = 77;
  std::size_t latent_channels = 4;
  std::size_t vae_downsample = 8;
  bool use_skip = true;
  TimeConditioning time_conditioning = TimeConditioning::TimeToken;
  /// Pixel resolution the positional tables are sized for.
  std::size_t image_resolution = 256;
  /// Width of the sinusoidal timestep features fed to the time MLP.
  std::size_t time_freq_dim = 256;

  bool is_uvit() const { return family == Family::UViT; }
  std::size_t head_dim() const { return hidden_dim / num_heads; }
  std::size_t latent_side() const { return image_resolution / vae_downsample; }
  std::size_t image_tokens() const {
    const std::size_t s = latent_side() / patch_size;
    return s * s;
  }
  std::size_t patch_dim() const { return patch_size * patch_size * latent_channels; }
  /// Width of the timestep embedding. Per-block-modulation models cap it at
  /// 1024 so every block's modulation MLP stays min(h,1024) -> 6h.
  std::size_t time_embed_dim() const;
  /// Tokens covered by the main positional table (time + text + image for
  /// U-ViT, image only for cross-attention models).
  std::size_t positional_tokens() const;

  bool operator==(const ArchConfig&) const = default;
};

/// Defaults appropriate to a family (time conditioning).
ArchConfig make_config(Family family);

struct ValidationResult {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

ValidationResult validate(const ArchConfig& config);

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Every Table 1 DiT/U-ViT row plus small toy presets, keyed by name.
const std::map<std::string, ArchConfig>& preset_table();
std::vector<std::string> preset_names();
/// Throws ConfigError listing the available names when `name` is unknown.
ArchConfig preset(std::string_view name);

struct TokenBreakdown {
  std::size_t image_tokens = 0;
  std::size_t text_tokens = 0;
  std::size_t time_tokens = 0;
  std::size_t condition_tokens = 0;
  /// Sequence length of each block's self-attention.
  std::size_t self_attention_tokens = 0;
  /// All tokens the network carries (text included for cross-attention models).
  std::size_t total = 0;
};

/// Throws ConfigError when the resolution does not tile into patches.
TokenBreakdown token_counts(const ArchConfig& config, std::size_t image_resolution,
                            std::size_t condition_tokens = 0);

nlohmann::json to_json(const ArchConfig& config);
ArchConfig config_from_json(const nlohmann::json& j);
ArchConfig load_config(const std::string& path);

}  // namespace dtlab
