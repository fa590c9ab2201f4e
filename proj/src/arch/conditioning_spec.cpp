#include "dtlab/conditioning_spec.hpp"

#include <string>

#include "dtlab/arch_config.hpp"

namespace dtlab {

std::string_view condition_mode_name(ConditionMode m) {
  switch (m) {
    case ConditionMode::None: return "none";
    case ConditionMode::TokenConcat: return "token";
    case ConditionMode::ChannelConcat: return "channel";
  }
  return "unknown";
}

ConditionMode parse_condition_mode(std::string_view s) {
  if (s == "none") return ConditionMode::None;
  if (s == "token" || s == "token-concat") return ConditionMode::TokenConcat;
  if (s == "channel" || s == "channel-concat") return ConditionMode::ChannelConcat;
  throw ConfigError("unknown condition mode '" + std::string(s) + "' (expected none, token, channel)");
}

std::string_view condition_kind_name(ConditionKind k) {
  return k == ConditionKind::EdgeMap ? "edge" : "inpaint";
}

ConditioningSpec inpaint_condition(ConditionMode mode, std::size_t latent_channels) {
  ConditioningSpec s;
  s.mode = mode;
  s.kind = ConditionKind::InpaintImageAndMask;
  s.channels = mode == ConditionMode::None ? 0 : latent_channels + 1;
  return s;
}

ConditioningSpec edge_condition(ConditionMode mode) {
  ConditioningSpec s;
  s.mode = mode;
  s.kind = ConditionKind::EdgeMap;
  s.channels = mode == ConditionMode::None ? 0 : 1;
  return s;
}

nlohmann::json to_json(const ConditioningSpec& s) {
  return nlohmann::json{{"mode", condition_mode_name(s.mode)},
                        {"kind", condition_kind_name(s.kind)},
                        {"channels", s.channels},
                        {"patch_size", s.patch_size},
                        {"latent_side", s.latent_side}};
}

ConditioningSpec conditioning_from_json(const nlohmann::json& j) {
  ConditioningSpec s;
  try {
    if (j.contains("mode")) s.mode = parse_condition_mode(j.at("mode").get<std::string>());
    if (j.contains("kind")) {
      const auto k = j.at("kind").get<std::string>();
      if (k == "edge") s.kind = ConditionKind::EdgeMap;
      else if (k == "inpaint") s.kind = ConditionKind::InpaintImageAndMask;
      else throw ConfigError("unknown condition kind '" + k + "'");
    }
    if (j.contains("channels")) s.channels = j.at("channels").get<std::size_t>();
    if (j.contains("patch_size")) s.patch_size = j.at("patch_size").get<std::size_t>();
    if (j.contains("latent_side")) s.latent_side = j.at("latent_side").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad conditioning field: ") + e.what());
  }
  return s;
}

}  // namespace dtlab
