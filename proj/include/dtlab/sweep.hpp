#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtlab/cost_model.hpp"
#include "dtlab/trainer.hpp"

namespace dtlab {

struct SweepSpec {
  nlohmann::json base = nlohmann::json::object();  // config JSON, may name a "preset"
  std::vector<nlohmann::json> overrides;           // each merged over `base`
  MacsMode mode = MacsMode::ProjectionOnly;
  std::vector<std::size_t> resolutions{256, 512, 1024};
  /// When set, every entry is also trained at toy scale with this config.
  std::optional<TrainConfig> train;
};

SweepSpec sweep_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SweepSpec& s);

struct SweepEntry {
  std::string name;
  nlohmann::json config;  // fully resolved, or the raw override when skipped
  bool ok = false;
  std::string reason;     // why the entry was skipped
  std::optional<CostReport> cost;
  std::optional<TrainLog> log;
};

struct SweepResult {
  std::vector<SweepEntry> entries;  // sorted by name
  bool all_ok() const;
  std::string csv() const;
};

/// Evaluates every entry; failures are recorded and the sweep continues. With
/// a non-empty `out_dir`, writes one JSON report (and train log) per entry plus
/// the merged `sweep.csv`.
SweepResult run_sweep(const SweepSpec& spec, const std::string& out_dir = "");

}  // namespace dtlab
