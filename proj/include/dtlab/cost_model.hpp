#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dtlab/arch_config.hpp"
#include "dtlab/conditioning_spec.hpp"

namespace dtlab {

enum class MacsMode {
  ProjectionOnly,        // weight matmuls only; the mode Table 1 is reproduced in
  WithAttentionMatmuls,  // adds the QK^T and PV products
};

std::string_view macs_mode_name(MacsMode m);
/// Accepts "projection"/"projection_only" and "full"/"with_attention_matmuls".
MacsMode parse_macs_mode(std::string_view s);

inline constexpr std::size_t kTableResolutions[] = {256, 512, 1024};

/// Exact parameter count of build(config, conditioning).
std::uint64_t param_count(const ArchConfig& config, const ConditioningSpec& conditioning = {});

/// Multiply-accumulates of one forward pass for a single sample at
/// `resolution` pixels. Throws ConfigError when the resolution does not tile.
std::uint64_t macs(const ArchConfig& config, std::size_t resolution, MacsMode mode,
                   const ConditioningSpec& conditioning = {});

struct CostReport {
  std::string name;
  ArchConfig config;
  std::uint64_t params = 0;
  MacsMode mode = MacsMode::ProjectionOnly;
  std::map<std::size_t, std::uint64_t> macs;  // resolution -> MACs

  double params_billions() const { return static_cast<double>(params) * 1e-9; }
  /// Rounded to 0.1B, the precision Table 1 reports.
  double params_rounded() const;
  double tmacs(std::size_t resolution) const { return static_cast<double>(macs.at(resolution)) * 1e-12; }
};

CostReport cost_report(const ArchConfig& config, MacsMode mode,
                       std::vector<std::size_t> resolutions = {256, 512, 1024});

/// CSV header and rows: name,h,d,n,params,tmacs_256,tmacs_512,tmacs_1024,mode.
std::string cost_csv_header();
std::string cost_csv_row(const CostReport& r);

/// One published row of the scaling table.
struct Table1Row {
  std::string preset;
  double params_b = 0.0;
  std::map<std::size_t, double> tmacs;
  /// Resolutions whose published MACs are excluded from comparison.
  std::vector<std::size_t> excluded;
  bool uvit = false;
};

const std::vector<Table1Row>& table1();

struct TableCheck {
  std::string preset;
  std::string quantity;  // "params" or "tmacs_<res>"
  double computed = 0.0;
  double published = 0.0;
  double rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  bool gated = true;  // false: reported only, never fails the check
};

inline constexpr double kParamTolerance = 0.05;
inline constexpr double kMacsTolerance = 0.10;

/// Parameter comparison (rounded to 0.1B, 5%) for every row, and projection
/// MACs (10%) for every row and resolution not excluded.
std::vector<TableCheck> check_table1(const Table1Row& row);

struct LatencyResult {
  std::string name;
  std::size_t resolution = 0;
  std::size_t ddim_steps = 0;
  std::vector<double> seconds;
  double median = 0.0;
  std::string hardware;
  std::string error;  // non-empty when the run failed
};

/// Median wall-clock of `runs` end-to-end DDIM samples (CFG, batch 1) with a
/// randomly initialized network. Local hardware only.
LatencyResult latency_bench(const ArchConfig& config, std::size_t resolution, std::size_t ddim_steps,
                            std::size_t runs = 5, std::uint64_t seed = 0);

std::string hardware_note();

}  // namespace dtlab
