#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtlab/arch_config.hpp"
#include "dtlab/conditioning_spec.hpp"
#include "dtlab/probe.hpp"
#include "dtlab/trainer.hpp"

namespace dtlab {

struct AblationVariant {
  std::string label;
  ArchConfig config;
  ConditioningSpec conditioning;
  TrainConfig train;
};

struct AblationOptions {
  std::size_t smoothing_window = 100;
  /// Held-out probe samples per variant; 0 skips the probe.
  std::size_t probe_samples = 0;
  SamplerConfig sampler{20, 3.0, 0, 0.0};
  std::uint64_t probe_seed = 99;
};

struct VariantResult {
  std::string label;
  TrainLog log;
  double smoothed_loss = 0.0;
  std::optional<ProbeResult> probe;
};

struct AblationReport {
  std::string name;
  /// The single setting the variants differ in; empty when they are identical.
  std::string factor;
  std::vector<VariantResult> results;

  std::string summary_csv() const;
  std::string curves_csv() const;
};

class AblationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Settings (flattened config, conditioning, and train keys) in which the
/// variants differ from the first one.
std::vector<std::string> differing_factors(const std::vector<AblationVariant>& variants);

/// Trains every variant from the same seeds and data order. Rejects variants
/// that differ in more than one setting.
AblationReport run_ablation(const std::string& name, const std::vector<AblationVariant>& variants,
                            const AblationOptions& options = {});

/// The named studies: "skip" (U-ViT long skips on/off), "text-encoder"
/// (frozen vs trainable embedder, cross-attention family), "condition"
/// (token vs channel concatenation for inpainting). Each accepts a base
/// training config and an optional base architecture; without one each study
/// uses its own toy preset.
std::vector<AblationVariant> standard_variants(const std::string& study, const TrainConfig& train,
                                               const std::optional<ArchConfig>& base = std::nullopt);

}  // namespace dtlab
