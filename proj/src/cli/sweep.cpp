#include "dtlab/sweep.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <fmt/format.h>

namespace dtlab {

SweepSpec sweep_from_json(const nlohmann::json& j) {
  SweepSpec s;
  try {
    if (j.contains("base")) s.base = j.at("base");
    if (j.contains("preset")) s.base["preset"] = j.at("preset");
    if (j.contains("overrides")) s.overrides = j.at("overrides").get<std::vector<nlohmann::json>>();
    if (j.contains("mode")) s.mode = parse_macs_mode(j.at("mode").get<std::string>());
    if (j.contains("resolutions")) s.resolutions = j.at("resolutions").get<std::vector<std::size_t>>();
    if (j.contains("train")) s.train = train_config_from_json(j.at("train"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad sweep spec: ") + e.what());
  }
  return s;
}

nlohmann::json to_json(const SweepSpec& s) {
  nlohmann::json j{{"base", s.base}, {"overrides", s.overrides}, {"mode", macs_mode_name(s.mode)},
                   {"resolutions", s.resolutions}};
  if (s.train) j["train"] = to_json(*s.train);
  return j;
}

bool SweepResult::all_ok() const {
  return std::all_of(entries.begin(), entries.end(), [](const SweepEntry& e) { return e.ok; });
}

std::string SweepResult::csv() const {
  std::string out = cost_csv_header() + ",status,smoothed_loss\n";
  for (const auto& e : entries) {
    if (e.cost) {
      out += cost_csv_row(*e.cost) + ",ok," + (e.log ? fmt::format("{:.9g}", e.log->smoothed_loss()) : "") + "\n";
    } else {
      std::string reason = e.reason;
      std::replace(reason.begin(), reason.end(), ',', ';');
      std::replace(reason.begin(), reason.end(), '\n', ' ');
      out += fmt::format("{},,,,,,,,,skipped: {},\n", e.name, reason);
    }
  }
  return out;
}

namespace {

SweepEntry evaluate(const SweepSpec& spec, const nlohmann::json& override_json) {
  SweepEntry e;
  nlohmann::json merged = spec.base;
  if (override_json.contains("preset")) merged.erase("family");
  merged.merge_patch(override_json);
  e.config = merged;
  try {
    ArchConfig cfg = config_from_json(merged);
    if (!merged.contains("name") && !override_json.empty() && !override_json.contains("preset")) {
      cfg.name = fmt::format("{}-h{}-d{}-n{}", cfg.name, cfg.hidden_dim, cfg.depth, cfg.num_heads);
    }
    e.name = cfg.name;
    e.config = to_json(cfg);
    const auto v = validate(cfg);
    if (!v.ok()) {
      e.reason = v.violations.front();
      for (std::size_t i = 1; i < v.violations.size(); ++i) e.reason += "; " + v.violations[i];
      return e;
    }
    e.cost = cost_report(cfg, spec.mode, spec.resolutions);
    if (spec.train) {
      Denoiser model = Denoiser::create(cfg, spec.train->seed);
      e.log = train(model, *spec.train);
    }
    e.ok = true;
  } catch (const std::exception& ex) {
    if (e.name.empty()) e.name = merged.value("name", std::string("unnamed"));
    e.reason = ex.what();
    e.cost.reset();
    e.ok = false;
  }
  return e;
}

}  // namespace

SweepResult run_sweep(const SweepSpec& spec, const std::string& out_dir) {
  SweepResult r;
  if (spec.overrides.empty()) {
    r.entries.push_back(evaluate(spec, nlohmann::json::object()));
  } else {
    for (const auto& o : spec.overrides) r.entries.push_back(evaluate(spec, o));
  }
  std::stable_sort(r.entries.begin(), r.entries.end(),
                   [](const SweepEntry& a, const SweepEntry& b) { return a.name < b.name; });
  if (!out_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "entries");
    for (std::size_t i = 0; i < r.entries.size(); ++i) {
      const auto& e = r.entries[i];
      const std::string stem = fmt::format("{:03}-{}", i, e.name);
      nlohmann::json j{{"name", e.name}, {"config", e.config}, {"status", e.ok ? "ok" : "skipped"}};
      if (!e.ok) j["reason"] = e.reason;
      if (e.cost) {
        j["params"] = e.cost->params;
        j["mode"] = macs_mode_name(e.cost->mode);
        for (const auto& [res, m] : e.cost->macs) j["macs"][std::to_string(res)] = m;
      }
      std::ofstream(fs::path(out_dir) / "entries" / (stem + ".json")) << j.dump(2) << '\n';
      if (e.log) std::ofstream(fs::path(out_dir) / "entries" / (stem + "-train.csv")) << e.log->csv();
    }
    std::ofstream(fs::path(out_dir) / "sweep.csv") << r.csv();
  }
  return r;
}

}  // namespace dtlab
