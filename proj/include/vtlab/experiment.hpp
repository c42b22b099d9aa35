#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "vtlab/env.hpp"
#include "vtlab/policy.hpp"
#include "vtlab/reward.hpp"
#include "vtlab/trainer.hpp"

namespace vtlab {

constexpr int kMetricsSchemaVersion = 1;
constexpr std::string_view kToolVersion = "vtlab 0.1.0";

// Configuration errors carry the offending field path, e.g. "trainer.lr_warmup".
struct ConfigError : std::runtime_error {
  std::string path;
  ConfigError(std::string path_, const std::string& message)
      : std::runtime_error(path_ + ": " + message), path(std::move(path_)) {}
};

struct OutputConfig {
  std::string dir = "runs/default";
  int checkpoint_interval = 0;  // 0: final checkpoint only
};

// One experiment, fully defaulted. The top-level seed is the only seed: it
// overrides trainer.seed when the config is run.
struct ExperimentConfig {
  std::string name = "default";
  uint64_t seed = 1;
  EnvConfig env;
  PolicyConfig policy;
  RewardConfig reward;
  TrainerConfig trainer;  // gating flags live in the "gating" config section
  OutputConfig output;
};

// Strict parser: every field has a default, unknown keys are rejected with
// their path. Throws ConfigError.
ExperimentConfig experiment_config_from_json(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

// Canonical serialization with all defaults materialized. Hashing this string
// yields the config fingerprint recorded in run manifests; parsing it back
// reproduces the config exactly.
std::string experiment_config_to_json(const ExperimentConfig& cfg);

struct RunArtifacts {
  std::string dir;
  std::string metrics_csv;
  std::string steps_jsonl;
  std::string checkpoint_json;
  std::string manifest_json;
  MetricsSeries metrics;
  FilterReport filter;
};

// Trains per config and writes metrics.csv, steps.jsonl, checkpoint.json and
// manifest.json under output.dir. Refuses to overwrite a completed run
// (manifest present) unless force is set. Reruns are byte-identical.
RunArtifacts run_experiment(const ExperimentConfig& cfg, bool force);

// The 2x2 anchoring/gating grid, a structural-mask arm, and a prior-strength
// sweep; one run directory per cell plus an ablation_summary.csv of
// trailing-window means under base.output.dir.
std::vector<RunArtifacts> run_ablation(const ExperimentConfig& base, bool force,
                                       std::string* summary_csv_path = nullptr);

struct ParadoxArm {
  std::string name;
  double f_tau = 0.0;
  double kappa = 0.0;
  double legacy_rate = 0.0;
  double mean_acc = 0.0;
};

struct ParadoxReport {
  ParadoxArm weak;
  ParadoxArm strong;
  std::string report_csv;
};

// Paired-seed comparison of two configs that must differ only in
// policy.prior_strength (names and output paths excepted); anything else
// throws ConfigError. Writes paradox_report.csv under report_dir.
ParadoxReport run_paradox_probe(const ExperimentConfig& weak, const ExperimentConfig& strong,
                                bool force, const std::string& report_dir);

struct ReversionReport {
  int samples = 0;
  double native_rate = 0.0;  // at the config temperature
  double legacy_rate = 0.0;
  double native_rate_greedy = 0.0;
  double legacy_rate_greedy = 0.0;
};

// Cold-start on the schema selected by policy.cold_start_legacy, then measure
// how often rollouts emit each call schema, stochastically and greedily.
ReversionReport run_reversion_probe(const ExperimentConfig& cfg, int samples);

}  // namespace vtlab
