// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration and orchestration: one JSON document with
// backbone / lora / train / tasks sections, dotted-path overrides, seed
// derivation, and the train -> artifacts pipeline behind the CLI.
//
// Seed derivation from the root seed (see rng.hpp for the hash):
//   backbone.seed = derive_seed(seed, "backbone")
//   lora.seed     = derive_seed(seed, "lora")       (adapters further derive
//                                                    per site: "adapter/<site>")
//   train.seed    = derive_seed(seed, "train")
//   tasks.seed    = derive_seed(seed, "tasks")

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "loralab/backbone.hpp"
#include "loralab/checkpoint.hpp"
#include "loralab/diagnostics.hpp"
#include "loralab/tasks.hpp"
#include "loralab/trainer.hpp"

namespace loralab {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    std::uint64_t seed = 42;
    std::string output_dir;
    BackboneConfig backbone;
    LoraConfig lora;
    std::vector<std::string> targets;  // adaptation site targets
    TrainConfig train;
    TaskSuiteConfig tasks;
};

/// Parses and validates; throws ConfigError naming the offending field.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config_file(const std::string& path);

/// Stable 64-bit hash of the canonical config snapshot.
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string config_hash_hex(const ExperimentConfig& cfg);

/// Applies "dotted.path=value" into the raw JSON document. The value is
/// parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Builds backbone + adapters for a resolved config.
AdaptedModel<float> build_model(const ExperimentConfig& cfg);

void save_model_checkpoint(const AdaptedModel<float>& model, const ExperimentConfig& cfg,
                           const std::string& path, std::int64_t trained_steps = 0);

struct LoadedModel {
    ExperimentConfig config;
    AdaptedModel<float> model;
    std::int64_t trained_steps = 0;
};

/// Rebuilds the frozen backbone from the embedded config and overwrites
/// every adapter tensor from the payload; shapes are verified against the
/// config-derived shapes.
LoadedModel load_model_checkpoint(const std::string& path);

struct RunResult {
    MetricsLog log;
    EvalMetrics final_eval;
    std::string output_dir;
};

/// Full pipeline: tasks -> backbone -> inject -> train; writes config.json,
/// metrics.csv, eval.json, similarity.json(+csv), checkpoint.bin and a
/// timestamps-only run_meta.json into the output directory. The directory
/// is lockfile-guarded against concurrent runs.
RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir_override = "",
                         const std::string& export_dataset_prefix = "");

/// Output directory resolution: explicit override wins, else the config's
/// output_dir; a relative path is placed under $LORALAB_OUT_ROOT when set.
std::string resolve_output_dir(const ExperimentConfig& cfg, const std::string& out_dir_override);

}  // namespace loralab
