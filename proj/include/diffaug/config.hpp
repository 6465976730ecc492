#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "diffaug/data.hpp"
#include "diffaug/pipeline.hpp"
#include "json.hpp"

namespace diffaug {

/// Sizes and repetitions of the toy sim-vs-real comparison.
struct ExperimentPlan {
  int sim_train = 200;
  int sim_test = 100;
  int real_train = 200;
  int real_test = 100;
  /// Base sets are the first k simulated training images.
  std::vector<int> base_sizes{200};
  /// Augmentations are the first k generated images.
  std::vector<int> augment_sizes{100, 200, 500};
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

/// Everything one declarative run needs. Blocks mirror the modules they
/// configure; see docs/config.md for the schema.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  ScheduleConfig schedule;
  JointModelConfig model;
  HeadConfig detector_head;
  ToyDomainSpec sim = ToyDomainSpec::defaults(ToyDomain::kSim);
  ToyDomainSpec real = ToyDomainSpec::defaults(ToyDomain::kReal);
  TrainConfig joint_train;
  TrainConfig detector_train;
  GenerationConfig generation;
  EvaluationConfig evaluation;
  ExperimentPlan experiment;
  std::filesystem::path output_dir = "runs/default";

  /// Canonical JSON. Stage seeds are omitted; they follow from `seed`.
  nlohmann::json to_json() const;
  /// Hash of the canonical JSON.
  std::string hash() const;
  /// Overrides every seed derived from the global seed.
  void set_seed(std::uint64_t s);
};

/// Parses a config document. Unknown keys and invalid values raise
/// ConfigError whose message starts with the dotted field path.
ExperimentConfig parse_experiment_config(const nlohmann::json& doc);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

nlohmann::json to_json(const ScheduleConfig& c);
nlohmann::json to_json(const DenoiserConfig& c);
nlohmann::json to_json(const HeadConfig& c);
nlohmann::json to_json(const JointModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const GenerationConfig& c);
nlohmann::json to_json(const EvaluationConfig& c);
nlohmann::json to_json(const ToyDomainSpec& c);

ScheduleConfig schedule_from_json(const nlohmann::json& j, const std::string& where);
HeadConfig head_from_json(const nlohmann::json& j, const std::string& where,
                          const HeadConfig& defaults = {});
JointModelConfig model_from_json(const nlohmann::json& j, const std::string& where);
TrainConfig train_from_json(const nlohmann::json& j, const std::string& where,
                            const TrainConfig& defaults = {});
ToyDomainSpec toy_from_json(const nlohmann::json& j, const std::string& where,
                            const ToyDomainSpec& defaults);

std::string to_string(ReverseVariance v);
ReverseVariance parse_reverse_variance(const std::string& s);
std::string to_string(DenoiserArch a);
DenoiserArch parse_denoiser_arch(const std::string& s);

}  // namespace diffaug
