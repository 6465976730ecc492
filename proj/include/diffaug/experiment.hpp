#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include "diffaug/config.hpp"
#include "json.hpp"

namespace diffaug {

struct ToySplits {
  DetectionDataset sim_train;
  DetectionDataset sim_test;
  DetectionDataset real_train;
  DetectionDataset real_test;
};

/// Renders the four toy splits from the config's domain specs and plan.
ToySplits render_splits(const ExperimentConfig& cfg);

struct GeneratorHealth {
  std::size_t n_images = 0;
  Real with_boxes_fraction = 0.0;
  Real mean_boxes = 0.0;
};

GeneratorHealth generator_health(const DetectionDataset& generated);

/// Largest per-channel difference of mean pixel value between two sets.
Real appearance_gap(const DetectionDataset& a, const DetectionDataset& b);

using ProgressFn = std::function<void(const std::string&)>;

/// Runs the full sim-vs-augmented comparison once per plan seed: joint
/// training on real-train, generation, then one detector per matrix row
/// evaluated on real-test (and on sim-test). Artifacts go under out_dir
/// when it is non-empty. Returns the report document.
nlohmann::json run_toy_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                  const ProgressFn& progress = {});

enum class ReportFormat { kText, kMarkdown };

/// Table with one row per base dataset and one column per
/// augmentation x resolution; cells hold mean AP over seeds.
std::string render_report(const nlohmann::json& report, ReportFormat format = ReportFormat::kText);

}  // namespace diffaug
