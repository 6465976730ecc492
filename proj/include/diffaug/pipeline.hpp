#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "diffaug/data.hpp"
#include "diffaug/detection_eval.hpp"
#include "diffaug/models.hpp"
#include "diffaug/nn.hpp"
#include "diffaug/schedules.hpp"

namespace diffaug {

struct ScheduleConfig {
  int T = 1000;
  Real beta_start = 1e-4;
  Real beta_end = 0.02;
  ReverseVariance reverse_variance = ReverseVariance::kBeta;

  VarianceSchedule build() const { return make_linear_schedule(T, beta_start, beta_end); }
};

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  nn::AdamConfig optimizer;
  std::uint64_t seed = 0;
  /// Write a checkpoint every this many epochs (0: final only).
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
  /// JSON-lines loss log; empty disables.
  std::filesystem::path loss_log;
  /// Random horizontal flips (detector training only).
  bool hflip = true;
  /// Decay of the weight average that checkpoints and results carry; 0 keeps
  /// the raw weights.
  Real ema_decay = 0.0;

  void validate() const;
};

struct GenerationConfig {
  int n_images = 1000;
  Real score_threshold = 0.5;
  std::uint64_t seed = 0;
  std::filesystem::path output;

  void validate() const;
};

struct LossRecord {
  std::int64_t step = 0;
  int epoch = 0;
  Real l_diff = 0.0;
  Real l_det = 0.0;
  Real total = 0.0;
};

/// Denoiser and labeling head trained together, plus the schedule they use.
struct JointModel {
  JointModelConfig config;
  ScheduleConfig schedule_config;
  VarianceSchedule schedule;
  std::unique_ptr<Denoiser> denoiser;
  std::unique_ptr<AnchorHead> head;

  static JointModel create(const JointModelConfig& cfg, const ScheduleConfig& sched,
                           std::uint64_t seed);
  nn::ParameterList parameters() const;
};

struct TrainingState {
  std::int64_t step = 0;
  int epoch = 0;
  std::uint64_t seed = 0;
  std::string rng_state;
  std::string config_hash;
};

struct JointTrainResult {
  JointModel model;
  TrainingState state;
  std::vector<LossRecord> log;
  /// Mean total loss over the training set at fixed (t, noise) draws.
  Real initial_loss = 0.0;
  Real final_loss = 0.0;
};

/// Minimizes the coupled loss over `real_train`. Images are letterboxed to
/// the model side and mapped to [-1, 1].
JointTrainResult train_joint(const DetectionDataset& real_train, const JointModelConfig& model_cfg,
                             const ScheduleConfig& sched_cfg, const TrainConfig& cfg);

/// Mean coupled loss with per-image timesteps and noise drawn from `seed`.
JointLossValue evaluate_joint_loss(const JointModel& model, const DetectionDataset& data,
                                   std::uint64_t seed);

void save_joint_checkpoint(const JointModel& model, const TrainingState& state,
                           const std::filesystem::path& path);
JointModel load_joint_checkpoint(const std::filesystem::path& path,
                                 TrainingState* state = nullptr);

/// Samples n images and labels each with the joint head. `checkpoint_hash`
/// is recorded in provenance. When `expected_schedule` is given it must
/// match the model's schedule.
DetectionDataset generate_dataset(const JointModel& model, const GenerationConfig& gcfg,
                                  const std::string& checkpoint_hash,
                                  const std::optional<ScheduleConfig>& expected_schedule = {});

struct Detector {
  HeadConfig config;
  int side = 32;
  int channels = 3;
  std::unique_ptr<AnchorHead> head;

  static Detector create(const HeadConfig& cfg, int side, int channels, std::uint64_t seed);
};

struct DetectorTrainResult {
  Detector detector;
  TrainingState state;
  std::vector<LossRecord> log;
};

DetectorTrainResult train_detector(const DetectionDataset& train_set, const HeadConfig& head_cfg,
                                   int side, const TrainConfig& cfg);

void save_detector_checkpoint(const Detector& det, const TrainingState& state,
                              const std::filesystem::path& path);
Detector load_detector_checkpoint(const std::filesystem::path& path,
                                  TrainingState* state = nullptr);

struct EvaluationConfig {
  Real iou_threshold = 0.5;
  ApInterpolation interpolation = ApInterpolation::kCoco101;
  /// Lowest confidence kept when building the PR curve.
  Real min_score = 0.05;
};

/// Detector predictions for each image (letterboxed to the detector side
/// and mapped back to the image's own coordinates).
std::vector<std::vector<BoundingBox>> detect_dataset(const Detector& det,
                                                      const DetectionDataset& data,
                                                      Real min_score);

EvalReport evaluate_detector(const Detector& det, const DetectionDataset& data,
                             const EvaluationConfig& cfg);

/// Scales an image to fit side x side and pads with mid-grey; boxes follow.
AnnotatedImage letterbox(const AnnotatedImage& item, int side);

/// One row of the comparison matrix: a base set, optionally augmented.
struct ExperimentRow {
  std::string base_name;
  std::string augment_name;  // empty: unaugmented baseline
  std::string resolution;
  const DetectionDataset* base = nullptr;
  const DetectionDataset* augment = nullptr;
  int train_side = 32;
};

struct ExperimentRowResult {
  std::string base_name;
  std::string augmentation;  // "None" for the baseline
  std::string resolution;
  std::size_t train_size = 0;
  std::optional<Real> ap;
  std::optional<Real> delta;  // ap minus the matching baseline's ap
  /// AP on each additional evaluation set, keyed by its name.
  std::map<std::string, Real> extra_ap;
  std::string error;
};

struct NamedDataset {
  std::string name;
  const DetectionDataset* data = nullptr;
};

struct DetectorSettings {
  HeadConfig head;
  TrainConfig train;
  EvaluationConfig eval;
};

/// Trains and evaluates one detector per row; row failures are recorded and
/// the remaining rows still run.
std::vector<ExperimentRowResult> run_experiment(std::span<const ExperimentRow> rows,
                                                const DetectionDataset& eval_set,
                                                const DetectorSettings& settings,
                                                std::span<const NamedDataset> extra_evals = {});

/// Writes the JSON-lines loss log atomically.
void write_loss_log(const std::vector<LossRecord>& log, const std::filesystem::path& path);

}  // namespace diffaug
