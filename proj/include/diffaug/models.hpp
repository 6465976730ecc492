#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "diffaug/autograd.hpp"
#include "diffaug/box.hpp"
#include "diffaug/diffusion.hpp"
#include "diffaug/nn.hpp"

namespace diffaug {

enum class DenoiserArch {
  kConv2,  // two 3x3 convolutions with a time bias; for tests and gradient checks
  kUNet,   // two-level encoder/decoder with skip connections
};

struct DenoiserConfig {
  DenoiserArch arch = DenoiserArch::kUNet;
  int base_channels = 16;
  int time_embed_dim = 32;
};

struct AnchorSize {
  Real w = 0.0;
  Real h = 0.0;
  friend bool operator==(const AnchorSize&, const AnchorSize&) = default;
};

struct HeadConfig {
  /// One stride-2 stage per entry; the feature stride is 2^stages.
  std::vector<int> stage_channels{16, 32};
  /// Adds a stride-1 3x3 convolution after each downsampling convolution.
  bool extra_convs = true;
  std::vector<AnchorSize> anchors{{4.0, 10.0}, {6.0, 15.0}, {9.0, 21.0}};
  Real score_threshold = 0.5;
  Real nms_iou = 0.45;
  /// Anchors at or above this IoU with a ground-truth box are positives.
  Real positive_iou = 0.5;
  /// Anchors below this IoU with every ground-truth box are negatives.
  Real negative_iou = 0.4;
  int max_detections = 50;
  /// Transition point of the smooth-L1 box regression loss.
  Real smooth_l1_beta = 0.1;
};

struct JointModelConfig {
  DenoiserConfig denoiser;
  HeadConfig head;
  Real lambda_det = 1.0;
  int image_side = 32;
  int channels = 3;
  /// Stops detection-loss gradients at the head input.
  bool detach_head_input = false;
  /// Restricts the head loss to t <= head_t_max; 0 means every timestep.
  int head_t_max = 0;

  int downsampling_factor() const;
  /// Throws ConfigError on violated invariants.
  void validate() const;
};

/// Network predicting the clean image from (x_t, t).
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual ag::Var forward(const ag::Var& x_t, std::span<const int> t) const = 0;
  virtual nn::ParameterList parameters() const = 0;

  /// Evaluation-mode single-image prediction (no graph is recorded).
  ImageTensor predict(const ImageTensor& x_t, int t) const;
  /// Adapter for the diffusion sampler. The denoiser must outlive it.
  DenoiserFn as_fn() const;
};

std::unique_ptr<Denoiser> make_denoiser(const DenoiserConfig& cfg, int channels,
                                        std::uint64_t seed);

/// Detector contract: scored boxes at inference, a scalar loss in training.
/// Images are in [-1, 1] diffusion space.
class DetectionHead {
 public:
  virtual ~DetectionHead() = default;

  /// Mean per-image detection loss over the batch.
  virtual ag::Var detection_loss(const ag::Var& images,
                                 std::span<const std::vector<BoundingBox>> gts) const = 0;

  /// Candidate boxes with confidence >= min_score after suppression, in
  /// image pixel coordinates. Ordering is unspecified.
  virtual std::vector<BoundingBox> detect(const ImageTensor& image,
                                          Real min_score) const = 0;

  virtual nn::ParameterList parameters() const = 0;
};

/// Single-stage anchor detector: strided conv backbone and a 1x1 predictor
/// emitting objectness and box deltas for every anchor at every cell.
class AnchorHead final : public DetectionHead {
 public:
  AnchorHead(const HeadConfig& cfg, int channels, std::uint64_t seed);

  ag::Var forward(const ag::Var& images) const;
  ag::Var detection_loss(const ag::Var& images,
                         std::span<const std::vector<BoundingBox>> gts) const override;
  std::vector<BoundingBox> detect(const ImageTensor& image, Real min_score) const override;
  nn::ParameterList parameters() const override;

  const HeadConfig& config() const { return cfg_; }
  int stride() const { return 1 << static_cast<int>(cfg_.stage_channels.size()); }

  /// Anchor box for (anchor a, cell row, cell col).
  BoundingBox anchor_box(int a, int row, int col) const;

 private:
  HeadConfig cfg_;
  std::vector<nn::Conv2d> down_;
  std::vector<nn::Conv2d> extra_;
  nn::Conv2d predictor_;
};

/// Per-anchor training targets derived from ground truth only.
struct AnchorTargets {
  /// 1 positive, 0 negative, -1 ignored; indexed [a][row][col] flattened.
  std::vector<int> labels;
  /// Four regression targets per anchor (dx, dy, log dw, log dh).
  std::vector<Real> deltas;
};

AnchorTargets assign_anchors(const AnchorHead& head, int height, int width,
                             std::span<const BoundingBox> gts);

struct JointLossTerms {
  ag::Var total;
  ag::Var l_diff;
  ag::Var l_det;
};

/// Differentiable coupled loss over a batch. x0 is (n, c, h, w) in [-1, 1].
JointLossTerms joint_loss_graph(const Tensor& x0,
                                std::span<const std::vector<BoundingBox>> gt_boxes,
                                std::span<const int> t, const VarianceSchedule& s,
                                const Denoiser& denoiser, const DetectionHead& head,
                                const Tensor& noise, const JointModelConfig& cfg);

struct JointLossValue {
  Real total = 0.0;
  Real l_diff = 0.0;
  Real l_det = 0.0;
};

/// Single-image coupled loss: the head scores the denoiser's x0 prediction.
JointLossValue joint_loss(const ImageTensor& x0, const std::vector<BoundingBox>& gt_boxes,
                          int t, const VarianceSchedule& s, const Denoiser& denoiser,
                          const DetectionHead& head, const NoiseDraw& noise,
                          const JointModelConfig& cfg);

/// Boxes with confidence >= score_threshold, clipped to the image and sorted
/// by descending confidence (ties keep detector order).
std::vector<BoundingBox> predict_labels(const ImageTensor& image,
                                        const DetectionHead& head, Real score_threshold);

/// Greedy non-maximum suppression; returns kept boxes by descending score.
std::vector<BoundingBox> non_max_suppression(std::vector<BoundingBox> boxes,
                                             Real iou_threshold, int max_keep);

}  // namespace diffaug
