#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "diffaug/box.hpp"

namespace diffaug {

/// Intersection over union. Throws std::domain_error on a degenerate box.
Real iou(const BoundingBox& a, const BoundingBox& b);

struct Match {
  std::size_t pred_index = 0;
  std::optional<std::size_t> gt_index;  // nullopt: false positive
  friend bool operator==(const Match&, const Match&) = default;
};

/// Greedy one-to-one matching in confidence order. Each prediction takes the
/// still-unmatched ground truth of highest IoU >= iou_threshold; ties go to
/// the lower ground-truth index. `preds` must be sorted by descending
/// confidence (OrderingError otherwise).
std::vector<Match> match_predictions(std::span<const BoundingBox> preds,
                                     std::span<const BoundingBox> gts,
                                     Real iou_threshold);

enum class ApInterpolation {
  kCoco101,    // mean interpolated precision at recall 0.00, 0.01, ..., 1.00
  kAllPoints,  // area under the monotone precision envelope
};

const char* to_string(ApInterpolation m);
ApInterpolation parse_interpolation(const std::string& name);

struct PrPoint {
  Real recall = 0.0;
  Real precision = 0.0;
};

struct EvalCounts {
  std::size_t num_gt = 0;
  std::size_t num_pred = 0;
  std::size_t num_tp = 0;
  std::size_t num_fp = 0;
};

struct ImageDiagnostics {
  std::size_t image_index = 0;
  std::size_t num_gt = 0;
  std::size_t num_pred = 0;
  std::size_t num_tp = 0;
};

struct EvalReport {
  Real ap = 0.0;
  Real iou_threshold = 0.5;
  ApInterpolation interpolation = ApInterpolation::kCoco101;
  /// One point per pooled prediction, in descending-confidence order.
  std::vector<PrPoint> pr_points;
  EvalCounts counts;
  std::vector<ImageDiagnostics> per_image;
};

/// Pooled AP over a dataset. gts[i] and preds[i] belong to image i.
///
/// Predictions are ranked globally by confidence; ties keep (image, index)
/// input order. With no ground truth the AP is 1 when there are also no
/// predictions, else 0.
EvalReport average_precision(std::span<const std::vector<BoundingBox>> gts,
                             std::span<const std::vector<BoundingBox>> preds,
                             Real iou_threshold,
                             ApInterpolation interpolation = ApInterpolation::kCoco101);

/// Evaluates each category separately and averages the APs of categories
/// that occur in the ground truth or the predictions.
Real mean_average_precision(std::span<const std::vector<BoundingBox>> gts,
                            std::span<const std::vector<BoundingBox>> preds,
                            Real iou_threshold,
                            ApInterpolation interpolation = ApInterpolation::kCoco101);

/// Integrates a ranked detection list given the cumulative true-positive
/// count after each rank. Precision at rank k is tp[k] / (k + 1).
Real integrate_pr_curve(std::span<const std::size_t> cumulative_tp, std::size_t num_gt,
                        ApInterpolation interpolation);

}  // namespace diffaug
