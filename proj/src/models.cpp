#include "diffaug/models.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "diffaug/detection_eval.hpp"
#include "diffaug/errors.hpp"

namespace diffaug {

bool BoundingBox::valid() const {
  if (!(std::isfinite(x) && std::isfinite(y) && std::isfinite(w) && std::isfinite(h))) {
    return false;
  }
  if (!(w > 0.0 && h > 0.0)) return false;
  if (confidence && !(*confidence >= 0.0 && *confidence <= 1.0)) return false;
  return true;
}

bool BoundingBox::within(int width, int height) const {
  return valid() && x >= 0.0 && y >= 0.0 && right() <= width && bottom() <= height;
}

BoundingBox clip_box(const BoundingBox& b, int width, int height) {
  BoundingBox out = b;
  const Real x0 = std::clamp(b.x, 0.0, static_cast<Real>(width));
  const Real y0 = std::clamp(b.y, 0.0, static_cast<Real>(height));
  const Real x1 = std::clamp(b.right(), 0.0, static_cast<Real>(width));
  const Real y1 = std::clamp(b.bottom(), 0.0, static_cast<Real>(height));
  out.x = x0;
  out.y = y0;
  out.w = x1 - x0;
  out.h = y1 - y0;
  return out;
}

void require_valid_box(const BoundingBox& b, const char* context) {
  if (!b.valid()) {
    throw InvalidBoxError(std::string(context) + ": degenerate box [" +
                          std::to_string(b.x) + ", " + std::to_string(b.y) + ", " +
                          std::to_string(b.w) + ", " + std::to_string(b.h) + "]");
  }
}

int JointModelConfig::downsampling_factor() const {
  const int head_stride = 1 << static_cast<int>(head.stage_channels.size());
  const int denoiser_factor = denoiser.arch == DenoiserArch::kUNet ? 4 : 1;
  return std::max(head_stride, denoiser_factor);
}

void JointModelConfig::validate() const {
  if (channels < 1) throw ConfigError("model.channels must be >= 1");
  if (image_side < 1) throw ConfigError("model.image_side must be >= 1");
  if (image_side % downsampling_factor() != 0) {
    throw ConfigError("model.image_side = " + std::to_string(image_side) +
                      " is not divisible by the downsampling factor " +
                      std::to_string(downsampling_factor()));
  }
  if (!(lambda_det >= 0.0)) throw ConfigError("model.lambda_det must be >= 0");
  if (head_t_max < 0) throw ConfigError("model.head_t_max must be >= 0");
  if (!(head.score_threshold >= 0.0 && head.score_threshold <= 1.0)) {
    throw ConfigError("head.score_threshold must lie in [0, 1]");
  }
  if (!(head.negative_iou <= head.positive_iou)) {
    throw ConfigError("head.negative_iou must not exceed head.positive_iou");
  }
  for (const auto& a : head.anchors) {
    if (!(a.w > 0.0 && a.h > 0.0)) throw ConfigError("head.anchors must be positive");
  }
}

JointLossTerms joint_loss_graph(const Tensor& x0,
                                std::span<const std::vector<BoundingBox>> gt_boxes,
                                std::span<const int> t, const VarianceSchedule& s,
                                const Denoiser& denoiser, const DetectionHead& head,
                                const Tensor& noise, const JointModelConfig& cfg) {
  const Shape xs = x0.shape();
  if (static_cast<int>(gt_boxes.size()) != xs.n) {
    throw ShapeError("joint_loss: box lists do not match batch size");
  }
  for (const auto& boxes : gt_boxes) {
    for (const auto& b : boxes) require_valid_box(b, "joint_loss ground truth");
  }
  const Tensor x_t = q_sample_batch(x0, t, s, noise);
  const ag::Var x0_pred = denoiser.forward(ag::constant(x_t), t);
  require_same_shape(x0_pred.shape(), xs, "denoiser output");

  JointLossTerms out;
  out.l_diff = ag::l1_mean(x0_pred, ag::constant(x0));

  const ag::Var head_in =
      (cfg.detach_head_input || cfg.lambda_det == 0.0) ? ag::detach(x0_pred) : x0_pred;
  if (cfg.head_t_max > 0) {
    std::vector<int> keep;
    std::vector<std::vector<BoundingBox>> kept_boxes;
    for (int n = 0; n < xs.n; ++n) {
      if (t[n] <= cfg.head_t_max) {
        keep.push_back(n);
        kept_boxes.push_back(gt_boxes[n]);
      }
    }
    if (keep.empty()) {
      out.l_det = ag::constant(Tensor::scalar(0.0));
    } else {
      const Real frac = static_cast<Real>(keep.size()) / xs.n;
      out.l_det = ag::scale(
          head.detection_loss(ag::select_samples(head_in, std::move(keep)), kept_boxes),
          frac);
    }
  } else {
    out.l_det = head.detection_loss(head_in, gt_boxes);
  }

  if (cfg.lambda_det == 0.0) {
    const ag::Var terms[1] = {out.l_diff};
    out.total = ag::sum_scalars(terms);
  } else {
    const ag::Var terms[2] = {out.l_diff, ag::scale(out.l_det, cfg.lambda_det)};
    out.total = ag::sum_scalars(terms);
  }
  return out;
}

JointLossValue joint_loss(const ImageTensor& x0, const std::vector<BoundingBox>& gt_boxes,
                          int t, const VarianceSchedule& s, const Denoiser& denoiser,
                          const DetectionHead& head, const NoiseDraw& noise,
                          const JointModelConfig& cfg) {
  require_same_shape(noise.epsilon.shape(), x0.shape(), "joint_loss noise");
  for (const auto& b : gt_boxes) {
    require_valid_box(b, "joint_loss ground truth");
    if (!b.within(x0.width(), x0.height())) {
      throw InvalidBoxError("joint_loss: ground-truth box outside the image");
    }
  }
  ag::NoGradGuard guard;
  const int ts[1] = {t};
  const std::vector<BoundingBox> boxes[1] = {gt_boxes};
  const auto terms =
      joint_loss_graph(x0.pixels, boxes, ts, s, denoiser, head, noise.epsilon, cfg);
  return {terms.total.item(), terms.l_diff.item(), terms.l_det.item()};
}

std::vector<BoundingBox> non_max_suppression(std::vector<BoundingBox> boxes,
                                             Real iou_threshold, int max_keep) {
  std::stable_sort(boxes.begin(), boxes.end(), [](const auto& a, const auto& b) {
    return a.confidence.value_or(0.0) > b.confidence.value_or(0.0);
  });
  std::vector<BoundingBox> kept;
  for (const auto& b : boxes) {
    if (max_keep > 0 && static_cast<int>(kept.size()) >= max_keep) break;
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const auto& k) {
      return k.category == b.category && iou(k, b) > iou_threshold;
    });
    if (!suppressed) kept.push_back(b);
  }
  return kept;
}

std::vector<BoundingBox> predict_labels(const ImageTensor& image,
                                        const DetectionHead& head, Real score_threshold) {
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0)) {
    throw std::domain_error("predict_labels: score_threshold must lie in [0, 1]");
  }
  std::vector<BoundingBox> out;
  for (auto b : head.detect(image, score_threshold)) {
    b = clip_box(b, image.width(), image.height());
    if (!(b.w > 0.0 && b.h > 0.0)) continue;
    if (b.confidence.value_or(0.0) >= score_threshold) out.push_back(b);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.confidence.value_or(0.0) > b.confidence.value_or(0.0);
  });
  return out;
}

}  // namespace diffaug
