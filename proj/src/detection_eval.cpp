#include "diffaug/detection_eval.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

#include "diffaug/errors.hpp"

namespace diffaug {

Real iou(const BoundingBox& a, const BoundingBox& b) {
  if (!(a.w > 0.0 && a.h > 0.0) || !(b.w > 0.0 && b.h > 0.0)) {
    throw std::domain_error("iou: degenerate box (w and h must be > 0)");
  }
  const Real iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const Real ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const Real inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

std::vector<Match> match_predictions(std::span<const BoundingBox> preds,
                                     std::span<const BoundingBox> gts,
                                     Real iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw std::domain_error("match_predictions: iou_threshold must lie in (0, 1]");
  }
  for (std::size_t i = 1; i < preds.size(); ++i) {
    if (preds[i].confidence.value_or(0.0) > preds[i - 1].confidence.value_or(0.0)) {
      throw OrderingError("match_predictions: predictions not sorted by descending "
                          "confidence at index " + std::to_string(i));
    }
  }
  std::vector<bool> taken(gts.size(), false);
  std::vector<Match> out;
  out.reserve(preds.size());
  for (std::size_t p = 0; p < preds.size(); ++p) {
    Match m{p, std::nullopt};
    Real best = iou_threshold;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const Real v = iou(preds[p], gts[g]);
      if (v >= best && (!m.gt_index || v > best)) {
        best = v;
        m.gt_index = g;
      }
    }
    if (m.gt_index) taken[*m.gt_index] = true;
    out.push_back(m);
  }
  return out;
}

const char* to_string(ApInterpolation m) {
  return m == ApInterpolation::kCoco101 ? "coco101" : "all_points";
}

ApInterpolation parse_interpolation(const std::string& name) {
  if (name == "coco101" || name == "coco") return ApInterpolation::kCoco101;
  if (name == "all_points" || name == "all" || name == "voc") return ApInterpolation::kAllPoints;
  throw ConfigError("unknown AP interpolation '" + name + "' (use coco101 or all_points)");
}

Real integrate_pr_curve(std::span<const std::size_t> cumulative_tp, std::size_t num_gt,
                        ApInterpolation interpolation) {
  const std::size_t n = cumulative_tp.size();
  if (num_gt == 0) return n == 0 ? 1.0 : 0.0;
  // envelope[k] = max precision at rank >= k.
  std::vector<Real> envelope(n + 1, 0.0);
  for (std::size_t k = n; k-- > 0;) {
    const Real prec = static_cast<Real>(cumulative_tp[k]) / static_cast<Real>(k + 1);
    envelope[k] = std::max(envelope[k + 1], prec);
  }
  if (interpolation == ApInterpolation::kCoco101) {
    Real sum = 0.0;
    std::size_t k = 0;
    for (std::size_t level = 0; level <= 100; ++level) {
      // recall(k) >= level / 100, evaluated exactly in integers.
      while (k < n && 100 * cumulative_tp[k] < level * num_gt) ++k;
      if (k < n) sum += envelope[k];
    }
    return sum / 101.0;
  }
  Real area = 0.0;
  std::size_t prev_tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (cumulative_tp[k] > prev_tp) {
      area += static_cast<Real>(cumulative_tp[k] - prev_tp) / num_gt * envelope[k];
      prev_tp = cumulative_tp[k];
    }
  }
  return area;
}

EvalReport average_precision(std::span<const std::vector<BoundingBox>> gts,
                             std::span<const std::vector<BoundingBox>> preds,
                             Real iou_threshold, ApInterpolation interpolation) {
  if (gts.size() != preds.size()) {
    throw ShapeError("average_precision: " + std::to_string(gts.size()) +
                     " ground-truth images vs " + std::to_string(preds.size()) +
                     " prediction images");
  }
  struct Ranked {
    Real confidence;
    bool tp;
  };
  EvalReport report;
  report.iou_threshold = iou_threshold;
  report.interpolation = interpolation;
  std::vector<Ranked> pooled;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    for (const auto& p : preds[i]) {
      if (!p.confidence) {
        throw std::invalid_argument("average_precision: prediction without confidence in image " +
                                    std::to_string(i));
      }
    }
    std::vector<std::size_t> order(preds[i].size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return *preds[i][a].confidence > *preds[i][b].confidence;
    });
    std::vector<BoundingBox> sorted;
    sorted.reserve(order.size());
    for (auto k : order) sorted.push_back(preds[i][k]);
    const auto matches = match_predictions(sorted, gts[i], iou_threshold);

    ImageDiagnostics diag{i, gts[i].size(), preds[i].size(), 0};
    std::vector<bool> tp_by_input(preds[i].size(), false);
    for (const auto& m : matches) {
      if (m.gt_index) {
        tp_by_input[order[m.pred_index]] = true;
        ++diag.num_tp;
      }
    }
    for (std::size_t k = 0; k < preds[i].size(); ++k) {
      pooled.push_back({*preds[i][k].confidence, tp_by_input[k]});
    }
    report.counts.num_gt += gts[i].size();
    report.counts.num_pred += preds[i].size();
    report.counts.num_tp += diag.num_tp;
    report.per_image.push_back(diag);
  }
  report.counts.num_fp = report.counts.num_pred - report.counts.num_tp;

  std::stable_sort(pooled.begin(), pooled.end(),
                   [](const Ranked& a, const Ranked& b) { return a.confidence > b.confidence; });
  std::vector<std::size_t> cumulative(pooled.size());
  std::size_t tp = 0;
  for (std::size_t k = 0; k < pooled.size(); ++k) {
    tp += pooled[k].tp ? 1 : 0;
    cumulative[k] = tp;
    const Real recall =
        report.counts.num_gt ? static_cast<Real>(tp) / report.counts.num_gt : 0.0;
    report.pr_points.push_back({recall, static_cast<Real>(tp) / static_cast<Real>(k + 1)});
  }
  report.ap = integrate_pr_curve(cumulative, report.counts.num_gt, interpolation);
  return report;
}

Real mean_average_precision(std::span<const std::vector<BoundingBox>> gts,
                            std::span<const std::vector<BoundingBox>> preds,
                            Real iou_threshold, ApInterpolation interpolation) {
  std::map<int, int> categories;
  for (const auto& img : gts)
    for (const auto& b : img) categories[b.category] = 1;
  for (const auto& img : preds)
    for (const auto& b : img) categories[b.category] = 1;
  if (categories.empty()) return 1.0;
  Real sum = 0.0;
  for (const auto& [cat, unused] : categories) {
    std::vector<std::vector<BoundingBox>> g(gts.size()), p(preds.size());
    for (std::size_t i = 0; i < gts.size(); ++i)
      for (const auto& b : gts[i])
        if (b.category == cat) g[i].push_back(b);
    for (std::size_t i = 0; i < preds.size(); ++i)
      for (const auto& b : preds[i])
        if (b.category == cat) p[i].push_back(b);
    sum += average_precision(g, p, iou_threshold, interpolation).ap;
  }
  return sum / static_cast<Real>(categories.size());
}

}  // namespace diffaug
