#include <algorithm>
#include <cmath>

#include "diffaug/detection_eval.hpp"
#include "diffaug/errors.hpp"
#include "diffaug/models.hpp"

namespace diffaug {

namespace {

constexpr int kFieldsPerAnchor = 5;  // objectness, dx, dy, dw, dh
constexpr Real kMaxLogScale = 4.0;

Real bce_with_logits(Real z, Real y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

Real sigmoid(Real z) { return 1.0 / (1.0 + std::exp(-z)); }

Real smooth_l1(Real d, Real beta) {
  const Real a = std::abs(d);
  return a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
}

Real smooth_l1_grad(Real d, Real beta) {
  if (std::abs(d) < beta) return d / beta;
  return d > 0.0 ? 1.0 : -1.0;
}

}  // namespace

AnchorHead::AnchorHead(const HeadConfig& cfg, int channels, std::uint64_t seed)
    : cfg_(cfg) {
  if (cfg_.stage_channels.empty()) throw ConfigError("head.stage_channels must not be empty");
  if (cfg_.anchors.empty()) throw ConfigError("head.anchors must not be empty");
  Rng rng(seed);
  int in = channels;
  for (std::size_t i = 0; i < cfg_.stage_channels.size(); ++i) {
    const int out = cfg_.stage_channels[i];
    if (out < 1) throw ConfigError("head.stage_channels entries must be >= 1");
    down_.emplace_back("head.down" + std::to_string(i), in, out, 3, 2, rng);
    if (cfg_.extra_convs) {
      extra_.emplace_back("head.conv" + std::to_string(i), out, out, 3, 1, rng);
    }
    in = out;
  }
  predictor_ = nn::Conv2d("head.predictor", in,
                          static_cast<int>(cfg_.anchors.size()) * kFieldsPerAnchor, 1,
                          1, rng, 0.1);
}

ag::Var AnchorHead::forward(const ag::Var& images) const {
  ag::Var h = images;
  for (std::size_t i = 0; i < down_.size(); ++i) {
    h = ag::silu(down_[i](h));
    if (cfg_.extra_convs) h = ag::silu(extra_[i](h));
  }
  return predictor_(h);
}

nn::ParameterList AnchorHead::parameters() const {
  nn::ParameterList out;
  for (std::size_t i = 0; i < down_.size(); ++i) {
    down_[i].collect(out);
    if (cfg_.extra_convs) extra_[i].collect(out);
  }
  predictor_.collect(out);
  return out;
}

BoundingBox AnchorHead::anchor_box(int a, int row, int col) const {
  const Real s = stride();
  const AnchorSize& sz = cfg_.anchors[static_cast<std::size_t>(a)];
  const Real cx = (col + 0.5) * s;
  const Real cy = (row + 0.5) * s;
  return BoundingBox{cx - 0.5 * sz.w, cy - 0.5 * sz.h, sz.w, sz.h, kPedestrianCategory, std::nullopt};
}

AnchorTargets assign_anchors(const AnchorHead& head, int height, int width,
                             std::span<const BoundingBox> gts) {
  const HeadConfig& cfg = head.config();
  const int s = head.stride();
  const int fh = height / s;
  const int fw = width / s;
  const int na = static_cast<int>(cfg.anchors.size());
  const std::size_t count = static_cast<std::size_t>(na) * fh * fw;
  AnchorTargets tgt;
  tgt.labels.assign(count, 0);
  tgt.deltas.assign(count * 4, 0.0);
  if (gts.empty()) return tgt;

  for (const auto& g : gts) require_valid_box(g, "anchor assignment");

  std::vector<int> best_gt(count, -1);
  std::vector<Real> best_iou(count, 0.0);
  std::vector<std::size_t> gt_best_anchor(gts.size(), count);
  std::vector<Real> gt_best_iou(gts.size(), 0.0);
  for (int a = 0; a < na; ++a)
    for (int r = 0; r < fh; ++r)
      for (int c = 0; c < fw; ++c) {
        const std::size_t k = (static_cast<std::size_t>(a) * fh + r) * fw + c;
        const BoundingBox anchor = head.anchor_box(a, r, c);
        for (std::size_t g = 0; g < gts.size(); ++g) {
          const Real v = iou(anchor, gts[g]);
          if (v > best_iou[k]) {
            best_iou[k] = v;
            best_gt[k] = static_cast<int>(g);
          }
          if (v > gt_best_iou[g]) {
            gt_best_iou[g] = v;
            gt_best_anchor[g] = k;
          }
        }
      }

  for (std::size_t k = 0; k < count; ++k) {
    if (best_iou[k] >= cfg.positive_iou) {
      tgt.labels[k] = 1;
    } else if (best_iou[k] >= cfg.negative_iou) {
      tgt.labels[k] = -1;
    }
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const std::size_t k = gt_best_anchor[g];
    if (k < count) {
      tgt.labels[k] = 1;
      best_gt[k] = static_cast<int>(g);
    }
  }

  for (int a = 0; a < na; ++a)
    for (int r = 0; r < fh; ++r)
      for (int c = 0; c < fw; ++c) {
        const std::size_t k = (static_cast<std::size_t>(a) * fh + r) * fw + c;
        if (tgt.labels[k] != 1) continue;
        const BoundingBox anc = head.anchor_box(a, r, c);
        const BoundingBox& g = gts[static_cast<std::size_t>(best_gt[k])];
        tgt.deltas[k * 4 + 0] = (g.center_x() - anc.center_x()) / anc.w;
        tgt.deltas[k * 4 + 1] = (g.center_y() - anc.center_y()) / anc.h;
        tgt.deltas[k * 4 + 2] = std::log(g.w / anc.w);
        tgt.deltas[k * 4 + 3] = std::log(g.h / anc.h);
      }
  return tgt;
}

ag::Var AnchorHead::detection_loss(const ag::Var& images,
                                   std::span<const std::vector<BoundingBox>> gts) const {
  const Shape is = images.shape();
  if (static_cast<int>(gts.size()) != is.n) {
    throw ShapeError("detection_loss: " + std::to_string(gts.size()) +
                     " box lists for batch of " + std::to_string(is.n));
  }
  const ag::Var raw = forward(images);
  const Shape rs = raw.shape();
  const int na = static_cast<int>(cfg_.anchors.size());
  const std::size_t plane = rs.plane();
  const Real beta = cfg_.smooth_l1_beta;

  std::vector<AnchorTargets> targets;
  targets.reserve(gts.size());
  for (const auto& g : gts) targets.push_back(assign_anchors(*this, is.h, is.w, g));

  // Gradient of the loss w.r.t. the raw map, filled alongside the value.
  Tensor draw(rs, 0.0);
  Real total = 0.0;
  const Real inv_batch = 1.0 / static_cast<Real>(rs.n);
  for (int n = 0; n < rs.n; ++n) {
    const AnchorTargets& tg = targets[static_cast<std::size_t>(n)];
    std::size_t npos = 0, nneg = 0;
    for (int l : tg.labels) {
      npos += l == 1;
      nneg += l == 0;
    }
    const Real wpos = npos ? 1.0 / static_cast<Real>(npos) : 0.0;
    const Real wneg = nneg ? 1.0 / static_cast<Real>(nneg) : 0.0;
    for (int a = 0; a < na; ++a) {
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t k = static_cast<std::size_t>(a) * plane + p;
        const int label = tg.labels[k];
        if (label < 0) continue;
        const std::size_t base =
            (static_cast<std::size_t>(n) * na * kFieldsPerAnchor +
             static_cast<std::size_t>(a) * kFieldsPerAnchor) * plane + p;
        const Real z = raw.value()[base];
        const Real w = label == 1 ? wpos : wneg;
        total += inv_batch * w * bce_with_logits(z, label);
        draw[base] = inv_batch * w * (sigmoid(z) - label);
        if (label == 1) {
          for (int j = 0; j < 4; ++j) {
            const std::size_t idx = base + static_cast<std::size_t>(j + 1) * plane;
            const Real d = raw.value()[idx] - tg.deltas[k * 4 + j];
            total += inv_batch * wpos * smooth_l1(d, beta);
            draw[idx] = inv_batch * wpos * smooth_l1_grad(d, beta);
          }
        }
      }
    }
  }
  return ag::make_result(Tensor::scalar(total), {raw}, [draw](ag::Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const Real up = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * draw[i];
  });
}

std::vector<BoundingBox> AnchorHead::detect(const ImageTensor& image,
                                            Real min_score) const {
  const ImageTensor input =
      image.range == ValueRange::kUnit ? to_symmetric(image) : image;
  ag::NoGradGuard guard;
  const ag::Var raw = forward(ag::constant(input.pixels));
  const Shape rs = raw.shape();
  const std::size_t plane = rs.plane();
  const int na = static_cast<int>(cfg_.anchors.size());
  std::vector<BoundingBox> cands;
  for (int a = 0; a < na; ++a) {
    for (int r = 0; r < rs.h; ++r) {
      for (int c = 0; c < rs.w; ++c) {
        const std::size_t p = static_cast<std::size_t>(r) * rs.w + c;
        const std::size_t base = static_cast<std::size_t>(a) * kFieldsPerAnchor * plane + p;
        const Real conf = sigmoid(raw.value()[base]);
        if (conf < min_score) continue;
        const BoundingBox anc = anchor_box(a, r, c);
        const Real dx = raw.value()[base + plane];
        const Real dy = raw.value()[base + 2 * plane];
        const Real dw = std::clamp(raw.value()[base + 3 * plane], -kMaxLogScale, kMaxLogScale);
        const Real dh = std::clamp(raw.value()[base + 4 * plane], -kMaxLogScale, kMaxLogScale);
        const Real cx = anc.center_x() + dx * anc.w;
        const Real cy = anc.center_y() + dy * anc.h;
        const Real w = anc.w * std::exp(dw);
        const Real h = anc.h * std::exp(dh);
        BoundingBox b = clip_box({cx - 0.5 * w, cy - 0.5 * h, w, h, kPedestrianCategory, std::nullopt}, image.width(),
                                 image.height());
        if (!(b.w > 1e-6 && b.h > 1e-6)) continue;
        b.category = kPedestrianCategory;
        b.confidence = conf;
        cands.push_back(b);
      }
    }
  }
  return non_max_suppression(std::move(cands), cfg_.nms_iou, cfg_.max_detections);
}

}  // namespace diffaug
