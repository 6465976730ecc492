#include "diffaug/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>

#include "diffaug/checkpoint.hpp"
#include "diffaug/config.hpp"
#include "diffaug/errors.hpp"
#include "diffaug/random.hpp"

using nlohmann::json;

namespace diffaug {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(optimizer.learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (!(optimizer.beta1 >= 0 && optimizer.beta1 < 1)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(optimizer.beta2 >= 0 && optimizer.beta2 < 1)) throw ConfigError("beta2 must lie in [0, 1)");
  if (!(optimizer.epsilon > 0)) throw ConfigError("epsilon must be > 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (!(ema_decay >= 0 && ema_decay < 1)) throw ConfigError("ema_decay must lie in [0, 1)");
}

void GenerationConfig::validate() const {
  if (n_images < 1) throw ConfigError("n_images must be >= 1");
  if (!(score_threshold >= 0 && score_threshold <= 1)) {
    throw ConfigError("score_threshold must lie in [0, 1]");
  }
}

namespace {

struct Letterboxed {
  AnnotatedImage item;
  Real sx = 1.0;
  Real sy = 1.0;
  Real ox = 0.0;
  Real oy = 0.0;
};

Letterboxed letterbox_impl(const AnnotatedImage& in, int side) {
  const int h = in.image.height(), w = in.image.width();
  Letterboxed out;
  if (h == side && w == side) {
    out.item = in;
    return out;
  }
  const Real scale = static_cast<Real>(side) / std::max(h, w);
  const int nh = std::clamp(static_cast<int>(std::lround(h * scale)), 1, side);
  const int nw = std::clamp(static_cast<int>(std::lround(w * scale)), 1, side);
  ImageTensor small = resize_image(in.image, nh, nw);
  const int c = in.image.channels();
  const int oy = (side - nh) / 2, ox = (side - nw) / 2;
  ImageTensor canvas = ImageTensor::filled(c, side, side, 0.5, ValueRange::kUnit);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < nh; ++y) {
      for (int x = 0; x < nw; ++x) canvas.at(ch, y + oy, x + ox) = small.at(ch, y, x);
    }
  }
  out.sx = static_cast<Real>(nw) / w;
  out.sy = static_cast<Real>(nh) / h;
  out.ox = ox;
  out.oy = oy;
  out.item.image = std::move(canvas);
  out.item.source = in.source;
  out.item.id = in.id;
  for (const auto& b : in.annotations) {
    BoundingBox s = b;
    s.x = b.x * out.sx + ox;
    s.y = b.y * out.sy + oy;
    s.w = b.w * out.sx;
    s.h = b.h * out.sy;
    s = clip_box(s, side, side);
    if (s.w >= 0.5 && s.h >= 0.5) out.item.annotations.push_back(s);
  }
  return out;
}

/// Training view of a dataset: symmetric-range images at a fixed side.
struct Prepared {
  std::vector<Tensor> images;  // (1, c, side, side) in [-1, 1]
  std::vector<std::vector<BoundingBox>> boxes;
  std::vector<std::int64_t> ids;
};

Prepared prepare(const DetectionDataset& d, int side, int channels) {
  Prepared p;
  for (const auto& item : d.items) {
    if (item.image.channels() != channels) {
      throw ShapeError("image " + std::to_string(item.id) + " has " +
                       std::to_string(item.image.channels()) + " channels, expected " +
                       std::to_string(channels));
    }
    Letterboxed lb = letterbox_impl(item, side);
    p.images.push_back(to_symmetric(lb.item.image).pixels);
    p.boxes.push_back(std::move(lb.item.annotations));
    p.ids.push_back(item.id);
  }
  return p;
}

void hflip_sample(Tensor& img, std::vector<BoundingBox>& boxes) {
  const Shape s = img.shape();
  for (int c = 0; c < s.c; ++c) {
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w / 2; ++x) std::swap(img.at(0, c, y, x), img.at(0, c, y, s.w - 1 - x));
    }
  }
  for (auto& b : boxes) b.x = s.w - b.x - b.w;
}

std::string rng_state_string(const Rng& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

std::string batch_ids(const Prepared& p, std::span<const std::size_t> idx) {
  std::string out;
  for (std::size_t i : idx) {
    if (!out.empty()) out += ", ";
    out += std::to_string(p.ids[i]);
  }
  return out;
}

json state_to_json(const TrainingState& s) {
  return {{"step", s.step},
          {"epoch", s.epoch},
          {"seed", s.seed},
          {"rng_state", s.rng_state},
          {"config_hash", s.config_hash}};
}

TrainingState state_from_json(const json& j) {
  TrainingState s;
  s.step = j.value("step", std::int64_t{0});
  s.epoch = j.value("epoch", 0);
  s.seed = j.value("seed", std::uint64_t{0});
  s.rng_state = j.value("rng_state", std::string());
  s.config_hash = j.value("config_hash", std::string());
  return s;
}

std::string epoch_checkpoint_name(const std::string& prefix, int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_epoch%04d.ckpt", epoch);
  return prefix + buf;
}

Checkpoint read_kind(const std::filesystem::path& path, const std::string& kind) {
  Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.kind != kind) {
    throw IoError(path.string() + ": holds a " + ckpt.kind + " checkpoint, expected " + kind);
  }
  return ckpt;
}

template <typename F>
auto meta_field(const std::filesystem::path& path, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed checkpoint metadata: " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(path.string() + ": malformed checkpoint metadata: " + e.what());
  }
}

}  // namespace

AnnotatedImage letterbox(const AnnotatedImage& item, int side) {
  if (side < 1) throw std::domain_error("letterbox side must be >= 1");
  return letterbox_impl(item, side).item;
}

JointModel JointModel::create(const JointModelConfig& cfg, const ScheduleConfig& sched,
                              std::uint64_t seed) {
  cfg.validate();
  return JointModel{cfg, sched, sched.build(),
                    make_denoiser(cfg.denoiser, cfg.channels, derive_seed(seed, 11)),
                    std::make_unique<AnchorHead>(cfg.head, cfg.channels, derive_seed(seed, 12))};
}

nn::ParameterList JointModel::parameters() const {
  nn::ParameterList out = denoiser->parameters();
  for (auto& p : head->parameters()) out.push_back(p);
  return out;
}

JointLossValue evaluate_joint_loss(const JointModel& model, const DetectionDataset& data,
                                   std::uint64_t seed) {
  const int side = model.config.image_side, c = model.config.channels;
  Prepared p = prepare(data, side, c);
  if (p.images.empty()) return {};
  ag::NoGradGuard guard;
  JointLossValue acc;
  const std::size_t chunk = 16;
  for (std::size_t start = 0; start < p.images.size(); start += chunk) {
    const std::size_t end = std::min(p.images.size(), start + chunk);
    std::vector<Tensor> xs(p.images.begin() + start, p.images.begin() + end);
    std::vector<int> t;
    std::vector<Tensor> eps;
    for (std::size_t i = start; i < end; ++i) {
      Rng rng(derive_seed(seed, 2 * i));
      t.push_back(std::uniform_int_distribution<int>(1, model.schedule.T())(rng));
      eps.push_back(make_noise(Shape{1, c, side, side}, derive_seed(seed, 2 * i + 1)).epsilon);
    }
    auto terms = joint_loss_graph(stack(xs), std::span(p.boxes).subspan(start, end - start), t,
                                  model.schedule, *model.denoiser, *model.head, stack(eps),
                                  model.config);
    const Real n = static_cast<Real>(end - start);
    acc.total += terms.total.item() * n;
    acc.l_diff += terms.l_diff.item() * n;
    acc.l_det += terms.l_det.item() * n;
  }
  const Real n = static_cast<Real>(p.images.size());
  acc.total /= n;
  acc.l_diff /= n;
  acc.l_det /= n;
  return acc;
}

JointTrainResult train_joint(const DetectionDataset& real_train, const JointModelConfig& model_cfg,
                             const ScheduleConfig& sched_cfg, const TrainConfig& cfg) {
  cfg.validate();
  if (real_train.items.empty()) throw TrainingError("training set is empty");
  JointTrainResult r{JointModel::create(model_cfg, sched_cfg, cfg.seed), {}, {}, 0.0, 0.0};
  JointModel& m = r.model;
  const int side = model_cfg.image_side, c = model_cfg.channels;
  Prepared p = prepare(real_train, side, c);
  const std::uint64_t eval_seed = derive_seed(cfg.seed, 2);
  r.initial_loss = evaluate_joint_loss(m, real_train, eval_seed).total;

  r.state.seed = cfg.seed;
  r.state.config_hash = fnv1a_hex(
      json{{"model", to_json(model_cfg)}, {"schedule", to_json(sched_cfg)}, {"train", to_json(cfg)}}
          .dump());

  Rng rng(derive_seed(cfg.seed, 1));
  nn::Adam opt(m.parameters(), cfg.optimizer);
  std::optional<nn::Ema> ema;
  if (cfg.ema_decay > 0.0) ema.emplace(m.parameters(), cfg.ema_decay);
  std::vector<std::size_t> order(p.images.size());
  std::iota(order.begin(), order.end(), 0);
  std::uniform_int_distribution<int> pick_t(1, m.schedule.T());
  std::normal_distribution<Real> normal(0.0, 1.0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<Tensor> xs;
      std::vector<std::vector<BoundingBox>> gts;
      std::vector<int> t;
      for (std::size_t i : idx) {
        xs.push_back(p.images[i]);
        gts.push_back(p.boxes[i]);
        t.push_back(pick_t(rng));
      }
      Tensor x0 = stack(xs);
      Tensor eps = randn(x0.shape(), rng);
      opt.zero_grad();
      auto terms = joint_loss_graph(x0, gts, t, m.schedule, *m.denoiser, *m.head, eps, m.config);
      const Real total = terms.total.item();
      if (!std::isfinite(total)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(r.state.step + 1) + " (image ids: " +
                            batch_ids(p, idx) + ")");
      }
      ag::backward(terms.total);
      opt.step();
      if (ema) ema->update();
      ++r.state.step;
      r.log.push_back({r.state.step, epoch, terms.l_diff.item(), terms.l_det.item(), total});
    }
    r.state.epoch = epoch;
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 &&
        !cfg.checkpoint_dir.empty()) {
      r.state.rng_state = rng_state_string(rng);
      if (ema) ema->swap();
      save_joint_checkpoint(m, r.state, cfg.checkpoint_dir / epoch_checkpoint_name("joint", epoch));
      if (ema) ema->swap();
    }
  }
  r.state.rng_state = rng_state_string(rng);
  if (ema) ema->swap();
  r.final_loss = evaluate_joint_loss(m, real_train, eval_seed).total;
  if (!cfg.loss_log.empty()) write_loss_log(r.log, cfg.loss_log);
  return r;
}

void save_joint_checkpoint(const JointModel& model, const TrainingState& state,
                           const std::filesystem::path& path) {
  Checkpoint ckpt;
  ckpt.kind = "joint";
  ckpt.meta = {{"model", to_json(model.config)},
               {"schedule", to_json(model.schedule_config)},
               {"state", state_to_json(state)}};
  store_parameters(ckpt, model.parameters());
  write_checkpoint(ckpt, path);
}

JointModel load_joint_checkpoint(const std::filesystem::path& path, TrainingState* state) {
  Checkpoint ckpt = read_kind(path, "joint");
  JointModel m = meta_field(path, [&] {
    return JointModel::create(model_from_json(ckpt.meta.at("model"), "model"),
                              schedule_from_json(ckpt.meta.at("schedule"), "schedule"), 0);
  });
  load_parameters(ckpt, m.parameters());
  if (state) *state = meta_field(path, [&] { return state_from_json(ckpt.meta.at("state")); });
  return m;
}

DetectionDataset generate_dataset(const JointModel& model, const GenerationConfig& gcfg,
                                  const std::string& checkpoint_hash,
                                  const std::optional<ScheduleConfig>& expected_schedule) {
  gcfg.validate();
  if (expected_schedule) {
    const auto& e = *expected_schedule;
    const auto& s = model.schedule_config;
    if (e.T != s.T || e.beta_start != s.beta_start || e.beta_end != s.beta_end ||
        e.reverse_variance != s.reverse_variance) {
      throw ConfigError("schedule mismatch: checkpoint was trained with " +
                        to_json(s).dump() + ", config requests " + to_json(e).dump());
    }
  }
  const int side = model.config.image_side, c = model.config.channels;
  DenoiserFn fn = model.denoiser->as_fn();
  DetectionDataset out;
  for (int i = 0; i < gcfg.n_images; ++i) {
    ImageTensor x = sample(model.schedule, c, side, side, fn,
                           derive_seed(gcfg.seed, static_cast<std::uint64_t>(i)),
                           model.schedule_config.reverse_variance);
    AnnotatedImage item;
    item.image = quantize_8bit(to_unit(x));
    item.annotations = predict_labels(item.image, *model.head, gcfg.score_threshold);
    item.source = SourceTag::kGenerated;
    item.id = i + 1;
    out.items.push_back(std::move(item));
  }
  out.provenance = {{"source", "generated"},
                    {"checkpoint_hash", checkpoint_hash},
                    {"seed", gcfg.seed},
                    {"n_images", gcfg.n_images},
                    {"score_threshold", gcfg.score_threshold},
                    {"schedule", to_json(model.schedule_config)}};
  return out;
}

Detector Detector::create(const HeadConfig& cfg, int side, int channels, std::uint64_t seed) {
  if (side < 1) throw ConfigError("detector side must be >= 1");
  Detector d;
  d.config = cfg;
  d.side = side;
  d.channels = channels;
  d.head = std::make_unique<AnchorHead>(cfg, channels, seed);
  return d;
}

DetectorTrainResult train_detector(const DetectionDataset& train_set, const HeadConfig& head_cfg,
                                   int side, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.items.empty()) throw TrainingError("training set is empty");
  const int c = train_set.items.front().image.channels();
  DetectorTrainResult r{Detector::create(head_cfg, side, c, derive_seed(cfg.seed, 21)), {}, {}};
  Prepared p = prepare(train_set, side, c);
  r.state.seed = cfg.seed;
  r.state.config_hash = fnv1a_hex(
      json{{"head", to_json(head_cfg)}, {"side", side}, {"train", to_json(cfg)}}.dump());

  Rng rng(derive_seed(cfg.seed, 1));
  nn::Adam opt(r.detector.head->parameters(), cfg.optimizer);
  std::optional<nn::Ema> ema;
  if (cfg.ema_decay > 0.0) ema.emplace(r.detector.head->parameters(), cfg.ema_decay);
  std::vector<std::size_t> order(p.images.size());
  std::iota(order.begin(), order.end(), 0);
  std::bernoulli_distribution flip(0.5);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<Tensor> xs;
      std::vector<std::vector<BoundingBox>> gts;
      for (std::size_t i : idx) {
        Tensor img = p.images[i];
        std::vector<BoundingBox> boxes = p.boxes[i];
        if (cfg.hflip && flip(rng)) hflip_sample(img, boxes);
        xs.push_back(std::move(img));
        gts.push_back(std::move(boxes));
      }
      opt.zero_grad();
      ag::Var loss = r.detector.head->detection_loss(ag::constant(stack(xs)), gts);
      const Real l = loss.item();
      if (!std::isfinite(l)) {
        throw TrainingError("non-finite detector loss at epoch " + std::to_string(epoch) +
                            ", step " + std::to_string(r.state.step + 1) + " (image ids: " +
                            batch_ids(p, idx) + ")");
      }
      ag::backward(loss);
      opt.step();
      if (ema) ema->update();
      ++r.state.step;
      r.log.push_back({r.state.step, epoch, 0.0, l, l});
    }
    r.state.epoch = epoch;
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 &&
        !cfg.checkpoint_dir.empty()) {
      r.state.rng_state = rng_state_string(rng);
      if (ema) ema->swap();
      save_detector_checkpoint(r.detector, r.state,
                               cfg.checkpoint_dir / epoch_checkpoint_name("detector", epoch));
      if (ema) ema->swap();
    }
  }
  r.state.rng_state = rng_state_string(rng);
  if (ema) ema->swap();
  if (!cfg.loss_log.empty()) write_loss_log(r.log, cfg.loss_log);
  return r;
}

void save_detector_checkpoint(const Detector& det, const TrainingState& state,
                              const std::filesystem::path& path) {
  Checkpoint ckpt;
  ckpt.kind = "detector";
  ckpt.meta = {{"head", to_json(det.config)},
               {"side", det.side},
               {"channels", det.channels},
               {"state", state_to_json(state)}};
  store_parameters(ckpt, det.head->parameters());
  write_checkpoint(ckpt, path);
}

Detector load_detector_checkpoint(const std::filesystem::path& path, TrainingState* state) {
  Checkpoint ckpt = read_kind(path, "detector");
  Detector d = meta_field(path, [&] {
    return Detector::create(head_from_json(ckpt.meta.at("head"), "head"),
                            ckpt.meta.at("side").get<int>(), ckpt.meta.at("channels").get<int>(),
                            0);
  });
  load_parameters(ckpt, d.head->parameters());
  if (state) *state = meta_field(path, [&] { return state_from_json(ckpt.meta.at("state")); });
  return d;
}

std::vector<std::vector<BoundingBox>> detect_dataset(const Detector& det,
                                                      const DetectionDataset& data,
                                                      Real min_score) {
  std::vector<std::vector<BoundingBox>> out;
  out.reserve(data.items.size());
  for (const auto& item : data.items) {
    Letterboxed lb = letterbox_impl(item, det.side);
    std::vector<BoundingBox> boxes;
    for (const auto& b : det.head->detect(lb.item.image, min_score)) {
      BoundingBox o = b;
      o.x = (b.x - lb.ox) / lb.sx;
      o.y = (b.y - lb.oy) / lb.sy;
      o.w = b.w / lb.sx;
      o.h = b.h / lb.sy;
      o = clip_box(o, item.image.width(), item.image.height());
      if (o.w > 0 && o.h > 0) boxes.push_back(o);
    }
    std::stable_sort(boxes.begin(), boxes.end(), [](const BoundingBox& a, const BoundingBox& b) {
      return a.confidence.value_or(0) > b.confidence.value_or(0);
    });
    out.push_back(std::move(boxes));
  }
  return out;
}

EvalReport evaluate_detector(const Detector& det, const DetectionDataset& data,
                             const EvaluationConfig& cfg) {
  auto preds = detect_dataset(det, data, cfg.min_score);
  std::vector<std::vector<BoundingBox>> gts;
  gts.reserve(data.items.size());
  for (const auto& item : data.items) gts.push_back(item.annotations);
  return average_precision(gts, preds, cfg.iou_threshold, cfg.interpolation);
}

std::vector<ExperimentRowResult> run_experiment(std::span<const ExperimentRow> rows,
                                                const DetectionDataset& eval_set,
                                                const DetectorSettings& settings,
                                                std::span<const NamedDataset> extra_evals) {
  std::vector<ExperimentRowResult> out;
  for (const auto& row : rows) {
    ExperimentRowResult r;
    r.base_name = row.base_name;
    r.augmentation = row.augment_name.empty() ? "None" : row.augment_name;
    r.resolution = row.resolution;
    try {
      if (!row.base) throw ConfigError("row has no base dataset");
      DetectionDataset train = row.augment ? mix_datasets(*row.base, *row.augment) : *row.base;
      r.train_size = train.size();
      auto trained = train_detector(train, settings.head, row.train_side, settings.train);
      r.ap = evaluate_detector(trained.detector, eval_set, settings.eval).ap;
      for (const auto& e : extra_evals) {
        r.extra_ap[e.name] = evaluate_detector(trained.detector, *e.data, settings.eval).ap;
      }
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    out.push_back(std::move(r));
  }
  for (auto& r : out) {
    if (r.augmentation == "None" || !r.ap) continue;
    for (const auto& b : out) {
      if (b.augmentation == "None" && b.base_name == r.base_name &&
          b.resolution == r.resolution && b.ap) {
        r.delta = *r.ap - *b.ap;
        break;
      }
    }
  }
  return out;
}

void write_loss_log(const std::vector<LossRecord>& log, const std::filesystem::path& path) {
  std::string text;
  for (const auto& r : log) {
    text += json{{"step", r.step},
                 {"epoch", r.epoch},
                 {"l_diff", r.l_diff},
                 {"l_det", r.l_det},
                 {"total", r.total}}
                .dump();
    text += '\n';
  }
  atomic_write_text(path, text);
}

}  // namespace diffaug
