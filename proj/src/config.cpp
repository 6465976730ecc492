#include "diffaug/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <string_view>

#include "diffaug/checkpoint.hpp"
#include "diffaug/errors.hpp"
#include "diffaug/random.hpp"

using nlohmann::json;

namespace diffaug {

namespace {

/// Reads optional keys from one config object and rejects unknown ones.
class Block {
 public:
  Block(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail("", "expected an object");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    std::string path = where_;
    if (!key.empty()) path += (path.empty() ? "" : ".") + key;
    throw ConfigError((path.empty() ? std::string("config") : path) + ": " + msg);
  }

  const json* get(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const char* key, int& out) {
    if (const json* v = get(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      out = v->get<int>();
    }
  }
  void read(const char* key, std::uint64_t& out) {
    if (const json* v = get(key)) {
      if (!v->is_number_integer() || v->get<std::int64_t>() < 0) {
        fail(key, "expected a non-negative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }
  void read(const char* key, Real& out) {
    if (const json* v = get(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<Real>();
    }
  }
  void read(const char* key, bool& out) {
    if (const json* v = get(key)) {
      if (!v->is_boolean()) fail(key, "expected true or false");
      out = v->get<bool>();
    }
  }
  void read(const char* key, std::string& out) {
    if (const json* v = get(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
    }
  }
  void read(const char* key, std::filesystem::path& out) {
    std::string s;
    if (get(key)) {
      read(key, s);
      out = s;
    }
  }
  void read(const char* key, std::vector<int>& out) {
    if (const json* v = get(key)) {
      if (!v->is_array()) fail(key, "expected an array of integers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number_integer()) fail(key, "expected an array of integers");
        out.push_back(e.get<int>());
      }
    }
  }
  void read(const char* key, std::vector<std::uint64_t>& out) {
    if (const json* v = get(key)) {
      if (!v->is_array()) fail(key, "expected an array of integers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number_integer() || e.get<std::int64_t>() < 0) {
          fail(key, "expected an array of non-negative integers");
        }
        out.push_back(e.get<std::uint64_t>());
      }
    }
  }
  void read(const char* key, Color& out) {
    if (const json* v = get(key)) out = color(*v, key);
  }
  Color color(const json& v, const std::string& key) const {
    if (!v.is_array() || v.size() != 3) fail(key, "expected [r, g, b]");
    Color c{};
    for (int i = 0; i < 3; ++i) {
      if (!v[i].is_number()) fail(key, "expected [r, g, b]");
      c[i] = v[i].get<Real>();
    }
    return c;
  }

  std::string path(const char* key) const {
    return where_.empty() ? std::string(key) : where_ + "." + key;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.contains(it.key())) fail(it.key(), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <typename F>
auto rethrow_with_path(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    if (std::string_view(e.what()).starts_with(where)) throw;
    throw ConfigError(where + ": " + e.what());
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace

std::string to_string(ReverseVariance v) {
  return v == ReverseVariance::kBeta ? "beta" : "posterior";
}

ReverseVariance parse_reverse_variance(const std::string& s) {
  if (s == "beta") return ReverseVariance::kBeta;
  if (s == "posterior") return ReverseVariance::kPosterior;
  throw ConfigError("unknown reverse_variance '" + s + "' (use beta or posterior)");
}

std::string to_string(DenoiserArch a) { return a == DenoiserArch::kUNet ? "unet" : "conv2"; }

DenoiserArch parse_denoiser_arch(const std::string& s) {
  if (s == "unet") return DenoiserArch::kUNet;
  if (s == "conv2") return DenoiserArch::kConv2;
  throw ConfigError("unknown denoiser arch '" + s + "' (use unet or conv2)");
}

json to_json(const ScheduleConfig& c) {
  return {{"family", "linear"},
          {"T", c.T},
          {"beta_start", c.beta_start},
          {"beta_end", c.beta_end},
          {"reverse_variance", to_string(c.reverse_variance)}};
}

json to_json(const DenoiserConfig& c) {
  return {{"arch", to_string(c.arch)},
          {"base_channels", c.base_channels},
          {"time_embed_dim", c.time_embed_dim}};
}

json to_json(const HeadConfig& c) {
  json anchors = json::array();
  for (const auto& a : c.anchors) anchors.push_back({a.w, a.h});
  return {{"stage_channels", c.stage_channels},
          {"extra_convs", c.extra_convs},
          {"anchors", anchors},
          {"score_threshold", c.score_threshold},
          {"nms_iou", c.nms_iou},
          {"positive_iou", c.positive_iou},
          {"negative_iou", c.negative_iou},
          {"max_detections", c.max_detections},
          {"smooth_l1_beta", c.smooth_l1_beta}};
}

json to_json(const JointModelConfig& c) {
  return {{"denoiser", to_json(c.denoiser)},
          {"head", to_json(c.head)},
          {"lambda_det", c.lambda_det},
          {"image_side", c.image_side},
          {"channels", c.channels},
          {"detach_head_input", c.detach_head_input},
          {"head_t_max", c.head_t_max}};
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.optimizer.learning_rate},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"epsilon", c.optimizer.epsilon},
          {"clip_norm", c.optimizer.clip_norm},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"hflip", c.hflip},
          {"ema_decay", c.ema_decay}};
}

json to_json(const GenerationConfig& c) {
  return {{"n_images", c.n_images}, {"score_threshold", c.score_threshold}, {"seed", c.seed}};
}

json to_json(const EvaluationConfig& c) {
  return {{"iou_threshold", c.iou_threshold},
          {"interpolation", to_string(c.interpolation)},
          {"min_score", c.min_score}};
}

json to_json(const ToyDomainSpec& c) {
  json palette = json::array();
  for (const auto& p : c.torso_palette) palette.push_back(p);
  return {{"domain", to_string(c.domain)},
          {"side", c.side},
          {"min_count", c.min_count},
          {"max_count", c.max_count},
          {"background", c.background},
          {"background_gradient", c.background_gradient},
          {"background_noise", c.background_noise},
          {"torso_palette", palette},
          {"legs", c.legs},
          {"head", c.head},
          {"pedestrian_noise", c.pedestrian_noise},
          {"min_height", c.min_height},
          {"max_height", c.max_height},
          {"min_aspect", c.min_aspect},
          {"max_aspect", c.max_aspect},
          {"seed", c.seed}};
}

ScheduleConfig schedule_from_json(const json& j, const std::string& where) {
  Block b(j, where);
  ScheduleConfig c;
  std::string family = "linear", variance = to_string(c.reverse_variance);
  b.read("family", family);
  if (family != "linear") b.fail("family", "only the linear schedule is supported");
  b.read("T", c.T);
  b.read("beta_start", c.beta_start);
  b.read("beta_end", c.beta_end);
  b.read("reverse_variance", variance);
  b.finish();
  c.reverse_variance = rethrow_with_path(b.path("reverse_variance"),
                                         [&] { return parse_reverse_variance(variance); });
  rethrow_with_path(where, [&] { return c.build(); });
  return c;
}

HeadConfig head_from_json(const json& j, const std::string& where, const HeadConfig& defaults) {
  Block b(j, where);
  HeadConfig c = defaults;
  b.read("stage_channels", c.stage_channels);
  b.read("extra_convs", c.extra_convs);
  if (const json* a = b.get("anchors")) {
    if (!a->is_array() || a->empty()) b.fail("anchors", "expected a non-empty array of [w, h]");
    c.anchors.clear();
    for (const auto& e : *a) {
      if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number()) {
        b.fail("anchors", "expected a non-empty array of [w, h]");
      }
      c.anchors.push_back({e[0].get<Real>(), e[1].get<Real>()});
      if (!(c.anchors.back().w > 0 && c.anchors.back().h > 0)) b.fail("anchors", "sizes must be > 0");
    }
  }
  b.read("score_threshold", c.score_threshold);
  b.read("nms_iou", c.nms_iou);
  b.read("positive_iou", c.positive_iou);
  b.read("negative_iou", c.negative_iou);
  b.read("max_detections", c.max_detections);
  b.read("smooth_l1_beta", c.smooth_l1_beta);
  b.finish();
  if (c.stage_channels.empty()) b.fail("stage_channels", "must not be empty");
  for (int s : c.stage_channels) {
    if (s < 1) b.fail("stage_channels", "entries must be >= 1");
  }
  if (!(c.score_threshold >= 0 && c.score_threshold <= 1)) b.fail("score_threshold", "must lie in [0, 1]");
  if (!(c.negative_iou <= c.positive_iou)) b.fail("negative_iou", "must not exceed positive_iou");
  if (!(c.smooth_l1_beta > 0)) b.fail("smooth_l1_beta", "must be > 0");
  return c;
}

JointModelConfig model_from_json(const json& j, const std::string& where) {
  Block b(j, where);
  JointModelConfig c;
  if (const json* d = b.get("denoiser")) {
    Block db(*d, b.path("denoiser"));
    std::string arch = to_string(c.denoiser.arch);
    db.read("arch", arch);
    db.read("base_channels", c.denoiser.base_channels);
    db.read("time_embed_dim", c.denoiser.time_embed_dim);
    db.finish();
    c.denoiser.arch = rethrow_with_path(db.path("arch"), [&] { return parse_denoiser_arch(arch); });
    if (c.denoiser.base_channels < 1) db.fail("base_channels", "must be >= 1");
    if (c.denoiser.time_embed_dim < 2 || c.denoiser.time_embed_dim % 2) {
      db.fail("time_embed_dim", "must be a positive even number");
    }
  }
  if (const json* h = b.get("head")) c.head = head_from_json(*h, b.path("head"));
  b.read("lambda_det", c.lambda_det);
  b.read("image_side", c.image_side);
  b.read("channels", c.channels);
  b.read("detach_head_input", c.detach_head_input);
  b.read("head_t_max", c.head_t_max);
  b.finish();
  rethrow_with_path(where, [&] { c.validate(); return 0; });
  return c;
}

TrainConfig train_from_json(const json& j, const std::string& where, const TrainConfig& defaults) {
  Block b(j, where);
  TrainConfig c = defaults;
  b.read("epochs", c.epochs);
  b.read("batch_size", c.batch_size);
  b.read("learning_rate", c.optimizer.learning_rate);
  b.read("beta1", c.optimizer.beta1);
  b.read("beta2", c.optimizer.beta2);
  b.read("epsilon", c.optimizer.epsilon);
  b.read("clip_norm", c.optimizer.clip_norm);
  b.read("checkpoint_every", c.checkpoint_every);
  b.read("checkpoint_dir", c.checkpoint_dir);
  b.read("loss_log", c.loss_log);
  b.read("hflip", c.hflip);
  b.read("ema_decay", c.ema_decay);
  b.finish();
  rethrow_with_path(where, [&] { c.validate(); return 0; });
  return c;
}

ToyDomainSpec toy_from_json(const json& j, const std::string& where, const ToyDomainSpec& defaults) {
  Block b(j, where);
  ToyDomainSpec c = defaults;
  b.read("side", c.side);
  b.read("min_count", c.min_count);
  b.read("max_count", c.max_count);
  b.read("background", c.background);
  b.read("background_gradient", c.background_gradient);
  b.read("background_noise", c.background_noise);
  if (const json* p = b.get("torso_palette")) {
    if (!p->is_array() || p->empty()) b.fail("torso_palette", "expected a non-empty array of [r, g, b]");
    c.torso_palette.clear();
    for (const auto& e : *p) c.torso_palette.push_back(b.color(e, "torso_palette"));
  }
  b.read("legs", c.legs);
  b.read("head", c.head);
  b.read("pedestrian_noise", c.pedestrian_noise);
  b.read("min_height", c.min_height);
  b.read("max_height", c.max_height);
  b.read("min_aspect", c.min_aspect);
  b.read("max_aspect", c.max_aspect);
  b.finish();
  rethrow_with_path(where, [&] { c.validate(); return 0; });
  return c;
}

json ExperimentConfig::to_json() const {
  json seeds = experiment.seeds;
  // Stage seeds and toy domains follow from the top-level seed and key.
  auto strip = [](json j, std::initializer_list<const char*> keys) {
    for (const char* k : keys) j.erase(k);
    return j;
  };
  return {{"seed", seed},
          {"schedule", diffaug::to_json(schedule)},
          {"model", diffaug::to_json(model)},
          {"detector", {{"head", diffaug::to_json(detector_head)}}},
          {"toy",
           {{"sim", strip(diffaug::to_json(sim), {"domain", "seed"})},
            {"real", strip(diffaug::to_json(real), {"domain", "seed"})}}},
          {"train",
           {{"joint", strip(diffaug::to_json(joint_train), {"seed"})},
            {"detector", strip(diffaug::to_json(detector_train), {"seed"})}}},
          {"generation", strip(diffaug::to_json(generation), {"seed"})},
          {"evaluation", diffaug::to_json(evaluation)},
          {"experiment",
           {{"sim_train", experiment.sim_train},
            {"sim_test", experiment.sim_test},
            {"real_train", experiment.real_train},
            {"real_test", experiment.real_test},
            {"base_sizes", experiment.base_sizes},
            {"augment_sizes", experiment.augment_sizes},
            {"seeds", seeds}}},
          {"paths", {{"output_dir", output_dir.string()}}}};
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(to_json().dump()); }

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  sim.seed = derive_seed(s, 101);
  real.seed = derive_seed(s, 202);
  joint_train.seed = derive_seed(s, 303);
  detector_train.seed = derive_seed(s, 404);
  generation.seed = derive_seed(s, 505);
}

ExperimentConfig parse_experiment_config(const json& doc) {
  Block top(doc, "");
  ExperimentConfig c;
  std::uint64_t seed = 0;
  top.read("seed", seed);
  if (const json* s = top.get("schedule")) c.schedule = schedule_from_json(*s, "schedule");
  if (const json* m = top.get("model")) c.model = model_from_json(*m, "model");
  c.detector_head = c.model.head;
  if (const json* d = top.get("detector")) {
    Block db(*d, "detector");
    if (const json* h = db.get("head")) c.detector_head = head_from_json(*h, "detector.head", c.model.head);
    db.finish();
  }
  if (const json* t = top.get("toy")) {
    Block tb(*t, "toy");
    int side = 0;
    tb.read("side", side);
    ToyDomainSpec sim = ToyDomainSpec::defaults(ToyDomain::kSim);
    ToyDomainSpec real = ToyDomainSpec::defaults(ToyDomain::kReal);
    if (side > 0) sim.side = real.side = side;
    c.sim = sim;
    c.real = real;
    if (const json* s = tb.get("sim")) c.sim = toy_from_json(*s, "toy.sim", sim);
    if (const json* r = tb.get("real")) c.real = toy_from_json(*r, "toy.real", real);
    tb.finish();
  }
  if (const json* t = top.get("train")) {
    Block tb(*t, "train");
    if (const json* j = tb.get("joint")) c.joint_train = train_from_json(*j, "train.joint");
    if (const json* d = tb.get("detector")) c.detector_train = train_from_json(*d, "train.detector");
    tb.finish();
  }
  if (const json* g = top.get("generation")) {
    Block gb(*g, "generation");
    gb.read("n_images", c.generation.n_images);
    gb.read("score_threshold", c.generation.score_threshold);
    gb.finish();
    rethrow_with_path("generation", [&] { c.generation.validate(); return 0; });
  }
  if (const json* e = top.get("evaluation")) {
    Block eb(*e, "evaluation");
    std::string interp = to_string(c.evaluation.interpolation);
    eb.read("iou_threshold", c.evaluation.iou_threshold);
    eb.read("interpolation", interp);
    eb.read("min_score", c.evaluation.min_score);
    eb.finish();
    c.evaluation.interpolation =
        rethrow_with_path("evaluation.interpolation", [&] { return parse_interpolation(interp); });
    if (!(c.evaluation.iou_threshold > 0 && c.evaluation.iou_threshold <= 1)) {
      eb.fail("iou_threshold", "must lie in (0, 1]");
    }
    if (!(c.evaluation.min_score >= 0 && c.evaluation.min_score <= 1)) {
      eb.fail("min_score", "must lie in [0, 1]");
    }
  }
  if (const json* e = top.get("experiment")) {
    Block eb(*e, "experiment");
    auto& p = c.experiment;
    eb.read("sim_train", p.sim_train);
    eb.read("sim_test", p.sim_test);
    eb.read("real_train", p.real_train);
    eb.read("real_test", p.real_test);
    eb.read("base_sizes", p.base_sizes);
    eb.read("augment_sizes", p.augment_sizes);
    eb.read("seeds", p.seeds);
    eb.finish();
    for (const char* k : {"sim_train", "sim_test", "real_train", "real_test"}) {
      const int v = k == std::string("sim_train")  ? p.sim_train
                    : k == std::string("sim_test") ? p.sim_test
                    : k == std::string("real_train") ? p.real_train
                                                     : p.real_test;
      if (v < 1) eb.fail(k, "must be >= 1");
    }
    if (p.base_sizes.empty()) eb.fail("base_sizes", "must not be empty");
    for (int v : p.base_sizes) {
      if (v < 1 || v > p.sim_train) eb.fail("base_sizes", "entries must lie in [1, sim_train]");
    }
    for (int v : p.augment_sizes) {
      if (v < 1) eb.fail("augment_sizes", "entries must be >= 1");
    }
    if (p.seeds.empty()) eb.fail("seeds", "must not be empty");
  }
  if (const json* p = top.get("paths")) {
    Block pb(*p, "paths");
    pb.read("output_dir", c.output_dir);
    pb.finish();
  }
  top.finish();
  c.set_seed(seed);
  if (c.model.channels != 3) throw ConfigError("model.channels: toy scenes are RGB, must be 3");
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  json doc;
  try {
    doc = parse_json_text(ss.str(), path.string());
  } catch (const SchemaError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return parse_experiment_config(doc);
}

}  // namespace diffaug
