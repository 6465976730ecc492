#include "diffaug/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "diffaug/checkpoint.hpp"
#include "diffaug/config.hpp"
#include "diffaug/errors.hpp"
#include "diffaug/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace diffaug {

json eval_report_to_json(const EvalReport& r) {
  json pr = json::array();
  for (const auto& p : r.pr_points) pr.push_back({p.recall, p.precision});
  json per_image = json::array();
  for (const auto& d : r.per_image) {
    per_image.push_back({{"image_index", d.image_index},
                         {"num_gt", d.num_gt},
                         {"num_pred", d.num_pred},
                         {"num_tp", d.num_tp}});
  }
  return {{"ap", r.ap},
          {"iou_threshold", r.iou_threshold},
          {"interpolation", to_string(r.interpolation)},
          {"counts",
           {{"num_gt", r.counts.num_gt},
            {"num_pred", r.counts.num_pred},
            {"num_tp", r.counts.num_tp},
            {"num_fp", r.counts.num_fp}}},
          {"pr_curve", pr},
          {"per_image", per_image}};
}

std::string pr_curve_svg(const EvalReport& r) {
  const int w = 320, h = 320, m = 40;
  auto px = [&](Real recall) { return m + recall * (w - 2 * m); };
  auto py = [&](Real precision) { return h - m - precision * (h - 2 * m); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  s << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  s << "<rect x=\"" << m << "\" y=\"" << m << "\" width=\"" << w - 2 * m << "\" height=\""
    << h - 2 * m << "\" fill=\"none\" stroke=\"black\"/>\n";
  s << "<text x=\"" << w / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\" "
       "font-size=\"12\">recall</text>\n";
  s << "<text x=\"12\" y=\"" << h / 2 << "\" font-size=\"12\" transform=\"rotate(-90 12 "
    << h / 2 << ")\" text-anchor=\"middle\">precision</text>\n";
  s << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"13\">AP = "
    << r.ap << "</text>\n";
  s << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
  s << px(0) << "," << py(r.pr_points.empty() ? 0 : r.pr_points.front().precision);
  for (const auto& p : r.pr_points) s << " " << px(p.recall) << "," << py(p.precision);
  s << "\"/>\n</svg>\n";
  return s.str();
}

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json read_json_file(const fs::path& p) { return parse_json_text(read_file(p), p.string()); }

/// Predictions aligned to the ground-truth image order. Accepts either an
/// annotation document or a list of {image_id, bbox, score} results.
std::vector<std::vector<BoundingBox>> load_predictions(const json& doc,
                                                       const DetectionDataset& gt) {
  std::map<std::int64_t, std::size_t> index;
  for (std::size_t i = 0; i < gt.items.size(); ++i) index[gt.items[i].id] = i;
  std::vector<std::vector<BoundingBox>> preds(gt.items.size());
  auto place = [&](std::int64_t id, const BoundingBox& b, const std::string& where) {
    auto it = index.find(id);
    if (it == index.end()) {
      throw SchemaError(where, "prediction references image id " + std::to_string(id) +
                                   " absent from the ground truth");
    }
    if (!b.confidence) throw SchemaError(where, "prediction has no score");
    preds[it->second].push_back(b);
  };
  if (doc.is_array()) {
    for (std::size_t i = 0; i < doc.size(); ++i) {
      const std::string where = "/" + std::to_string(i);
      const json& r = doc[i];
      if (!r.is_object() || !r.contains("image_id") || !r["image_id"].is_number_integer()) {
        throw SchemaError(where + "/image_id", "missing or not an integer");
      }
      if (!r.contains("bbox") || !r["bbox"].is_array() || r["bbox"].size() != 4) {
        throw SchemaError(where + "/bbox", "expected [x, y, w, h]");
      }
      for (const auto& v : r["bbox"]) {
        if (!v.is_number()) throw SchemaError(where + "/bbox", "expected [x, y, w, h]");
      }
      if (!r.contains("score") || !r["score"].is_number()) {
        throw SchemaError(where + "/score", "missing or not a number");
      }
      BoundingBox b{r["bbox"][0].get<Real>(), r["bbox"][1].get<Real>(), r["bbox"][2].get<Real>(),
                    r["bbox"][3].get<Real>(), r.value("category_id", kPedestrianCategory),
                    r["score"].get<Real>()};
      place(r["image_id"].get<std::int64_t>(), b, where);
    }
  } else {
    DetectionDataset p = annotations_from_json(doc);
    for (const auto& item : p.items) {
      for (const auto& b : item.annotations) place(item.id, b, "/annotations");
    }
  }
  for (auto& v : preds) {
    std::stable_sort(v.begin(), v.end(), [](const BoundingBox& a, const BoundingBox& b) {
      return *a.confidence > *b.confidence;
    });
  }
  return preds;
}

void write_text_output(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  atomic_write_text(path, text);
}

void prepare_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;

  ExperimentConfig load() const {
    ExperimentConfig cfg = config.empty() ? parse_experiment_config(json::object())
                                          : load_experiment_config(config);
    if (seed_opt && seed_opt->count() > 0) cfg.set_seed(seed);
    return cfg;
  }
};

void add_common(CLI::App* sub, Options& o, bool config_required) {
  auto* c = sub->add_option("--config", o.config, "Experiment config file (JSON)");
  if (config_required) c->required();
  o.seed_opt = sub->add_option("--seed", o.seed, "Override the config's global seed");
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diffusion-based dataset augmentation toolkit", "diffaug"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::function<void()> action;

  // render-toy
  Options rt;
  std::string rt_domain;
  int rt_n = 0, rt_side = 0;
  std::string rt_out;
  auto* render = app.add_subcommand("render-toy", "Render a procedural toy pedestrian dataset");
  add_common(render, rt, false);
  render->add_option("--domain", rt_domain, "Toy domain")
      ->required()
      ->check(CLI::IsMember({"sim", "real"}));
  render->add_option("--n", rt_n, "Number of images")->required()->check(CLI::PositiveNumber);
  render->add_option("--side", rt_side, "Image side in pixels (default: from config)")
      ->check(CLI::PositiveNumber);
  render->add_option("--out", rt_out, "Output dataset directory")->required();
  render->callback([&] {
    action = [&] {
      ExperimentConfig cfg = rt.load();
      ToyDomainSpec spec = rt_domain == "sim" ? cfg.sim : cfg.real;
      if (rt_side > 0) spec.side = rt_side;
      spec.validate();
      DetectionDataset d = render_toy_dataset(spec, rt_n);
      d.provenance["config_hash"] = cfg.hash();
      save_dataset(d, rt_out);
      out << json{{"images", d.size()}, {"annotations", d.annotation_count()}, {"out", rt_out}}.dump()
          << "\n";
    };
  });

  // train-diffusion
  Options td;
  std::string td_data, td_out, td_log;
  int td_epochs = 0;
  auto* train_diff =
      app.add_subcommand("train-diffusion", "Jointly train the denoiser and labeling head");
  add_common(train_diff, td, false);
  train_diff->add_option("--data", td_data,
                         "Training dataset directory (default: render real-train from config)");
  train_diff->add_option("--out", td_out, "Output checkpoint path")->required();
  train_diff->add_option("--epochs", td_epochs, "Override the epoch count")->check(CLI::PositiveNumber);
  train_diff->add_option("--loss-log", td_log, "JSON-lines loss log path");
  train_diff->callback([&] {
    action = [&] {
      ExperimentConfig cfg = td.load();
      TrainConfig tc = cfg.joint_train;
      if (td_epochs > 0) tc.epochs = td_epochs;
      if (!td_log.empty()) tc.loss_log = td_log;
      DetectionDataset data =
          td_data.empty() ? render_splits(cfg).real_train : load_dataset(td_data);
      JointTrainResult r = train_joint(data, cfg.model, cfg.schedule, tc);
      r.state.config_hash = cfg.hash();
      prepare_parent(td_out);
      save_joint_checkpoint(r.model, r.state, td_out);
      out << json{{"initial_loss", r.initial_loss},
                  {"final_loss", r.final_loss},
                  {"steps", r.state.step},
                  {"checkpoint", td_out},
                  {"checkpoint_hash", file_hash(td_out)}}
                 .dump()
          << "\n";
    };
  });

  // generate
  Options gen;
  std::string gen_ckpt, gen_out;
  int gen_n = 0;
  double gen_thr = -1.0;
  auto* generate = app.add_subcommand("generate", "Sample and auto-label a dataset from a checkpoint");
  add_common(generate, gen, false);
  generate->add_option("--checkpoint", gen_ckpt, "Joint checkpoint")->required()->check(CLI::ExistingFile);
  generate->add_option("--out", gen_out, "Output dataset directory")->required();
  generate->add_option("--n", gen_n, "Number of images (default: from config)")->check(CLI::PositiveNumber);
  generate->add_option("--threshold", gen_thr, "Labeling score threshold (default: from config)");
  generate->callback([&] {
    action = [&] {
      ExperimentConfig cfg = gen.load();
      GenerationConfig g = cfg.generation;
      if (gen_n > 0) g.n_images = gen_n;
      if (gen_thr >= 0.0) g.score_threshold = gen_thr;
      TrainingState state;
      JointModel m = load_joint_checkpoint(gen_ckpt, &state);
      std::optional<ScheduleConfig> expected;
      if (!gen.config.empty()) expected = cfg.schedule;
      DetectionDataset d = generate_dataset(m, g, file_hash(gen_ckpt), expected);
      d.provenance["config_hash"] = cfg.hash();
      d.provenance["checkpoint_config_hash"] = state.config_hash;
      save_dataset(d, gen_out);
      out << json{{"images", d.size()}, {"annotations", d.annotation_count()}, {"out", gen_out}}.dump()
          << "\n";
    };
  });

  // mix
  std::string mix_base, mix_aug, mix_out;
  auto* mix = app.add_subcommand("mix", "Concatenate a base dataset and an augmentation dataset");
  mix->add_option("--base", mix_base, "Base dataset directory")->required()->check(CLI::ExistingDirectory);
  mix->add_option("--augment", mix_aug, "Augmentation dataset directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  mix->add_option("--out", mix_out, "Output dataset directory")->required();
  mix->callback([&] {
    action = [&] {
      DetectionDataset d = mix_datasets(load_dataset(mix_base), load_dataset(mix_aug));
      save_dataset(d, mix_out);
      out << json{{"images", d.size()}, {"out", mix_out}}.dump() << "\n";
    };
  });

  // resize
  std::string rs_data, rs_out;
  int rs_side = 0;
  auto* resize = app.add_subcommand("resize", "Resample every image of a dataset to a square side");
  resize->add_option("--data", rs_data, "Input dataset directory")->required()->check(CLI::ExistingDirectory);
  resize->add_option("--side", rs_side, "Target side in pixels (>= 16)")->required();
  resize->add_option("--out", rs_out, "Output dataset directory")->required();
  resize->callback([&] {
    action = [&] {
      DetectionDataset d = resize_dataset(load_dataset(rs_data), rs_side);
      save_dataset(d, rs_out);
      out << json{{"images", d.size()},
                  {"dropped_boxes", d.provenance.value("dropped_boxes", 0)},
                  {"out", rs_out}}
                 .dump()
          << "\n";
    };
  });

  // train-detector
  Options tdet;
  std::string det_data, det_out, det_log;
  int det_side = 0, det_epochs = 0;
  auto* train_det = app.add_subcommand("train-detector", "Train a detector from scratch on a dataset");
  add_common(train_det, tdet, false);
  train_det->add_option("--data", det_data, "Training dataset directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  train_det->add_option("--out", det_out, "Output checkpoint path")->required();
  train_det->add_option("--side", det_side, "Training side (default: model.image_side)")
      ->check(CLI::PositiveNumber);
  train_det->add_option("--epochs", det_epochs, "Override the epoch count")->check(CLI::PositiveNumber);
  train_det->add_option("--loss-log", det_log, "JSON-lines loss log path");
  train_det->callback([&] {
    action = [&] {
      ExperimentConfig cfg = tdet.load();
      TrainConfig tc = cfg.detector_train;
      if (det_epochs > 0) tc.epochs = det_epochs;
      if (!det_log.empty()) tc.loss_log = det_log;
      const int side = det_side > 0 ? det_side : cfg.model.image_side;
      DetectorTrainResult r = train_detector(load_dataset(det_data), cfg.detector_head, side, tc);
      r.state.config_hash = cfg.hash();
      prepare_parent(det_out);
      save_detector_checkpoint(r.detector, r.state, det_out);
      out << json{{"steps", r.state.step},
                  {"final_loss", r.log.empty() ? 0.0 : r.log.back().total},
                  {"checkpoint", det_out}}
                 .dump()
          << "\n";
    };
  });

  // evaluate
  std::string ev_pred, ev_gt, ev_ckpt, ev_data, ev_plot, ev_out, ev_interp = "coco101";
  double ev_iou = 0.5, ev_min_score = 0.05;
  auto* evaluate = app.add_subcommand(
      "evaluate", "Compute AP from prediction and ground-truth files, or from a detector checkpoint");
  auto* o_pred = evaluate->add_option("--pred", ev_pred, "Predictions (annotation document or result list)")
                     ->check(CLI::ExistingFile);
  auto* o_gt = evaluate->add_option("--gt", ev_gt, "Ground-truth annotation document")
                   ->check(CLI::ExistingFile);
  auto* o_ckpt = evaluate->add_option("--checkpoint", ev_ckpt, "Detector checkpoint")
                     ->check(CLI::ExistingFile);
  auto* o_data = evaluate->add_option("--data", ev_data, "Dataset directory to run the detector on")
                     ->check(CLI::ExistingDirectory);
  o_pred->needs(o_gt);
  o_gt->needs(o_pred);
  o_ckpt->needs(o_data);
  o_data->needs(o_ckpt);
  o_pred->excludes(o_ckpt);
  evaluate->add_option("--iou", ev_iou, "IoU threshold for a true positive")
      ->check(CLI::Range(1e-9, 1.0));
  evaluate->add_option("--interp", ev_interp, "AP interpolation: coco101 or all_points");
  evaluate->add_option("--min-score", ev_min_score, "Lowest detector score kept (checkpoint mode)")
      ->check(CLI::Range(0.0, 1.0));
  evaluate->add_option("--plot", ev_plot, "Write the PR curve as SVG");
  evaluate->add_option("--out", ev_out, "Write the report JSON here as well");
  evaluate->callback([&] {
    if (ev_pred.empty() && ev_ckpt.empty()) {
      throw CLI::ValidationError("evaluate", "needs --pred/--gt or --checkpoint/--data");
    }
    action = [&] {
      ApInterpolation interp;
      try {
        interp = parse_interpolation(ev_interp);
      } catch (const std::exception& e) {
        throw UsageError(std::string("--interp: ") + e.what());
      }
      EvalReport r;
      if (!ev_pred.empty()) {
        DetectionDataset gt = annotations_from_json(read_json_file(ev_gt));
        auto preds = load_predictions(read_json_file(ev_pred), gt);
        std::vector<std::vector<BoundingBox>> gts;
        for (const auto& item : gt.items) gts.push_back(item.annotations);
        r = average_precision(gts, preds, ev_iou, interp);
      } else {
        Detector det = load_detector_checkpoint(ev_ckpt);
        r = evaluate_detector(det, load_dataset(ev_data), {ev_iou, interp, ev_min_score});
      }
      const std::string text = eval_report_to_json(r).dump(2) + "\n";
      if (!ev_plot.empty()) write_text_output(ev_plot, pr_curve_svg(r));
      if (!ev_out.empty()) write_text_output(ev_out, text);
      out << text;
    };
  });

  // experiment
  Options ex;
  std::string ex_out, ex_format = "text";
  auto* experiment = app.add_subcommand(
      "experiment", "Run the sim-only vs augmented comparison and write the report");
  add_common(experiment, ex, true);
  experiment->add_option("--out", ex_out, "Output directory (default: paths.output_dir)");
  experiment->add_option("--format", ex_format, "Table format")
      ->check(CLI::IsMember({"text", "markdown"}));
  bool ex_quiet = false;
  experiment->add_flag("--quiet", ex_quiet, "Suppress progress messages");
  experiment->callback([&] {
    action = [&] {
      ExperimentConfig cfg = ex.load();
      const fs::path dir = ex_out.empty() ? cfg.output_dir : fs::path(ex_out);
      fs::create_directories(dir);
      ProgressFn progress;
      if (!ex_quiet) progress = [&](const std::string& m) { err << m << "\n"; };
      json report = run_toy_experiment(cfg, dir, progress);
      const auto fmt = ex_format == "markdown" ? ReportFormat::kMarkdown : ReportFormat::kText;
      const std::string table = render_report(report, fmt);
      atomic_write_text(dir / "report.json", report.dump(2) + "\n");
      atomic_write_text(dir / "report.txt", table);
      out << table;
    };
  });

  // report
  std::string rep_in, rep_out, rep_format = "text";
  auto* report = app.add_subcommand("report", "Render an experiment report as a comparison table");
  report->add_option("--report", rep_in, "report.json written by `experiment`")
      ->required()
      ->check(CLI::ExistingFile);
  report->add_option("--format", rep_format, "Table format")->check(CLI::IsMember({"text", "markdown"}));
  report->add_option("--out", rep_out, "Write the table to this file");
  report->callback([&] {
    action = [&] {
      const auto fmt = rep_format == "markdown" ? ReportFormat::kMarkdown : ReportFormat::kText;
      const std::string table = render_report(read_json_file(rep_in), fmt);
      if (!rep_out.empty()) write_text_output(rep_out, table);
      out << table;
    };
  });

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  if (args.empty()) argv.push_back("diffaug");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (action) action();
    return 0;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int cli_main(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace diffaug
