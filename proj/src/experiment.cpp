#include "diffaug/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "diffaug/checkpoint.hpp"
#include "diffaug/errors.hpp"
#include "diffaug/random.hpp"

using nlohmann::json;

namespace diffaug {

namespace {

DetectionDataset slice(const DetectionDataset& d, std::size_t begin, std::size_t end) {
  DetectionDataset out;
  out.categories = d.categories;
  out.provenance = d.provenance;
  for (std::size_t i = begin; i < end && i < d.items.size(); ++i) out.items.push_back(d.items[i]);
  return out;
}

std::string fmt(Real v, const char* f = "%.3f") {
  char buf[32];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

json row_to_json(const ExperimentRowResult& r) {
  json j = {{"base", r.base_name},
            {"augmentation", r.augmentation},
            {"resolution", r.resolution},
            {"train_size", r.train_size},
            {"ap", r.ap ? json(*r.ap) : json()},
            {"delta", r.delta ? json(*r.delta) : json()}};
  for (const auto& [k, v] : r.extra_ap) j["ap_" + k] = v;
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

}  // namespace

ToySplits render_splits(const ExperimentConfig& cfg) {
  const auto& p = cfg.experiment;
  DetectionDataset sim = render_toy_dataset(cfg.sim, p.sim_train + p.sim_test);
  DetectionDataset real = render_toy_dataset(cfg.real, p.real_train + p.real_test);
  ToySplits s;
  s.sim_train = slice(sim, 0, p.sim_train);
  s.sim_test = slice(sim, p.sim_train, sim.size());
  s.real_train = slice(real, 0, p.real_train);
  s.real_test = slice(real, p.real_train, real.size());
  return s;
}

GeneratorHealth generator_health(const DetectionDataset& generated) {
  GeneratorHealth h;
  h.n_images = generated.size();
  if (generated.items.empty()) return h;
  std::size_t with = 0;
  for (const auto& item : generated.items) with += item.annotations.empty() ? 0 : 1;
  h.with_boxes_fraction = static_cast<Real>(with) / generated.size();
  h.mean_boxes = static_cast<Real>(generated.annotation_count()) / generated.size();
  return h;
}

Real appearance_gap(const DetectionDataset& a, const DetectionDataset& b) {
  auto ma = channel_means(a), mb = channel_means(b);
  if (ma.size() != mb.size()) throw ShapeError("datasets differ in channel count");
  Real gap = 0.0;
  for (std::size_t c = 0; c < ma.size(); ++c) gap = std::max(gap, std::abs(ma[c] - mb[c]));
  return gap;
}

json run_toy_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                        const ProgressFn& progress) {
  auto say = [&](const std::string& m) {
    if (progress) progress(m);
  };
  const auto& plan = cfg.experiment;
  const int side = cfg.model.image_side;
  const std::string resolution = std::to_string(side) + "x" + std::to_string(side);
  const int n_generate = std::max(cfg.generation.n_images,
                                  *std::max_element(plan.augment_sizes.begin(),
                                                    plan.augment_sizes.end()));

  json runs = json::array();
  for (std::uint64_t s : plan.seeds) {
    ExperimentConfig c = cfg;
    c.set_seed(derive_seed(cfg.seed, s));
    const std::filesystem::path dir =
        out_dir.empty() ? std::filesystem::path() : out_dir / ("seed_" + std::to_string(s));
    if (!dir.empty()) std::filesystem::create_directories(dir);

    say("seed " + std::to_string(s) + ": rendering toy splits");
    ToySplits splits = render_splits(c);

    say("seed " + std::to_string(s) + ": joint training on real-train");
    TrainConfig jt = c.joint_train;
    if (!dir.empty()) jt.loss_log = dir / "joint_loss.jsonl";
    JointTrainResult joint = train_joint(splits.real_train, c.model, c.schedule, jt);
    joint.state.config_hash = cfg.hash();
    std::string ckpt_hash;
    if (!dir.empty()) {
      save_joint_checkpoint(joint.model, joint.state, dir / "joint.ckpt");
      ckpt_hash = file_hash(dir / "joint.ckpt");
    } else {
      ckpt_hash = fnv1a_hex(json(nn::flatten_values(joint.model.parameters())).dump());
    }

    say("seed " + std::to_string(s) + ": generating " + std::to_string(n_generate) + " images");
    GenerationConfig g = c.generation;
    g.n_images = n_generate;
    DetectionDataset generated = generate_dataset(joint.model, g, ckpt_hash);
    generated.provenance["config_hash"] = cfg.hash();
    if (!dir.empty()) save_dataset(generated, dir / "generated");

    std::vector<DetectionDataset> bases, augments;
    for (int b : plan.base_sizes) bases.push_back(take_first(splits.sim_train, b));
    for (int a : plan.augment_sizes) augments.push_back(take_first(generated, a));
    std::vector<ExperimentRow> rows;
    for (std::size_t i = 0; i < bases.size(); ++i) {
      const std::string base_name = "Sim " + std::to_string(plan.base_sizes[i]);
      rows.push_back({base_name, "", resolution, &bases[i], nullptr, side});
      for (std::size_t j = 0; j < augments.size(); ++j) {
        rows.push_back({base_name, "Generated " + std::to_string(plan.augment_sizes[j]),
                        resolution, &bases[i], &augments[j], side});
      }
    }
    say("seed " + std::to_string(s) + ": training " + std::to_string(rows.size()) + " detectors");
    DetectorSettings settings{c.detector_head, c.detector_train, c.evaluation};
    std::vector<NamedDataset> extra{{"sim_test", &splits.sim_test}};
    auto results = run_experiment(rows, splits.real_test, settings, extra);

    GeneratorHealth health = generator_health(generated);
    json rj = json::array();
    for (const auto& r : results) rj.push_back(row_to_json(r));
    runs.push_back({{"seed", s},
                    {"derived_seed", c.seed},
                    {"checkpoint_hash", ckpt_hash},
                    {"joint", {{"initial_loss", joint.initial_loss},
                               {"final_loss", joint.final_loss},
                               {"steps", joint.state.step}}},
                    {"generated", {{"n_images", health.n_images},
                                   {"with_boxes_fraction", health.with_boxes_fraction},
                                   {"mean_boxes", health.mean_boxes}}},
                    {"appearance_gap", appearance_gap(splits.sim_train, splits.real_train)},
                    {"rows", rj}});
  }

  // Aggregate over seeds, keyed by (base, augmentation, resolution) in row order.
  json table = json::array();
  std::vector<std::tuple<std::string, std::string, std::string>> keys;
  for (const auto& row : runs[0]["rows"]) {
    keys.emplace_back(row["base"], row["augmentation"], row["resolution"]);
  }
  for (const auto& [base, aug, res] : keys) {
    std::vector<Real> aps, deltas, sim_aps;
    std::vector<std::string> errors;
    for (const auto& run : runs) {
      for (const auto& row : run["rows"]) {
        if (row["base"] != base || row["augmentation"] != aug || row["resolution"] != res) continue;
        if (!row["ap"].is_null()) aps.push_back(row["ap"].get<Real>());
        if (!row["delta"].is_null()) deltas.push_back(row["delta"].get<Real>());
        if (row.contains("ap_sim_test")) sim_aps.push_back(row["ap_sim_test"].get<Real>());
        if (row.contains("error")) errors.push_back(row["error"].get<std::string>());
      }
    }
    auto mean = [](const std::vector<Real>& v) {
      Real acc = 0;
      for (Real x : v) acc += x;
      return v.empty() ? json() : json(acc / v.size());
    };
    json e = {{"base", base},
              {"augmentation", aug},
              {"resolution", res},
              {"ap_values", aps},
              {"ap_mean", mean(aps)},
              {"ap_min", aps.empty() ? json() : json(*std::min_element(aps.begin(), aps.end()))},
              {"ap_max", aps.empty() ? json() : json(*std::max_element(aps.begin(), aps.end()))},
              {"delta_mean", mean(deltas)},
              {"ap_sim_test_mean", mean(sim_aps)}};
    if (!errors.empty()) e["errors"] = errors;
    table.push_back(e);
  }

  json report = {{"format", "diffaug-experiment-report"},
                 {"version", 1},
                 {"config_hash", cfg.hash()},
                 {"seed", cfg.seed},
                 {"seeds", plan.seeds},
                 {"config", cfg.to_json()},
                 {"runs", runs},
                 {"table", table}};
  return report;
}

std::string render_report(const json& report, ReportFormat format) {
  if (!report.is_object() || !report.contains("table") || !report["table"].is_array()) {
    throw SchemaError("/table", "report has no table");
  }
  const json& table = report["table"];
  std::vector<std::string> bases, columns;
  std::map<std::pair<std::string, std::string>, const json*> cells;
  for (const auto& e : table) {
    for (const char* k : {"base", "augmentation", "resolution"}) {
      if (!e.contains(k) || !e[k].is_string()) {
        throw SchemaError(std::string("/table/") + k, "missing or not a string");
      }
    }
    const std::string base = e["base"], col = e["augmentation"].get<std::string>() + " @ " +
                                              e["resolution"].get<std::string>();
    if (std::find(bases.begin(), bases.end(), base) == bases.end()) bases.push_back(base);
    if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
    cells[{base, col}] = &e;
  }

  auto cell_text = [&](const json* e) -> std::string {
    if (!e || (*e)["ap_mean"].is_null()) return "failed";
    std::string s = fmt((*e)["ap_mean"].get<Real>() * 100.0, "%.1f");
    if (e->contains("ap_min") && !(*e)["ap_min"].is_null() && (*e)["ap_values"].size() > 1) {
      const Real half = ((*e)["ap_max"].get<Real>() - (*e)["ap_min"].get<Real>()) * 50.0;
      s += " ±" + fmt(half, "%.1f");
    }
    if (!(*e)["delta_mean"].is_null()) s += " (" + fmt((*e)["delta_mean"].get<Real>() * 100.0, "%+.1f") + ")";
    return s;
  };

  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"Base Dataset"};
  header.insert(header.end(), columns.begin(), columns.end());
  grid.push_back(header);
  for (const auto& b : bases) {
    std::vector<std::string> line{b};
    for (const auto& c : columns) {
      auto it = cells.find({b, c});
      line.push_back(it == cells.end() ? "-" : cell_text(it->second));
    }
    grid.push_back(line);
  }

  std::string out;
  std::string seeds = report.contains("seeds") ? report["seeds"].dump() : "[]";
  if (format == ReportFormat::kMarkdown) {
    for (std::size_t r = 0; r < grid.size(); ++r) {
      out += "|";
      for (const auto& c : grid[r]) out += " " + c + " |";
      out += "\n";
      if (r == 0) {
        out += "|";
        for (std::size_t i = 0; i < grid[r].size(); ++i) out += i == 0 ? "---|" : "---:|";
        out += "\n";
      }
    }
  } else {
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& line : grid) {
      for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
    }
    for (std::size_t r = 0; r < grid.size(); ++r) {
      for (std::size_t i = 0; i < grid[r].size(); ++i) {
        std::string c = grid[r][i];
        c.resize(width[i], ' ');
        out += (i ? " | " : "") + c;
      }
      out += "\n";
      if (r == 0) {
        for (std::size_t i = 0; i < width.size(); ++i) out += (i ? "-+-" : "") + std::string(width[i], '-');
        out += "\n";
      }
    }
  }
  out += "\nAP@0.5 on real-test, percent; mean ±half-range over seeds " + seeds +
         "; (delta vs None).\n";
  return out;
}

}  // namespace diffaug
