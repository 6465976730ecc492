#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "diffaug/cli.hpp"
#include "diffaug/config.hpp"
#include "diffaug/detection_eval.hpp"
#include "diffaug/diffusion.hpp"
#include "diffaug/experiment.hpp"
#include "diffaug/models.hpp"
#include "diffaug/pipeline.hpp"
#include "diffaug/random.hpp"
#include "oracles.hpp"

using namespace diffaug;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

Real seconds_since(Clock::time_point t0) {
  return std::chrono::duration<Real>(Clock::now() - t0).count();
}

std::string fmt(Real v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

Outcome schedule_numerics() {
  auto s = make_linear_schedule(1000, 1e-4, 0.02);
  const Real snr = signal_to_noise(s, 1000);
  bool decreasing = true;
  for (int t = 1; t <= s.T(); ++t) decreasing &= s.alpha_bar(t) < s.alpha_bar(t - 1);
  return {snr < 1e-4 && decreasing,
          "snr(T) = " + fmt(snr) + ", alpha_bar strictly decreasing: " + (decreasing ? "yes" : "no")};
}

struct Moments {
  Real mean = 0, var = 0, m4 = 0;
  std::size_t n = 0;
};

Moments moments(const std::vector<Real>& v) {
  Moments m;
  m.n = v.size();
  for (Real x : v) m.mean += x;
  m.mean /= static_cast<Real>(m.n);
  for (Real x : v) {
    const Real d = x - m.mean;
    m.var += d * d;
    m.m4 += d * d * d * d;
  }
  m.var /= static_cast<Real>(m.n - 1);
  m.m4 /= static_cast<Real>(m.n);
  return m;
}

// Pixels are standardized by their exact marginal so all 16 pool into one
// sample per method; the two samples are compared by their first two moments.
Outcome forward_equivalence() {
  auto s = make_linear_schedule(50, 1e-3, 0.3);
  Rng rng(5);
  std::uniform_real_distribution<Real> u(-1.0, 1.0);
  Tensor x0t({1, 1, 4, 4});
  for (auto& v : x0t.span()) v = u(rng);
  const ImageTensor x0(x0t, ValueRange::kSymmetric);
  constexpr int kDraws = 10000;
  bool ok = true;
  std::string detail;
  for (int t : {1, 5, 25}) {
    const Real ab = s.alpha_bar(t);
    const Real a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    std::vector<Real> direct, iterated;
    direct.reserve(kDraws * 16);
    iterated.reserve(kDraws * 16);
    for (int d = 0; d < kDraws; ++d) {
      const auto seed = derive_seed(1000 + t, static_cast<std::uint64_t>(d));
      const ImageTensor xs = q_sample(x0, t, s, make_noise(x0.shape(), seed));
      ImageTensor xi = x0;
      for (int k = 1; k <= t; ++k) {
        xi = q_step(xi, k, s, derive_seed(seed ^ 0x5bd1e995u, static_cast<std::uint64_t>(k)));
      }
      for (std::size_t i = 0; i < 16; ++i) {
        direct.push_back((xs.pixels[i] - a * x0.pixels[i]) / b);
        iterated.push_back((xi.pixels[i] - a * x0.pixels[i]) / b);
      }
    }
    const Moments md = moments(direct), mi = moments(iterated);
    const Real se_mean = std::sqrt(md.var / md.n + mi.var / mi.n);
    const Real se_var = std::sqrt((md.m4 - md.var * md.var) / md.n + (mi.m4 - mi.var * mi.var) / mi.n);
    const Real z_mean = std::abs(md.mean - mi.mean) / se_mean;
    const Real z_var = std::abs(md.var - mi.var) / se_var;
    ok &= z_mean <= 3.0 && z_var <= 3.0;
    if (!detail.empty()) detail += "; ";
    detail += "t=" + std::to_string(t) + ": |dmean|/se = " + fmt(z_mean, 3) + ", |dvar|/se = " + fmt(z_var, 3);
  }
  return {ok, detail};
}

Outcome gradient_check() {
  auto s = make_linear_schedule(10, 0.01, 0.2);
  JointModelConfig cfg;
  cfg.denoiser = {DenoiserArch::kConv2, 4, 8};
  cfg.head.stage_channels = {4};
  cfg.head.extra_convs = false;
  cfg.head.anchors = {{2.0, 4.0}, {3.0, 6.0}};
  cfg.image_side = 8;
  auto den = make_denoiser(cfg.denoiser, 3, 5);
  AnchorHead head(cfg.head, 3, 6);
  Tensor x0({1, 3, 8, 8});
  Rng rng(7);
  std::uniform_real_distribution<Real> u(-1.0, 1.0);
  for (auto& v : x0.span()) v = u(rng);
  const Tensor eps = randn(x0.shape(), 8);
  const std::vector<std::vector<BoundingBox>> gts{
      {BoundingBox{1, 1, 3, 5, kPedestrianCategory, std::nullopt},
       BoundingBox{5, 2, 2, 4, kPedestrianCategory, std::nullopt}}};
  const int t[1] = {3};
  nn::ParameterList params = den->parameters();
  for (auto& p : head.parameters()) params.push_back(p);
  auto loss = [&] { return joint_loss_graph(x0, gts, t, s, *den, head, eps, cfg).total; };
  const auto checks = oracle::finite_difference_check(params, loss, 20, 99);
  Real worst = 0.0;
  for (const auto& c : checks) worst = std::max(worst, c.rel_error);
  return {checks.size() == 20 && worst < 1e-3,
          std::to_string(checks.size()) + " parameters, max relative error " + fmt(worst, 3)};
}

BoundingBox box(Real x, Real y, Real w, Real h, std::optional<Real> conf = std::nullopt) {
  return BoundingBox{x, y, w, h, kPedestrianCategory, conf};
}

Outcome ap_oracle() {
  using Boxes = std::vector<std::vector<BoundingBox>>;
  std::mt19937_64 rng(2024);
  Real worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    Boxes gts, preds;
    oracle::random_scene(rng, 1 + trial % 4, 5, gts, preds);
    const Real thr = trial % 3 == 0 ? 0.3 : 0.5;
    worst = std::max(worst, std::abs(average_precision(gts, preds, thr).ap -
                                     oracle::brute_force_ap(gts, preds, thr, true)));
    worst = std::max(worst, std::abs(average_precision(gts, preds, thr, ApInterpolation::kAllPoints).ap -
                                     oracle::brute_force_ap(gts, preds, thr, false)));
  }
  Boxes gts{{box(0, 0, 4, 4), box(10, 10, 4, 4)}};
  const Real h1 = average_precision(gts, Boxes{{box(0, 0, 4, 4, 1.0), box(10, 10, 4, 4, 1.0)}}, 0.5).ap;
  const Real h2 = average_precision(gts, Boxes{{box(20, 20, 2, 2, 0.9), box(30, 30, 2, 2, 0.8)}}, 0.5).ap;
  const Real h3 = average_precision(Boxes{{box(0, 0, 4, 4)}},
                                    Boxes{{box(0, 0, 4, 4, 0.9), box(20, 20, 2, 2, 0.8)}}, 0.5).ap;
  const Real h4 = average_precision(gts, Boxes{{box(20, 20, 2, 2, 0.9), box(0, 0, 4, 4, 0.8)}}, 0.5).ap;
  const bool hands = h1 == 1.0 && h2 == 0.0 && h3 == 1.0 && h4 == 51.0 * 0.5 / 101.0;
  return {worst <= 1e-9 && hands, "max |AP - brute force| = " + fmt(worst, 3) + " over 200 scenes; hand examples " +
                                      fmt(h1) + ", " + fmt(h2) + ", " + fmt(h3) + ", " + fmt(h4)};
}

Outcome serialization(const fs::path& work) {
  std::mt19937_64 rng(31);
  int equal = 0;
  for (int i = 0; i < 100; ++i) {
    const DetectionDataset d = oracle::random_dataset(rng);
    const fs::path dir = work / "roundtrip" / std::to_string(i);
    save_dataset(d, dir);
    equal += load_dataset(dir) == d;
  }
  fs::remove_all(work / "roundtrip");
  return {equal == 100, std::to_string(equal) + "/100 datasets identical after save and load"};
}

Outcome memorization(const fs::path& config) {
  ExperimentConfig cfg = load_experiment_config(config);
  const DetectionDataset one = render_toy_dataset(cfg.real, 1);
  const JointTrainResult r = train_joint(one, cfg.model, cfg.schedule, cfg.joint_train);
  GenerationConfig g = cfg.generation;
  const DetectionDataset samples = generate_dataset(r.model, g, "memorization");
  Real mae = 0.0;
  for (const auto& item : samples.items) {
    const Tensor& a = item.image.pixels;
    const Tensor& b = one.items[0].image.pixels;
    Real sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a[i] - b[i]);
    mae += sum / static_cast<Real>(a.size());
  }
  mae /= static_cast<Real>(samples.size());
  return {r.final_loss < 0.1 && mae < 0.15,
          "final total loss " + fmt(r.final_loss) + " after " + std::to_string(cfg.joint_train.epochs) +
              " epochs; sample MAE " + fmt(mae) + " (unit range) over " + std::to_string(samples.size()) +
              " samples"};
}

struct Row {
  std::vector<Real> ap;
  Real mean = 0.0;
  Real sim_test_mean = 0.0;
};

Row table_row(const json& report, const std::string& augmentation) {
  for (const auto& row : report.at("table")) {
    if (row.at("augmentation") == augmentation) {
      Row r;
      r.ap = row.at("ap_values").get<std::vector<Real>>();
      r.mean = row.at("ap_mean").get<Real>();
      r.sim_test_mean = row.at("ap_sim_test_mean").get<Real>();
      return r;
    }
  }
  throw std::runtime_error("report has no row '" + augmentation + "'");
}

Real range_of(const std::vector<Real>& v) {
  return *std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end());
}

Outcome directional(const json& report, Real seconds) {
  const Row base = table_row(report, "None");
  const Row aug = table_row(report, "Generated 200");
  const Real spread = std::max(range_of(base.ap), range_of(aug.ap));
  const Real margin = aug.mean - base.mean;
  const Real gap = base.sim_test_mean - base.mean;
  return {base.ap.size() == 3 && margin > spread && gap >= 0.05 && seconds < 3600,
          "AP sim+200 " + fmt(aug.mean) + " vs sim " + fmt(base.mean) + " (margin " + fmt(margin) +
              ", seed spread " + fmt(spread) + "); sim-test " + fmt(base.sim_test_mean) +
              " vs real-test " + fmt(base.mean) + " (gap " + fmt(gap) + "); " + fmt(seconds, 3) + " s"};
}

Outcome scaling(const json& report) {
  const Row a100 = table_row(report, "Generated 100");
  const Row a500 = table_row(report, "Generated 500");
  return {a500.mean >= a100.mean, "mean AP with 500 generated " + fmt(a500.mean) + " vs 100 generated " + fmt(a100.mean)};
}

Outcome generator_health_check(const json& report) {
  Real worst = 1.0;
  for (const auto& run : report.at("runs")) {
    worst = std::min(worst, run.at("generated").at("with_boxes_fraction").get<Real>());
  }
  return {worst >= 0.6, "lowest fraction of generated images with a box over seeds: " + fmt(worst)};
}

int run_cli(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "diffaug");
  std::ostringstream o, e;
  const int code = cli_main(args, o, e);
  if (out) *out = o.str();
  return code;
}

Outcome cli_contract(const fs::path& fixtures, const fs::path& work, const json& report,
                     const std::string& table) {
  const auto t0 = Clock::now();
  std::vector<std::string> failures;
  for (const char* sub : {"render-toy", "train-diffusion", "generate", "mix", "resize", "train-detector",
                          "evaluate", "experiment", "report"}) {
    if (run_cli({sub, "--help"}) != 0) failures.push_back(std::string(sub) + " --help");
  }
  if (run_cli({}) != 2) failures.push_back("missing subcommand exit code");
  std::string out;
  if (run_cli({"evaluate", "--pred", (fixtures / "pred_perfect.json").string(), "--gt",
               (fixtures / "gt.json").string()},
              &out) != 0 ||
      json::parse(out).at("ap") != 1.0) {
    failures.push_back("evaluate perfect fixture");
  }
  if (run_cli({"evaluate", "--pred", (fixtures / "pred_bad_image.json").string(), "--gt",
               (fixtures / "gt.json").string()}) != 1) {
    failures.push_back("evaluate unknown image");
  }
  const fs::path dir = work / "cli";
  fs::remove_all(dir);
  bool data_ok = run_cli({"render-toy", "--domain", "sim", "--n", "2", "--out", (dir / "a").string()}) == 0 &&
                 run_cli({"render-toy", "--domain", "real", "--n", "3", "--out", (dir / "b").string()}) == 0 &&
                 run_cli({"mix", "--base", (dir / "a").string(), "--augment", (dir / "b").string(), "--out",
                          (dir / "m").string()}) == 0 &&
                 run_cli({"resize", "--data", (dir / "m").string(), "--side", "64", "--out",
                          (dir / "r").string()}) == 0;
  if (!data_ok || load_dataset(dir / "m").size() != 5 || load_dataset(dir / "r").items[0].image.width() != 64) {
    failures.push_back("render-toy/mix/resize fixtures");
  }
  const fs::path saved = work / "experiment" / "report.json";
  if (run_cli({"report", "--report", saved.string()}, &out) != 0 || out != table) {
    failures.push_back("report reproduces the experiment table");
  }
  fs::remove_all(dir);
  const Real secs = seconds_since(t0);

  // Layout: one row per base dataset, a baseline column and augmented columns.
  std::set<std::string> augs;
  for (const auto& row : report.at("table")) augs.insert(row.at("augmentation").get<std::string>());
  const bool layout = table.find("Base Dataset") != std::string::npos &&
                      table.find("None @ 32x32") != std::string::npos &&
                      table.find("Generated 200 @ 32x32") != std::string::npos &&
                      table.find("Sim 200") != std::string::npos && augs.count("None") && augs.size() >= 2;
  if (!layout) failures.push_back("experiment table layout");
  if (secs >= 5.0) failures.push_back("non-training subcommands took " + fmt(secs, 3) + " s");

  std::string detail = "9 subcommands, fixtures and table layout checked in " + fmt(secs, 3) + " s";
  for (const auto& f : failures) detail += "; FAILED " + f;
  return {failures.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  fs::path source = DIFFAUG_SOURCE_DIR;
  fs::path work = "acceptance_work";
  std::set<int> only;
  app.add_option("--source", source, "Repository root (configs/, tests/fixtures/)");
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  int failed = 0;
  auto report_line = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    if (!only.empty() && !only.count(id)) return;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail
              << " [" << fmt(seconds_since(t0), 3) << " s]" << std::endl;
  };

  report_line(1, "schedule numerics", schedule_numerics);
  report_line(2, "forward-process equivalence", forward_equivalence);
  report_line(3, "loss gradient", gradient_check);
  report_line(4, "AP oracle", ap_oracle);
  report_line(5, "serialization", [&] { return serialization(work); });
  report_line(6, "memorization", [&] { return memorization(source / "configs" / "memorize.json"); });

  const bool need_experiment = only.empty() || only.count(7) || only.count(8) || only.count(9);
  if (need_experiment) {
    json report;
    std::string table;
    Real seconds = 0.0;
    std::string error;
    const auto t0 = Clock::now();
    try {
      const fs::path out = work / "experiment";
      if (run_cli({"experiment", "--config", (source / "configs" / "acceptance.json").string(), "--out",
                   out.string(), "--quiet"},
                  &table) != 0) {
        throw std::runtime_error("experiment subcommand failed");
      }
      std::ifstream is(out / "report.json");
      report = json::parse(is);
    } catch (const std::exception& e) {
      error = e.what();
    }
    seconds = seconds_since(t0);
    auto guarded = [&](const std::function<Outcome()>& fn) {
      return [&, fn] { return error.empty() ? fn() : Outcome{false, "experiment failed: " + error}; };
    };
    if (error.empty()) std::cout << table << std::flush;
    report_line(7, "directional sim2real improvement", guarded([&] { return directional(report, seconds); }));
    report_line(8, "more generated data", guarded([&] { return scaling(report); }));
    report_line(9, "CLI contract", guarded([&] {
                  return cli_contract(source / "tests" / "fixtures", work, report, table);
                }));
    if (only.empty() || only.count(7)) {
      const auto o = error.empty() ? generator_health_check(report) : Outcome{false, error};
      failed += !o.pass;
      std::cout << (o.pass ? "PASS" : "FAIL") << " generator health: " << o.detail << std::endl;
    }
  }
  return failed == 0 ? 0 : 1;
}
