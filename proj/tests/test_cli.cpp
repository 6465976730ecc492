#include <unistd.h>
#include <stdexcept>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "diffaug/cli.hpp"
#include "diffaug/data.hpp"

using namespace diffaug;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kFixtures = DIFFAUG_FIXTURE_DIR;
const fs::path kConfigs = DIFFAUG_CONFIG_DIR;

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "diffaug");
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("diffaug_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"mix", "--base"}).code == 2);
  CHECK(run({"render-toy", "--domain", "moon", "--n", "2", "--out", "x"}).code == 2);
  CHECK(run({"evaluate", "--iou", "0.5"}).code == 2);
  CHECK(run({"evaluate", "--pred", (kFixtures / "pred_perfect.json").string()}).code == 2);
  CHECK(run({"evaluate", "--pred", (kFixtures / "pred_perfect.json").string(), "--gt",
             (kFixtures / "gt.json").string(), "--interp", "eleven"})
            .code == 2);
}

TEST_CASE("help on every subcommand") {
  const std::vector<std::pair<std::string, std::vector<std::string>>> subs{
      {"render-toy", {"--domain", "--n", "--out", "--side", "--config", "--seed"}},
      {"train-diffusion", {"--data", "--out", "--epochs", "--loss-log", "--config", "--seed"}},
      {"generate", {"--checkpoint", "--out", "--n", "--threshold", "--config", "--seed"}},
      {"mix", {"--base", "--augment", "--out"}},
      {"resize", {"--data", "--side", "--out"}},
      {"train-detector", {"--data", "--out", "--side", "--epochs", "--loss-log", "--config", "--seed"}},
      {"evaluate", {"--pred", "--gt", "--checkpoint", "--data", "--iou", "--interp", "--min-score", "--plot", "--out"}},
      {"experiment", {"--config", "--seed", "--out", "--format", "--quiet"}},
      {"report", {"--report", "--format", "--out"}}};
  auto top = run({"--help"});
  CHECK(top.code == 0);
  for (const auto& [name, flags] : subs) {
    CAPTURE(name);
    CHECK(top.out.find(name) != std::string::npos);
    auto r = run({name, "--help"});
    CHECK(r.code == 0);
    for (const auto& f : flags) {
      CAPTURE(f);
      CHECK(r.out.find(f) != std::string::npos);
    }
  }
}

TEST_CASE("evaluate fixtures") {
  auto r = run({"evaluate", "--pred", (kFixtures / "pred_perfect.json").string(), "--gt",
                (kFixtures / "gt.json").string(), "--iou", "0.5"});
  REQUIRE(r.code == 0);
  auto j = json::parse(r.out);
  CHECK(j["ap"] == 1.0);
  CHECK(j["counts"]["num_tp"] == 3);

  auto dir = temp_dir("eval");
  auto m = run({"evaluate", "--pred", (kFixtures / "pred_mixed.json").string(), "--gt",
                (kFixtures / "gt.json").string(), "--plot", (dir / "pr.svg").string(), "--out",
                (dir / "report.json").string()});
  REQUIRE(m.code == 0);
  auto jm = json::parse(m.out);
  CHECK(jm["counts"]["num_tp"] == 2);
  CHECK(jm["counts"]["num_fp"] == 1);
  CHECK(jm["ap"].get<double>() < 1.0);
  CHECK(fs::exists(dir / "pr.svg"));
  CHECK(json::parse(std::ifstream(dir / "report.json")) == jm);

  auto bad = run({"evaluate", "--pred", (kFixtures / "pred_bad_image.json").string(), "--gt",
                  (kFixtures / "gt.json").string()});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("7") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("dataset subcommands") {
  auto dir = temp_dir("data");
  REQUIRE(run({"render-toy", "--domain", "sim", "--n", "2", "--out", (dir / "a").string()}).code == 0);
  REQUIRE(run({"render-toy", "--domain", "real", "--n", "3", "--seed", "4", "--out", (dir / "b").string()}).code == 0);
  auto m = run({"mix", "--base", (dir / "a").string(), "--augment", (dir / "b").string(), "--out",
                (dir / "m").string()});
  REQUIRE(m.code == 0);
  CHECK(load_dataset(dir / "m").size() == 5);
  CHECK(json::parse(m.out)["images"] == 5);

  // Rendering is idempotent.
  REQUIRE(run({"render-toy", "--domain", "real", "--n", "3", "--seed", "4", "--out", (dir / "b2").string()}).code == 0);
  CHECK(load_dataset(dir / "b") == load_dataset(dir / "b2"));

  auto rs = run({"resize", "--data", (dir / "m").string(), "--side", "64", "--out", (dir / "big").string()});
  REQUIRE(rs.code == 0);
  auto big = load_dataset(dir / "big");
  CHECK(big.size() == 5);
  CHECK(big.items[0].image.width() == 64);
  CHECK(run({"resize", "--data", (dir / "m").string(), "--side", "8", "--out", (dir / "tiny").string()}).code == 1);
  CHECK_FALSE(fs::exists(dir / "tiny"));
  CHECK(run({"mix", "--base", (dir / "a").string(), "--augment", (dir / "missing").string(), "--out",
             (dir / "x").string()})
            .code == 2);
  fs::remove_all(dir);
}

TEST_CASE("training, generation and checkpoint evaluation") {
  auto dir = temp_dir("train");
  const std::string cfg = (kConfigs / "smoke.json").string();
  auto td = run({"train-diffusion", "--config", cfg, "--out", (dir / "joint.ckpt").string(), "--loss-log",
                 (dir / "loss.jsonl").string()});
  REQUIRE(td.code == 0);
  CHECK(fs::exists(dir / "loss.jsonl"));
  auto g = run({"generate", "--config", cfg, "--checkpoint", (dir / "joint.ckpt").string(), "--n", "3",
                "--out", (dir / "gen").string()});
  REQUIRE(g.code == 0);
  auto gen = load_dataset(dir / "gen");
  CHECK(gen.size() == 3);
  CHECK(gen.count_tag(SourceTag::kGenerated) == 3);
  CHECK(gen.provenance.contains("checkpoint_hash"));
  CHECK(gen.provenance.contains("config_hash"));

  // Same inputs, same outputs.
  REQUIRE(run({"generate", "--config", cfg, "--checkpoint", (dir / "joint.ckpt").string(), "--n", "3",
               "--out", (dir / "gen2").string()})
              .code == 0);
  CHECK(load_dataset(dir / "gen2") == gen);

  REQUIRE(run({"render-toy", "--config", cfg, "--domain", "sim", "--n", "6", "--out", (dir / "sim").string()}).code == 0);
  auto tdet = run({"train-detector", "--config", cfg, "--data", (dir / "sim").string(), "--out",
                   (dir / "det.ckpt").string()});
  REQUIRE(tdet.code == 0);
  auto ev = run({"evaluate", "--checkpoint", (dir / "det.ckpt").string(), "--data", (dir / "sim").string()});
  REQUIRE(ev.code == 0);
  auto j = json::parse(ev.out);
  CHECK(j["ap"].get<double>() >= 0.0);

  // Joint checkpoint where a detector checkpoint is expected.
  CHECK(run({"evaluate", "--checkpoint", (dir / "joint.ckpt").string(), "--data", (dir / "sim").string()}).code == 1);
  fs::remove_all(dir);
}

TEST_CASE("config errors exit 1 with the field path") {
  auto dir = temp_dir("cfg");
  std::ofstream(dir / "bad.json") << R"({"schedule": {"T": 0}})";
  auto r = run({"experiment", "--config", (dir / "bad.json").string(), "--out", (dir / "o").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("schedule") != std::string::npos);
  std::ofstream(dir / "typo.json") << R"({"trian": {}})";
  auto t = run({"experiment", "--config", (dir / "typo.json").string()});
  CHECK(t.code == 1);
  CHECK(t.err.find("trian") != std::string::npos);
  std::ofstream(dir / "syntax.json") << "{\n \"seed\": ,\n}";
  auto s = run({"experiment", "--config", (dir / "syntax.json").string()});
  CHECK(s.code == 1);
  CHECK(s.err.find("2:") != std::string::npos);
  CHECK(run({"experiment", "--config", (dir / "missing.json").string()}).code == 1);
  fs::remove_all(dir);
}

TEST_CASE("experiment and report") {
  auto dir = temp_dir("exp");
  const std::string cfg = (kConfigs / "smoke.json").string();
  auto r = run({"experiment", "--config", cfg, "--out", dir.string(), "--quiet"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("Base Dataset") != std::string::npos);
  CHECK(r.out.find("None @ 32x32") != std::string::npos);
  CHECK(r.out.find("Generated 2 @ 32x32") != std::string::npos);
  CHECK(r.out.find("Generated 4 @ 32x32") != std::string::npos);
  CHECK(r.out.find("Sim 8") != std::string::npos);
  auto report = json::parse(std::ifstream(dir / "report.json"));
  CHECK(report["runs"].size() == 2);
  CHECK(report["table"].size() == 3);
  CHECK(report.contains("config_hash"));
  CHECK(fs::exists(dir / "seed_1" / "joint.ckpt"));
  CHECK(fs::exists(dir / "seed_2" / "generated" / "annotations.json"));

  auto rep = run({"report", "--report", (dir / "report.json").string()});
  REQUIRE(rep.code == 0);
  CHECK(rep.out == r.out);
  auto md = run({"report", "--report", (dir / "report.json").string(), "--format", "markdown", "--out",
                 (dir / "table.md").string()});
  REQUIRE(md.code == 0);
  CHECK(md.out.find("| Base Dataset |") == 0);
  CHECK(fs::exists(dir / "table.md"));

  // Identical inputs reproduce the report.
  auto dir2 = temp_dir("exp2");
  REQUIRE(run({"experiment", "--config", cfg, "--out", dir2.string(), "--quiet"}).code == 0);
  CHECK(json::parse(std::ifstream(dir2 / "report.json")) == report);

  std::ofstream(dir / "notreport.json") << "{}";
  CHECK(run({"report", "--report", (dir / "notreport.json").string()}).code == 1);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}
