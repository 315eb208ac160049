#include <sstream>

#include "doctest.h"
#include "mristage/error.hpp"
#include "mristage/run.hpp"
#include "support/pipeline.hpp"

using namespace mristage;
using fixtures::TempDir;

namespace {

const std::string kCli = MRISTAGE_CLI;

std::string quoted(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("config overlay and validation") {
  const auto c = RunConfig::from_json({{"epochs", 3}, {"optimizer", "adam"}});
  CHECK(c.epochs == 3);
  CHECK(c.optimizer_spec().kind == OptimizerKind::Adam);
  CHECK(c.seed == 42);
  CHECK(c.input_size == 244);
  CHECK(c.batch_size == 32);
  CHECK(c.dropout1 == 0.3);
  CHECK(c.dropout2 == 0.25);
  CHECK(c.dense_units == 128);
  CHECK(RunConfig::from_json(c.to_json()).to_json() == c.to_json());
  CHECK_THROWS_WITH_AS(RunConfig::from_json({{"epoch", 3}}), doctest::Contains("unknown config key 'epoch'"),
                       ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"epochs", "many"}}), ConfigError);

  RunConfig bad;
  bad.backbone = "pretrained_xception";
  bad.augment = true;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.monitor = "train_loss";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.eval_partition = "mixed";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("train then evaluate writes a complete run directory") {
  TempDir tmp;
  pipeline::make_dataset(tmp / "data");
  const auto run_dir = tmp / "run";
  const auto config = RunConfig::from_json(pipeline::small_config(tmp / "data", run_dir));

  std::ostringstream out, err;
  REQUIRE(cmd_train(config, out, err) == kExitOk);
  for (const char* name : {"config.resolved.json", "manifest.csv", "model_summary.txt", "history.csv"})
    CHECK(fs::exists(run_dir / name));
  CHECK(out.str().find("best epoch") != std::string::npos);
  const auto ckpt = find_best_checkpoint(run_dir / "checkpoints");
  CHECK(ckpt.filename().string().rfind("best_epoch", 0) == 0);

  const auto resolved = RunConfig::load(run_dir / "config.resolved.json");
  CHECK(resolved.to_json() == config.to_json());

  EvaluateOptions eval;
  eval.run_dir = run_dir.string();
  std::ostringstream eout, eerr;
  REQUIRE(cmd_evaluate(eval, eout, eerr) == kExitOk);
  const auto report = nlohmann::json::parse(pipeline::read_file(run_dir / "report.json"));
  CHECK(report.at("seed").get<std::uint64_t>() == 42);
  CHECK(report.at("split") == "test");
  CHECK(report.at("total_support").get<std::size_t>() == 12);  // 6 originals per class, half to test
  CHECK(pipeline::read_file(run_dir / "report.txt") == eout.str());
  CHECK(pipeline::read_file(run_dir / "curves.csv") == pipeline::read_file(run_dir / "history.csv"));

  SUBCASE("missing checkpoint") {
    eval.checkpoint = (tmp / "nothing.ckpt").string();
    std::ostringstream o, e;
    CHECK(cmd_evaluate(eval, o, e) == kExitInputError);
    CHECK(e.str().find("checkpoint not found") != std::string::npos);
  }
  SUBCASE("shared partition falls back to validation") {
    auto shared = config;
    shared.eval_partition = "shared";
    shared.output_dir = (tmp / "shared").string();
    std::ostringstream o, e;
    REQUIRE(cmd_train(shared, o, e) == kExitOk);
    EvaluateOptions ev;
    ev.run_dir = shared.output_dir;
    REQUIRE(cmd_evaluate(ev, o, e) == kExitOk);
    const auto r = nlohmann::json::parse(pipeline::read_file(tmp / "shared" / "report.json"));
    CHECK(r.at("total_support").get<std::size_t>() == 24);
  }
}

TEST_CASE("command errors map to exit codes") {
  TempDir tmp;
  std::ostringstream out, err;
  RunConfig config;
  config.augmented_root = (tmp / "none").string();
  config.original_root = (tmp / "none").string();
  config.output_dir = (tmp / "run").string();
  CHECK(cmd_train(config, out, err) == kExitInputError);
  CHECK(err.str().find("empty dataset") != std::string::npos);

  EvaluateOptions eval;
  eval.run_dir = (tmp / "absent").string();
  CHECK(cmd_evaluate(eval, out, err) == kExitInputError);

  AuditOptions audit;
  audit.manifest = (tmp / "absent.csv").string();
  CHECK(cmd_audit(audit, out, err) == kExitInputError);
}

TEST_CASE("pretrained backbone without embeddings is an input error") {
  TempDir tmp;
  pipeline::make_dataset(tmp / "data", 2, 2, 8);
  auto j = pipeline::small_config(tmp / "data", tmp / "run", 1);
  j["backbone"] = "pretrained_xception";
  std::ostringstream out, err;
  CHECK(cmd_train(RunConfig::from_json(j), out, err) == kExitInputError);
  CHECK(err.str().find("backbone_embeddings") != std::string::npos);
}

TEST_CASE("command-line tool") {
  TempDir tmp;
  pipeline::make_dataset(tmp / "data", 4, 4, 16);
  const auto log = tmp / "log.txt";

  SUBCASE("scan and audit") {
    const auto manifest = tmp / "scan" / "manifest.csv";
    CHECK(pipeline::run_cli(kCli,
                            "scan --augmented-root " + quoted(tmp / "data" / "augmented") + " --original-root " +
                                quoted(tmp / "data" / "original") + " --output " + quoted(manifest),
                            log) == 0);
    CHECK(pipeline::read_file(log).find("train: MildDemented=4") != std::string::npos);
    CHECK(pipeline::run_cli(kCli, "audit --manifest " + quoted(manifest), log) == 0);
    CHECK(fs::exists(tmp / "scan" / "leakage.json"));

    // plant a copy of a training file among the originals
    fs::copy_file(tmp / "data" / "augmented" / "NonDemented" / "NonDemented_0.png",
                  tmp / "data" / "original" / "NonDemented" / "planted.png");
    CHECK(pipeline::run_cli(kCli,
                            "scan --augmented-root " + quoted(tmp / "data" / "augmented") + " --original-root " +
                                quoted(tmp / "data" / "original") + " --eval-partition shared --output " +
                                quoted(manifest),
                            log) == 0);
    CHECK(pipeline::run_cli(kCli, "audit --manifest " + quoted(manifest), log) == 3);
    const auto report = nlohmann::json::parse(pipeline::read_file(tmp / "scan" / "leakage.json"));
    CHECK(report.at("collision_count") == 1);
  }
  SUBCASE("single-tree scan with fractions") {
    CHECK(pipeline::run_cli(kCli,
                            "scan --root " + quoted(tmp / "data" / "original") +
                                " --fractions 0.5,0.25,0.25 --output " + quoted(tmp / "m.csv"),
                            log) == 0);
    CHECK(pipeline::run_cli(kCli,
                            "scan --root " + quoted(tmp / "data" / "original") + " --fractions 0.5,0.5 --output " +
                                quoted(tmp / "m.csv"),
                            log) == 2);
  }
  SUBCASE("bad invocations") {
    CHECK(pipeline::run_cli(kCli, "", log) == 2);
    CHECK(pipeline::run_cli(kCli, "train --epochs nope", log) == 2);
    CHECK(pipeline::run_cli(kCli, "train --config " + quoted(tmp / "missing.json"), log) == 2);
    CHECK(pipeline::run_cli(kCli, "evaluate --run-dir " + quoted(tmp / "nowhere"), log) == 2);
    CHECK(pipeline::run_cli(kCli, "--help", log) == 0);
  }
  SUBCASE("train and evaluate") {
    pipeline::write_json(tmp / "cfg" / "run.json", pipeline::small_config(tmp / "data", tmp / "run", 2));
    CHECK(pipeline::run_cli(kCli, "train --config " + quoted(tmp / "cfg" / "run.json") + " --seed 7", log) == 0);
    CHECK(pipeline::run_cli(kCli, "evaluate --run-dir " + quoted(tmp / "run"), log) == 0);
    CHECK(pipeline::read_file(log).find("Weighted avg") != std::string::npos);
    const auto report = nlohmann::json::parse(pipeline::read_file(tmp / "run" / "report.json"));
    CHECK(report.at("seed") == 7);
  }
}
