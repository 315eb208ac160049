// mristage: scan, audit, train and evaluate dementia-stage MRI classifiers.

#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "mristage/run.hpp"

using namespace mristage;

namespace {

std::optional<SplitFractions> parse_fractions(const std::string& text) {
  SplitFractions f;
  char c1 = 0, c2 = 0;
  std::istringstream in(text);
  if (!(in >> f.train >> c1 >> f.val >> c2 >> f.test) || c1 != ',' || c2 != ',') return std::nullopt;
  return f;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transfer-learning pipeline for staged-dementia MRI classification"};
  app.require_subcommand(1);

  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backbone;
  std::optional<std::string> output_dir;
  bool paper_faithful_shuffle = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "JSON run config");
    sub->add_option("--seed", seed, "Random seed");
    sub->add_option("--output-dir", output_dir, "Run directory");
  };

  // scan
  ScanOptions scan;
  std::string fractions_text;
  auto* scan_cmd = app.add_subcommand("scan", "Scan dataset trees into a split manifest CSV");
  add_common(scan_cmd);
  scan_cmd->add_option("--augmented-root", scan.augmented_root, "Tree of augmented images (train)");
  scan_cmd->add_option("--original-root", scan.original_root, "Tree of original images (val/test)");
  scan_cmd->add_option("--root", scan.root, "Single tree to split with --fractions");
  scan_cmd->add_option("--fractions", fractions_text, "train,val,test ratios for --root")->default_str("0.8,0.1,0.1");
  scan_cmd->add_option("--val-fraction", scan.val_fraction, "Share of originals assigned to val");
  scan_cmd->add_option("--eval-partition", scan.eval_partition, "disjoint | shared");
  std::string scan_output;
  scan_cmd->add_option("--output", scan_output, "Manifest CSV path (default <output-dir>/manifest.csv)");

  // audit
  AuditOptions audit;
  auto* audit_cmd = app.add_subcommand("audit", "Report byte-identical files shared by train and val/test");
  add_common(audit_cmd);
  audit_cmd->add_option("--manifest", audit.manifest, "Manifest CSV (default <output-dir>/manifest.csv)");
  audit_cmd->add_option("--json", audit.json_output, "Also write the report as JSON here");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the classification head and write a run directory");
  add_common(train_cmd);
  train_cmd->add_option("--backbone", backbone, "stub | pretrained_xception")
      ->check(CLI::IsMember({"stub", "pretrained_xception"}));
  train_cmd->add_flag("--paper-faithful-shuffle", paper_faithful_shuffle, "Disable shuffling on every stream");
  std::optional<std::size_t> epochs;
  std::optional<std::string> augmented_root, original_root, manifest_path, embeddings;
  train_cmd->add_option("--epochs", epochs, "Maximum number of epochs");
  train_cmd->add_option("--augmented-root", augmented_root, "Tree of augmented images (train)");
  train_cmd->add_option("--original-root", original_root, "Tree of original images (val/test)");
  train_cmd->add_option("--manifest", manifest_path, "Pre-split manifest CSV");
  train_cmd->add_option("--backbone-embeddings", embeddings, "Embedding file for pretrained_xception");
  bool no_wall_time = false;
  train_cmd->add_flag("--no-wall-time", no_wall_time, "Record wall_seconds as 0 for byte-stable history");

  // evaluate
  EvaluateOptions eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Classification report for a trained run directory");
  add_common(eval_cmd);
  eval_cmd->add_option("--run-dir", eval.run_dir, "Run directory (alias of --output-dir)");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint archive (default: best in run dir)");
  eval_cmd->add_option("--split", eval.split, "test | val | train");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInputError;
  }

  RunConfig config;
  try {
    if (!config_file.empty()) config = RunConfig::load(config_file);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInputError;
  }
  if (seed) config.seed = *seed;
  if (output_dir) config.output_dir = *output_dir;
  const fs::path run_dir = config.output_dir;

  if (scan_cmd->parsed()) {
    if (!fractions_text.empty()) {
      auto f = parse_fractions(fractions_text);
      if (!f) {
        std::cerr << "error: --fractions expects train,val,test\n";
        return kExitInputError;
      }
      scan.fractions = *f;
    }
    if (scan.augmented_root.empty()) scan.augmented_root = config.augmented_root;
    if (scan.original_root.empty()) scan.original_root = config.original_root;
    if (scan_cmd->count("--val-fraction") == 0) scan.val_fraction = config.val_fraction;
    if (scan_cmd->count("--eval-partition") == 0) scan.eval_partition = config.eval_partition;
    scan.seed = config.seed;
    scan.output = scan_output.empty() ? (run_dir / "manifest.csv").string() : scan_output;
    return cmd_scan(scan, std::cout, std::cerr);
  }
  if (audit_cmd->parsed()) {
    if (audit.manifest.empty()) audit.manifest = (run_dir / "manifest.csv").string();
    if (audit.json_output.empty()) audit.json_output = (fs::path(audit.manifest).parent_path() / "leakage.json").string();
    return cmd_audit(audit, std::cout, std::cerr);
  }
  if (train_cmd->parsed()) {
    if (backbone) config.backbone = *backbone;
    if (paper_faithful_shuffle) config.paper_faithful_shuffle = true;
    if (epochs) config.epochs = *epochs;
    if (augmented_root) config.augmented_root = *augmented_root;
    if (original_root) config.original_root = *original_root;
    if (manifest_path) config.manifest = *manifest_path;
    if (embeddings) config.backbone_embeddings = *embeddings;
    if (no_wall_time) config.record_wall_time = false;
    return cmd_train(config, std::cout, std::cerr);
  }
  if (eval_cmd->parsed()) {
    if (eval.run_dir.empty()) eval.run_dir = run_dir.string();
    return cmd_evaluate(eval, std::cout, std::cerr);
  }
  return kExitInputError;
}
