#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "json.hpp"
#include "mristage/imaging.hpp"
#include "mristage/manifest.hpp"
#include "mristage/model.hpp"
#include "mristage/training.hpp"

namespace mristage {

/// Process exit codes shared by every command.
enum ExitCode : int {
  kExitOk = 0,
  kExitInputError = 2,
  kExitLeakage = 3,
  kExitNumericFailure = 4,
};

/// Every knob of a training run. Serialized as one flat JSON object; keys
/// match the member names.
struct RunConfig {
  std::string augmented_root;
  std::string original_root;
  std::string manifest;  // optional pre-split manifest CSV; overrides the roots
  double val_fraction = 0.5;
  std::string eval_partition = "disjoint";  // disjoint | shared

  int input_size = kDefaultInputSize;
  std::size_t batch_size = kDefaultBatchSize;
  bool shuffle_train = true;
  bool paper_faithful_shuffle = false;  // forces shuffle off for every stream
  std::size_t workers = 1;

  bool augment = false;
  bool aug_horizontal_flip = true;
  double aug_rotation_degrees = 10.0;
  double aug_width_shift = 0.1;
  double aug_height_shift = 0.1;
  double aug_zoom = 0.0;

  std::string backbone = "stub";  // stub | pretrained_xception
  std::size_t stub_embedding_dim = 64;
  std::string backbone_embeddings;  // embedding file for pretrained_xception
  bool fine_tune_backbone = false;

  double dropout1 = 0.3;
  std::size_t dense_units = 128;
  std::string activation = "relu";
  double dropout2 = 0.25;

  std::string optimizer = "adamax";
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;

  std::size_t epochs = 50;
  std::size_t patience = 5;
  std::string monitor = "val_loss";
  bool restore_best = true;
  bool record_wall_time = true;

  std::uint64_t seed = 42;
  std::string output_dir = "runs/latest";

  nlohmann::json to_json() const;
  /// Overlay the keys present in `j` onto `base`; unknown keys are an error.
  static RunConfig from_json(const nlohmann::json& j, RunConfig base);
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const fs::path& file, RunConfig base);
  static RunConfig load(const fs::path& file);

  /// Value checks only; paths are checked when a command needs them.
  void validate() const;

  HeadSpec head_spec(std::size_t num_classes) const;
  OptimizerSpec optimizer_spec() const;
  TrainConfig train_config(const fs::path& checkpoint_dir) const;
  EvalPartition partition() const;
  std::optional<AugmentationPolicy> augmentation() const;
};

/// Build or load the split manifest described by `config`.
DatasetManifest prepare_manifest(const RunConfig& config, std::ostream& log);

std::unique_ptr<FeatureExtractor> make_configured_backbone(const RunConfig& config);

struct ScanOptions {
  std::string augmented_root;
  std::string original_root;
  std::string root;  // single tree, split with `fractions`
  SplitFractions fractions;
  double val_fraction = 0.5;
  std::string eval_partition = "disjoint";
  std::uint64_t seed = 42;
  std::string output = "manifest.csv";
};

struct AuditOptions {
  std::string manifest;
  std::string json_output;  // empty: no JSON file
};

struct EvaluateOptions {
  std::string run_dir;
  std::string checkpoint;  // empty: the best checkpoint in <run_dir>/checkpoints
  std::string split = "test";
};

int cmd_scan(const ScanOptions& options, std::ostream& out, std::ostream& err);
int cmd_audit(const AuditOptions& options, std::ostream& out, std::ostream& err);
int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_evaluate(const EvaluateOptions& options, std::ostream& out, std::ostream& err);

nlohmann::json to_json(const LeakageReport& report);
std::string render_leakage(const LeakageReport& report);

/// The single *.ckpt under `dir`; throws DatasetError when absent.
fs::path find_best_checkpoint(const fs::path& dir);

}  // namespace mristage
