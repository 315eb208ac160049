#include "mristage/run.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include "mristage/checkpoint.hpp"
#include "mristage/evaluation.hpp"

namespace mristage {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RunConfig, augmented_root, original_root, manifest, val_fraction,
                                   eval_partition, input_size, batch_size, shuffle_train,
                                   paper_faithful_shuffle, workers, augment, aug_horizontal_flip,
                                   aug_rotation_degrees, aug_width_shift, aug_height_shift, aug_zoom,
                                   backbone, stub_embedding_dim, backbone_embeddings, fine_tune_backbone,
                                   dropout1, dense_units, activation, dropout2, optimizer, learning_rate,
                                   beta1, beta2, epsilon, epochs, patience, monitor, restore_best,
                                   record_wall_time, seed, output_dir)

nlohmann::json RunConfig::to_json() const { return *this; }

RunConfig RunConfig::from_json(const nlohmann::json& j, RunConfig base) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  nlohmann::json merged = base.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!merged.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    merged[key] = value;
  }
  try {
    return merged.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
}

RunConfig RunConfig::from_json(const nlohmann::json& j) { return from_json(j, RunConfig{}); }

RunConfig RunConfig::load(const fs::path& file) { return load(file, RunConfig{}); }

RunConfig RunConfig::load(const fs::path& file, RunConfig base) {
  std::ifstream in(file);
  if (!in) throw DatasetError("cannot read config " + file.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + file.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, std::move(base));
}

void RunConfig::validate() const {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
  partition();
  if (input_size < 1) throw ConfigError("input_size must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (backbone != "stub" && backbone != "pretrained_xception")
    throw ConfigError("backbone must be 'stub' or 'pretrained_xception'");
  if (backbone == "pretrained_xception" && augment)
    throw ConfigError("pretrained_xception reads precomputed embeddings and cannot use augment=true");
  head_spec(2).validate();
  optimizer_spec().validate();
  train_config({}).validate();
  if (augment) augmentation()->validate();
}

HeadSpec RunConfig::head_spec(std::size_t num_classes) const {
  HeadSpec spec;
  spec.dropout1 = dropout1;
  spec.dense_units = dense_units;
  spec.activation = activation;
  spec.dropout2 = dropout2;
  spec.num_classes = num_classes;
  return spec;
}

OptimizerSpec RunConfig::optimizer_spec() const {
  OptimizerSpec spec;
  spec.kind = parse_optimizer(optimizer);
  spec.learning_rate = learning_rate;
  spec.beta1 = beta1;
  spec.beta2 = beta2;
  spec.epsilon = epsilon;
  return spec;
}

TrainConfig RunConfig::train_config(const fs::path& checkpoint_dir) const {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.patience = patience;
  tc.monitor = parse_monitor(monitor);
  tc.restore_best = restore_best;
  tc.seed = seed;
  tc.checkpoint_dir = checkpoint_dir;
  tc.record_wall_time = record_wall_time;
  return tc;
}

EvalPartition RunConfig::partition() const {
  if (eval_partition == "disjoint") return EvalPartition::Disjoint;
  if (eval_partition == "shared") return EvalPartition::Shared;
  throw ConfigError("eval_partition must be 'disjoint' or 'shared'");
}

std::optional<AugmentationPolicy> RunConfig::augmentation() const {
  if (!augment) return std::nullopt;
  AugmentationPolicy p;
  p.horizontal_flip = aug_horizontal_flip;
  p.rotation_degrees = aug_rotation_degrees;
  p.width_shift = aug_width_shift;
  p.height_shift = aug_height_shift;
  p.zoom = aug_zoom;
  p.seed = seed;
  return p;
}

DatasetManifest prepare_manifest(const RunConfig& config, std::ostream& log) {
  DatasetManifest manifest;
  if (!config.manifest.empty()) {
    manifest = load_manifest_csv(config.manifest);
  } else {
    if (config.augmented_root.empty() || config.original_root.empty())
      throw DatasetError("config needs augmented_root and original_root (or manifest)");
    const auto augmented = scan_dataset(config.augmented_root, Source::Augmented);
    const auto original = scan_dataset(config.original_root, Source::Original);
    manifest = assign_paper_splits(augmented, original, config.val_fraction, config.seed, config.partition());
  }
  for (const auto& w : manifest.warnings) log << "warning: " << w << '\n';
  return manifest;
}

std::unique_ptr<FeatureExtractor> make_configured_backbone(const RunConfig& config) {
  if (config.backbone == "stub") return stub_backbone(config.seed, config.stub_embedding_dim);
  if (config.backbone_embeddings.empty())
    throw DatasetError("pretrained_xception needs backbone_embeddings (see tools/export_xception_embeddings.py)");
  return std::make_unique<PrecomputedBackbone>(config.backbone_embeddings);
}

nlohmann::json to_json(const LeakageReport& report) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [train, eval] : report.exact_collisions)
    pairs.push_back({{"train", train.generic_string()}, {"eval", eval.generic_string()}});
  return {{"collision_count", report.collision_count}, {"exact_collisions", pairs}};
}

std::string render_leakage(const LeakageReport& report) {
  std::ostringstream out;
  out << "leakage audit: " << report.collision_count << " byte-identical train/eval pair(s)\n";
  for (const auto& [train, eval] : report.exact_collisions)
    out << "  train: " << train.generic_string() << "\n  eval:  " << eval.generic_string() << '\n';
  return out.str();
}

fs::path find_best_checkpoint(const fs::path& dir) {
  std::vector<fs::path> found;
  std::error_code ec;
  if (fs::is_directory(dir, ec))
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.path().extension() == ".ckpt") found.push_back(entry.path());
  if (found.empty()) throw DatasetError("no checkpoint found in " + dir.string());
  std::sort(found.begin(), found.end());
  return found.back();
}

namespace {

template <typename Fn>
int guarded(std::ostream& err, Fn&& body) {
  try {
    return body();
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumericFailure;
  } catch (const DatasetError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInputError;
  } catch (const std::invalid_argument& e) {  // ConfigError, ShapeError
    err << "error: " << e.what() << '\n';
    return kExitInputError;
  } catch (const std::out_of_range& e) {
    err << "error: " << e.what() << '\n';
    return kExitInputError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInputError;
  }
}

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + file.string());
  out << text;
}

void print_distribution(const DatasetManifest& manifest, std::ostream& out) {
  for (Split split : {Split::Train, Split::Val, Split::Test, Split::Unassigned}) {
    const auto counts = class_distribution(manifest, split);
    std::size_t total = 0;
    for (auto c : counts) total += c;
    if (total == 0) continue;
    out << to_string(split) << ":";
    for (std::size_t k = 0; k < counts.size(); ++k) out << ' ' << manifest.classes[k].name << '=' << counts[k];
    out << " (total " << total << ")\n";
  }
}

}  // namespace

int cmd_scan(const ScanOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    DatasetManifest manifest;
    if (!options.root.empty()) {
      manifest = stratified_split(scan_dataset(options.root, Source::Original), options.fractions, options.seed);
    } else {
      if (options.augmented_root.empty() || options.original_root.empty())
        throw DatasetError("scan needs --root, or both --augmented-root and --original-root");
      RunConfig cfg;
      cfg.eval_partition = options.eval_partition;
      const auto augmented = scan_dataset(options.augmented_root, Source::Augmented);
      const auto original = scan_dataset(options.original_root, Source::Original);
      manifest = assign_paper_splits(augmented, original, options.val_fraction, options.seed, cfg.partition());
    }
    for (const auto& w : manifest.warnings) err << "warning: " << w << '\n';
    save_manifest_csv(manifest, options.output);
    out << "wrote " << manifest.records.size() << " records (" << manifest.classes.size() << " classes) to "
        << options.output << '\n';
    print_distribution(manifest, out);
    return static_cast<int>(kExitOk);
  });
}

int cmd_audit(const AuditOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto report = audit_leakage(load_manifest_csv(options.manifest));
    out << render_leakage(report);
    if (!options.json_output.empty()) write_text(options.json_output, to_json(report).dump(2) + "\n");
    return static_cast<int>(report.collision_count == 0 ? kExitOk : kExitLeakage);
  });
}

int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    config.validate();
    const fs::path run_dir = config.output_dir;
    fs::create_directories(run_dir);
    write_text(run_dir / "config.resolved.json", config.to_json().dump(2) + "\n");

    const auto manifest = prepare_manifest(config, err);
    save_manifest_csv(manifest, run_dir / "manifest.csv");
    print_distribution(manifest, out);

    auto train_records = manifest.records_in(Split::Train);
    auto val_records = manifest.records_in(Split::Val);
    if (val_records.empty()) val_records = manifest.records_in(Split::Test);
    if (train_records.empty()) throw DatasetError("manifest has no train records");
    if (val_records.empty()) throw DatasetError("manifest has no validation or test records");

    const std::size_t K = manifest.num_classes();
    BatchOptions train_opts;
    train_opts.batch_size = config.batch_size;
    train_opts.shuffle = config.shuffle_train && !config.paper_faithful_shuffle;
    train_opts.seed = config.seed;
    train_opts.augmentation = config.augmentation();
    train_opts.input_size = config.input_size;
    train_opts.workers = config.workers;
    BatchOptions val_opts = train_opts;
    val_opts.shuffle = false;
    val_opts.augmentation.reset();

    BatchStream train_stream(std::move(train_records), K, train_opts);
    BatchStream val_stream(std::move(val_records), K, val_opts);

    ModelGraph graph =
        build_model(make_configured_backbone(config), config.head_spec(K), config.seed, config.input_size);
    graph.set_backbone_trainable(config.fine_tune_backbone);
    write_text(run_dir / "model_summary.txt", render_summary(parameter_summary(graph)));

    const fs::path ckpt_dir = run_dir / "checkpoints";
    fs::remove_all(ckpt_dir);
    const auto result = train(graph, train_stream, val_stream, config.optimizer_spec(),
                              config.train_config(ckpt_dir), [&](const EpochRecord& e) {
                                out << "epoch " << e.epoch << ": loss " << e.train_loss << " acc "
                                    << e.train_accuracy << " val_loss " << e.val_loss << " val_acc "
                                    << e.val_accuracy << '\n';
                              });
    save_history_csv(result.history, run_dir / "history.csv");
    out << "best epoch " << result.best.epoch << " (" << config.monitor << " " << result.best.monitored_value
        << ")";
    if (result.best_path) out << " saved to " << result.best_path->generic_string();
    out << '\n';
    return static_cast<int>(kExitOk);
  });
}

int cmd_evaluate(const EvaluateOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const fs::path run_dir = options.run_dir;
    if (!fs::is_directory(run_dir)) throw DatasetError("run directory not found: " + run_dir.string());
    const auto config = RunConfig::load(run_dir / "config.resolved.json");
    const auto manifest = load_manifest_csv(run_dir / "manifest.csv");
    const fs::path ckpt_path =
        options.checkpoint.empty() ? find_best_checkpoint(run_dir / "checkpoints") : fs::path(options.checkpoint);
    const ModelGraph graph = restore_model(load_checkpoint(ckpt_path));
    if (graph.spec().num_classes != manifest.num_classes())
      throw ShapeError("checkpoint predicts " + std::to_string(graph.spec().num_classes) +
                       " classes but the manifest has " + std::to_string(manifest.num_classes()));

    const Split wanted = parse_split(options.split);
    auto records = manifest.records_in(wanted);
    if (records.empty() && wanted == Split::Test) records = manifest.records_in(Split::Val);
    if (records.empty()) throw DatasetError("no records in split '" + options.split + "'");

    BatchOptions opts;
    opts.batch_size = config.batch_size;
    opts.input_size = config.input_size;
    opts.workers = config.workers;
    BatchStream stream(std::move(records), manifest.num_classes(), opts);
    const auto result = evaluate(graph, stream, manifest.classes);

    nlohmann::json report = to_json(result.report);
    report["seed"] = config.seed;
    report["split"] = options.split;
    report["checkpoint"] = ckpt_path.filename().generic_string();
    const std::string table = render_report(result.report);
    write_text(run_dir / "report.json", report.dump(2) + "\n");
    write_text(run_dir / "report.txt", table);
    if (fs::exists(run_dir / "history.csv"))
      fs::copy_file(run_dir / "history.csv", run_dir / "curves.csv", fs::copy_options::overwrite_existing);
    else
      err << "warning: no history.csv in " << run_dir << "; curves.csv not written\n";
    out << table;
    return static_cast<int>(kExitOk);
  });
}

}  // namespace mristage
