#include "mristage/training.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace mristage {

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Adamax ? "adamax" : "adam";
}

std::string_view to_string(Monitor monitor) {
  return monitor == Monitor::ValLoss ? "val_loss" : "val_accuracy";
}

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "adamax") return OptimizerKind::Adamax;
  if (text == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + std::string(text) + "'");
}

Monitor parse_monitor(std::string_view text) {
  if (text == "val_loss") return Monitor::ValLoss;
  if (text == "val_accuracy") return Monitor::ValAccuracy;
  throw ConfigError("unknown monitor '" + std::string(text) + "'");
}

void OptimizerSpec::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  for (double b : {beta1, beta2})
    if (!(b >= 0.0 && b < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be >= 0");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
}

Optimizer::Optimizer(OptimizerSpec spec, const std::vector<std::size_t>& sizes) : spec_(spec) {
  spec_.validate();
  for (auto n : sizes) states_.emplace_back(n);
}

void Optimizer::step(const std::vector<std::span<float>>& params,
                     const std::vector<std::vector<float>>& grads) {
  if (params.size() != states_.size() || grads.size() != states_.size())
    throw ShapeError("optimizer was built for a different parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (spec_.kind == OptimizerKind::Adamax)
      adamax_step<float>(params[i], grads[i], states_[i], spec_);
    else
      adam_step<float>(params[i], grads[i], states_[i], spec_);
  }
}

double categorical_crossentropy(std::span<const float> probs, std::span<const float> labels,
                                std::size_t num_classes) {
  if (num_classes == 0 || probs.size() != labels.size() || probs.size() % num_classes != 0)
    throw ShapeError("cross-entropy: probability and label matrices differ in shape");
  const std::size_t batch = probs.size() / num_classes;
  if (batch == 0) throw ShapeError("cross-entropy of an empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (labels[i] == 0.0f) continue;
    total -= static_cast<double>(labels[i]) *
             std::log(std::max(static_cast<double>(probs[i]), kProbabilityFloor));
  }
  return total / static_cast<double>(batch);
}

std::vector<double> TrainingHistory::series(Monitor monitor) const {
  std::vector<double> out;
  for (const auto& e : epochs) out.push_back(monitor == Monitor::ValLoss ? e.val_loss : e.val_accuracy);
  return out;
}

namespace {

constexpr std::string_view kHistoryHeader =
    "epoch,train_loss,train_accuracy,val_loss,val_accuracy,wall_seconds";

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

void write_history_csv(const TrainingHistory& history, std::ostream& out) {
  out << kHistoryHeader << '\n';
  for (const auto& e : history.epochs) {
    out << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(e.train_accuracy) << ',' << fmt(e.val_loss)
        << ',' << fmt(e.val_accuracy) << ',' << fmt(e.wall_seconds) << '\n';
  }
}

void save_history_csv(const TrainingHistory& history, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + file.string());
  write_history_csv(history, out);
}

TrainingHistory load_history_csv(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DatasetError("cannot read history " + file.string());
  std::string line;
  if (!std::getline(in, line) || line != kHistoryHeader)
    throw DatasetError("unexpected history header in " + file.string());
  TrainingHistory history;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    EpochRecord e;
    char comma = 0;
    if (!(row >> e.epoch >> comma >> e.train_loss >> comma >> e.train_accuracy >> comma >> e.val_loss >>
          comma >> e.val_accuracy >> comma >> e.wall_seconds))
      throw DatasetError("malformed history row: " + line);
    history.epochs.push_back(e);
  }
  return history;
}

StopDecision early_stopping_decision(std::span<const double> values, bool lower_is_better,
                                     std::size_t patience) {
  if (values.empty()) throw std::invalid_argument("early stopping needs at least one epoch");
  StopDecision decision;
  double best = values[0];
  decision.best_epoch = 1;
  std::size_t wait = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    const bool improved = lower_is_better ? values[i] < best : values[i] > best;
    if (improved) {
      best = values[i];
      decision.best_epoch = i + 1;
      wait = 0;
      decision.stop = false;
    } else {
      ++wait;
      decision.stop = wait >= patience;
      if (decision.stop) break;
    }
  }
  return decision;
}

StopDecision early_stopping_decision(const TrainingHistory& history, Monitor monitor,
                                     std::size_t patience) {
  const auto values = history.series(monitor);
  return early_stopping_decision(values, monitor == Monitor::ValLoss, patience);
}

std::string checkpoint_filename(std::size_t epoch, Monitor monitor, double value) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "best_epoch%03zu_%s%.4f.ckpt", epoch, std::string(to_string(monitor)).c_str(),
                value);
  return buf;
}

namespace {

struct PassTotals {
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::size_t seen = 0;

  void add(double batch_loss, std::span<const float> probs, const Batch& batch) {
    loss_sum += batch_loss * static_cast<double>(batch.size);
    const auto predicted = argmax_rows(probs, batch.num_classes);
    for (std::size_t i = 0; i < batch.size; ++i)
      if (predicted[i] == batch.label_index(i)) ++correct;
    seen += batch.size;
  }
  double loss() const { return loss_sum / static_cast<double>(seen); }
  double accuracy() const { return static_cast<double>(correct) / static_cast<double>(seen); }
};

}  // namespace

TrainResult train(ModelGraph& graph, BatchStream& train_stream, BatchStream& val_stream,
                  const OptimizerSpec& optimizer_spec, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  optimizer_spec.validate();
  if (!graph.head_trainable()) throw ConfigError("training requires a trainable head");
  if (train_stream.num_classes() != graph.spec().num_classes ||
      val_stream.num_classes() != graph.spec().num_classes)
    throw ShapeError("stream class count differs from the model head");

  const bool tune_backbone = graph.backbone_trainable();
  std::vector<std::size_t> sizes;
  if (tune_backbone)
    for (const Tensor* t : std::as_const(graph.backbone()).parameters()) sizes.push_back(t->values.size());
  for (auto n : {graph.head().w1.size(), graph.head().b1.size(), graph.head().w2.size(), graph.head().b2.size()})
    sizes.push_back(n);
  Optimizer optimizer(optimizer_spec, sizes);

  auto parameter_spans = [&] {
    std::vector<std::span<float>> spans;
    if (tune_backbone)
      for (Tensor* t : graph.backbone().parameters()) spans.emplace_back(t->values);
    auto& h = graph.head();
    spans.emplace_back(h.w1);
    spans.emplace_back(h.b1);
    spans.emplace_back(h.w2);
    spans.emplace_back(h.b2);
    return spans;
  };

  Rng dropout_rng(derive_seed(config.seed, 0x44524f50ULL));
  TrainResult result;
  std::optional<double> best_value;
  const bool lower_is_better = config.monitor == Monitor::ValLoss;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    PassTotals train_totals;
    train_stream.start_epoch(epoch - 1);
    std::size_t batch_no = 0;
    while (auto batch = train_stream.next()) {
      ++batch_no;
      const auto view = ImageBatchView::of(*batch);
      BackboneTrace backbone_trace;
      const auto embeddings = tune_backbone ? graph.backbone().embed_traced(view, backbone_trace)
                                            : graph.backbone().embed(view);
      HeadTrace<float> trace;
      const auto probs = head_forward<float>(graph.head(), graph.spec(), embeddings, batch->size, true,
                                             &dropout_rng, &trace);
      const double loss = categorical_crossentropy(probs, batch->labels, batch->num_classes);
      if (!std::isfinite(loss))
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no));
      if (epoch == 1 && batch_no == 1) result.initial_batch_loss = loss;
      train_totals.add(loss, probs, *batch);

      auto head_grads = head_backward<float>(graph.head(), trace, batch->labels, batch->size);
      std::vector<std::vector<float>> grads;
      if (tune_backbone) graph.backbone().backward(backbone_trace, head_grads.input, grads);
      grads.push_back(std::move(head_grads.w1));
      grads.push_back(std::move(head_grads.b1));
      grads.push_back(std::move(head_grads.w2));
      grads.push_back(std::move(head_grads.b2));
      optimizer.step(parameter_spans(), grads);
    }

    PassTotals val_totals;
    val_stream.start_epoch(0);
    while (auto batch = val_stream.next()) {
      const auto probs = forward(graph, ImageBatchView::of(*batch), false);
      val_totals.add(categorical_crossentropy(probs, batch->labels, batch->num_classes), probs, *batch);
    }
    if (!std::isfinite(val_totals.loss()))
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = train_totals.loss();
    record.train_accuracy = train_totals.accuracy();
    record.val_loss = val_totals.loss();
    record.val_accuracy = val_totals.accuracy();
    if (config.record_wall_time)
      record.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.history.epochs.push_back(record);
    if (on_epoch) on_epoch(record);

    const double monitored = lower_is_better ? record.val_loss : record.val_accuracy;
    const bool improved = !best_value || (lower_is_better ? monitored < *best_value : monitored > *best_value);
    if (improved) {
      best_value = monitored;
      result.best = make_checkpoint(graph, epoch, to_string(config.monitor), monitored);
      if (!config.checkpoint_dir.empty()) {
        if (result.best_path) fs::remove(*result.best_path);
        result.best_path = config.checkpoint_dir / checkpoint_filename(epoch, config.monitor, monitored);
        save_checkpoint(result.best, *result.best_path);
      }
    }

    if (early_stopping_decision(result.history, config.monitor, config.patience).stop) {
      result.early_stopped = epoch < config.epochs;
      break;
    }
  }

  if (config.restore_best) graph.import_weights(result.best.arrays);
  return result;
}

}  // namespace mristage
