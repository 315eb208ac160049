#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mristage/checkpoint.hpp"
#include "mristage/imaging.hpp"
#include "mristage/model.hpp"

namespace mristage {

enum class OptimizerKind { Adamax, Adam };
enum class Monitor { ValLoss, ValAccuracy };

std::string_view to_string(OptimizerKind kind);
std::string_view to_string(Monitor monitor);
OptimizerKind parse_optimizer(std::string_view text);
Monitor parse_monitor(std::string_view text);

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::Adamax;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;

  void validate() const;
};

/// First-moment (m) and second-moment or infinity-norm (u) accumulators.
template <typename T>
struct MomentState {
  std::vector<T> m;
  std::vector<T> u;
  std::size_t t = 0;

  explicit MomentState(std::size_t n = 0) : m(n, T(0)), u(n, T(0)) {}
};

/// m <- b1 m + (1 - b1) g;  u <- max(b2 u, |g|);
/// theta <- theta - lr / (1 - b1^t) * m / (u + eps)
template <typename T>
void adamax_step(std::span<T> params, std::span<const T> grads, MomentState<T>& state,
                 const OptimizerSpec& spec) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.u.size() != params.size())
    throw ShapeError("adamax: parameter, gradient and state sizes differ");
  state.t += 1;
  const double step = spec.learning_rate / (1.0 - std::pow(spec.beta1, static_cast<double>(state.t)));
  const T b1 = static_cast<T>(spec.beta1), b2 = static_cast<T>(spec.beta2);
  const T eps = static_cast<T>(spec.epsilon), lr_t = static_cast<T>(step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.u[i] = std::max(b2 * state.u[i], std::abs(g));
    params[i] -= lr_t * state.m[i] / (state.u[i] + eps);
  }
}

/// Adam with the bias correction folded into the step size.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, MomentState<T>& state,
               const OptimizerSpec& spec) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.u.size() != params.size())
    throw ShapeError("adam: parameter, gradient and state sizes differ");
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double step =
      spec.learning_rate * std::sqrt(1.0 - std::pow(spec.beta2, t)) / (1.0 - std::pow(spec.beta1, t));
  const T b1 = static_cast<T>(spec.beta1), b2 = static_cast<T>(spec.beta2);
  const T eps = static_cast<T>(spec.epsilon), lr_t = static_cast<T>(step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.u[i] = b2 * state.u[i] + (T(1) - b2) * g * g;
    params[i] -= lr_t * state.m[i] / (std::sqrt(state.u[i]) + eps);
  }
}

/// Applies one optimizer rule across a fixed list of parameter arrays.
class Optimizer {
 public:
  Optimizer(OptimizerSpec spec, const std::vector<std::size_t>& sizes);

  void step(const std::vector<std::span<float>>& params, const std::vector<std::vector<float>>& grads);
  const OptimizerSpec& spec() const { return spec_; }
  std::size_t steps() const { return states_.empty() ? 0 : states_.front().t; }

 private:
  OptimizerSpec spec_;
  std::vector<MomentState<float>> states_;
};

inline constexpr double kProbabilityFloor = 1e-12;

/// Mean over rows of -sum_k y_k log(max(p_k, 1e-12)).
double categorical_crossentropy(std::span<const float> probs, std::span<const float> labels,
                                std::size_t num_classes);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double wall_seconds = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;

  std::vector<double> series(Monitor monitor) const;
  friend bool operator==(const TrainingHistory&, const TrainingHistory&) = default;
};

/// CSV header `epoch,train_loss,train_accuracy,val_loss,val_accuracy,wall_seconds`.
void write_history_csv(const TrainingHistory& history, std::ostream& out);
void save_history_csv(const TrainingHistory& history, const fs::path& file);
TrainingHistory load_history_csv(const fs::path& file);

struct StopDecision {
  bool stop = false;
  std::size_t best_epoch = 0;  // 1-based, earliest on ties
};

/// Stop once the monitored value has failed to strictly improve for
/// `patience` consecutive epochs (patience 0 stops at the first miss).
StopDecision early_stopping_decision(std::span<const double> values, bool lower_is_better,
                                     std::size_t patience);
StopDecision early_stopping_decision(const TrainingHistory& history, Monitor monitor,
                                     std::size_t patience);

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t patience = 5;
  Monitor monitor = Monitor::ValLoss;
  bool restore_best = true;
  std::uint64_t seed = 0;
  fs::path checkpoint_dir;  // empty keeps the best checkpoint in memory only
  bool record_wall_time = true;

  void validate() const;
};

struct TrainResult {
  TrainingHistory history;
  Checkpoint best;
  std::optional<fs::path> best_path;
  bool early_stopped = false;
  double initial_batch_loss = 0.0;  // loss of the very first batch, before any update
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Fits the trainable parameters of `graph`, validating after every epoch.
/// Throws NumericError naming the epoch and batch on a non-finite loss.
TrainResult train(ModelGraph& graph, BatchStream& train_stream, BatchStream& val_stream,
                  const OptimizerSpec& optimizer, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

std::string checkpoint_filename(std::size_t epoch, Monitor monitor, double value);

}  // namespace mristage
