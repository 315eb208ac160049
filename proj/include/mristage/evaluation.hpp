#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mristage/imaging.hpp"
#include "mristage/manifest.hpp"
#include "mristage/model.hpp"

namespace mristage {

/// counts[t * K + p]: samples of true class t predicted as p.
struct ConfusionMatrix {
  std::size_t num_classes = 0;
  std::vector<std::size_t> counts;

  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts[truth * num_classes + predicted]; }
  std::size_t total() const;
  std::size_t trace() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct ClassMetrics {
  ClassLabel label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
  bool zero_division = false;  // some metric had a zero denominator and was set to 0
};

struct AverageMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct Aggregate {
  double accuracy = 0.0;
  AverageMetrics macro_avg;
  AverageMetrics weighted_avg;
};

struct EvaluationReport {
  std::vector<ClassMetrics> per_class;
  double accuracy = 0.0;
  AverageMetrics macro_avg;
  AverageMetrics weighted_avg;
  std::size_t total_support = 0;
  ConfusionMatrix confusion;
};

ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred,
                                 std::size_t num_classes);

/// Labels default to class_0 .. class_{K-1} when `classes` is empty.
std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm,
                                            std::span<const ClassLabel> classes = {});

/// Throws DatasetError("empty evaluation") when the matrix is empty.
Aggregate aggregate(std::span<const ClassMetrics> per_class, const ConfusionMatrix& cm);

EvaluationReport make_report(const ConfusionMatrix& cm, std::span<const ClassLabel> classes = {});

struct EvaluationResult {
  EvaluationReport report;
  std::vector<int> y_true;  // in stream order
  std::vector<int> y_pred;
};

/// Inference-mode predictions over an unshuffled stream.
EvaluationResult evaluate(const ModelGraph& graph, BatchStream& stream,
                          std::span<const ClassLabel> classes = {});

/// "MildDemented" -> "Mild Demented".
std::string display_name(const std::string& class_name);

/// Table with Class / Precision / Recall / F1-score / Support columns, then
/// accuracy (one-decimal percent) and macro / weighted average rows.
std::string render_report(const EvaluationReport& report);

nlohmann::json to_json(const EvaluationReport& report);
EvaluationReport report_from_json(const nlohmann::json& j);

}  // namespace mristage
