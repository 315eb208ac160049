#include "mristage/evaluation.hpp"

#include <cctype>
#include <cstdio>
#include <sstream>

namespace mristage {

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < num_classes; ++k) n += at(k, k);
  return n;
}

ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred,
                                 std::size_t num_classes) {
  if (y_true.size() != y_pred.size())
    throw std::invalid_argument("y_true has " + std::to_string(y_true.size()) + " entries but y_pred has " +
                                std::to_string(y_pred.size()));
  ConfusionMatrix cm{num_classes, std::vector<std::size_t>(num_classes * num_classes, 0)};
  const auto in_range = [&](int v) { return v >= 0 && static_cast<std::size_t>(v) < num_classes; };
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (!in_range(y_true[i]) || !in_range(y_pred[i]))
      throw std::out_of_range("class index outside [0, " + std::to_string(num_classes) + ") at position " +
                              std::to_string(i));
    ++cm.counts[static_cast<std::size_t>(y_true[i]) * num_classes + static_cast<std::size_t>(y_pred[i])];
  }
  return cm;
}

std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm, std::span<const ClassLabel> classes) {
  const std::size_t K = cm.num_classes;
  if (!classes.empty() && classes.size() != K)
    throw std::invalid_argument("class roster size differs from the confusion matrix");
  std::vector<ClassMetrics> out;
  out.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    std::size_t tp = cm.at(k, k), row = 0, col = 0;
    for (std::size_t j = 0; j < K; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    ClassMetrics m;
    m.label = classes.empty() ? ClassLabel{static_cast<int>(k), "class_" + std::to_string(k)} : classes[k];
    m.support = row;
    if (col > 0) m.precision = static_cast<double>(tp) / static_cast<double>(col);
    else m.zero_division = true;
    if (row > 0) m.recall = static_cast<double>(tp) / static_cast<double>(row);
    else m.zero_division = true;
    if (m.precision + m.recall > 0.0) m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    out.push_back(std::move(m));
  }
  return out;
}

Aggregate aggregate(std::span<const ClassMetrics> per_class, const ConfusionMatrix& cm) {
  const std::size_t total = cm.total();
  if (total == 0) throw DatasetError("empty evaluation");
  Aggregate a;
  a.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  if (per_class.empty()) return a;
  std::size_t support = 0;
  for (const auto& m : per_class) {
    a.macro_avg.precision += m.precision;
    a.macro_avg.recall += m.recall;
    a.macro_avg.f1 += m.f1;
    const double w = static_cast<double>(m.support);
    a.weighted_avg.precision += w * m.precision;
    a.weighted_avg.recall += w * m.recall;
    a.weighted_avg.f1 += w * m.f1;
    support += m.support;
  }
  const double k = static_cast<double>(per_class.size());
  a.macro_avg = {a.macro_avg.precision / k, a.macro_avg.recall / k, a.macro_avg.f1 / k};
  if (support > 0) {
    const double s = static_cast<double>(support);
    a.weighted_avg = {a.weighted_avg.precision / s, a.weighted_avg.recall / s, a.weighted_avg.f1 / s};
  }
  return a;
}

EvaluationReport make_report(const ConfusionMatrix& cm, std::span<const ClassLabel> classes) {
  EvaluationReport report;
  report.per_class = per_class_metrics(cm, classes);
  const Aggregate a = aggregate(report.per_class, cm);
  report.accuracy = a.accuracy;
  report.macro_avg = a.macro_avg;
  report.weighted_avg = a.weighted_avg;
  for (const auto& m : report.per_class) report.total_support += m.support;
  report.confusion = cm;
  return report;
}

EvaluationResult evaluate(const ModelGraph& graph, BatchStream& stream, std::span<const ClassLabel> classes) {
  if (stream.options().shuffle) throw ConfigError("evaluation needs an unshuffled stream");
  EvaluationResult result;
  stream.start_epoch(0);
  while (auto batch = stream.next()) {
    const auto probs = forward(graph, ImageBatchView::of(*batch), false);
    const auto predicted = argmax_rows(probs, batch->num_classes);
    for (std::size_t i = 0; i < batch->size; ++i) {
      result.y_true.push_back(batch->label_index(i));
      result.y_pred.push_back(predicted[i]);
    }
  }
  result.report = make_report(confusion_matrix(result.y_true, result.y_pred, stream.num_classes()), classes);
  return result;
}

std::string display_name(const std::string& class_name) {
  std::string out;
  for (std::size_t i = 0; i < class_name.size(); ++i) {
    const auto c = static_cast<unsigned char>(class_name[i]);
    if (i > 0 && std::isupper(c) && std::islower(static_cast<unsigned char>(class_name[i - 1]))) out += ' ';
    out += static_cast<char>(c);
  }
  return out;
}

namespace {

std::string two_decimals(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string pad_left(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

std::string pad_right(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::string render_report(const EvaluationReport& report) {
  std::size_t name_width = std::string("Weighted avg").size();
  for (const auto& m : report.per_class) name_width = std::max(name_width, display_name(m.label.name).size());
  name_width += 2;

  std::ostringstream out;
  auto row = [&](const std::string& name, const std::string& p, const std::string& r, const std::string& f1,
                 const std::string& support) {
    out << pad_right(name, name_width) << pad_left(p, 9) << pad_left(r, 8) << pad_left(f1, 10)
        << pad_left(support, 9) << '\n';
  };
  row("Class", "Precision", "Recall", "F1-score", "Support");
  std::vector<std::string> flagged;
  for (const auto& m : report.per_class) {
    const std::string name = display_name(m.label.name);
    row(m.zero_division ? name + " *" : name, two_decimals(m.precision), two_decimals(m.recall),
        two_decimals(m.f1), std::to_string(m.support));
    if (m.zero_division) flagged.push_back(name);
  }
  out << '\n';
  char pct[32];
  std::snprintf(pct, sizeof(pct), "%.1f%%", report.accuracy * 100.0);
  const std::string total = std::to_string(report.total_support);
  row("Accuracy", "", "", pct, total);
  row("Macro avg", two_decimals(report.macro_avg.precision), two_decimals(report.macro_avg.recall),
      two_decimals(report.macro_avg.f1), total);
  row("Weighted avg", two_decimals(report.weighted_avg.precision), two_decimals(report.weighted_avg.recall),
      two_decimals(report.weighted_avg.f1), total);
  if (!flagged.empty()) {
    out << "\n* zero denominator, metric reported as 0:";
    for (std::size_t i = 0; i < flagged.size(); ++i) out << (i ? ", " : " ") << flagged[i];
    out << '\n';
  }
  return out.str();
}

namespace {

nlohmann::json averages(const AverageMetrics& a) {
  return {{"precision", a.precision}, {"recall", a.recall}, {"f1", a.f1}};
}

AverageMetrics averages_from(const nlohmann::json& j) {
  return {j.at("precision").get<double>(), j.at("recall").get<double>(), j.at("f1").get<double>()};
}

}  // namespace

nlohmann::json to_json(const EvaluationReport& report) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& m : report.per_class)
    per_class.push_back({{"label", m.label.name},
                         {"precision", m.precision},
                         {"recall", m.recall},
                         {"f1", m.f1},
                         {"support", m.support},
                         {"zero_division", m.zero_division}});
  nlohmann::json cm = nlohmann::json::array();
  for (std::size_t t = 0; t < report.confusion.num_classes; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < report.confusion.num_classes; ++p) row.push_back(report.confusion.at(t, p));
    cm.push_back(std::move(row));
  }
  return {{"per_class", per_class},
          {"accuracy", report.accuracy},
          {"macro_avg", averages(report.macro_avg)},
          {"weighted_avg", averages(report.weighted_avg)},
          {"total_support", report.total_support},
          {"confusion_matrix", cm}};
}

EvaluationReport report_from_json(const nlohmann::json& j) {
  EvaluationReport report;
  int index = 0;
  for (const auto& m : j.at("per_class")) {
    ClassMetrics cm;
    cm.label = {index++, m.at("label").get<std::string>()};
    cm.precision = m.at("precision").get<double>();
    cm.recall = m.at("recall").get<double>();
    cm.f1 = m.at("f1").get<double>();
    cm.support = m.at("support").get<std::size_t>();
    cm.zero_division = m.value("zero_division", false);
    report.per_class.push_back(std::move(cm));
  }
  report.accuracy = j.at("accuracy").get<double>();
  report.macro_avg = averages_from(j.at("macro_avg"));
  report.weighted_avg = averages_from(j.at("weighted_avg"));
  report.total_support = j.at("total_support").get<std::size_t>();
  if (j.contains("confusion_matrix")) {
    const auto& rows = j.at("confusion_matrix");
    report.confusion.num_classes = rows.size();
    for (const auto& r : rows)
      for (const auto& v : r) report.confusion.counts.push_back(v.get<std::size_t>());
  }
  return report;
}

}  // namespace mristage
