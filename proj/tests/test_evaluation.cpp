#include <sstream>

#include "doctest.h"
#include "mristage/error.hpp"
#include "mristage/evaluation.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "support/reference_report.hpp"

using namespace mristage;

namespace {

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

std::string squeeze(const std::string& s) {
  std::istringstream in(s);
  std::string word, out;
  while (in >> word) out += (out.empty() ? "" : " ") + word;
  return out;
}

}  // namespace

TEST_CASE("hand-checked 3-class example") {
  const std::vector<int> t = {0, 0, 1, 1, 2, 2};
  const std::vector<int> p = {0, 1, 1, 1, 2, 0};
  const auto cm = confusion_matrix(t, p, 3);
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(0, 1) == 1);
  CHECK(cm.at(2, 0) == 1);
  CHECK(cm.total() == 6);
  const auto r = make_report(cm);
  CHECK(r.per_class[0].label.name == "class_0");
  CHECK(r.per_class[0].precision == doctest::Approx(0.5));
  CHECK(r.per_class[1].precision == doctest::Approx(2.0 / 3));
  CHECK(r.per_class[1].recall == 1.0);
  CHECK(r.per_class[1].f1 == doctest::Approx(0.8));
  CHECK(r.accuracy == doctest::Approx(4.0 / 6));
}

TEST_CASE("perfect predictions") {
  const std::vector<int> y = {0, 1, 2, 3, 3, 2};
  const auto r = make_report(confusion_matrix(y, y, 4));
  for (const auto& m : r.per_class) {
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
    CHECK(m.f1 == 1.0);
  }
  CHECK(r.accuracy == 1.0);
  CHECK(r.macro_avg.f1 == 1.0);
}

TEST_CASE("zero denominators are reported as 0 and flagged") {
  const std::vector<int> t = {0, 0, 1};
  const std::vector<int> p = {0, 0, 0};
  const auto r = make_report(confusion_matrix(t, p, 3));
  CHECK(r.per_class[1].precision == 0.0);
  CHECK(r.per_class[1].zero_division);
  CHECK(r.per_class[2].zero_division);
  CHECK(r.per_class[2].support == 0);
  const auto text = render_report(r);
  CHECK(text.find("class_1 *") != std::string::npos);
  CHECK(text.find("zero denominator") != std::string::npos);
}

TEST_CASE("input validation") {
  const std::vector<int> a = {0, 1}, b = {0};
  CHECK_THROWS_AS(confusion_matrix(a, b, 2), std::invalid_argument);
  const std::vector<int> bad = {0, 5};
  CHECK_THROWS_AS(confusion_matrix(a, bad, 2), std::out_of_range);
  const std::vector<int> none;
  const auto empty = confusion_matrix(none, none, 3);
  CHECK_THROWS_WITH_AS(make_report(empty), doctest::Contains("empty evaluation"), DatasetError);
}

TEST_CASE("metrics agree with the counting oracle") {
  Rng rng(2024);
  const int Ks[] = {2, 3, 4, 7};
  for (int trial = 0; trial < 200; ++trial) {
    const int K = Ks[trial % 4];
    const std::size_t n = 1 + uniform_index(rng, 500);
    std::vector<int> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(K)));
      p[i] = uniform01(rng) < 0.6 ? t[i] : static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(K)));
    }
    const auto r = make_report(confusion_matrix(t, p, static_cast<std::size_t>(K)));
    const auto o = oracles::brute_force_metrics(t, p, K);
    for (int k = 0; k < K; ++k) {
      const auto& m = r.per_class[static_cast<std::size_t>(k)];
      CHECK(std::abs(m.precision - o.precision[k]) < 1e-9);
      CHECK(std::abs(m.recall - o.recall[k]) < 1e-9);
      CHECK(std::abs(m.f1 - o.f1[k]) < 1e-9);
      CHECK(m.support == o.support[k]);
    }
    CHECK(std::abs(r.accuracy - o.accuracy) < 1e-9);
    CHECK(std::abs(r.macro_avg.precision - o.macro_p) < 1e-9);
    CHECK(std::abs(r.macro_avg.recall - o.macro_r) < 1e-9);
    CHECK(std::abs(r.macro_avg.f1 - o.macro_f1) < 1e-9);
    CHECK(std::abs(r.weighted_avg.precision - o.weighted_p) < 1e-9);
    CHECK(std::abs(r.weighted_avg.recall - o.weighted_r) < 1e-9);
    CHECK(std::abs(r.weighted_avg.f1 - o.weighted_f1) < 1e-9);
    // recall-weighted average is accuracy
    CHECK(std::abs(r.weighted_avg.recall - r.accuracy) < 1e-9);
  }
}

TEST_CASE("reference report fixture renders the published rows") {
  const auto fixture = reference_report::predictions();
  std::vector<ClassLabel> classes;
  for (std::size_t k = 0; k < 4; ++k) classes.push_back({static_cast<int>(k), std::string(kDefaultClassNames[k])});
  const auto report = make_report(confusion_matrix(fixture.y_true, fixture.y_pred, 4), classes);
  const auto lines = split_lines(render_report(report));
  REQUIRE(lines.size() >= 9);
  CHECK(squeeze(lines[0]) == "Class Precision Recall F1-score Support");
  for (std::size_t k = 0; k < 4; ++k) CHECK(squeeze(lines[k + 1]) == reference_report::kRows[k]);
  CHECK(lines[5].empty());
  CHECK(squeeze(lines[6]) == "Accuracy 99.6% 10196");
  CHECK(lines[7].rfind("Macro avg", 0) == 0);
  CHECK(lines[8].rfind("Weighted avg", 0) == 0);
  // columns line up under the header
  CHECK(lines[1].size() == lines[0].size());
  CHECK(lines[4].size() == lines[0].size());
}

TEST_CASE("JSON and table agree") {
  const auto fixture = reference_report::predictions();
  const auto report = make_report(confusion_matrix(fixture.y_true, fixture.y_pred, 4));
  const auto j = to_json(report);
  const auto back = report_from_json(j);
  CHECK(back.accuracy == report.accuracy);
  CHECK(back.total_support == 10196);
  CHECK(back.confusion == report.confusion);
  CHECK(render_report(back) == render_report(report));
  CHECK(j.at("per_class").size() == 4);
  CHECK(j.at("per_class")[2].at("support").get<std::size_t>() == 2811);
}

TEST_CASE("display names") {
  CHECK(display_name("MildDemented") == "Mild Demented");
  CHECK(display_name("VeryMildDemented") == "Very Mild Demented");
  CHECK(display_name("class_3") == "class_3");
}

TEST_CASE("evaluate runs inference over an unshuffled stream") {
  const auto graph = build_model(stub_backbone(3, 8), HeadSpec{}, 1, 16);
  std::vector<int> labels = {0, 1, 2, 3, 0, 1};
  BatchOptions opts;
  opts.input_size = 16;
  opts.batch_size = 4;
  BatchStream stream(fixtures::synthetic_records(labels), 4, opts, fixtures::quadrant_loader(16, 2));
  const auto r = evaluate(graph, stream);
  CHECK(r.y_true == labels);
  CHECK(r.y_pred.size() == 6);
  CHECK(r.report.total_support == 6);

  opts.shuffle = true;
  BatchStream shuffled(fixtures::synthetic_records(labels), 4, opts, fixtures::quadrant_loader(16, 2));
  CHECK_THROWS_AS(evaluate(graph, shuffled), ConfigError);
}
