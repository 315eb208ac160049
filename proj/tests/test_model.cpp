#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "mristage/checkpoint.hpp"
#include "mristage/error.hpp"
#include "mristage/model.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace mristage;
using fixtures::TempDir;
using gradcheck::max_gradient_error;
using gradcheck::random_head;

namespace {

std::vector<float> random_batch(std::size_t n, int size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n * static_cast<std::size_t>(size * size * 3));
  for (auto& x : v) x = static_cast<float>(uniform(rng, -1.0, 1.0));
  return v;
}

ImageBatchView view_of(const std::vector<float>& data, std::size_t n, int size) {
  ImageBatchView v;
  v.data = data;
  v.size = n;
  v.height = v.width = size;
  return v;
}

}  // namespace

TEST_CASE("parameter accounting for the 2048-d backbone") {
  const auto graph = build_model(stub_backbone(1, 2048), HeadSpec{}, 7);
  const auto s = parameter_summary(graph);
  REQUIRE(s.layers.size() == 6);
  CHECK(s.layers[1].kind == "Flatten");
  CHECK(s.layers[1].param_count == 0);
  CHECK(s.layers[2].kind == "Dropout");
  CHECK(s.layers[2].param_count == 0);
  CHECK(s.layers[3].param_count == 262272);
  CHECK(s.layers[4].param_count == 0);
  CHECK(s.layers[5].param_count == 516);
  CHECK(s.head_total == 262788);
  CHECK(s.total == s.head_total + graph.backbone().parameter_count());
  CHECK(s.frozen == graph.backbone().parameter_count());
  CHECK(s.trainable == 262788);
  CHECK(render_summary(s).find("dense_1 (Dense)") != std::string::npos);
}

TEST_CASE("degenerate head sizes") {
  HeadSpec spec;
  spec.dense_units = 1;
  spec.num_classes = 2;
  const auto s = parameter_summary(build_model(stub_backbone(1, 1), spec, 0, 8));
  CHECK(s.layers[3].param_count == 2);
  CHECK(s.layers[5].param_count == 4);
  std::size_t sum = 0;
  for (const auto& l : s.layers) sum += l.param_count;
  CHECK(sum == s.total);
}

TEST_CASE("head spec validation") {
  HeadSpec spec;
  spec.dropout1 = 1.0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = HeadSpec{};
  spec.num_classes = 1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = HeadSpec{};
  spec.dense_units = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = HeadSpec{};
  spec.activation = "tanh";
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  CHECK(head_spec_from_json(to_json(HeadSpec{})).dense_units == 128);
}

TEST_CASE("initialization is seeded Glorot with zero biases") {
  const auto a = build_model(stub_backbone(3, 16), HeadSpec{}, 99, 8);
  const auto b = build_model(stub_backbone(3, 16), HeadSpec{}, 99, 8);
  const auto c = build_model(stub_backbone(3, 16), HeadSpec{}, 100, 8);
  CHECK(a.export_weights() == b.export_weights());
  CHECK(a.head().w1 != c.head().w1);
  const double limit = std::sqrt(6.0 / (16 + 128));
  for (float v : a.head().w1) CHECK(std::abs(v) <= limit);
  for (float v : a.head().b1) CHECK(v == 0.0f);
  for (float v : a.head().b2) CHECK(v == 0.0f);
  CHECK_FALSE(a.backbone_trainable());
}

TEST_CASE("softmax rows are distributions") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t D = 1 + uniform_index(rng, 12), B = 1 + uniform_index(rng, 8);
    const std::size_t K = 2 + uniform_index(rng, 6);
    HeadSpec spec;
    spec.dense_units = 1 + uniform_index(rng, 10);
    spec.num_classes = K;
    auto w = random_head(D, spec.dense_units, K, trial);
    for (auto& v : w.w2) v *= 20.0;  // large logits exercise the max shift
    std::vector<double> x(B * D);
    for (auto& v : x) v = uniform(rng, -5.0, 5.0);
    const auto p = head_forward<double>(w, spec, x, B, false, nullptr);
    for (std::size_t b = 0; b < B; ++b) {
      double sum = 0;
      for (std::size_t k = 0; k < K; ++k) {
        const double v = p[b * K + k];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        sum += v;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("inference mode is deterministic and dropout is inactive") {
  const auto graph = build_model(stub_backbone(4, 8), HeadSpec{}, 2, 16);
  const auto data = random_batch(3, 16, 1);
  const auto view = view_of(data, 3, 16);
  const auto p1 = forward(graph, view, false);
  const auto p2 = forward(graph, view, false);
  CHECK(p1 == p2);
  Rng rng(1);
  const auto t1 = forward(graph, view, true, &rng);
  CHECK(t1 != p1);
  CHECK_THROWS_AS(forward(graph, view, true, nullptr), std::invalid_argument);
}

TEST_CASE("forward rejects wrong image shapes") {
  const auto graph = build_model(stub_backbone(4, 8), HeadSpec{}, 2, 16);
  const auto data = random_batch(2, 12, 1);
  CHECK_THROWS_WITH_AS(forward(graph, view_of(data, 2, 12), false), doctest::Contains("expects 16x16x3"),
                       ShapeError);
  const auto short_data = random_batch(1, 16, 1);
  CHECK_THROWS_AS(forward(graph, view_of(short_data, 2, 16), false), ShapeError);
}

TEST_CASE("analytic head gradients match central differences") {
  HeadSpec spec;
  spec.dense_units = 5;
  spec.num_classes = 4;
  SUBCASE("dropout off") {
    HeadSpec no_dropout = spec;
    no_dropout.dropout1 = no_dropout.dropout2 = 0.0;
    CHECK(max_gradient_error(no_dropout, false) < 1e-4);
  }
  SUBCASE("fixed dropout masks") { CHECK(max_gradient_error(spec, true) < 1e-4); }
}

TEST_CASE("stub backbone gradients match central differences") {
  // float data path, so a looser tolerance than the double-precision head check
  StubBackbone backbone(6, 3);
  const auto data = random_batch(2, 8, 3);
  const auto view = view_of(data, 2, 8);
  Rng rng(2);
  std::vector<float> upstream(2 * 3);
  for (auto& v : upstream) v = static_cast<float>(uniform(rng, -1.0, 1.0));
  auto objective = [&](const StubBackbone& b) {
    const auto e = b.embed(view);
    double s = 0;
    for (std::size_t i = 0; i < e.size(); ++i) s += static_cast<double>(e[i]) * upstream[i];
    return s;
  };
  BackboneTrace trace;
  backbone.embed_traced(view, trace);
  std::vector<std::vector<float>> grads;
  backbone.backward(trace, upstream, grads);
  auto params = backbone.parameters();
  const float eps = 1e-2f;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p]->values.size(); i += 7) {
      const float saved = params[p]->values[i];
      params[p]->values[i] = saved + eps;
      const double up = objective(backbone);
      params[p]->values[i] = saved - eps;
      const double down = objective(backbone);
      params[p]->values[i] = saved;
      CHECK((up - down) / (2 * eps) == doctest::Approx(grads[p][i]).epsilon(1e-2).scale(1e-3));
    }
}

TEST_CASE("argmax ties go to the lowest index") {
  const std::vector<float> rows = {0.25f, 0.25f, 0.25f, 0.25f, 0.1f, 0.6f, 0.6f, 0.1f};
  CHECK(argmax_rows(rows, 4) == std::vector<int>{0, 1});
  CHECK_THROWS_AS(argmax_rows(rows, 3), ShapeError);
}

TEST_CASE("copies are deep and fine-tuning is opt-in") {
  auto graph = build_model(stub_backbone(2, 4), HeadSpec{}, 1, 8);
  auto copy = graph;
  graph.backbone().parameters()[0]->values[0] += 1.0f;
  CHECK(copy.backbone().parameters()[0]->values[0] != graph.backbone().parameters()[0]->values[0]);
  graph.set_backbone_trainable(true);
  CHECK(parameter_summary(graph).frozen == 0);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  TempDir tmp;
  auto graph = build_model(stub_backbone(5, 12), HeadSpec{}, 17, 16);
  graph.head().w1[3] = 1.0f / 3.0f;
  graph.head().b2[1] = -0.0f;
  const auto ckpt = make_checkpoint(graph, 4, "val_loss", 0.123456789);
  save_checkpoint(ckpt, tmp / "a.ckpt");
  const auto loaded = load_checkpoint(tmp / "a.ckpt");
  CHECK(loaded.arrays == ckpt.arrays);
  CHECK(loaded.metadata == ckpt.metadata);
  CHECK(loaded.epoch == 4);
  CHECK(loaded.monitored_value == 0.123456789);

  const auto restored = restore_model(loaded);
  CHECK(restored.export_weights() == graph.export_weights());
  CHECK(restored.head() == graph.head());
  CHECK(restored.input_size() == 16);
  const auto data = random_batch(2, 16, 4);
  CHECK(forward(restored, view_of(data, 2, 16), false) == forward(graph, view_of(data, 2, 16), false));

  std::vector<std::string> names;
  for (const auto& t : ckpt.arrays) names.push_back(t.name);
  CHECK(names == std::vector<std::string>{"stub_backbone/kernel", "stub_backbone/bias", "dense/kernel",
                                          "dense/bias", "dense_1/kernel", "dense_1/bias"});

  fixtures::write_bytes(tmp / "junk.ckpt", "garbage");
  CHECK_THROWS_AS(load_checkpoint(tmp / "junk.ckpt"), DatasetError);
  CHECK_THROWS_WITH_AS(load_checkpoint(tmp / "none.ckpt"), doctest::Contains("not found"), DatasetError);
}

TEST_CASE("precomputed embeddings are looked up by content hash") {
  TempDir tmp;
  write_embedding_file(tmp / "emb.bin", "xception", 20861480,
                       {{11, {1.0f, 0.0f, 2.0f}}, {22, {0.5f, 0.5f, 0.5f}}});
  PrecomputedBackbone backbone(tmp / "emb.bin");
  CHECK(backbone.embedding_dim() == 3);
  CHECK(backbone.parameter_count() == 20861480);
  CHECK(backbone.pretrained());
  CHECK(backbone.size() == 2);

  const auto data = random_batch(2, 4, 1);
  auto view = view_of(data, 2, 4);
  const std::vector<std::uint64_t> hashes = {22, 11};
  view.content_hashes = hashes;
  CHECK(backbone.embed(view) == std::vector<float>{0.5f, 0.5f, 0.5f, 1.0f, 0.0f, 2.0f});

  const std::vector<std::uint64_t> unknown = {22, 33};
  view.content_hashes = unknown;
  CHECK_THROWS_AS(backbone.embed(view), DatasetError);
  view.content_hashes = hashes;
  view.augmented = true;
  CHECK_THROWS_AS(backbone.embed(view), ConfigError);

  const auto rebuilt = make_backbone(backbone.describe());
  CHECK(rebuilt->embedding_dim() == 3);
  CHECK_THROWS_AS(PrecomputedBackbone(tmp / "missing.bin"), DatasetError);
  auto graph = build_model(backbone.clone(), HeadSpec{}, 1, 4);
  CHECK_THROWS_AS(graph.set_backbone_trainable(true), ConfigError);
}
