#include "mristage/model.hpp"

#include <iomanip>
#include <sstream>

namespace mristage {

void HeadSpec::validate() const {
  for (double p : {dropout1, dropout2})
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probabilities must lie in [0, 1)");
  if (dense_units < 1) throw ConfigError("dense_units must be >= 1");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (activation != "relu") throw ConfigError("unsupported activation '" + activation + "'");
}

nlohmann::json to_json(const HeadSpec& spec) {
  return {{"dropout1", spec.dropout1},
          {"dense_units", spec.dense_units},
          {"activation", spec.activation},
          {"dropout2", spec.dropout2},
          {"num_classes", spec.num_classes}};
}

HeadSpec head_spec_from_json(const nlohmann::json& j) {
  HeadSpec spec;
  spec.dropout1 = j.value("dropout1", spec.dropout1);
  spec.dense_units = j.value("dense_units", spec.dense_units);
  spec.activation = j.value("activation", spec.activation);
  spec.dropout2 = j.value("dropout2", spec.dropout2);
  spec.num_classes = j.value("num_classes", spec.num_classes);
  return spec;
}

ModelGraph::ModelGraph(std::unique_ptr<FeatureExtractor> backbone, HeadSpec spec,
                       HeadWeights<float> head, std::uint64_t seed, int input_size)
    : backbone_(std::move(backbone)), spec_(std::move(spec)), head_(std::move(head)), seed_(seed),
      input_size_(input_size) {
  if (!backbone_) throw std::invalid_argument("model needs a backbone");
  spec_.validate();
  if (head_.inputs != backbone_->embedding_dim() || head_.units != spec_.dense_units ||
      head_.classes != spec_.num_classes || head_.w1.size() != head_.inputs * head_.units ||
      head_.b1.size() != head_.units || head_.w2.size() != head_.units * head_.classes ||
      head_.b2.size() != head_.classes)
    throw ShapeError("head weights do not chain with backbone dim and head spec");
}

ModelGraph::ModelGraph(const ModelGraph& other)
    : backbone_(other.backbone_->clone()), spec_(other.spec_), head_(other.head_), seed_(other.seed_),
      input_size_(other.input_size_), backbone_trainable_(other.backbone_trainable_),
      head_trainable_(other.head_trainable_) {}

ModelGraph& ModelGraph::operator=(const ModelGraph& other) {
  if (this != &other) {
    ModelGraph copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void ModelGraph::set_backbone_trainable(bool on) {
  if (on && !backbone_->supports_training())
    throw ConfigError(backbone_->name() + " cannot be fine-tuned");
  backbone_trainable_ = on;
}

std::vector<Tensor> ModelGraph::export_weights() const {
  std::vector<Tensor> out;
  for (const Tensor* t : std::as_const(*backbone_).parameters()) out.push_back(*t);
  const std::size_t D = head_.inputs, U = head_.units, K = head_.classes;
  out.push_back({"dense/kernel", {D, U}, head_.w1});
  out.push_back({"dense/bias", {U}, head_.b1});
  out.push_back({"dense_1/kernel", {U, K}, head_.w2});
  out.push_back({"dense_1/bias", {K}, head_.b2});
  return out;
}

void ModelGraph::import_weights(const std::vector<Tensor>& tensors) {
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw DatasetError("weights archive lacks '" + name + "'");
  };
  auto assign = [&](const std::string& name, std::vector<float>& dst) {
    const Tensor& t = find(name);
    if (t.values.size() != dst.size()) throw ShapeError("weights '" + name + "' have the wrong size");
    dst = t.values;
  };
  for (Tensor* t : backbone_->parameters()) assign(t->name, t->values);
  assign("dense/kernel", head_.w1);
  assign("dense/bias", head_.b1);
  assign("dense_1/kernel", head_.w2);
  assign("dense_1/bias", head_.b2);
}

ModelGraph build_model(std::unique_ptr<FeatureExtractor> backbone, const HeadSpec& spec,
                       std::uint64_t seed, int input_size) {
  spec.validate();
  if (!backbone) throw std::invalid_argument("model needs a backbone");
  HeadWeights<float> head;
  head.inputs = backbone->embedding_dim();
  head.units = spec.dense_units;
  head.classes = spec.num_classes;

  Rng rng(derive_seed(seed, 0x48454144ULL));
  auto glorot = [&](std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<float> w(fan_in * fan_out);
    for (float& v : w) v = static_cast<float>(uniform(rng, -limit, limit));
    return w;
  };
  head.w1 = glorot(head.inputs, head.units);
  head.b1.assign(head.units, 0.0f);
  head.w2 = glorot(head.units, head.classes);
  head.b2.assign(head.classes, 0.0f);
  return ModelGraph(std::move(backbone), spec, std::move(head), seed, input_size);
}

std::vector<float> forward(const ModelGraph& graph, const ImageBatchView& images, bool training_mode,
                           Rng* rng) {
  if (images.height != graph.input_size() || images.width != graph.input_size() ||
      images.channels != kChannels) {
    std::ostringstream msg;
    msg << "model expects " << graph.input_size() << "x" << graph.input_size() << "x" << kChannels
        << " images, got " << images.height << "x" << images.width << "x" << images.channels;
    throw ShapeError(msg.str());
  }
  if (images.data.size() != images.size * images.image_stride())
    throw ShapeError("image buffer does not match batch size");
  const auto embeddings = graph.backbone().embed(images);
  return head_forward<float>(graph.head(), graph.spec(), embeddings, images.size, training_mode, rng);
}

ParameterSummary parameter_summary(const ModelGraph& graph) {
  const std::size_t D = graph.head().inputs, U = graph.head().units, K = graph.head().classes;
  const bool head = graph.head_trainable();
  ParameterSummary s;
  s.layers = {
      {graph.backbone().name(), "Backbone", {D}, graph.backbone().parameter_count(), graph.backbone_trainable()},
      {"flatten", "Flatten", {D}, 0, head},
      {"dropout", "Dropout", {D}, 0, head},
      {"dense", "Dense", {U}, D * U + U, head},
      {"dropout_1", "Dropout", {U}, 0, head},
      {"dense_1", "Dense", {K}, U * K + K, head},
  };
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    const auto& layer = s.layers[i];
    s.total += layer.param_count;
    (layer.trainable ? s.trainable : s.frozen) += layer.param_count;
    if (i > 0) s.head_total += layer.param_count;
  }
  return s;
}

std::string render_summary(const ParameterSummary& summary) {
  std::ostringstream out;
  out << std::left << std::setw(24) << "Layer (type)" << std::setw(16) << "Output Shape" << std::right
      << std::setw(12) << "Param #" << "  Trainable\n";
  for (const auto& l : summary.layers) {
    std::string shape = "(None";
    for (auto d : l.output_shape) shape += ", " + std::to_string(d);
    shape += ")";
    out << std::left << std::setw(24) << (l.name + " (" + l.kind + ")") << std::setw(16) << shape
        << std::right << std::setw(12) << l.param_count << "  " << (l.trainable ? "yes" : "no") << '\n';
  }
  out << "Total params: " << summary.total << '\n'
      << "Trainable params: " << summary.trainable << '\n'
      << "Non-trainable params: " << summary.frozen << '\n';
  return out.str();
}

std::vector<int> argmax_rows(std::span<const float> rows, std::size_t k) {
  if (k == 0 || rows.size() % k != 0) throw ShapeError("probability matrix is not a multiple of K");
  std::vector<int> out(rows.size() / k);
  for (std::size_t b = 0; b < out.size(); ++b) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (rows[b * k + j] > rows[b * k + best]) best = j;
    out[b] = static_cast<int>(best);
  }
  return out;
}

}  // namespace mristage
