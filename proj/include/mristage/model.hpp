#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "mristage/error.hpp"
#include "mristage/imaging.hpp"
#include "mristage/random.hpp"

namespace mristage {

/// A named float array: one layer weight or bias.
struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> values;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Non-owning view over a contiguous block of B images.
struct ImageBatchView {
  std::span<const float> data;
  std::size_t size = 0;
  int height = 0;
  int width = 0;
  int channels = kChannels;
  std::span<const std::uint64_t> content_hashes;
  bool augmented = false;

  static ImageBatchView of(const Batch& batch);
  std::size_t image_stride() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
  }
};

/// Intermediate values a trainable backbone keeps for its backward pass.
struct BackboneTrace {
  std::vector<float> inputs;
  std::vector<float> pre_activation;
};

/// Maps images to fixed-length embeddings (the pooled output of a CNN).
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;

  virtual std::string name() const = 0;
  virtual std::size_t embedding_dim() const = 0;
  virtual bool pretrained() const = 0;
  virtual std::size_t parameter_count() const = 0;
  virtual std::unique_ptr<FeatureExtractor> clone() const = 0;
  /// Enough to rebuild the extractor with make_backbone().
  virtual nlohmann::json describe() const = 0;

  /// B x D embeddings, row-major. Deterministic.
  virtual std::vector<float> embed(const ImageBatchView& images) const = 0;

  /// Fine-tuning hooks. Backbones that cannot be trained keep these defaults.
  virtual bool supports_training() const { return false; }
  virtual std::vector<Tensor*> parameters() { return {}; }
  virtual std::vector<const Tensor*> parameters() const { return {}; }
  virtual std::vector<float> embed_traced(const ImageBatchView& images, BackboneTrace& trace) const;
  /// Accumulates parameter gradients (one vector per parameters() entry).
  virtual void backward(const BackboneTrace& trace, std::span<const float> grad_embeddings,
                        std::vector<std::vector<float>>& grads) const;
};

/// Seeded random projection of an average-pooled thumbnail followed by ReLU.
/// Stands in for pretrained weights in tests and desk-scale runs.
class StubBackbone final : public FeatureExtractor {
 public:
  static constexpr int kGrid = 8;

  StubBackbone(std::uint64_t seed, std::size_t embedding_dim);

  std::string name() const override { return "stub_backbone"; }
  std::size_t embedding_dim() const override { return dim_; }
  bool pretrained() const override { return false; }
  std::size_t parameter_count() const override;
  std::unique_ptr<FeatureExtractor> clone() const override;
  nlohmann::json describe() const override;

  std::vector<float> embed(const ImageBatchView& images) const override;

  bool supports_training() const override { return true; }
  std::vector<Tensor*> parameters() override { return {&kernel_, &bias_}; }
  std::vector<const Tensor*> parameters() const override { return {&kernel_, &bias_}; }
  std::vector<float> embed_traced(const ImageBatchView& images, BackboneTrace& trace) const override;
  void backward(const BackboneTrace& trace, std::span<const float> grad_embeddings,
                std::vector<std::vector<float>>& grads) const override;

  /// kGrid x kGrid x C cell means of one image.
  static std::vector<float> pool(std::span<const float> image, int height, int width, int channels);

 private:
  std::uint64_t seed_;
  std::size_t dim_;
  Tensor kernel_;  // D x P
  Tensor bias_;    // D
};

/// Embeddings computed offline by a pretrained network (e.g. Xception with
/// include_top=False, pooling='max'), looked up by image content hash.
///
/// File layout, little-endian: "MRSEMB01", u32 dim, u64 backbone parameter
/// count, u32 name length, name bytes, u64 count, then count records of
/// (u64 content hash, dim x f32).
class PrecomputedBackbone final : public FeatureExtractor {
 public:
  explicit PrecomputedBackbone(const fs::path& file);

  std::string name() const override { return name_; }
  std::size_t embedding_dim() const override { return dim_; }
  bool pretrained() const override { return true; }
  std::size_t parameter_count() const override { return params_; }
  std::unique_ptr<FeatureExtractor> clone() const override;
  nlohmann::json describe() const override;
  std::vector<float> embed(const ImageBatchView& images) const override;

  std::size_t size() const { return table_->size(); }

 private:
  fs::path file_;
  std::string name_;
  std::size_t dim_ = 0;
  std::size_t params_ = 0;
  std::shared_ptr<const std::unordered_map<std::uint64_t, std::vector<float>>> table_;
};

void write_embedding_file(const fs::path& file, const std::string& name, std::size_t parameter_count,
                          const std::vector<std::pair<std::uint64_t, std::vector<float>>>& rows);

/// Rebuild a backbone from FeatureExtractor::describe() output.
std::unique_ptr<FeatureExtractor> make_backbone(const nlohmann::json& description);

struct HeadSpec {
  double dropout1 = 0.3;
  std::size_t dense_units = 128;
  std::string activation = "relu";
  double dropout2 = 0.25;
  std::size_t num_classes = 4;

  void validate() const;
};

nlohmann::json to_json(const HeadSpec& spec);
HeadSpec head_spec_from_json(const nlohmann::json& j);

/// Dense weights of the classification head; kernels are row-major in x out.
template <typename T>
struct HeadWeights {
  std::size_t inputs = 0;
  std::size_t units = 0;
  std::size_t classes = 0;
  std::vector<T> w1, b1, w2, b2;

  template <typename U>
  HeadWeights<U> cast() const {
    HeadWeights<U> out;
    out.inputs = inputs;
    out.units = units;
    out.classes = classes;
    out.w1.assign(w1.begin(), w1.end());
    out.b1.assign(b1.begin(), b1.end());
    out.w2.assign(w2.begin(), w2.end());
    out.b2.assign(b2.begin(), b2.end());
    return out;
  }
  friend bool operator==(const HeadWeights&, const HeadWeights&) = default;
};

template <typename T>
struct HeadTrace {
  std::vector<T> input;    // B x D after flatten
  std::vector<T> mask1;    // B x D dropout scale factors (empty when inactive)
  std::vector<T> pre;      // B x U dense-1 pre-activation
  std::vector<T> hidden;   // B x U after ReLU and dropout 2
  std::vector<T> mask2;    // B x U
  std::vector<T> probs;    // B x K
};

template <typename T>
struct HeadGradients {
  std::vector<T> w1, b1, w2, b2;
  std::vector<T> input;  // dL/d(embedding)
};

namespace detail {

template <typename T>
std::vector<T> dropout_mask(std::size_t n, double rate, Rng& rng) {
  std::vector<T> mask(n);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& m : mask) m = uniform01(rng) < rate ? T(0) : keep_scale;
  return mask;
}

// out[b, j] = bias[j] + sum_i in[b, i] * w[i, j]
template <typename T>
void dense(std::span<const T> in, std::size_t batch, std::size_t n_in, std::span<const T> w,
           std::span<const T> bias, std::size_t n_out, std::vector<T>& out) {
  out.assign(batch * n_out, T(0));
  for (std::size_t b = 0; b < batch; ++b) {
    T* row = out.data() + b * n_out;
    for (std::size_t j = 0; j < n_out; ++j) row[j] = bias[j];
    for (std::size_t i = 0; i < n_in; ++i) {
      const T x = in[b * n_in + i];
      if (x == T(0)) continue;
      const T* wrow = w.data() + i * n_out;
      for (std::size_t j = 0; j < n_out; ++j) row[j] += x * wrow[j];
    }
  }
}

template <typename T>
void softmax_rows(std::vector<T>& logits, std::size_t batch, std::size_t k) {
  for (std::size_t b = 0; b < batch; ++b) {
    T* row = logits.data() + b * k;
    const T top = *std::max_element(row, row + k);
    T total = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row[j] = std::exp(row[j] - top);
      total += row[j];
    }
    for (std::size_t j = 0; j < k; ++j) row[j] /= total;
  }
}

}  // namespace detail

/// Flatten -> Dropout -> Dense(ReLU) -> Dropout -> Dense(softmax).
/// Dropout is inverted, so inference is a pass-through. `rng` is only
/// consulted in training mode.
template <typename T>
std::vector<T> head_forward(const HeadWeights<T>& w, const HeadSpec& spec, std::span<const T> input,
                            std::size_t batch, bool training, Rng* rng, HeadTrace<T>* trace = nullptr) {
  if (input.size() != batch * w.inputs)
    throw ShapeError("head expects " + std::to_string(batch) + " x " + std::to_string(w.inputs) +
                     " inputs, got " + std::to_string(input.size()) + " values");
  if (training && rng == nullptr && (spec.dropout1 > 0 || spec.dropout2 > 0))
    throw std::invalid_argument("training-mode forward needs a random state");

  HeadTrace<T> local;
  HeadTrace<T>& t = trace ? *trace : local;
  t.input.assign(input.begin(), input.end());  // Flatten of a D-vector is the identity

  std::vector<T> x = t.input;
  t.mask1.clear();
  if (training && spec.dropout1 > 0) {
    t.mask1 = detail::dropout_mask<T>(x.size(), spec.dropout1, *rng);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] *= t.mask1[i];
  }
  detail::dense<T>(x, batch, w.inputs, w.w1, w.b1, w.units, t.pre);
  t.hidden = t.pre;
  for (auto& v : t.hidden) v = v > T(0) ? v : T(0);
  t.mask2.clear();
  if (training && spec.dropout2 > 0) {
    t.mask2 = detail::dropout_mask<T>(t.hidden.size(), spec.dropout2, *rng);
    for (std::size_t i = 0; i < t.hidden.size(); ++i) t.hidden[i] *= t.mask2[i];
  }
  detail::dense<T>(t.hidden, batch, w.units, w.w2, w.b2, w.classes, t.probs);
  detail::softmax_rows(t.probs, batch, w.classes);
  return t.probs;
}

/// Gradients of the mean categorical cross-entropy with respect to every
/// head parameter and to the head input.
template <typename T>
HeadGradients<T> head_backward(const HeadWeights<T>& w, const HeadTrace<T>& t,
                               std::span<const T> labels, std::size_t batch) {
  const std::size_t D = w.inputs, U = w.units, K = w.classes;
  if (labels.size() != batch * K) throw ShapeError("label matrix does not match batch x classes");

  std::vector<T> dlogits(batch * K);
  for (std::size_t i = 0; i < dlogits.size(); ++i)
    dlogits[i] = (t.probs[i] - labels[i]) / static_cast<T>(batch);

  HeadGradients<T> g;
  g.w2.assign(U * K, T(0));
  g.b2.assign(K, T(0));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < K; ++k) {
      const T d = dlogits[b * K + k];
      g.b2[k] += d;
      for (std::size_t u = 0; u < U; ++u) g.w2[u * K + k] += t.hidden[b * U + u] * d;
    }

  std::vector<T> dpre(batch * U, T(0));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t u = 0; u < U; ++u) {
      if (!(t.pre[b * U + u] > T(0))) continue;
      T acc = 0;
      for (std::size_t k = 0; k < K; ++k) acc += dlogits[b * K + k] * w.w2[u * K + k];
      if (!t.mask2.empty()) acc *= t.mask2[b * U + u];
      dpre[b * U + u] = acc;
    }

  g.w1.assign(D * U, T(0));
  g.b1.assign(U, T(0));
  g.input.assign(batch * D, T(0));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t u = 0; u < U; ++u) g.b1[u] += dpre[b * U + u];
    for (std::size_t d = 0; d < D; ++d) {
      const T scale = t.mask1.empty() ? T(1) : t.mask1[b * D + d];
      const T x = t.input[b * D + d] * scale;
      T back = 0;
      for (std::size_t u = 0; u < U; ++u) {
        const T dp = dpre[b * U + u];
        g.w1[d * U + u] += x * dp;
        back += dp * w.w1[d * U + u];
      }
      g.input[b * D + d] = back * scale;
    }
  }
  return g;
}

struct LayerSummary {
  std::string name;
  std::string kind;
  std::vector<std::size_t> output_shape;  // excludes the batch dimension
  std::size_t param_count = 0;
  bool trainable = false;
};

struct ParameterSummary {
  std::vector<LayerSummary> layers;
  std::size_t total = 0;
  std::size_t trainable = 0;
  std::size_t frozen = 0;
  std::size_t head_total = 0;  // everything after the backbone
};

/// Backbone plus classification head. Copies deep-copy the backbone.
class ModelGraph {
 public:
  ModelGraph(std::unique_ptr<FeatureExtractor> backbone, HeadSpec spec, HeadWeights<float> head,
             std::uint64_t seed, int input_size = kDefaultInputSize);
  ModelGraph(const ModelGraph& other);
  ModelGraph& operator=(const ModelGraph& other);
  ModelGraph(ModelGraph&&) noexcept = default;
  ModelGraph& operator=(ModelGraph&&) noexcept = default;

  const FeatureExtractor& backbone() const { return *backbone_; }
  FeatureExtractor& backbone() { return *backbone_; }
  const HeadSpec& spec() const { return spec_; }
  HeadSpec& spec() { return spec_; }
  const HeadWeights<float>& head() const { return head_; }
  HeadWeights<float>& head() { return head_; }
  std::uint64_t seed() const { return seed_; }
  int input_size() const { return input_size_; }

  bool backbone_trainable() const { return backbone_trainable_; }
  void set_backbone_trainable(bool on);
  bool head_trainable() const { return head_trainable_; }
  void set_head_trainable(bool on) { head_trainable_ = on; }

  /// Every weight array, backbone first, in a stable order.
  std::vector<Tensor> export_weights() const;
  void import_weights(const std::vector<Tensor>& tensors);

 private:
  std::unique_ptr<FeatureExtractor> backbone_;
  HeadSpec spec_;
  HeadWeights<float> head_;
  std::uint64_t seed_ = 0;
  int input_size_ = kDefaultInputSize;
  bool backbone_trainable_ = false;
  bool head_trainable_ = true;
};

/// Glorot-uniform dense kernels, zero biases, backbone frozen.
ModelGraph build_model(std::unique_ptr<FeatureExtractor> backbone, const HeadSpec& spec,
                       std::uint64_t seed, int input_size = kDefaultInputSize);

std::unique_ptr<FeatureExtractor> stub_backbone(std::uint64_t seed, std::size_t embedding_dim);

/// Class-probability rows (B x K) for a batch of normalized images.
std::vector<float> forward(const ModelGraph& graph, const ImageBatchView& images, bool training_mode,
                           Rng* rng = nullptr);

ParameterSummary parameter_summary(const ModelGraph& graph);
std::string render_summary(const ParameterSummary& summary);

/// Index of the largest entry in each row; ties go to the lowest index.
std::vector<int> argmax_rows(std::span<const float> rows, std::size_t k);

}  // namespace mristage
