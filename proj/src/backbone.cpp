#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mristage/model.hpp"

namespace mristage {

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian hosts");

ImageBatchView ImageBatchView::of(const Batch& batch) {
  ImageBatchView view;
  view.data = batch.images;
  view.size = batch.size;
  view.height = batch.height;
  view.width = batch.width;
  view.channels = batch.channels;
  view.content_hashes = batch.content_hashes;
  view.augmented = batch.augmented;
  return view;
}

std::vector<float> FeatureExtractor::embed_traced(const ImageBatchView& images, BackboneTrace&) const {
  return embed(images);
}

void FeatureExtractor::backward(const BackboneTrace&, std::span<const float>,
                                std::vector<std::vector<float>>&) const {
  throw ConfigError(name() + " cannot be fine-tuned");
}

namespace {

void check_view(const ImageBatchView& images) {
  if (images.data.size() != images.size * images.image_stride())
    throw ShapeError("image buffer holds " + std::to_string(images.data.size()) + " values, expected " +
                     std::to_string(images.size * images.image_stride()));
}

}  // namespace

StubBackbone::StubBackbone(std::uint64_t seed, std::size_t embedding_dim)
    : seed_(seed), dim_(embedding_dim) {
  if (embedding_dim < 1) throw ConfigError("stub embedding_dim must be >= 1");
  const std::size_t pooled = static_cast<std::size_t>(kGrid * kGrid * kChannels);
  kernel_ = {"stub_backbone/kernel", {dim_, pooled}, std::vector<float>(dim_ * pooled)};
  bias_ = {"stub_backbone/bias", {dim_}, std::vector<float>(dim_, 0.0f)};
  Rng rng(derive_seed(seed, 0x5354554255ULL));
  const double limit = std::sqrt(6.0 / static_cast<double>(pooled + dim_));
  for (float& w : kernel_.values) w = static_cast<float>(uniform(rng, -limit, limit));
}

std::size_t StubBackbone::parameter_count() const {
  return kernel_.values.size() + bias_.values.size();
}

std::unique_ptr<FeatureExtractor> StubBackbone::clone() const {
  return std::make_unique<StubBackbone>(*this);
}

nlohmann::json StubBackbone::describe() const {
  return {{"kind", "stub"}, {"seed", seed_}, {"embedding_dim", dim_}};
}

std::vector<float> StubBackbone::pool(std::span<const float> image, int height, int width, int channels) {
  std::vector<float> out(static_cast<std::size_t>(kGrid * kGrid * channels), 0.0f);
  auto cell = [](int g, int extent) {
    int lo = std::min(g * extent / kGrid, extent - 1);
    int hi = std::max((g + 1) * extent / kGrid, lo + 1);
    return std::pair{lo, std::min(hi, extent)};
  };
  for (int gy = 0; gy < kGrid; ++gy) {
    const auto [y0, y1] = cell(gy, height);
    for (int gx = 0; gx < kGrid; ++gx) {
      const auto [x0, x1] = cell(gx, width);
      const double count = static_cast<double>((y1 - y0) * (x1 - x0));
      for (int c = 0; c < channels; ++c) {
        double sum = 0.0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x)
            sum += image[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
                             static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)];
        out[static_cast<std::size_t>((gy * kGrid + gx) * channels + c)] = static_cast<float>(sum / count);
      }
    }
  }
  return out;
}

std::vector<float> StubBackbone::embed(const ImageBatchView& images) const {
  BackboneTrace scratch;
  return embed_traced(images, scratch);
}

std::vector<float> StubBackbone::embed_traced(const ImageBatchView& images, BackboneTrace& trace) const {
  check_view(images);
  if (images.channels != kChannels) throw ShapeError("stub backbone expects 3-channel images");
  const std::size_t P = kernel_.shape[1];
  trace.inputs.assign(images.size * P, 0.0f);
  trace.pre_activation.assign(images.size * dim_, 0.0f);
  std::vector<float> out(images.size * dim_);
  for (std::size_t b = 0; b < images.size; ++b) {
    const auto pooled = pool(images.data.subspan(b * images.image_stride(), images.image_stride()),
                             images.height, images.width, images.channels);
    std::copy(pooled.begin(), pooled.end(), trace.inputs.begin() + static_cast<std::ptrdiff_t>(b * P));
    for (std::size_t d = 0; d < dim_; ++d) {
      float acc = bias_.values[d];
      const float* w = kernel_.values.data() + d * P;
      for (std::size_t j = 0; j < P; ++j) acc += w[j] * pooled[j];
      trace.pre_activation[b * dim_ + d] = acc;
      out[b * dim_ + d] = acc > 0.0f ? acc : 0.0f;
    }
  }
  return out;
}

void StubBackbone::backward(const BackboneTrace& trace, std::span<const float> grad_embeddings,
                            std::vector<std::vector<float>>& grads) const {
  const std::size_t P = kernel_.shape[1];
  const std::size_t batch = trace.pre_activation.size() / dim_;
  if (grad_embeddings.size() != batch * dim_) throw ShapeError("embedding gradient shape mismatch");
  grads.resize(2);
  grads[0].resize(kernel_.values.size(), 0.0f);
  grads[1].resize(bias_.values.size(), 0.0f);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t d = 0; d < dim_; ++d) {
      if (!(trace.pre_activation[b * dim_ + d] > 0.0f)) continue;
      const float g = grad_embeddings[b * dim_ + d];
      grads[1][d] += g;
      for (std::size_t j = 0; j < P; ++j) grads[0][d * P + j] += g * trace.inputs[b * P + j];
    }
}

std::unique_ptr<FeatureExtractor> stub_backbone(std::uint64_t seed, std::size_t embedding_dim) {
  return std::make_unique<StubBackbone>(seed, embedding_dim);
}

namespace {

constexpr char kEmbeddingMagic[8] = {'M', 'R', 'S', 'E', 'M', 'B', '0', '1'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const fs::path& file) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T)))
    throw DatasetError("truncated embedding file " + file.string());
  return value;
}

}  // namespace

void write_embedding_file(const fs::path& file, const std::string& name, std::size_t parameter_count,
                          const std::vector<std::pair<std::uint64_t, std::vector<float>>>& rows) {
  if (rows.empty()) throw DatasetError("no embeddings to write");
  const std::size_t dim = rows.front().second.size();
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + file.string());
  out.write(kEmbeddingMagic, sizeof(kEmbeddingMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
  put<std::uint64_t>(out, parameter_count);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint64_t>(out, rows.size());
  for (const auto& [hash, values] : rows) {
    if (values.size() != dim) throw ShapeError("embedding rows differ in length");
    put<std::uint64_t>(out, hash);
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(dim * sizeof(float)));
  }
}

PrecomputedBackbone::PrecomputedBackbone(const fs::path& file) : file_(file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DatasetError("pretrained backbone embeddings not found: " + file.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kEmbeddingMagic, sizeof(magic)) != 0)
    throw DatasetError(file.string() + " is not an embedding file");
  dim_ = get<std::uint32_t>(in, file);
  params_ = get<std::uint64_t>(in, file);
  name_.resize(get<std::uint32_t>(in, file));
  if (!in.read(name_.data(), static_cast<std::streamsize>(name_.size())))
    throw DatasetError("truncated embedding file " + file.string());
  const auto count = get<std::uint64_t>(in, file);
  auto table = std::make_shared<std::unordered_map<std::uint64_t, std::vector<float>>>();
  table->reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto hash = get<std::uint64_t>(in, file);
    std::vector<float> values(dim_);
    if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(dim_ * sizeof(float))))
      throw DatasetError("truncated embedding file " + file.string());
    (*table)[hash] = std::move(values);
  }
  if (dim_ == 0) throw DatasetError("embedding file declares zero dimensions");
  table_ = std::move(table);
}

std::unique_ptr<FeatureExtractor> PrecomputedBackbone::clone() const {
  return std::make_unique<PrecomputedBackbone>(*this);
}

nlohmann::json PrecomputedBackbone::describe() const {
  return {{"kind", "pretrained_xception"}, {"name", name_}, {"embedding_dim", dim_},
          {"embeddings", file_.generic_string()}};
}

std::vector<float> PrecomputedBackbone::embed(const ImageBatchView& images) const {
  if (images.augmented)
    throw ConfigError("precomputed embeddings cannot follow on-the-fly augmentation; disable augmentation");
  if (images.content_hashes.size() != images.size)
    throw ShapeError("precomputed backbone needs one content hash per image");
  std::vector<float> out;
  out.reserve(images.size * dim_);
  for (const auto hash : images.content_hashes) {
    const auto it = table_->find(hash);
    if (it == table_->end())
      throw DatasetError("no precomputed embedding for image hash " + format_hash(hash));
    out.insert(out.end(), it->second.begin(), it->second.end());
  }
  return out;
}

std::unique_ptr<FeatureExtractor> make_backbone(const nlohmann::json& description) {
  const std::string kind = description.at("kind").get<std::string>();
  if (kind == "stub")
    return stub_backbone(description.at("seed").get<std::uint64_t>(),
                         description.at("embedding_dim").get<std::size_t>());
  if (kind == "pretrained_xception")
    return std::make_unique<PrecomputedBackbone>(description.at("embeddings").get<std::string>());
  throw ConfigError("unknown backbone kind '" + kind + "'");
}

}  // namespace mristage
