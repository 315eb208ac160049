#include "mristage/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <numeric>

namespace mristage {

namespace {

constexpr char kMagic[8] = {'M', 'R', 'S', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const fs::path& file) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T)))
    throw DatasetError("truncated checkpoint " + file.string());
  return value;
}

}  // namespace

Checkpoint make_checkpoint(const ModelGraph& graph, std::size_t epoch, std::string_view monitor,
                           double monitored_value) {
  Checkpoint ckpt;
  ckpt.arrays = graph.export_weights();
  ckpt.epoch = epoch;
  ckpt.monitored_value = monitored_value;
  ckpt.metadata = {
      {"format_version", kCheckpointFormatVersion},
      {"head", to_json(graph.spec())},
      {"backbone", graph.backbone().describe()},
      {"embedding_dim", graph.head().inputs},
      {"num_classes", graph.head().classes},
      {"seed", graph.seed()},
      {"input_size", graph.input_size()},
      {"backbone_trainable", graph.backbone_trainable()},
      {"head_trainable", graph.head_trainable()},
      {"epoch", epoch},
      {"monitor", std::string(monitor)},
      {"monitored_value", monitored_value},
  };
  return ckpt;
}

void save_checkpoint(const Checkpoint& checkpoint, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DatasetError("cannot write checkpoint " + file.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointFormatVersion);
  const std::string meta = checkpoint.metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.arrays.size()));
  for (const auto& t : checkpoint.arrays) {
    const std::size_t count =
        std::accumulate(t.shape.begin(), t.shape.end(), std::size_t{1}, std::multiplies<>());
    if (count != t.values.size()) throw ShapeError("tensor '" + t.name + "' shape disagrees with its data");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  }
  if (!out) throw DatasetError("failed writing checkpoint " + file.string());
}

Checkpoint load_checkpoint(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DatasetError("checkpoint not found: " + file.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw DatasetError(file.string() + " is not a checkpoint archive");
  const auto version = get<std::uint32_t>(in, file);
  if (version != kCheckpointFormatVersion)
    throw DatasetError("unsupported checkpoint format version " + std::to_string(version));
  std::string meta(get<std::uint64_t>(in, file), '\0');
  if (!in.read(meta.data(), static_cast<std::streamsize>(meta.size())))
    throw DatasetError("truncated checkpoint " + file.string());

  Checkpoint ckpt;
  try {
    ckpt.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("corrupt checkpoint metadata in " + file.string() + ": " + e.what());
  }
  ckpt.epoch = ckpt.metadata.value("epoch", std::size_t{0});
  ckpt.monitored_value = ckpt.metadata.value("monitored_value", 0.0);

  const auto n = get<std::uint32_t>(in, file);
  for (std::uint32_t i = 0; i < n; ++i) {
    Tensor t;
    t.name.resize(get<std::uint32_t>(in, file));
    if (!in.read(t.name.data(), static_cast<std::streamsize>(t.name.size())))
      throw DatasetError("truncated checkpoint " + file.string());
    const auto rank = get<std::uint32_t>(in, file);
    std::size_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(in, file)));
      count *= t.shape.back();
    }
    t.values.resize(count);
    if (!in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(count * sizeof(float))))
      throw DatasetError("truncated checkpoint " + file.string());
    ckpt.arrays.push_back(std::move(t));
  }
  return ckpt;
}

ModelGraph restore_model(const Checkpoint& checkpoint) {
  const auto& meta = checkpoint.metadata;
  const HeadSpec spec = head_spec_from_json(meta.at("head"));
  auto backbone = make_backbone(meta.at("backbone"));
  if (backbone->embedding_dim() != meta.at("embedding_dim").get<std::size_t>())
    throw ShapeError("checkpoint embedding_dim disagrees with its backbone");
  HeadWeights<float> head;
  head.inputs = backbone->embedding_dim();
  head.units = spec.dense_units;
  head.classes = spec.num_classes;
  head.w1.resize(head.inputs * head.units);
  head.b1.resize(head.units);
  head.w2.resize(head.units * head.classes);
  head.b2.resize(head.classes);
  ModelGraph graph(std::move(backbone), spec, std::move(head), meta.at("seed").get<std::uint64_t>(),
                   meta.at("input_size").get<int>());
  graph.import_weights(checkpoint.arrays);
  graph.set_backbone_trainable(meta.value("backbone_trainable", false));
  graph.set_head_trainable(meta.value("head_trainable", true));
  return graph;
}

}  // namespace mristage
