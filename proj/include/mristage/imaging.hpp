#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mristage/manifest.hpp"
#include "mristage/random.hpp"

namespace mristage {

inline constexpr int kDefaultInputSize = 244;
inline constexpr int kChannels = 3;
inline constexpr std::size_t kDefaultBatchSize = 32;

/// Interleaved H x W x C float image.
struct ImageTensor {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  ImageTensor() = default;
  ImageTensor(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c), fill) {}

  float& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
                    static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
                    static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)];
  }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

/// B images and their one-hot labels, both row-major.
struct Batch {
  std::size_t size = 0;
  int height = 0;
  int width = 0;
  int channels = kChannels;
  std::size_t num_classes = 0;
  std::vector<float> images;  // size * height * width * channels
  std::vector<float> labels;  // size * num_classes
  std::vector<std::size_t> record_indices;  // positions in the stream's record list
  std::vector<std::uint64_t> content_hashes;
  bool augmented = false;

  std::size_t image_stride() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
  }
  std::span<const float> image(std::size_t i) const {
    return std::span<const float>(images).subspan(i * image_stride(), image_stride());
  }
  int label_index(std::size_t i) const;
};

/// Random geometric augmentation. A default-constructed policy is the identity.
struct AugmentationPolicy {
  bool horizontal_flip = false;
  double rotation_degrees = 0.0;
  double width_shift = 0.0;
  double height_shift = 0.0;
  double zoom = 0.0;
  std::uint64_t seed = 0;

  /// Mild transforms used when augmentation is switched on without overrides.
  static AugmentationPolicy mild(std::uint64_t seed = 0);
  bool is_identity() const;
  void validate() const;
};

/// Decode a JPEG/PNG as RGB and bilinearly resize it; values stay in [0, 255].
ImageTensor decode_and_resize(const fs::path& path, int size = kDefaultInputSize);

/// Bilinear resampling with half-pixel centres; same-size input passes through.
ImageTensor resize_bilinear(const ImageTensor& image, int out_height, int out_width);

/// [0, 255] -> [-1, 1] via x / 127.5 - 1.
ImageTensor normalize(ImageTensor image);
ImageTensor denormalize(ImageTensor image);
inline float normalize_value(float x) { return x / 127.5f - 1.0f; }

std::vector<float> one_hot(int index, std::size_t num_classes);

ImageTensor flip_horizontal(const ImageTensor& image);

/// Counter-clockwise rotation about the image centre, edge pixels replicated.
ImageTensor rotate(const ImageTensor& image, double degrees);

/// Applies a random flip/rotation/shift/zoom drawn from `rng`.
ImageTensor augment(const ImageTensor& image, const AugmentationPolicy& policy, Rng& rng);

/// Produces the pre-normalization image for a record.
using ImageLoader = std::function<ImageTensor(const SampleRecord&)>;

ImageLoader file_loader(int size = kDefaultInputSize);

struct BatchOptions {
  std::size_t batch_size = kDefaultBatchSize;
  bool shuffle = false;
  std::uint64_t seed = 0;
  std::optional<AugmentationPolicy> augmentation;
  int input_size = kDefaultInputSize;
  std::size_t workers = 1;
};

/// Ordered stream of batches over a fixed record list.
///
/// Call start_epoch() and then next() until it returns nothing. With shuffle
/// on, each epoch visits a permutation derived from (seed, epoch). Sample
/// loading may fan out across `workers` threads; delivery order and content do
/// not depend on the worker count.
class BatchStream {
 public:
  BatchStream(std::vector<SampleRecord> records, std::size_t num_classes, BatchOptions options,
              ImageLoader loader = {});

  std::size_t num_samples() const { return records_.size(); }
  std::size_t num_batches() const;
  std::size_t num_classes() const { return num_classes_; }
  const BatchOptions& options() const { return options_; }
  const std::vector<SampleRecord>& records() const { return records_; }

  void start_epoch(std::size_t epoch);
  std::optional<Batch> next();
  /// Record order visited in the current epoch.
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  ImageTensor load_sample(std::size_t record_index, std::size_t position) const;

  std::vector<SampleRecord> records_;
  std::size_t num_classes_;
  BatchOptions options_;
  ImageLoader loader_;
  std::vector<std::size_t> order_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
};

/// Checks value range, one-hot rows and shapes. Returns an empty string when valid.
std::string check_batch(const Batch& batch, std::size_t max_batch_size, int input_size);

}  // namespace mristage
