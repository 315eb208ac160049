#include "mristage/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numbers>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "mristage/error.hpp"

namespace mristage {

int Batch::label_index(std::size_t i) const {
  const float* row = labels.data() + i * num_classes;
  return static_cast<int>(std::max_element(row, row + num_classes) - row);
}

AugmentationPolicy AugmentationPolicy::mild(std::uint64_t seed) {
  AugmentationPolicy p;
  p.horizontal_flip = true;
  p.rotation_degrees = 10.0;
  p.width_shift = 0.1;
  p.height_shift = 0.1;
  p.zoom = 0.0;
  p.seed = seed;
  return p;
}

bool AugmentationPolicy::is_identity() const {
  return !horizontal_flip && rotation_degrees == 0.0 && width_shift == 0.0 &&
         height_shift == 0.0 && zoom == 0.0;
}

void AugmentationPolicy::validate() const {
  if (!(rotation_degrees >= 0.0)) throw ConfigError("rotation_degrees must be >= 0");
  for (double r : {width_shift, height_shift, zoom})
    if (!(r >= 0.0 && r <= 0.5)) throw ConfigError("augmentation ratios must lie in [0, 0.5]");
}

ImageTensor decode_and_resize(const fs::path& path, int size) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DatasetError("cannot decode image " + path.string());
  ImageTensor raw(bgr.rows, bgr.cols, kChannels);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      raw.at(y, x, 0) = row[x][2];
      raw.at(y, x, 1) = row[x][1];
      raw.at(y, x, 2) = row[x][0];
    }
  }
  return resize_bilinear(raw, size, size);
}

ImageTensor resize_bilinear(const ImageTensor& image, int out_height, int out_width) {
  if (out_height < 1 || out_width < 1) throw ShapeError("resize target must be at least 1x1");
  if (image.height == out_height && image.width == out_width) return image;

  const double sy = static_cast<double>(image.height) / out_height;
  const double sx = static_cast<double>(image.width) / out_width;
  ImageTensor out(out_height, out_width, image.channels);
  for (int y = 0; y < out_height; ++y) {
    const double src_y = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
    const int y0 = static_cast<int>(std::floor(src_y));
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double fy = src_y - y0;
    for (int x = 0; x < out_width; ++x) {
      const double src_x = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
      const int x0 = static_cast<int>(std::floor(src_x));
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double fx = src_x - x0;
      for (int c = 0; c < image.channels; ++c) {
        const double top = image.at(y0, x0, c) * (1 - fx) + image.at(y0, x1, c) * fx;
        const double bottom = image.at(y1, x0, c) * (1 - fx) + image.at(y1, x1, c) * fx;
        out.at(y, x, c) = static_cast<float>(top * (1 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

ImageTensor normalize(ImageTensor image) {
  for (float& v : image.data) v = normalize_value(v);
  return image;
}

ImageTensor denormalize(ImageTensor image) {
  for (float& v : image.data) v = (v + 1.0f) * 127.5f;
  return image;
}

std::vector<float> one_hot(int index, std::size_t num_classes) {
  if (index < 0 || static_cast<std::size_t>(index) >= num_classes)
    throw std::out_of_range("class index " + std::to_string(index) + " outside [0, " +
                            std::to_string(num_classes) + ")");
  std::vector<float> row(num_classes, 0.0f);
  row[static_cast<std::size_t>(index)] = 1.0f;
  return row;
}

ImageTensor flip_horizontal(const ImageTensor& image) {
  ImageTensor out(image.height, image.width, image.channels);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c)
        out.at(y, image.width - 1 - x, c) = image.at(y, x, c);
  return out;
}

namespace {

struct InverseAffine {
  double a = 1, b = 0, c = 0, d = 1;  // source offset = [[a b][c d]] * output offset
  double tx = 0, ty = 0;              // subtracted after the linear part
};

double snap(double v) {
  if (std::abs(v) < 1e-12) return 0.0;
  if (std::abs(v - 1.0) < 1e-12) return 1.0;
  if (std::abs(v + 1.0) < 1e-12) return -1.0;
  return v;
}

InverseAffine rotation_zoom_shift(double degrees, double scale, double tx, double ty) {
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = snap(std::cos(theta)), sn = snap(std::sin(theta));
  // y grows downward, so a visual counter-clockwise turn samples from the
  // output offset rotated clockwise.
  return {scale * cs, -scale * sn, scale * sn, scale * cs, tx, ty};
}

ImageTensor warp(const ImageTensor& image, const InverseAffine& m) {
  ImageTensor out(image.height, image.width, image.channels);
  const double cx = (image.width - 1) / 2.0, cy = (image.height - 1) / 2.0;
  const double max_x = image.width - 1, max_y = image.height - 1;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double sx = std::clamp(m.a * dx + m.b * dy + cx - m.tx, 0.0, max_x);
      const double sy = std::clamp(m.c * dx + m.d * dy + cy - m.ty, 0.0, max_y);
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, image.width - 1), y1 = std::min(y0 + 1, image.height - 1);
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < image.channels; ++c) {
        const double top = image.at(y0, x0, c) * (1 - fx) + image.at(y0, x1, c) * fx;
        const double bottom = image.at(y1, x0, c) * (1 - fx) + image.at(y1, x1, c) * fx;
        out.at(y, x, c) = static_cast<float>(top * (1 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

}  // namespace

ImageTensor rotate(const ImageTensor& image, double degrees) {
  return warp(image, rotation_zoom_shift(degrees, 1.0, 0.0, 0.0));
}

ImageTensor augment(const ImageTensor& image, const AugmentationPolicy& policy, Rng& rng) {
  if (policy.is_identity()) return image;
  policy.validate();

  const bool flip = policy.horizontal_flip && uniform01(rng) < 0.5;
  const double degrees =
      policy.rotation_degrees > 0 ? uniform(rng, -policy.rotation_degrees, policy.rotation_degrees) : 0.0;
  const double tx = policy.width_shift > 0
                        ? uniform(rng, -policy.width_shift, policy.width_shift) * image.width
                        : 0.0;
  const double ty = policy.height_shift > 0
                        ? uniform(rng, -policy.height_shift, policy.height_shift) * image.height
                        : 0.0;
  const double scale = policy.zoom > 0 ? uniform(rng, 1.0 - policy.zoom, 1.0 + policy.zoom) : 1.0;

  ImageTensor out = (degrees != 0.0 || tx != 0.0 || ty != 0.0 || scale != 1.0)
                        ? warp(image, rotation_zoom_shift(degrees, scale, tx, ty))
                        : image;
  return flip ? flip_horizontal(out) : out;
}

ImageLoader file_loader(int size) {
  return [size](const SampleRecord& record) { return decode_and_resize(record.path, size); };
}

BatchStream::BatchStream(std::vector<SampleRecord> records, std::size_t num_classes,
                         BatchOptions options, ImageLoader loader)
    : records_(std::move(records)), num_classes_(num_classes), options_(std::move(options)),
      loader_(std::move(loader)) {
  if (records_.empty()) throw DatasetError("no samples");
  if (options_.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (options_.input_size < 1) throw ConfigError("input_size must be >= 1");
  if (options_.augmentation) options_.augmentation->validate();
  if (!loader_) loader_ = file_loader(options_.input_size);
  for (const auto& r : records_)
    if (r.label.index < 0 || static_cast<std::size_t>(r.label.index) >= num_classes_)
      throw std::out_of_range("record label outside class roster: " + r.path.string());
  start_epoch(0);
}

std::size_t BatchStream::num_batches() const {
  return (records_.size() + options_.batch_size - 1) / options_.batch_size;
}

void BatchStream::start_epoch(std::size_t epoch) {
  epoch_ = epoch;
  cursor_ = 0;
  order_.resize(records_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (options_.shuffle) {
    Rng rng(derive_seed(options_.seed, 0x5348554646ULL, epoch));
    shuffle(order_, rng);
  }
}

ImageTensor BatchStream::load_sample(std::size_t record_index, std::size_t /*position*/) const {
  ImageTensor image = loader_(records_[record_index]);
  if (image.height != options_.input_size || image.width != options_.input_size ||
      image.channels != kChannels) {
    std::ostringstream msg;
    msg << "loader returned " << image.height << "x" << image.width << "x" << image.channels
        << " for " << records_[record_index].path << ", expected " << options_.input_size << "x"
        << options_.input_size << "x" << kChannels;
    throw ShapeError(msg.str());
  }
  if (options_.augmentation) {
    Rng rng(derive_seed(options_.augmentation->seed, options_.seed, epoch_, record_index));
    image = augment(image, *options_.augmentation, rng);
  }
  return normalize(std::move(image));
}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t begin = cursor_;
  const std::size_t end = std::min(order_.size(), begin + options_.batch_size);
  cursor_ = end;

  Batch batch;
  batch.size = end - begin;
  batch.height = batch.width = options_.input_size;
  batch.channels = kChannels;
  batch.num_classes = num_classes_;
  batch.augmented = options_.augmentation.has_value() && !options_.augmentation->is_identity();
  batch.images.resize(batch.size * batch.image_stride());
  batch.labels.assign(batch.size * num_classes_, 0.0f);

  auto fill = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const std::size_t idx = order_[begin + i];
      const ImageTensor image = load_sample(idx, begin + i);
      std::copy(image.data.begin(), image.data.end(),
                batch.images.begin() + static_cast<std::ptrdiff_t>(i * batch.image_stride()));
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(options_.workers, batch.size));
  if (workers == 1) {
    fill(0, batch.size);
  } else {
    std::vector<std::future<void>> jobs;
    const std::size_t chunk = (batch.size + workers - 1) / workers;
    for (std::size_t lo = 0; lo < batch.size; lo += chunk)
      jobs.push_back(std::async(std::launch::async, fill, lo, std::min(batch.size, lo + chunk)));
    for (auto& job : jobs) job.get();
  }

  for (std::size_t i = 0; i < batch.size; ++i) {
    const std::size_t idx = order_[begin + i];
    const auto& record = records_[idx];
    batch.labels[i * num_classes_ + static_cast<std::size_t>(record.label.index)] = 1.0f;
    batch.record_indices.push_back(idx);
    batch.content_hashes.push_back(record.content_hash);
  }
  return batch;
}

std::string check_batch(const Batch& batch, std::size_t max_batch_size, int input_size) {
  std::ostringstream problem;
  if (batch.size == 0 || batch.size > max_batch_size) problem << "batch size " << batch.size << "; ";
  if (batch.height != input_size || batch.width != input_size || batch.channels != kChannels)
    problem << "shape " << batch.height << "x" << batch.width << "x" << batch.channels << "; ";
  if (batch.images.size() != batch.size * batch.image_stride()) problem << "image buffer size; ";
  if (batch.labels.size() != batch.size * batch.num_classes) problem << "label buffer size; ";
  for (float v : batch.images)
    if (!(v >= -1.0f && v <= 1.0f)) {
      problem << "value " << v << " outside [-1, 1]; ";
      break;
    }
  for (std::size_t i = 0; i < batch.size && i * batch.num_classes < batch.labels.size(); ++i) {
    int ones = 0, others = 0;
    for (std::size_t k = 0; k < batch.num_classes; ++k) {
      const float v = batch.labels[i * batch.num_classes + k];
      if (v == 1.0f) ++ones;
      else if (v != 0.0f) ++others;
    }
    if (ones != 1 || others != 0) {
      problem << "label row " << i << " is not one-hot; ";
      break;
    }
  }
  return problem.str();
}

}  // namespace mristage
