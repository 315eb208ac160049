#pragma once

// Shared helpers for the unit and acceptance suites: scratch directories,
// image files on disk and synthetic in-memory datasets.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "mristage/imaging.hpp"
#include "mristage/manifest.hpp"
#include "mristage/random.hpp"

namespace fixtures {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "mristage") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline void write_bytes(const fs::path& file, const std::string& bytes) {
  fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  out << bytes;
}

/// Writes an RGB image (values 0..255, HWC) as PNG.
inline void write_png(const fs::path& file, const mristage::ImageTensor& rgb) {
  fs::create_directories(file.parent_path());
  cv::Mat mat(rgb.height, rgb.width, rgb.channels == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x) {
      if (rgb.channels == 1) {
        mat.at<unsigned char>(y, x) = static_cast<unsigned char>(rgb.at(y, x, 0));
      } else {
        auto& px = mat.at<cv::Vec3b>(y, x);
        px[0] = static_cast<unsigned char>(rgb.at(y, x, 2));
        px[1] = static_cast<unsigned char>(rgb.at(y, x, 1));
        px[2] = static_cast<unsigned char>(rgb.at(y, x, 0));
      }
    }
  cv::imwrite(file.string(), mat);
}

inline mristage::ImageTensor random_image(int h, int w, int c, std::uint64_t seed) {
  mristage::Rng rng(seed);
  mristage::ImageTensor img(h, w, c);
  for (auto& v : img.data) v = static_cast<float>(mristage::uniform_index(rng, 256));
  return img;
}

/// Image whose class is encoded as a bright quadrant (class k lights quadrant k)
/// over a noisy background. Values in [0, 255].
inline mristage::ImageTensor quadrant_image(int size, int klass, std::uint64_t seed) {
  mristage::Rng rng(seed);
  mristage::ImageTensor img(size, size, 3);
  const int half = size / 2;
  const int qy = (klass / 2) * half, qx = (klass % 2) * half;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const bool lit = y >= qy && y < qy + half && x >= qx && x < qx + half;
      for (int c = 0; c < 3; ++c) {
        const double noise = mristage::uniform(rng, -20.0, 20.0);
        img.at(y, x, c) = static_cast<float>(std::clamp((lit ? 220.0 : 40.0) + noise, 0.0, 255.0));
      }
    }
  return img;
}

/// Kaggle-style tree: <root>/<class>/<class>_<i>.png with small quadrant images.
inline void make_image_tree(const fs::path& root, const std::vector<std::string>& classes, int per_class,
                            int size, std::uint64_t seed) {
  for (std::size_t k = 0; k < classes.size(); ++k)
    for (int i = 0; i < per_class; ++i)
      write_png(root / classes[k] / (classes[k] + "_" + std::to_string(i) + ".png"),
                quadrant_image(size, static_cast<int>(k % 4), mristage::derive_seed(seed, k, i)));
}

/// Records for in-memory images keyed by position; paths are synthetic.
inline std::vector<mristage::SampleRecord> synthetic_records(const std::vector<int>& labels) {
  std::vector<mristage::SampleRecord> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    mristage::SampleRecord r;
    char name[32];
    std::snprintf(name, sizeof(name), "mem/%05zu.png", i);
    r.path = name;
    r.label = {labels[i], "class_" + std::to_string(labels[i])};
    r.split = mristage::Split::Train;
    r.content_hash = static_cast<std::uint64_t>(i);
    out.push_back(r);
  }
  return out;
}

/// Loader serving quadrant images; the record's position is parsed from its path.
inline mristage::ImageLoader quadrant_loader(int size, std::uint64_t seed) {
  return [size, seed](const mristage::SampleRecord& r) {
    const auto stem = r.path.stem().string();
    return quadrant_image(size, r.label.index, mristage::derive_seed(seed, std::stoull(stem)));
  };
}

}  // namespace fixtures
