#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mristage {

namespace fs = std::filesystem;

enum class Split { Train, Val, Test, Unassigned };
enum class Source { Augmented, Original };

std::string_view to_string(Split split);
std::string_view to_string(Source source);
Split parse_split(std::string_view text);
Source parse_source(std::string_view text);

/// The four dementia stages in the default (lexicographic) order.
inline constexpr std::array<std::string_view, 4> kDefaultClassNames = {
    "MildDemented", "ModerateDemented", "NonDemented", "VeryMildDemented"};

struct ClassLabel {
  int index = 0;
  std::string name;

  friend bool operator==(const ClassLabel&, const ClassLabel&) = default;
};

struct SampleRecord {
  fs::path path;
  ClassLabel label;
  Split split = Split::Unassigned;
  Source source = Source::Original;
  std::uint64_t content_hash = 0;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct DatasetManifest {
  std::vector<SampleRecord> records;  // sorted by path
  std::vector<ClassLabel> classes;    // indices 0..K-1
  fs::path root;
  std::vector<std::string> warnings;  // non-fatal scan findings

  std::size_t num_classes() const { return classes.size(); }
  std::vector<SampleRecord> records_in(Split split) const;
};

/// Records and class roster agree; root and warnings are provenance only.
bool same_contents(const DatasetManifest& a, const DatasetManifest& b);

struct LeakageReport {
  /// (train path, evaluation path) pairs whose files are byte-identical.
  std::vector<std::pair<fs::path, fs::path>> exact_collisions;
  std::size_t collision_count = 0;
};

/// How the held-out original images are divided between validation and test.
enum class EvalPartition {
  Disjoint,  // stratified val/test partition using val_fraction
  Shared,    // every original image serves as both validation and test
};

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

bool is_supported_image(const fs::path& path);

/// Scan `<root>/<ClassName>/<image files>` into a path-sorted manifest.
/// Throws DatasetError("empty dataset") when the tree yields no images.
DatasetManifest scan_dataset(const fs::path& root, Source source);

/// Augmented images train; original images are split into val/test per class.
DatasetManifest assign_paper_splits(const DatasetManifest& augmented,
                                    const DatasetManifest& original,
                                    double val_fraction, std::uint64_t seed,
                                    EvalPartition partition = EvalPartition::Disjoint);

/// Per-class proportional split of a single manifest.
DatasetManifest stratified_split(const DatasetManifest& manifest,
                                 const SplitFractions& fractions,
                                 std::uint64_t seed);

/// Per-class counts for a split; counts[i] belongs to classes[i].
std::vector<std::size_t> class_distribution(const DatasetManifest& manifest,
                                            Split split);

/// Byte-identical files shared between train and val/test.
LeakageReport audit_leakage(const DatasetManifest& manifest);

/// CSV with header `path,label,split,source,content_hash`.
void write_manifest_csv(const DatasetManifest& manifest, std::ostream& out);
void save_manifest_csv(const DatasetManifest& manifest, const fs::path& file);
DatasetManifest read_manifest_csv(std::istream& in, const fs::path& root = {});
DatasetManifest load_manifest_csv(const fs::path& file);

std::string format_hash(std::uint64_t hash);
std::uint64_t parse_hash(std::string_view hex);

/// FNV-1a over the file's bytes.
std::uint64_t hash_file(const fs::path& file);
std::uint64_t hash_bytes(const void* data, std::size_t size,
                         std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace mristage
