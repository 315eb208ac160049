#include "mristage/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "mristage/error.hpp"
#include "mristage/random.hpp"

namespace mristage {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unassigned: return "unassigned";
  }
  return "unassigned";
}

std::string_view to_string(Source source) {
  return source == Source::Augmented ? "augmented" : "original";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  if (text == "unassigned") return Split::Unassigned;
  throw DatasetError("unknown split '" + std::string(text) + "'");
}

Source parse_source(std::string_view text) {
  if (text == "augmented") return Source::Augmented;
  if (text == "original") return Source::Original;
  throw DatasetError("unknown source '" + std::string(text) + "'");
}

std::vector<SampleRecord> DatasetManifest::records_in(Split split) const {
  std::vector<SampleRecord> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(r);
  return out;
}

bool same_contents(const DatasetManifest& a, const DatasetManifest& b) {
  return a.records == b.records && a.classes == b.classes;
}

bool is_supported_image(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png";
}

namespace {

bool by_path(const SampleRecord& a, const SampleRecord& b) { return a.path < b.path; }

std::vector<ClassLabel> make_roster(std::vector<std::string> names) {
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  std::vector<ClassLabel> roster;
  roster.reserve(names.size());
  for (std::size_t i = 0; i < names.size(); ++i)
    roster.push_back({static_cast<int>(i), names[i]});
  return roster;
}

// Largest-remainder apportionment of n items over the given weights. Every
// count lands within one item of n * weight; ties favour earlier slots.
std::vector<std::size_t> apportion(std::size_t n, const std::vector<double>& weights) {
  std::vector<std::size_t> counts(weights.size());
  std::vector<double> remainders(weights.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(n) * weights[i];
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainders[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  while (assigned > n) {  // only reachable through the 1e-9 nudge
    const auto it = std::min_element(remainders.begin(), remainders.end());
    const auto i = static_cast<std::size_t>(it - remainders.begin());
    --counts[i];
    remainders[i] += 1.0;
    --assigned;
  }
  std::vector<std::size_t> order(weights.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
  for (std::size_t k = 0; assigned < n; k = (k + 1) % order.size()) {
    ++counts[order[k]];
    ++assigned;
  }
  return counts;
}

// Shuffle each class's records (in path order) and hand them out in slot order.
void assign_by_class(std::vector<SampleRecord*>& pool, std::size_t num_classes,
                     const std::vector<double>& weights, const std::vector<Split>& slots,
                     std::uint64_t seed) {
  std::vector<std::vector<SampleRecord*>> per_class(num_classes);
  for (auto* r : pool) per_class[static_cast<std::size_t>(r->label.index)].push_back(r);
  Rng rng(seed);
  for (auto& members : per_class) {
    std::sort(members.begin(), members.end(),
              [](const SampleRecord* a, const SampleRecord* b) { return a->path < b->path; });
    shuffle(members, rng);
    const auto counts = apportion(members.size(), weights);
    std::size_t pos = 0;
    for (std::size_t s = 0; s < slots.size(); ++s)
      for (std::size_t i = 0; i < counts[s]; ++i) members[pos++]->split = slots[s];
  }
}

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n\r") == std::string::npos) return text;
  std::string quoted = "\"";
  for (char c : text) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  return quoted + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  if (quoted) throw DatasetError("unterminated quote on manifest line " + std::to_string(line_no));
  return fields;
}

constexpr std::string_view kManifestHeader = "path,label,split,source,content_hash";

}  // namespace

DatasetManifest scan_dataset(const fs::path& root, Source source) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw DatasetError("empty dataset: " + root.string() + " is not a directory");

  DatasetManifest manifest;
  manifest.root = root;
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
    else manifest.warnings.push_back("ignoring file outside a class directory: " + entry.path().string());
  }
  std::vector<std::string> names;
  for (const auto& dir : class_dirs) names.push_back(dir.filename().string());
  manifest.classes = make_roster(names);
  std::map<std::string, ClassLabel> by_name;
  for (const auto& c : manifest.classes) by_name[c.name] = c;

  for (const auto& dir : class_dirs) {
    const ClassLabel& label = by_name.at(dir.filename().string());
    std::size_t images = 0;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      if (!is_supported_image(entry.path())) {
        manifest.warnings.push_back("skipping unsupported file " + entry.path().string());
        continue;
      }
      manifest.records.push_back(
          {entry.path(), label, Split::Unassigned, source, hash_file(entry.path())});
      ++images;
    }
    if (images == 0) manifest.warnings.push_back("class '" + label.name + "' has no images");
  }
  if (manifest.records.empty()) throw DatasetError("empty dataset: no images under " + root.string());
  std::sort(manifest.records.begin(), manifest.records.end(), by_path);
  return manifest;
}

DatasetManifest assign_paper_splits(const DatasetManifest& augmented,
                                    const DatasetManifest& original, double val_fraction,
                                    std::uint64_t seed, EvalPartition partition) {
  if (augmented.records.empty() || original.records.empty()) throw DatasetError("empty dataset");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ConfigError("val_fraction must lie strictly between 0 and 1");

  std::set<std::string> aug_names, orig_names;
  for (const auto& c : augmented.classes) aug_names.insert(c.name);
  for (const auto& c : original.classes) orig_names.insert(c.name);
  if (aug_names != orig_names) {
    std::string msg = "class-roster mismatch:";
    for (const auto& n : aug_names)
      if (!orig_names.count(n)) msg += " augmented-only '" + n + "'";
    for (const auto& n : orig_names)
      if (!aug_names.count(n)) msg += " original-only '" + n + "'";
    throw DatasetError(msg);
  }

  DatasetManifest merged;
  merged.root = augmented.root;
  merged.classes = augmented.classes;
  merged.warnings = augmented.warnings;
  merged.warnings.insert(merged.warnings.end(), original.warnings.begin(), original.warnings.end());

  for (auto r : augmented.records) {
    r.split = Split::Train;
    merged.records.push_back(std::move(r));
  }
  const std::size_t first_original = merged.records.size();
  for (const auto& r : original.records) merged.records.push_back(r);

  std::vector<SampleRecord*> pool;
  for (std::size_t i = first_original; i < merged.records.size(); ++i) pool.push_back(&merged.records[i]);
  if (partition == EvalPartition::Shared) {
    for (auto* r : pool) r->split = Split::Val;
  } else {
    assign_by_class(pool, merged.classes.size(), {val_fraction, 1.0 - val_fraction},
                    {Split::Val, Split::Test}, seed);
  }
  std::stable_sort(merged.records.begin(), merged.records.end(), by_path);
  return merged;
}

DatasetManifest stratified_split(const DatasetManifest& manifest, const SplitFractions& f,
                                 std::uint64_t seed) {
  for (double x : {f.train, f.val, f.test})
    if (!(x >= 0.0 && x <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");

  DatasetManifest out = manifest;
  std::vector<SampleRecord*> pool;
  for (auto& r : out.records) pool.push_back(&r);
  assign_by_class(pool, out.classes.size(), {f.train, f.val, f.test},
                  {Split::Train, Split::Val, Split::Test}, seed);
  return out;
}

std::vector<std::size_t> class_distribution(const DatasetManifest& manifest, Split split) {
  std::vector<std::size_t> counts(manifest.classes.size(), 0);
  for (const auto& r : manifest.records)
    if (r.split == split) ++counts.at(static_cast<std::size_t>(r.label.index));
  return counts;
}

namespace {

bool files_identical(const fs::path& a, const fs::path& b) {
  std::error_code ec;
  const auto size_a = fs::file_size(a, ec);
  if (ec) return true;  // unreadable now; trust the recorded hash
  const auto size_b = fs::file_size(b, ec);
  if (ec) return true;
  if (size_a != size_b) return false;
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  return std::equal(std::istreambuf_iterator<char>(fa), std::istreambuf_iterator<char>(),
                    std::istreambuf_iterator<char>(fb));
}

}  // namespace

LeakageReport audit_leakage(const DatasetManifest& manifest) {
  std::unordered_multimap<std::uint64_t, const SampleRecord*> train_by_hash;
  for (const auto& r : manifest.records) {
    if (r.split == Split::Unassigned) throw DatasetError("run split assignment first");
    if (r.split == Split::Train) train_by_hash.emplace(r.content_hash, &r);
  }
  LeakageReport report;
  for (const auto& r : manifest.records) {
    if (r.split != Split::Val && r.split != Split::Test) continue;
    auto [lo, hi] = train_by_hash.equal_range(r.content_hash);
    for (auto it = lo; it != hi; ++it) {
      if (it->second->path == r.path) continue;  // same file listed twice is not a copy
      if (files_identical(it->second->path, r.path))
        report.exact_collisions.emplace_back(it->second->path, r.path);
    }
  }
  std::sort(report.exact_collisions.begin(), report.exact_collisions.end());
  report.collision_count = report.exact_collisions.size();
  return report;
}

void write_manifest_csv(const DatasetManifest& manifest, std::ostream& out) {
  out << kManifestHeader << '\n';
  for (const auto& r : manifest.records) {
    out << csv_field(r.path.generic_string()) << ',' << csv_field(r.label.name) << ','
        << to_string(r.split) << ',' << to_string(r.source) << ',' << format_hash(r.content_hash)
        << '\n';
  }
}

void save_manifest_csv(const DatasetManifest& manifest, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + file.string());
  write_manifest_csv(manifest, out);
}

DatasetManifest read_manifest_csv(std::istream& in, const fs::path& root) {
  std::string line;
  if (!std::getline(in, line)) throw DatasetError("empty dataset: manifest has no header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader) throw DatasetError("unexpected manifest header: " + line);

  struct Row {
    std::string path, label, split, source, hash;
  };
  std::vector<Row> rows;
  std::vector<std::string> names;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_csv_line(line, line_no);
    if (f.size() != 5)
      throw DatasetError("manifest line " + std::to_string(line_no) + ": expected 5 fields");
    rows.push_back({f[0], f[1], f[2], f[3], f[4]});
    names.push_back(f[1]);
  }
  DatasetManifest manifest;
  manifest.root = root;
  manifest.classes = make_roster(names);
  std::map<std::string, ClassLabel> by_name;
  for (const auto& c : manifest.classes) by_name[c.name] = c;
  for (const auto& row : rows) {
    manifest.records.push_back({fs::path(row.path), by_name.at(row.label), parse_split(row.split),
                                parse_source(row.source), parse_hash(row.hash)});
  }
  std::stable_sort(manifest.records.begin(), manifest.records.end(), by_path);
  return manifest;
}

DatasetManifest load_manifest_csv(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DatasetError("cannot read manifest " + file.string());
  return read_manifest_csv(in, file.parent_path());
}

}  // namespace mristage
