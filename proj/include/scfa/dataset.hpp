#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "scfa/image_io.hpp"
#include "scfa/synthetic.hpp"

namespace scfa {

namespace fs = std::filesystem;

// Dataset layout on disk:
//   out_dir/train/<pair_id>_src.png, <pair_id>_trg.png   (same for test/)
//   out_dir/manifest.jsonl — one JSON record per line
// Paths inside the manifest are relative to the manifest's directory.

struct ManifestEntry {
  std::string pair_id;
  std::string source_path;
  std::string target_path;
  int her2_label = 0;
  std::string split;  // "train" or "test"
  std::optional<AugmentationSpec> misalignment;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  int image_size = 0;
  std::map<int, long> class_counts;
  fs::path root;  // directory the relative paths resolve against

  std::vector<const ManifestEntry*> split_entries(const std::string& split) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.split == split) out.push_back(&e);
    return out;
  }
};

inline void save_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("save_manifest: cannot write " + path.string());
  for (const auto& e : m.entries) {
    nlohmann::json j{{"pair_id", e.pair_id},
                     {"source_path", e.source_path},
                     {"target_path", e.target_path},
                     {"her2_label", e.her2_label},
                     {"split", e.split}};
    if (e.misalignment) {
      const auto& s = *e.misalignment;
      j["misalignment"] = {{"elastic_intensity", s.elastic_intensity},
                           {"translate_frac", {s.translate_frac[0], s.translate_frac[1]}},
                           {"rotate_deg", s.rotate_deg},
                           {"seed", s.seed}};
    }
    out << j.dump() << "\n";
  }
}

/// Parses and fully validates a manifest: schema, file existence, decodable
/// images of one consistent square size, sane labels/splits.
inline DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("load_manifest: cannot open " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();

  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& ex) {
      throw Error("load_manifest: bad JSON at line " + std::to_string(line_no) + ": " + ex.what());
    }
    for (const auto& [key, val] : j.items())
      if (key != "pair_id" && key != "source_path" && key != "target_path" &&
          key != "her2_label" && key != "split" && key != "misalignment")
        throw Error("load_manifest: unknown key '" + key + "' at line " + std::to_string(line_no));
    ManifestEntry e;
    try {
      e.pair_id = j.at("pair_id").get<std::string>();
      e.source_path = j.at("source_path").get<std::string>();
      e.target_path = j.at("target_path").get<std::string>();
      e.her2_label = j.at("her2_label").get<int>();
      e.split = j.at("split").get<std::string>();
      if (j.contains("misalignment")) {
        const auto& s = j["misalignment"];
        AugmentationSpec spec;
        spec.elastic_intensity = s.at("elastic_intensity").get<double>();
        spec.translate_frac = {s.at("translate_frac").at(0).get<double>(),
                               s.at("translate_frac").at(1).get<double>()};
        spec.rotate_deg = s.at("rotate_deg").get<double>();
        spec.seed = s.at("seed").get<std::uint64_t>();
        e.misalignment = spec;
      }
    } catch (const nlohmann::json::exception& ex) {
      throw Error("load_manifest: schema mismatch at line " + std::to_string(line_no) + ": " +
                  ex.what());
    }
    if (e.her2_label < 0 || e.her2_label > 3)
      throw Error("load_manifest: her2_label out of range for pair '" + e.pair_id + "'");
    if (e.split != "train" && e.split != "test")
      throw Error("load_manifest: bad split '" + e.split + "' for pair '" + e.pair_id + "'");
    m.entries.push_back(std::move(e));
  }

  for (const auto& e : m.entries) {
    for (const std::string* rel : {&e.source_path, &e.target_path}) {
      const fs::path p = m.root / *rel;
      if (!fs::exists(p))
        throw Error("load_manifest: missing file for pair '" + e.pair_id + "': " + p.string());
      Image<float> img = load_image<float>(p);
      if (img.t.h != img.t.w)
        throw Error("load_manifest: non-square image for pair '" + e.pair_id + "'");
      if (m.image_size == 0) m.image_size = img.t.h;
      if (img.t.h != m.image_size)
        throw Error("load_manifest: size mismatch for pair '" + e.pair_id + "': " +
                    std::to_string(img.t.h) + " vs " + std::to_string(m.image_size));
    }
    ++m.class_counts[e.her2_label];
  }
  return m;
}

template <typename S>
inline Image<S> load_pair_image(const DatasetManifest& m, const ManifestEntry& e, bool source) {
  return load_image<S>(m.root / (source ? e.source_path : e.target_path));
}

/// Writes a full synthetic dataset under out_dir and returns its manifest.
/// Every pair derives its own seed from (seed, pair_id), so generation order
/// doesn't matter; labels are balanced within each split and then shuffled.
inline DatasetManifest generate_synthetic_dataset(int n_train, int n_test, int image_size,
                                                  std::uint64_t seed, const fs::path& out_dir) {
  if (n_train < 4 || n_test < 4) throw Error("generate_synthetic_dataset: need >= 4 per split");
  if (image_size < 32) throw Error("generate_synthetic_dataset: image_size must be >= 32");
  std::error_code ec;
  fs::create_directories(out_dir / "train", ec);
  fs::create_directories(out_dir / "test", ec);
  if (!fs::is_directory(out_dir / "train") || !fs::is_directory(out_dir / "test"))
    throw Error("generate_synthetic_dataset: cannot create " + out_dir.string());

  Rng master(derive_seed(seed, "dataset.labels"));
  auto make_labels = [&](int n) {
    std::vector<int> labels((std::size_t)n);
    for (int i = 0; i < n; ++i) labels[(std::size_t)i] = i % 4;
    for (int i = n - 1; i > 0; --i)
      std::swap(labels[(std::size_t)i], labels[(std::size_t)master.uniform_int(0, i)]);
    return labels;
  };

  DatasetManifest m;
  m.image_size = image_size;
  m.root = out_dir;
  for (const auto& [split, n] : {std::pair<std::string, int>{"train", n_train}, {"test", n_test}}) {
    const auto labels = make_labels(n);
    for (int i = 0; i < n; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "%s_%04d", split.c_str(), i);
      StainPair<float> pair =
          synthesize_pair<float>(image_size, labels[(std::size_t)i], id, derive_seed(seed, id));
      ManifestEntry e;
      e.pair_id = id;
      e.source_path = split + "/" + id + "_src.png";
      e.target_path = split + "/" + id + "_trg.png";
      e.her2_label = pair.her2_label;
      e.split = split;
      e.misalignment = pair.misalignment;
      save_image(out_dir / e.source_path, pair.source);
      save_image(out_dir / e.target_path, pair.target);
      ++m.class_counts[e.her2_label];
      m.entries.push_back(std::move(e));
    }
  }
  save_manifest(m, out_dir / "manifest.jsonl");
  return m;
}

/// Adapter for the paired-folder layout real data ships in: root/HE/<name>.png
/// with root/IHC/<name>.png, names carrying the split and the grade suffix
/// (e.g. 00012_train_2+.png). Produces the same manifest schema in memory.
inline DatasetManifest load_bci_layout(const fs::path& root) {
  const fs::path he = root / "HE", ihc = root / "IHC";
  if (!fs::is_directory(he) || !fs::is_directory(ihc))
    throw Error("load_bci_layout: expected HE/ and IHC/ under " + root.string());

  std::vector<std::string> names;
  for (const auto& ent : fs::directory_iterator(he))
    if (ent.path().extension() == ".png") names.push_back(ent.path().filename().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw Error("load_bci_layout: no PNG files under " + he.string());

  DatasetManifest m;
  m.root = root;
  for (const auto& name : names) {
    if (!fs::exists(ihc / name))
      throw Error("load_bci_layout: missing IHC counterpart for " + name);
    const std::string stem = fs::path(name).stem().string();
    std::vector<std::string> tokens;
    for (std::size_t pos = 0, next; pos <= stem.size(); pos = next + 1) {
      next = stem.find('_', pos);
      if (next == std::string::npos) next = stem.size();
      tokens.push_back(stem.substr(pos, next - pos));
      if (next == stem.size()) break;
    }
    ManifestEntry e;
    e.pair_id = stem;
    e.source_path = "HE/" + name;
    e.target_path = "IHC/" + name;
    for (const auto& t : tokens)
      if (t == "train" || t == "test") e.split = t;
    if (e.split.empty()) throw Error("load_bci_layout: no split token in " + name);
    const std::string& grade = tokens.back();
    if (grade == "0")
      e.her2_label = 0;
    else if (grade == "1+")
      e.her2_label = 1;
    else if (grade == "2+")
      e.her2_label = 2;
    else if (grade == "3+")
      e.her2_label = 3;
    else
      throw Error("load_bci_layout: unrecognized grade suffix in " + name);
    ++m.class_counts[e.her2_label];
    m.entries.push_back(std::move(e));
  }

  for (const auto& e : m.entries) {
    Image<float> img = load_image<float>(root / e.source_path);
    if (img.t.h != img.t.w) throw Error("load_bci_layout: non-square image " + e.source_path);
    if (m.image_size == 0) m.image_size = img.t.h;
    if (img.t.h != m.image_size) throw Error("load_bci_layout: size mismatch " + e.source_path);
  }
  return m;
}

}  // namespace scfa
