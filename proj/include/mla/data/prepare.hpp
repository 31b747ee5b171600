#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mla/data/dataset.hpp"

namespace mla::data {

// ---- Forest CoverType -------------------------------------------------------

struct CovertypeOptions {
  std::uint64_t seed = 0;
  // The three largest classes hold 515,651 rows; these shares give ~425k train
  // and ~53k validation on the full file, the rest is held out as test.
  double validation_fraction = 0.1028;
  double test_fraction = 0.0730;
  std::size_t subsample = 0;  // 0 = all rows; otherwise stratified subsample size
};

// UCI covtype.data layout: 54 integer features then Cover_Type (1..7). Keeps
// the three most frequent classes, relabelled 0..2 by ascending original id.
// Groups: Generals(3) Distances(4) Hillshades(3) Wild areas(4) Soil types(40).
PreparedData covertype_prepare(const std::filesystem::path& path, const CovertypeOptions& options = {});
PreparedData covertype_prepare(std::istream& in, const CovertypeOptions& options = {});

// ---- KDD'99 network intrusion -------------------------------------------------

// Maps raw KDD labels (without the trailing '.') to aggregated classes.
struct ClassMap {
  std::vector<std::string> classes;
  std::map<std::string, std::size_t> labels;
  std::size_t fallback = 0;  // class for labels not listed

  std::size_t lookup(const std::string& raw_label) const;
};

// normal / dos / other-attack.
ClassMap default_ni_class_map();
ClassMap parse_class_map(const std::string& json_text);
ClassMap load_class_map(const std::filesystem::path& path);

struct NiOptions {
  std::uint64_t seed = 0;
  std::size_t train_rows = 1'000'000;
  std::size_t validation_rows = 75'000;
  std::optional<ClassMap> class_map;
};

// KDD'99 layout: 41 features then label. Encoded to 53 columns in groups
// Basic(20) Content(14) Traffic(9) Host(10); see README for the layout.
PreparedData ni_prepare(const std::filesystem::path& path, const NiOptions& options = {});
PreparedData ni_prepare(std::istream& in, const NiOptions& options = {});

// ---- Synthetic planted-signal data -------------------------------------------

struct SynthOptions {
  std::size_t samples = 2000;
  std::size_t groups = 4;
  std::size_t features_per_group = 3;
  std::size_t informative_group = 0;
  double noise = 0.1;
  std::uint64_t seed = 0;
  double validation_fraction = 0.2;
};

// Standard-normal features; label = [w . x_g + noise * eps > 0] for a fixed
// random unit vector w, so only the informative group carries signal.
PreparedData synth_planted(const SynthOptions& options = {});

}  // namespace mla::data
