#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>
#include <vector>

#include "mla/kernel/tensor.hpp"
#include "mla/model/schema.hpp"

namespace mla::data {

enum class ColumnKind { Numeric, Categorical };

// A raw (pre-encoding) column and the encoded columns [begin, begin + width)
// it occupies. Categorical columns become one-hot blocks, one column per
// category.
struct RawColumn {
  std::string name;
  ColumnKind kind = ColumnKind::Numeric;
  std::size_t begin = 0;
  std::size_t width = 1;
  std::vector<std::string> categories;

  friend bool operator==(const RawColumn&, const RawColumn&) = default;
};

enum class Split : std::uint8_t { Train = 0, Validation = 1, Test = 2 };

std::string to_string(Split split);
Split parse_split(const std::string& text);

// Per-numeric-column z-score statistics, computed from training rows only.
struct NormStats {
  std::vector<std::size_t> columns;  // encoded column indices
  std::vector<double> mean;
  std::vector<double> stddev;  // already clamped below at 1e-8

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

struct TabularDataset {
  std::string id;
  kernel::Tensor features;  // n x F, post-encoding
  std::vector<std::size_t> labels;
  std::vector<std::string> class_names;
  std::vector<std::string> column_names;  // encoded columns
  std::vector<RawColumn> raw_columns;
  NormStats stats;
  std::vector<Split> splits;
  std::vector<std::size_t> sample_ids;  // stable identifiers (source row numbers)

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t feature_count() const noexcept { return column_names.size(); }
  std::size_t class_count() const noexcept { return class_names.size(); }
  std::vector<std::size_t> indices(Split split) const;

  // Encoded columns of each raw column; one-hot blocks stay together.
  std::vector<std::vector<std::size_t>> feature_blocks() const;

  // No NaN, labels in range, one-hot blocks {0,1} summing to 1, consistent sizes.
  void validate() const;

  friend bool operator==(const TabularDataset&, const TabularDataset&) = default;
};

// A dataset together with its concept-group partition.
struct PreparedData {
  TabularDataset dataset;
  model::GroupSchema schema;
};

struct SplitOptions {
  double validation_fraction = 0.2;
  double test_fraction = 0.0;
  std::uint64_t seed = 0;
};

// Stratified by class; per class, the first round(n_c * fraction) shuffled
// rows go to validation, the next ones to test, the rest to train.
std::vector<Split> stratified_split(const std::vector<std::size_t>& labels, std::size_t classes,
                                    const SplitOptions& options);

// Stratified subsample of `count` row indices (sorted ascending).
std::vector<std::size_t> stratified_subsample(const std::vector<std::size_t>& labels,
                                              std::size_t classes, std::size_t count,
                                              std::uint64_t seed);

// Computes z-score stats over training rows for every numeric raw column and
// applies them to all rows in place.
void normalize(TabularDataset& dataset);

struct ColumnDecl {
  std::string name;
  ColumnKind kind = ColumnKind::Numeric;
};

struct CsvSchemaDecl {
  std::vector<ColumnDecl> columns;  // model inputs, in output order
  std::string label;
};

CsvSchemaDecl parse_schema_decl(const std::string& json_text);
CsvSchemaDecl load_schema_decl(const std::filesystem::path& path);

// Header row required. Numeric columns are z-scored with train statistics;
// categorical columns are one-hot encoded with categories in sorted order.
TabularDataset load_csv(const std::filesystem::path& path, const CsvSchemaDecl& decl,
                        const SplitOptions& split = {});
TabularDataset read_csv_dataset(std::istream& in, const CsvSchemaDecl& decl,
                                const SplitOptions& split = {}, const std::string& id = "csv");

// Group config: {"groups": [{"name": ..., "columns": [raw or encoded column names]}]}.
model::GroupSchema parse_group_config(const std::string& json_text, const TabularDataset& dataset);
model::GroupSchema load_group_config(const std::filesystem::path& path, const TabularDataset& dataset);

// Versioned processed-dataset cache with stats and schema embedded.
inline constexpr int kDatasetCacheVersion = 1;
std::string serialize_dataset(const PreparedData& data);
PreparedData parse_dataset(const std::string& text);
void save_dataset(const std::filesystem::path& path, const PreparedData& data);
PreparedData load_dataset(const std::filesystem::path& path);

}  // namespace mla::data
