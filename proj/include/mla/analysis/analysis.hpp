#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mla/explain/explainers.hpp"
#include "mla/kernel/tensor.hpp"

namespace mla::analysis {

// One method's explanations for one run over a sample set.
using ExplanationSet = explain::ExplanationFile;

struct Segment {
  enum class Kind { All, Class, Correct, Wrong };
  Kind kind = Kind::All;
  std::size_t label = 0;  // true class, for Kind::Class

  static Segment all() { return {}; }
  static Segment of_class(std::size_t label) { return {Kind::Class, label}; }
  static Segment correct() { return {Kind::Correct, 0}; }
  static Segment wrong() { return {Kind::Wrong, 0}; }
};

// Share of the segment's samples whose best group is each group; nullopt when
// the segment holds no samples. The set itself must not be empty.
std::optional<std::vector<double>> best_group_distribution(const ExplanationSet& set, Segment segment);

// Throws AlignmentError unless all sets hold the same sample ids in the same order.
void check_aligned(std::span<const ExplanationSet> sets);

// Per-sample mode of the best group over runs; ties to the lowest group.
std::vector<std::size_t> mode_best_group(std::span<const ExplanationSet> runs);
// Per-sample mode of the (unordered) two-best set; ties to the smallest pair.
std::vector<std::pair<std::size_t, std::size_t>> mode_best_pair(std::span<const ExplanationSet> runs);

// Percentage of samples on which a and b agree: equal best group (top 1) or
// intersecting two-best sets (top 2).
double pairwise_agreement(const ExplanationSet& a, const ExplanationSet& b, std::size_t top);

enum class PairMode { BySeed, CrossProduct };

// Agreement for each run pair: runs with equal seeds, or every (a, b) pair.
std::vector<double> run_pair_agreement(std::span<const ExplanationSet> a, std::span<const ExplanationSet> b,
                                       std::size_t top, PairMode mode = PairMode::BySeed);

struct Quartiles {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

// Linear-interpolation quantiles; empty input -> RangeError.
Quartiles quartiles(std::vector<double> values);

struct StabilityResult {
  std::vector<std::size_t> sample_ids;
  std::vector<double> percent;  // per sample, in [0, 100]
  Quartiles summary;
};

// Per sample, share of runs agreeing with the modal answer. Needs >= 2 runs.
StabilityResult stability(std::span<const ExplanationSet> runs, std::size_t top);

// A named plain table written as delimiter-separated text.
struct Table {
  std::string name;  // file stem
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::string format_number(double value);  // shortest round-trip, "nan" for NaN

// Heat-map table of a matrix after min-max scaling to [0, 1].
Table heatmap_table(const std::string& name, const kernel::Tensor& matrix,
                    const std::vector<std::string>& group_names);

struct ReportOptions {
  PairMode pair_mode = PairMode::BySeed;
  std::vector<std::string> class_names;  // optional, for per-class rows
};

// All comparison tables for explanation sets of any methods and runs.
std::vector<Table> build_report(std::span<const ExplanationSet> sets, const ReportOptions& options = {});

// CSV text of one table, header first.
std::string render_table(const Table& table);
void write_table(const Table& table, const std::filesystem::path& path);

// Writes <name>.csv per table and manifest.json listing them, in table order.
// Returns the written file names.
std::vector<std::string> emit_report(std::span<const Table> tables, const std::filesystem::path& dir);

}  // namespace mla::analysis
