#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mla/data/dataset.hpp"
#include "mla/kernel/tensor.hpp"
#include "mla/model/encoder.hpp"

namespace mla::explain {

using kernel::Tensor;

enum class Method { MLA, LL, SA, SH };

std::string to_string(Method method);      // "mla", "ll", "sa", "sh"
Method parse_method(const std::string& text);  // case-insensitive; ConfigError otherwise
inline constexpr Method kAllMethods[] = {Method::MLA, Method::LL, Method::SA, Method::SH};

struct Explanation {
  Method method = Method::MLA;
  std::vector<double> scores;        // per group, >= 0
  std::vector<std::size_t> ranked;   // best first, 0-based group indices
  std::optional<Tensor> heatmap;     // m x m (MLA, LL)
  std::size_t predicted = 0;

  // Distinct in-range ranked groups, finite nonnegative scores.
  void validate(std::size_t groups) const;
};

// Top-k group indices by score, ties to the lower index.
std::vector<std::size_t> rank_top(std::span<const double> scores, std::size_t k);

Explanation explain_mla(const model::Model& model, std::span<const double> sample, std::size_t k);
Explanation explain_ll(const model::Model& model, std::span<const double> sample, std::size_t k);

// Scores from an already computed attention stack (single head).
Explanation explain_mla(const model::AttentionStack& attention, std::size_t k);
Explanation explain_ll(const model::AttentionStack& attention, std::size_t k);

enum class SaTarget { Predicted, TrueLabel };

struct SaOptions {
  SaTarget target = SaTarget::Predicted;
  std::size_t label = 0;  // used with TrueLabel
};

// d(cross entropy)/d(input) for one sample; length F.
std::vector<double> input_gradient(const model::Model& model, std::span<const double> sample,
                                   std::size_t target_class);
Explanation explain_sa(const model::Model& model, std::span<const double> sample, std::size_t k,
                       const SaOptions& options = {});

// Shapley players and their reference values. Each player is a set of input
// columns switched together; one-hot blocks form a single player.
struct Background {
  std::vector<std::vector<std::size_t>> players;
  std::vector<double> reference;  // length F: column means, one-hot mode for blocks
};

// Reference values from up to `count` training rows, drawn with `seed`.
// Blocks split by the group schema become one player per group part.
Background make_background(const data::TabularDataset& dataset, const model::GroupSchema& schema,
                           std::size_t count = 100, std::uint64_t seed = 0);
// One player per column.
Background column_background(std::vector<double> reference);

struct ShOptions {
  std::size_t budget = 200;  // sampled permutations
  std::uint64_t seed = 0;
};

// Batched value function: rows of the input matrix -> one scalar each.
using ValueFunction = std::function<std::vector<double>(const Tensor&)>;

// Permutation-sampling Shapley estimate, one value per player.
std::vector<double> shapley_sampled(const ValueFunction& value, std::span<const double> sample,
                                    const Background& background, std::size_t budget,
                                    std::uint64_t seed);

Explanation explain_sh(const model::Model& model, std::span<const double> sample, std::size_t k,
                       const Background& background, const ShOptions& options = {});
// Same, also returning the per-player values.
Explanation explain_sh(const model::Model& model, std::span<const double> sample, std::size_t k,
                       const Background& background, const ShOptions& options,
                       std::vector<double>* player_values);

struct ExplainOptions {
  std::size_t k = 2;
  SaTarget sa_target = SaTarget::Predicted;
  std::optional<Background> background;  // required for SH
  ShOptions sh;
  std::size_t jobs = 1;
};

struct ExplanationRecord {
  std::size_t sample_id = 0;
  std::size_t label = 0;
  bool correct = false;
  Explanation explanation;
};

// One record per row, in the order given. The SH seed of each row is derived
// from options.sh.seed and the row's sample id.
std::vector<ExplanationRecord> explain_batch(const model::Model& model,
                                             const data::TabularDataset& dataset,
                                             std::span<const std::size_t> rows, Method method,
                                             const ExplainOptions& options);

// Line-delimited JSON: a header line, then one record per line.
struct ExplanationFile {
  std::string dataset_id;
  Method method = Method::MLA;
  std::uint64_t run_seed = 0;
  std::size_t groups = 0;
  std::vector<std::string> group_names;
  std::vector<std::string> class_names;
  std::vector<ExplanationRecord> records;
};

std::string serialize_explanations(const ExplanationFile& file);
ExplanationFile parse_explanations(const std::string& text);
void save_explanations(const std::filesystem::path& path, const ExplanationFile& file);
ExplanationFile load_explanations(const std::filesystem::path& path);

}  // namespace mla::explain
