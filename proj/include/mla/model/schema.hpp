#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace mla::model {

struct ConceptGroup {
  std::string name;
  std::vector<std::size_t> columns;  // model-input column indices

  friend bool operator==(const ConceptGroup&, const ConceptGroup&) = default;
};

// A-priori partition of the model-input columns into concept groups; one
// token per group.
class GroupSchema {
 public:
  GroupSchema() = default;
  explicit GroupSchema(std::vector<ConceptGroup> groups);

  // Checks disjointness, full cover of [0, feature_count), m >= 2, k_i >= 1.
  void validate(std::size_t feature_count) const;

  std::size_t group_count() const noexcept { return groups_.size(); }
  std::size_t feature_count() const noexcept;
  const ConceptGroup& group(std::size_t i) const { return groups_.at(i); }
  const std::vector<ConceptGroup>& groups() const noexcept { return groups_; }
  std::vector<std::size_t> group_sizes() const;
  std::vector<std::string> names() const;

  // FNV-1a over a canonical text rendering; stored in checkpoints.
  std::uint64_t digest() const;

  // Same groups in a different order: result group i is this group order[i].
  GroupSchema permuted(const std::vector<std::size_t>& order) const;

  friend bool operator==(const GroupSchema&, const GroupSchema&) = default;

 private:
  std::vector<ConceptGroup> groups_;
};

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  double dropout = 0.1;
  std::size_t classes = 2;

  void validate() const;
  std::size_t head_width() const { return d_model / heads; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace mla::model
