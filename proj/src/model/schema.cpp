#include "mla/model/schema.hpp"

#include <string>

#include "mla/error.hpp"

namespace mla::model {

GroupSchema::GroupSchema(std::vector<ConceptGroup> groups) : groups_(std::move(groups)) {}

std::size_t GroupSchema::feature_count() const noexcept {
  std::size_t total = 0;
  for (const auto& g : groups_) total += g.columns.size();
  return total;
}

void GroupSchema::validate(std::size_t feature_count) const {
  if (groups_.size() < 2) {
    throw SchemaError("a group schema needs at least 2 groups, got " + std::to_string(groups_.size()));
  }
  std::vector<int> owner(feature_count, -1);
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    const auto& g = groups_[gi];
    if (g.columns.empty()) throw SchemaError("group '" + g.name + "' has no columns");
    for (std::size_t col : g.columns) {
      if (col >= feature_count) {
        throw SchemaError("group '" + g.name + "' references column " + std::to_string(col) +
                          " but there are only " + std::to_string(feature_count));
      }
      if (owner[col] >= 0) {
        throw SchemaError("column " + std::to_string(col) + " belongs to both '" +
                          groups_[owner[col]].name + "' and '" + g.name + "'");
      }
      owner[col] = static_cast<int>(gi);
    }
  }
  for (std::size_t col = 0; col < feature_count; ++col) {
    if (owner[col] < 0) throw SchemaError("column " + std::to_string(col) + " is not in any group");
  }
}

std::vector<std::size_t> GroupSchema::group_sizes() const {
  std::vector<std::size_t> sizes;
  for (const auto& g : groups_) sizes.push_back(g.columns.size());
  return sizes;
}

std::vector<std::string> GroupSchema::names() const {
  std::vector<std::string> out;
  for (const auto& g : groups_) out.push_back(g.name);
  return out;
}

std::uint64_t GroupSchema::digest() const {
  std::string text;
  for (const auto& g : groups_) {
    text += g.name;
    text += ':';
    for (std::size_t col : g.columns) text += std::to_string(col) + ",";
    text += ';';
  }
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

GroupSchema GroupSchema::permuted(const std::vector<std::size_t>& order) const {
  if (order.size() != groups_.size()) throw SchemaError("permutation length does not match group count");
  std::vector<ConceptGroup> out;
  for (std::size_t i : order) out.push_back(groups_.at(i));
  return GroupSchema(std::move(out));
}

void ModelConfig::validate() const {
  if (layers < 1 || heads < 1 || d_model < 1 || d_ff < 1 || classes < 1) {
    throw ConfigError("model layer/head/width/class counts must all be >= 1");
  }
  if (d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

}  // namespace mla::model
