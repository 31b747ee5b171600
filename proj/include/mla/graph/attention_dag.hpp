#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mla/kernel/tensor.hpp"
#include "mla/model/encoder.hpp"

namespace mla::graph {

using kernel::Tensor;

// Attention entries below this are treated as absent arcs.
inline constexpr double kWeightFloor = 1e-12;

struct Arc {
  std::size_t from = 0;  // group index in layer l-1
  std::size_t to = 0;    // group index in layer l
  double weight = 0.0;   // a^l[from][to]
  double cost = 0.0;     // -log(weight)
};

// Layered DAG over vertices v(l, c), l = 0..M (0 is the input layer), c = 0..m-1.
// Arc v(l-1, j) -> v(l, k) carries a^l[j][k], row index on the earlier layer.
class AttentionDag {
 public:
  static AttentionDag build(std::span<const Tensor> layers);
  static AttentionDag build(const model::AttentionStack& stack);

  std::size_t groups() const noexcept { return groups_; }
  std::size_t layers() const noexcept { return arcs_.size(); }
  std::size_t vertex_count() const noexcept { return (layers() + 1) * groups_; }
  std::size_t arc_count() const noexcept;

  // Arcs entering layer l (1-based, l = 1..M), ordered by (from, to).
  const std::vector<Arc>& arcs(std::size_t layer) const { return arcs_.at(layer - 1); }
  double weight(std::size_t layer, std::size_t from, std::size_t to) const;

  // Deletes input-layer vertex v(0, group) together with its arcs.
  void remove_source(std::size_t group);
  bool source_removed(std::size_t group) const { return removed_.at(group); }

  // Text listing, layer-major then index: vertices first, then arcs.
  std::string dump(const std::vector<std::string>& group_names = {}) const;

 private:
  std::size_t groups_ = 0;
  std::vector<std::vector<Arc>> arcs_;
  std::vector<double> weights_;  // dense [layer-1][from][to], 0 where pruned
  std::vector<bool> removed_;
};

struct PathResult {
  std::vector<std::size_t> groups;  // i_0 .. i_M
  double probability = 0.0;         // product of arc weights along the path
  double cost = 0.0;                // sum of arc costs, = -log(probability)
};

// Maximum-probability input-to-output path: Dijkstra on -log weights from a
// zero-cost super-source over layer 0 to a zero-cost super-sink after layer M.
// Equal costs resolve to the lexicographically smallest group sequence.
PathResult max_prob_path(const AttentionDag& dag);

// Start groups of successive best paths, removing each found start vertex
// before the next search. k must lie in [1, m].
std::vector<std::size_t> best_groups(AttentionDag dag, std::size_t k);
std::vector<std::size_t> best_groups(const model::AttentionStack& stack, std::size_t k);

// Entry (j, k): probability of the best path from v(0, j) to v(M, k), 0 if none.
Tensor path_probability_matrix(const AttentionDag& dag);
Tensor path_probability_matrix(const model::AttentionStack& stack);
// Same matrix from a layered max-product recursion, independent of Dijkstra.
Tensor path_probability_matrix_dp(std::span<const Tensor> layers);

// Min-max scaling to [0, 1]; constant input maps to zeros. Non-finite entries
// are ignored when finding the range.
std::vector<double> scale_unit(std::span<const double> scores);

}  // namespace mla::graph
