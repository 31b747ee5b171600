#include "mla/graph/attention_dag.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <queue>
#include <string>

#include "mla/error.hpp"

namespace mla::graph {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<Tensor> single_head_layers(const model::AttentionStack& stack) {
  if (stack.heads != 1) {
    throw StructureError("the attention graph needs a single-head stack, got " + std::to_string(stack.heads) + " heads");
  }
  return stack.matrices;
}

// Single-pass Dijkstra from the given layer-0 sources. pred[v] is the previous
// vertex on the chosen path (kNone for sources).
struct Search {
  std::vector<double> cost;
  std::vector<std::size_t> pred;
};

std::vector<std::size_t> sequence_to(const Search& s, std::size_t vertex, std::size_t groups) {
  std::vector<std::size_t> seq;
  for (std::size_t v = vertex; v != kNone; v = s.pred[v]) seq.push_back(v % groups);
  std::reverse(seq.begin(), seq.end());
  return seq;
}

Search dijkstra(const AttentionDag& dag, const std::vector<std::size_t>& sources) {
  const std::size_t m = dag.groups(), layers = dag.layers(), n = dag.vertex_count();
  Search s{std::vector<double>(n, kInf), std::vector<std::size_t>(n, kNone)};
  std::vector<bool> done(n, false);
  using Entry = std::pair<double, std::size_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
  for (std::size_t c : sources) {
    s.cost[c] = 0.0;
    queue.emplace(0.0, c);
  }
  while (!queue.empty()) {
    const auto [c, u] = queue.top();
    queue.pop();
    if (done[u] || c != s.cost[u]) continue;
    done[u] = true;
    const std::size_t layer = u / m;
    if (layer == layers) continue;
    const std::size_t from = u % m;
    for (const Arc& arc : dag.arcs(layer + 1)) {
      if (arc.from != from) continue;
      const std::size_t v = (layer + 1) * m + arc.to;
      const double next = s.cost[u] + arc.cost;
      bool better = next < s.cost[v];
      if (!better && next == s.cost[v]) {
        // Same cost: keep the lexicographically smaller prefix. Both candidate
        // predecessors sit on the same layer and are already settled.
        better = sequence_to(s, u, m) < sequence_to(s, s.pred[v], m);
      }
      if (better) {
        s.cost[v] = next;
        s.pred[v] = u;
        queue.emplace(next, v);
      }
    }
  }
  return s;
}

PathResult path_from(const AttentionDag& dag, const Search& s, std::size_t end_vertex) {
  PathResult out;
  out.groups = sequence_to(s, end_vertex, dag.groups());
  out.cost = s.cost[end_vertex];
  out.probability = 1.0;
  for (std::size_t l = 1; l < out.groups.size(); ++l) {
    out.probability *= dag.weight(l, out.groups[l - 1], out.groups[l]);
  }
  return out;
}

}  // namespace

AttentionDag AttentionDag::build(std::span<const Tensor> layers) {
  if (layers.empty()) throw StructureError("attention graph needs at least one layer");
  AttentionDag dag;
  dag.groups_ = layers.front().rows();
  const std::size_t m = dag.groups_;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Tensor& a = layers[l];
    if (a.rank() != 2 || a.rows() != a.cols()) {
      throw StructureError("attention matrix " + std::to_string(l + 1) + " is not square: " + kernel::shape_string(a.shape()));
    }
    if (a.rows() != m) {
      throw StructureError("attention matrix " + std::to_string(l + 1) + " is " + std::to_string(a.rows()) +
                           "x" + std::to_string(a.rows()) + " but layer 1 has m = " + std::to_string(m));
    }
    std::vector<Arc> arcs;
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t k = 0; k < m; ++k) {
        double w = a(j, k);
        if (!std::isfinite(w) || w < -1e-9 || w > 1.0 + 1e-9) {
          throw StructureError("attention entry (" + std::to_string(j) + ", " + std::to_string(k) + ") of layer " +
                               std::to_string(l + 1) + " is outside [0, 1]: " + fmt(w));
        }
        w = std::min(w, 1.0);
        if (w < kWeightFloor) w = 0.0;
        dag.weights_.push_back(w);
        if (w > 0.0) arcs.push_back(Arc{j, k, w, w == 1.0 ? 0.0 : -std::log(w)});
      }
    }
    dag.arcs_.push_back(std::move(arcs));
  }
  dag.removed_.assign(m, false);
  return dag;
}

AttentionDag AttentionDag::build(const model::AttentionStack& stack) {
  const std::vector<Tensor> layers = single_head_layers(stack);
  return build(layers);
}

std::size_t AttentionDag::arc_count() const noexcept {
  std::size_t total = 0;
  for (const auto& layer : arcs_) total += layer.size();
  return total;
}

double AttentionDag::weight(std::size_t layer, std::size_t from, std::size_t to) const {
  if (layer == 1 && removed_.at(from)) return 0.0;
  return weights_.at(((layer - 1) * groups_ + from) * groups_ + to);
}

void AttentionDag::remove_source(std::size_t group) {
  if (group >= groups_) throw RangeError("group " + std::to_string(group) + " out of range");
  removed_[group] = true;
  auto& first = arcs_.front();
  first.erase(std::remove_if(first.begin(), first.end(), [group](const Arc& a) { return a.from == group; }),
              first.end());
}

std::string AttentionDag::dump(const std::vector<std::string>& group_names) const {
  std::string out = "dag groups=" + std::to_string(groups_) + " layers=" + std::to_string(layers()) + "\n";
  for (std::size_t l = 0; l <= layers(); ++l) {
    for (std::size_t c = 0; c < groups_; ++c) {
      if (l == 0 && removed_[c]) continue;
      out += "vertex " + std::to_string(l) + ":" + std::to_string(c);
      if (c < group_names.size()) out += " " + group_names[c];
      out += "\n";
    }
  }
  for (std::size_t l = 1; l <= layers(); ++l) {
    for (const Arc& a : arcs(l)) {
      out += "arc " + std::to_string(l - 1) + ":" + std::to_string(a.from) + " -> " + std::to_string(l) + ":" +
             std::to_string(a.to) + " weight=" + fmt(a.weight) + " cost=" + fmt(a.cost) + "\n";
    }
  }
  return out;
}

PathResult max_prob_path(const AttentionDag& dag) {
  const std::size_t m = dag.groups(), layers = dag.layers();
  std::vector<std::size_t> sources;
  for (std::size_t c = 0; c < m; ++c) {
    if (!dag.source_removed(c)) sources.push_back(c);
  }
  const Search s = dijkstra(dag, sources);
  std::size_t best = kNone;
  std::vector<std::size_t> best_seq;
  for (std::size_t c = 0; c < m; ++c) {
    const std::size_t v = layers * m + c;
    if (s.cost[v] == kInf) continue;
    if (best == kNone || s.cost[v] < s.cost[best]) {
      best = v;
      best_seq = sequence_to(s, v, m);
    } else if (s.cost[v] == s.cost[best]) {
      auto seq = sequence_to(s, v, m);
      if (seq < best_seq) {
        best = v;
        best_seq = std::move(seq);
      }
    }
  }
  if (best == kNone) throw NoPathError("no path connects the input layer to the last layer");
  return path_from(dag, s, best);
}

std::vector<std::size_t> best_groups(AttentionDag dag, std::size_t k) {
  if (k < 1 || k > dag.groups()) {
    throw RangeError("requested " + std::to_string(k) + " best groups out of " + std::to_string(dag.groups()));
  }
  std::vector<std::size_t> out;
  while (out.size() < k) {
    const PathResult path = max_prob_path(dag);
    out.push_back(path.groups.front());
    dag.remove_source(path.groups.front());
  }
  return out;
}

std::vector<std::size_t> best_groups(const model::AttentionStack& stack, std::size_t k) {
  return best_groups(AttentionDag::build(stack), k);
}

Tensor path_probability_matrix(const AttentionDag& dag) {
  const std::size_t m = dag.groups(), layers = dag.layers();
  Tensor out({m, m});
  for (std::size_t j = 0; j < m; ++j) {
    if (dag.source_removed(j)) continue;
    const Search s = dijkstra(dag, {j});
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t v = layers * m + k;
      if (s.cost[v] != kInf) out(j, k) = path_from(dag, s, v).probability;
    }
  }
  return out;
}

Tensor path_probability_matrix(const model::AttentionStack& stack) {
  return path_probability_matrix(AttentionDag::build(stack));
}

Tensor path_probability_matrix_dp(std::span<const Tensor> layers) {
  const AttentionDag dag = AttentionDag::build(layers);  // validation and pruning only
  const std::size_t m = dag.groups();
  Tensor out({m, m});
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<double> best(m, 0.0);
    best[j] = 1.0;
    for (std::size_t l = 1; l <= dag.layers(); ++l) {
      std::vector<double> next(m, 0.0);
      for (std::size_t from = 0; from < m; ++from) {
        if (best[from] == 0.0) continue;
        for (std::size_t to = 0; to < m; ++to) {
          next[to] = std::max(next[to], best[from] * dag.weight(l, from, to));
        }
      }
      best = std::move(next);
    }
    for (std::size_t k = 0; k < m; ++k) out(j, k) = best[k];
  }
  return out;
}

std::vector<double> scale_unit(std::span<const double> scores) {
  if (scores.empty()) throw RangeError("cannot scale an empty score list");
  double lo = kInf, hi = -kInf;
  for (double v : scores) {
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lo == kInf) throw RangeError("cannot scale scores without a finite entry");
  std::vector<double> out;
  out.reserve(scores.size());
  for (double v : scores) {
    if (!std::isfinite(v)) {
      out.push_back(v);
    } else if (hi == lo) {
      out.push_back(0.0);
    } else {
      out.push_back((v - lo) / (hi - lo));
    }
  }
  return out;
}

}  // namespace mla::graph
