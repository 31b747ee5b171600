#include "mla/analysis/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "mla/error.hpp"

namespace mla::analysis {

namespace {

void check_top(std::size_t top) {
  if (top != 1 && top != 2) throw RangeError("top must be 1 or 2, got " + std::to_string(top));
}

std::pair<std::size_t, std::size_t> best_pair(const explain::ExplanationRecord& r) {
  const auto& ranked = r.explanation.ranked;
  if (ranked.size() < 2) {
    throw ValidationError("sample " + std::to_string(r.sample_id) + " ranks fewer than two groups");
  }
  return std::minmax(ranked[0], ranked[1]);
}

bool pairs_intersect(std::pair<std::size_t, std::size_t> a, std::pair<std::size_t, std::size_t> b) {
  return a.first == b.first || a.first == b.second || a.second == b.first || a.second == b.second;
}

bool agree(const explain::ExplanationRecord& a, const explain::ExplanationRecord& b, std::size_t top) {
  if (top == 1) return a.explanation.ranked.at(0) == b.explanation.ranked.at(0);
  return pairs_intersect(best_pair(a), best_pair(b));
}

void check_pair(const ExplanationSet& first, const ExplanationSet& s) {
  if (s.groups != first.groups) throw AlignmentError("explanation sets disagree on the group count");
  if (s.records.size() != first.records.size()) {
    throw AlignmentError("explanation sets hold " + std::to_string(first.records.size()) + " and " +
                         std::to_string(s.records.size()) + " samples");
  }
  for (std::size_t i = 0; i < s.records.size(); ++i) {
    if (s.records[i].sample_id != first.records[i].sample_id) {
      throw AlignmentError("sample ids differ at position " + std::to_string(i) + ": " +
                           std::to_string(first.records[i].sample_id) + " vs " +
                           std::to_string(s.records[i].sample_id));
    }
  }
}

}  // namespace

std::optional<std::vector<double>> best_group_distribution(const ExplanationSet& set, Segment segment) {
  if (set.records.empty()) throw ValidationError("best-group distribution of an empty explanation set");
  std::vector<std::size_t> counts(set.groups, 0);
  std::size_t total = 0;
  for (const auto& r : set.records) {
    bool in = true;
    switch (segment.kind) {
      case Segment::Kind::All: break;
      case Segment::Kind::Class: in = r.label == segment.label; break;
      case Segment::Kind::Correct: in = r.correct; break;
      case Segment::Kind::Wrong: in = !r.correct; break;
    }
    if (!in) continue;
    const std::size_t g = r.explanation.ranked.at(0);
    if (g >= set.groups) throw ValidationError("best group " + std::to_string(g) + " out of range");
    ++counts[g];
    ++total;
  }
  if (total == 0) return std::nullopt;
  std::vector<double> out(set.groups);
  for (std::size_t g = 0; g < set.groups; ++g) {
    out[g] = static_cast<double>(counts[g]) / static_cast<double>(total);
  }
  return out;
}

void check_aligned(std::span<const ExplanationSet> sets) {
  if (sets.empty()) throw RangeError("no explanation sets given");
  for (const auto& s : sets.subspan(1)) check_pair(sets.front(), s);
}

std::vector<std::size_t> mode_best_group(std::span<const ExplanationSet> runs) {
  check_aligned(runs);
  const std::size_t n = runs.front().records.size(), m = runs.front().groups;
  std::vector<std::size_t> out(n);
  std::vector<std::size_t> counts(m);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(counts.begin(), counts.end(), 0);
    for (const auto& run : runs) ++counts.at(run.records[i].explanation.ranked.at(0));
    out[i] = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> mode_best_pair(std::span<const ExplanationSet> runs) {
  check_aligned(runs);
  const std::size_t n = runs.front().records.size();
  std::vector<std::pair<std::size_t, std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> counts;
    for (const auto& run : runs) ++counts[best_pair(run.records[i])];
    std::size_t best = 0;
    for (const auto& [pair, count] : counts) {
      if (count > best) {  // map order makes ties go to the smallest pair
        best = count;
        out[i] = pair;
      }
    }
  }
  return out;
}

double pairwise_agreement(const ExplanationSet& a, const ExplanationSet& b, std::size_t top) {
  check_top(top);
  check_pair(a, b);
  if (a.records.empty()) throw ValidationError("agreement of empty explanation sets");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < a.records.size(); ++i) hits += agree(a.records[i], b.records[i], top) ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(a.records.size());
}

std::vector<double> run_pair_agreement(std::span<const ExplanationSet> a, std::span<const ExplanationSet> b,
                                       std::size_t top, PairMode mode) {
  std::vector<double> out;
  if (mode == PairMode::CrossProduct) {
    for (const auto& x : a) {
      for (const auto& y : b) out.push_back(pairwise_agreement(x, y, top));
    }
    return out;
  }
  for (const auto& x : a) {
    const auto it = std::find_if(b.begin(), b.end(), [&](const ExplanationSet& y) { return y.run_seed == x.run_seed; });
    if (it == b.end()) {
      throw AlignmentError("no " + explain::to_string(b.empty() ? x.method : b.front().method) +
                           " run with seed " + std::to_string(x.run_seed));
    }
    out.push_back(pairwise_agreement(x, *it, top));
  }
  return out;
}

Quartiles quartiles(std::vector<double> values) {
  if (values.empty()) throw RangeError("quartiles of an empty list");
  std::sort(values.begin(), values.end());
  auto at = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return frac == 0.0 ? values[lo] : values[lo] + frac * (values[hi] - values[lo]);
  };
  return Quartiles{values.front(), at(0.25), at(0.5), at(0.75), values.back()};
}

StabilityResult stability(std::span<const ExplanationSet> runs, std::size_t top) {
  check_top(top);
  if (runs.size() < 2) throw RangeError("stability needs at least two runs");
  check_aligned(runs);
  const std::size_t n = runs.front().records.size();
  if (n == 0) throw ValidationError("stability of empty explanation sets");
  StabilityResult out;
  const double count = static_cast<double>(runs.size());
  if (top == 1) {
    const auto modes = mode_best_group(runs);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t hits = 0;
      for (const auto& run : runs) hits += run.records[i].explanation.ranked.at(0) == modes[i] ? 1 : 0;
      out.percent.push_back(100.0 * static_cast<double>(hits) / count);
    }
  } else {
    const auto modes = mode_best_pair(runs);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t hits = 0;
      for (const auto& run : runs) hits += pairs_intersect(best_pair(run.records[i]), modes[i]) ? 1 : 0;
      out.percent.push_back(100.0 * static_cast<double>(hits) / count);
    }
  }
  for (const auto& r : runs.front().records) out.sample_ids.push_back(r.sample_id);
  out.summary = quartiles(out.percent);
  return out;
}

}  // namespace mla::analysis
