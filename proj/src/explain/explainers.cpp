#include "mla/explain/explainers.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "mla/error.hpp"
#include "mla/graph/attention_dag.hpp"
#include "mla/kernel/ops.hpp"
#include "mla/kernel/tape.hpp"
#include "mla/rng.hpp"

namespace mla::explain {

namespace k = mla::kernel;

namespace {

// Rows of value-function input evaluated per call.
constexpr std::size_t kShapleyChunk = 512;

const Tensor& single_head_last_layer(const model::AttentionStack& attention) {
  if (attention.heads != 1) {
    throw StructureError("attention explanations need a single-head model, got " +
                         std::to_string(attention.heads) + " heads");
  }
  if (attention.layers() == 0) throw StructureError("attention stack has no layers");
  return attention.at(attention.layers() - 1);
}

void check_sample(const model::Model& model, std::span<const double> sample) {
  if (sample.size() != model.schema.feature_count()) {
    throw DimensionError("sample has " + std::to_string(sample.size()) + " features, model expects " +
                         std::to_string(model.schema.feature_count()));
  }
}

std::vector<std::size_t> column_groups(const model::GroupSchema& schema) {
  std::vector<std::size_t> owner(schema.feature_count());
  for (std::size_t g = 0; g < schema.group_count(); ++g) {
    for (std::size_t c : schema.group(g).columns) owner.at(c) = g;
  }
  return owner;
}

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::MLA: return "mla";
    case Method::LL: return "ll";
    case Method::SA: return "sa";
    case Method::SH: return "sh";
  }
  return "?";
}

Method parse_method(const std::string& text) {
  std::string lower = text;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (Method m : kAllMethods) {
    if (to_string(m) == lower) return m;
  }
  throw ConfigError("unknown explanation method '" + text + "'; valid methods: mla, ll, sa, sh");
}

void Explanation::validate(std::size_t groups) const {
  if (scores.size() != groups) {
    throw ValidationError("explanation has " + std::to_string(scores.size()) + " scores for " +
                          std::to_string(groups) + " groups");
  }
  for (double s : scores) {
    if (!std::isfinite(s) || s < 0.0) throw ValidationError("explanation score is negative or not finite");
  }
  if (ranked.empty()) throw ValidationError("explanation ranks no groups");
  std::vector<bool> seen(groups, false);
  for (std::size_t g : ranked) {
    if (g >= groups || seen[g]) throw ValidationError("ranked groups must be distinct and in range");
    seen[g] = true;
  }
}

std::vector<std::size_t> rank_top(std::span<const double> scores, std::size_t k) {
  if (k < 1 || k > scores.size()) {
    throw RangeError("requested " + std::to_string(k) + " best groups out of " + std::to_string(scores.size()));
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(k);
  return order;
}

Explanation explain_mla(const model::AttentionStack& attention, std::size_t k) {
  const graph::AttentionDag dag = graph::AttentionDag::build(attention);
  Explanation out;
  out.method = Method::MLA;
  Tensor heat = graph::path_probability_matrix(dag);
  out.scores.resize(dag.groups());
  for (std::size_t j = 0; j < dag.groups(); ++j) {
    const auto row = heat.row(j);
    out.scores[j] = *std::max_element(row.begin(), row.end());
  }
  out.ranked = graph::best_groups(dag, k);
  out.heatmap = std::move(heat);
  return out;
}

Explanation explain_ll(const model::AttentionStack& attention, std::size_t k) {
  const Tensor& last = single_head_last_layer(attention);
  const std::size_t m = last.rows();
  Explanation out;
  out.method = Method::LL;
  out.scores.assign(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t c = 0; c < m; ++c) out.scores[c] += last(j, c);
  }
  for (double& s : out.scores) s /= static_cast<double>(m);
  out.ranked = rank_top(out.scores, k);
  out.heatmap = last;
  return out;
}

Explanation explain_mla(const model::Model& model, std::span<const double> sample, std::size_t k) {
  check_sample(model, sample);
  model::Prediction p = model::predict(sample, model);
  Explanation out = explain_mla(p.attention, k);
  out.predicted = p.label;
  return out;
}

Explanation explain_ll(const model::Model& model, std::span<const double> sample, std::size_t k) {
  check_sample(model, sample);
  model::Prediction p = model::predict(sample, model);
  Explanation out = explain_ll(p.attention, k);
  out.predicted = p.label;
  return out;
}

std::vector<double> input_gradient(const model::Model& model, std::span<const double> sample,
                                   std::size_t target_class) {
  check_sample(model, sample);
  if (target_class >= model.config.classes) {
    throw RangeError("target class " + std::to_string(target_class) + " out of range");
  }
  k::Tape tape;
  const model::BoundWeights bound = model::bind_frozen(tape, model.weights);
  k::Var x = tape.input(Tensor({1, sample.size()}, std::vector<double>(sample.begin(), sample.end())));
  k::Var tokens = model::tokenize(bound, x, model.schema);
  const model::ForwardGraph graph = model::forward(bound, tokens, model.schema.group_count(), model.config);
  Tensor target({1, model.config.classes});
  target(0, target_class) = 1.0;
  tape.backward(k::cross_entropy_soft(graph.logits, target));
  const auto g = tape.grad(x);
  std::vector<double> out(g.begin(), g.end());
  out.resize(sample.size(), 0.0);
  for (double v : out) {
    if (!std::isfinite(v)) throw NumericError("input gradient is not finite");
  }
  return out;
}

Explanation explain_sa(const model::Model& model, std::span<const double> sample, std::size_t k,
                       const SaOptions& options) {
  check_sample(model, sample);
  const model::Prediction p = model::predict(sample, model);
  const std::size_t target = options.target == SaTarget::Predicted ? p.label : options.label;
  const std::vector<double> grad = input_gradient(model, sample, target);
  Explanation out;
  out.method = Method::SA;
  out.predicted = p.label;
  for (const auto& group : model.schema.groups()) {
    double total = 0.0;
    for (std::size_t c : group.columns) total += std::abs(grad[c]);
    out.scores.push_back(total / static_cast<double>(group.columns.size()));
  }
  out.ranked = rank_top(out.scores, k);
  return out;
}

Background make_background(const data::TabularDataset& dataset, const model::GroupSchema& schema,
                           std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> rows = dataset.indices(data::Split::Train);
  if (rows.empty()) throw DataError("background needs at least one training row");
  if (count == 0) throw ConfigError("background size must be positive");
  if (rows.size() > count) {
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(rows));
    rows.resize(count);
    std::sort(rows.begin(), rows.end());
  }
  const std::size_t f = dataset.feature_count();
  const std::vector<std::size_t> owner = column_groups(schema);
  Background bg;
  bg.reference.assign(f, 0.0);
  for (const data::RawColumn& raw : dataset.raw_columns) {
    if (raw.kind == data::ColumnKind::Numeric) {
      double total = 0.0;
      for (std::size_t r : rows) total += dataset.features(r, raw.begin);
      bg.reference[raw.begin] = total / static_cast<double>(rows.size());
    } else {
      std::vector<std::size_t> counts(raw.width, 0);
      for (std::size_t r : rows) {
        for (std::size_t j = 0; j < raw.width; ++j) {
          if (dataset.features(r, raw.begin + j) > 0.5) ++counts[j];
        }
      }
      const std::size_t mode = static_cast<std::size_t>(
          std::max_element(counts.begin(), counts.end()) - counts.begin());
      bg.reference[raw.begin + mode] = 1.0;
    }
  }
  for (const auto& block : dataset.feature_blocks()) {
    // A block shared by several groups is split so every player sits in one group.
    std::vector<std::vector<std::size_t>> parts;
    std::vector<std::size_t> part_group;
    for (std::size_t c : block) {
      auto it = std::find(part_group.begin(), part_group.end(), owner.at(c));
      if (it == part_group.end()) {
        part_group.push_back(owner[c]);
        parts.push_back({c});
      } else {
        parts[static_cast<std::size_t>(it - part_group.begin())].push_back(c);
      }
    }
    for (auto& part : parts) bg.players.push_back(std::move(part));
  }
  return bg;
}

Background column_background(std::vector<double> reference) {
  Background bg;
  for (std::size_t c = 0; c < reference.size(); ++c) bg.players.push_back({c});
  bg.reference = std::move(reference);
  return bg;
}

std::vector<double> shapley_sampled(const ValueFunction& value, std::span<const double> sample,
                                    const Background& background, std::size_t budget, std::uint64_t seed) {
  if (budget == 0) throw ConfigError("Shapley sampling budget must be positive");
  const std::size_t f = sample.size(), players = background.players.size();
  if (background.reference.size() != f) {
    throw DimensionError("background has " + std::to_string(background.reference.size()) +
                         " reference values for " + std::to_string(f) + " features");
  }
  std::vector<double> phi(players, 0.0);
  if (players == 0) return phi;

  Tensor base({1, f}, background.reference);
  const double base_value = value(base).at(0);

  Rng rng(seed);
  std::vector<std::size_t> order(players);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t per_chunk = std::max<std::size_t>(1, kShapleyChunk / players);

  std::vector<std::vector<std::size_t>> perms;
  for (std::size_t done = 0; done < budget;) {
    const std::size_t count = std::min(per_chunk, budget - done);
    perms.clear();
    for (std::size_t i = 0; i < count; ++i) {
      // Antithetic pairs: every second permutation reverses the previous one.
      if ((done + i) % 2 == 1) {
        std::reverse(order.begin(), order.end());
      } else {
        rng.shuffle(std::span<std::size_t>(order));
      }
      perms.push_back(order);
    }
    Tensor batch({count * players, f});
    for (std::size_t i = 0; i < count; ++i) {
      std::vector<double> x = background.reference;
      for (std::size_t s = 0; s < players; ++s) {
        for (std::size_t c : background.players[perms[i][s]]) x[c] = sample[c];
        std::copy(x.begin(), x.end(), &batch(i * players + s, 0));
      }
    }
    const std::vector<double> v = value(batch);
    for (std::size_t i = 0; i < count; ++i) {
      double prev = base_value;
      for (std::size_t s = 0; s < players; ++s) {
        const double cur = v[i * players + s];
        phi[perms[i][s]] += cur - prev;
        prev = cur;
      }
    }
    done += count;
  }
  for (double& p : phi) p /= static_cast<double>(budget);
  return phi;
}

Explanation explain_sh(const model::Model& model, std::span<const double> sample, std::size_t k,
                       const Background& background, const ShOptions& options) {
  return explain_sh(model, sample, k, background, options, nullptr);
}

Explanation explain_sh(const model::Model& model, std::span<const double> sample, std::size_t k,
                       const Background& background, const ShOptions& options,
                       std::vector<double>* player_values) {
  check_sample(model, sample);
  if (options.budget == 0) throw ConfigError("Shapley sampling budget must be positive");
  const model::Prediction p = model::predict(sample, model);
  const std::size_t cls = p.label;
  const ValueFunction value = [&model, cls](const Tensor& x) {
    const Tensor probs = model::predict_probabilities(model, x, 1.0);
    std::vector<double> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) out[i] = probs(i, cls);
    return out;
  };
  std::vector<double> phi = shapley_sampled(value, sample, background, options.budget, options.seed);

  const std::vector<std::size_t> owner = column_groups(model.schema);
  const std::size_t m = model.schema.group_count();
  std::vector<double> total(m, 0.0);
  std::vector<std::size_t> count(m, 0);
  for (std::size_t i = 0; i < background.players.size(); ++i) {
    const auto& cols = background.players[i];
    const std::size_t g = owner.at(cols.front());
    for (std::size_t c : cols) {
      if (owner.at(c) != g) throw ValidationError("a Shapley player spans more than one concept group");
    }
    total[g] += std::abs(phi[i]);
    ++count[g];
  }
  Explanation out;
  out.method = Method::SH;
  out.predicted = cls;
  out.scores.resize(m, 0.0);
  for (std::size_t g = 0; g < m; ++g) {
    if (count[g] > 0) out.scores[g] = total[g] / static_cast<double>(count[g]);
  }
  out.ranked = rank_top(out.scores, k);
  if (player_values) *player_values = std::move(phi);
  return out;
}

std::vector<ExplanationRecord> explain_batch(const model::Model& model, const data::TabularDataset& dataset,
                                             std::span<const std::size_t> rows, Method method,
                                             const ExplainOptions& options) {
  if (method == Method::SH && !options.background) throw ConfigError("SH explanations need a background");
  if (method == Method::SH && options.sh.budget == 0) throw ConfigError("Shapley sampling budget must be positive");
  if (options.k < 1 || options.k > model.schema.group_count()) {
    throw RangeError("k = " + std::to_string(options.k) + " outside [1, " +
                     std::to_string(model.schema.group_count()) + "]");
  }
  std::vector<ExplanationRecord> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out[i].sample_id = dataset.sample_ids.at(rows[i]);
    out[i].label = dataset.labels.at(rows[i]);
  }

  if (method == Method::MLA || method == Method::LL) {
    const std::vector<model::Prediction> preds = model::predict_batch(model, model::take_rows(dataset.features, rows));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out[i].explanation = method == Method::MLA ? explain_mla(preds[i].attention, options.k)
                                                 : explain_ll(preds[i].attention, options.k);
      out[i].explanation.predicted = preds[i].label;
    }
  } else {
    std::vector<std::exception_ptr> errors(rows.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      for (std::size_t i = next++; i < rows.size(); i = next++) {
        try {
          const std::span<const double> x = dataset.features.row(rows[i]);
          if (method == Method::SA) {
            out[i].explanation = explain_sa(model, x, options.k, SaOptions{options.sa_target, out[i].label});
          } else {
            ShOptions sh = options.sh;
            sh.seed = derive_seed(options.sh.seed, out[i].sample_id);
            out[i].explanation = explain_sh(model, x, options.k, *options.background, sh);
          }
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    const std::size_t jobs = std::clamp<std::size_t>(options.jobs, 1, std::max<std::size_t>(1, rows.size()));
    std::vector<std::thread> threads;
    for (std::size_t j = 1; j < jobs; ++j) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  for (auto& r : out) r.correct = r.explanation.predicted == r.label;
  return out;
}

}  // namespace mla::explain
