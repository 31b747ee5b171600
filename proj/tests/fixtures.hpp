#pragma once

#include <string>
#include <vector>

#include "mla/kernel/ops.hpp"
#include "mla/kernel/tape.hpp"
#include "mla/model/encoder.hpp"
#include "mla/rng.hpp"

namespace fixture {

using mla::kernel::Tensor;

// Schema with consecutive column blocks of the given sizes.
inline mla::model::GroupSchema consecutive_schema(const std::vector<std::size_t>& sizes) {
  std::vector<mla::model::ConceptGroup> groups;
  std::size_t next = 0;
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    mla::model::ConceptGroup cg{"g" + std::to_string(g), {}};
    for (std::size_t j = 0; j < sizes[g]; ++j) cg.columns.push_back(next++);
    groups.push_back(cg);
  }
  return mla::model::GroupSchema(groups);
}

inline mla::model::Model small_model(const std::vector<std::size_t>& sizes, std::size_t d, std::size_t layers,
                                     std::size_t heads, std::size_t classes, std::uint64_t seed) {
  mla::model::Model m;
  m.schema = consecutive_schema(sizes);
  m.config = mla::model::ModelConfig{layers, heads, d, 2 * d, 0.0, classes};
  m.weights = mla::model::init_weights(m.schema, m.config, seed);
  // Nonzero biases and gains so their gradients are exercised.
  mla::Rng rng(seed + 1);
  for (auto* p : m.weights.parameters()) {
    if (p->rows() == 1) {
      for (double& v : p->data()) v += rng.uniform(-0.3, 0.3);
    }
  }
  return m;
}

inline Tensor random_features(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  mla::Rng rng(seed);
  Tensor x({rows, cols});
  for (double& v : x.data()) v = rng.normal();
  return x;
}

inline Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
  Tensor t({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) t(i, labels[i]) = 1.0;
  return t;
}

// Mean cross entropy of the model on x against targets, evaluation mode.
inline double loss_value(const mla::model::Model& m, const Tensor& x, const Tensor& targets) {
  mla::kernel::Tape tape;
  const auto bound = mla::model::bind_frozen(tape, m.weights);
  auto tokens = mla::model::tokenize(bound, tape.constant(x), m.schema);
  const auto graph = mla::model::forward(bound, tokens, m.schema.group_count(), m.config);
  return mla::kernel::cross_entropy_soft(graph.logits, targets).value()[0];
}

// Analytic parameter gradients, in parameters() order.
inline std::vector<std::vector<double>> parameter_gradients(mla::model::Model& m, const Tensor& x,
                                                            const Tensor& targets) {
  m.weights.zero_grad();
  mla::kernel::Tape tape;
  const auto bound = mla::model::bind_trainable(tape, m.weights);
  auto tokens = mla::model::tokenize(bound, tape.constant(x), m.schema);
  const auto graph = mla::model::forward(bound, tokens, m.schema.group_count(), m.config);
  tape.backward(mla::kernel::cross_entropy_soft(graph.logits, targets));
  std::vector<std::vector<double>> out;
  for (auto* p : m.weights.parameters()) {
    const auto g = p->grad();
    out.emplace_back(g.begin(), g.end());
  }
  m.weights.zero_grad();
  return out;
}

}  // namespace fixture
