#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mla/kernel/tape.hpp"
#include "mla/kernel/tensor.hpp"
#include "mla/model/schema.hpp"
#include "mla/rng.hpp"

namespace mla::model {

using kernel::Tensor;
using kernel::Var;

struct LayerWeights {
  Tensor query;  // d x d, Q = X * query
  Tensor key;
  Tensor value;
  Tensor output;  // d x d projection after concatenating heads
  Tensor output_bias;
  Tensor ff_in;  // d x d_ff
  Tensor ff_in_bias;
  Tensor ff_out;  // d_ff x d
  Tensor ff_out_bias;
  Tensor norm1_gain;
  Tensor norm1_bias;
  Tensor norm2_gain;
  Tensor norm2_bias;
};

struct EncoderWeights {
  std::vector<Tensor> projections;  // D_i, d x k_i
  std::vector<LayerWeights> layers;
  Tensor classifier;  // C x d
  Tensor classifier_bias;

  // All trainable tensors in declared (checkpoint) order.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<std::string> parameter_names() const;

  void zero_grad();
  void validate(const GroupSchema& schema, const ModelConfig& config) const;

  friend bool operator==(const EncoderWeights& a, const EncoderWeights& b);
};

// Xavier-uniform matrices, zero biases, unit layer-norm gains.
EncoderWeights init_weights(const GroupSchema& schema, const ModelConfig& config,
                            std::uint64_t seed);

// One sample's attention matrices, layer-major then head: matrices[l * heads + h].
struct AttentionStack {
  std::size_t groups = 0;
  std::size_t heads = 1;
  std::vector<Tensor> matrices;

  std::size_t layers() const { return heads == 0 ? 0 : matrices.size() / heads; }
  const Tensor& at(std::size_t layer, std::size_t head = 0) const {
    return matrices.at(layer * heads + head);
  }
  // Square m x m, entries in [0, 1], rows summing to 1 within `tolerance`.
  void validate(double tolerance = 1e-9) const;
};

struct Model {
  GroupSchema schema;
  ModelConfig config;
  EncoderWeights weights;
};

// Weights placed on a tape, either as trainable leaves or as constants.
struct BoundLayer {
  Var query, key, value, output, output_bias, ff_in, ff_in_bias, ff_out, ff_out_bias;
  Var norm1_gain, norm1_bias, norm2_gain, norm2_bias;
};

struct BoundWeights {
  std::vector<Var> projections;
  std::vector<BoundLayer> layers;
  Var classifier;
  Var classifier_bias;
};

BoundWeights bind_trainable(kernel::Tape& tape, EncoderWeights& weights);
BoundWeights bind_frozen(kernel::Tape& tape, const EncoderWeights& weights);

struct ForwardOptions {
  bool train = false;
  Rng* dropout_rng = nullptr;  // required when train and dropout > 0
};

struct ForwardGraph {
  Var logits;                  // B x C
  std::vector<Var> attention;  // per layer and head, (B*m) x m
};

// features: B x F model inputs -> (B*m) x d token matrix.
Var tokenize(const BoundWeights& weights, Var features, const GroupSchema& schema);

// tokens: (B*m) x d, m = groups.
ForwardGraph forward(const BoundWeights& weights, Var tokens, std::size_t groups,
                     const ModelConfig& config, const ForwardOptions& options = {});

// Attention matrices of sample b out of a batched forward pass.
AttentionStack extract_attention(const ForwardGraph& graph, std::size_t sample,
                                 std::size_t groups, std::size_t heads);

// X = [D_1 x_1, ..., D_m x_m]^T for one raw sample; no positional encoding.
Tensor tokenize(std::span<const double> sample, const GroupSchema& schema,
                const EncoderWeights& weights);

struct EncoderOutput {
  std::vector<double> logits;
  AttentionStack attention;
};

EncoderOutput encoder_forward(const Tensor& tokens, const EncoderWeights& weights,
                              const ModelConfig& config, bool train = false,
                              std::uint64_t dropout_seed = 0);

struct Prediction {
  std::size_t label = 0;
  std::vector<double> probabilities;
  AttentionStack attention;
};

std::size_t argmax(std::span<const double> values);  // ties -> lowest index

Prediction predict(std::span<const double> sample, const Model& model);
// Row-wise predictions for a B x F feature matrix, evaluated in chunks.
std::vector<Prediction> predict_batch(const Model& model, const Tensor& features,
                                      bool with_attention = true);
// Class probabilities at temperature T for every row.
Tensor predict_probabilities(const Model& model, const Tensor& features, double temperature = 1.0);

// The given rows of a matrix, in order.
Tensor take_rows(const Tensor& matrix, std::span<const std::size_t> rows);

}  // namespace mla::model
