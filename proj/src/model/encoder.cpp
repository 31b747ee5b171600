#include "mla/model/encoder.hpp"

#include <cmath>
#include <string>

#include "mla/error.hpp"
#include "mla/kernel/ops.hpp"

namespace mla::model {

namespace k = mla::kernel;

namespace {

Tensor xavier(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t({rows, cols});
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

template <typename Weights, typename Layer, typename Out>
void collect(Weights& w, Out& out) {
  for (auto& p : w.projections) out.push_back(&p);
  for (Layer& l : w.layers) {
    for (auto* t : {&l.query, &l.key, &l.value, &l.output, &l.output_bias, &l.ff_in,
                    &l.ff_in_bias, &l.ff_out, &l.ff_out_bias, &l.norm1_gain, &l.norm1_bias,
                    &l.norm2_gain, &l.norm2_bias}) {
      out.push_back(t);
    }
  }
  out.push_back(&w.classifier);
  out.push_back(&w.classifier_bias);
}

void expect_shape(const Tensor& t, const k::Shape& shape, const std::string& name) {
  if (t.shape() != shape) {
    throw DimensionError("weight '" + name + "' has shape " + k::shape_string(t.shape()) +
                         ", expected " + k::shape_string(shape));
  }
  if (!t.all_finite()) throw NumericError("weight '" + name + "' has non-finite entries");
}

template <typename Weights, typename Bind>
BoundWeights bind_with(Weights& w, Bind bind) {
  BoundWeights b;
  for (std::size_t i = 0; i < w.projections.size(); ++i) b.projections.push_back(bind(w.projections[i]));
  for (auto& l : w.layers) {
    b.layers.push_back(BoundLayer{bind(l.query), bind(l.key), bind(l.value), bind(l.output),
                                  bind(l.output_bias), bind(l.ff_in), bind(l.ff_in_bias),
                                  bind(l.ff_out), bind(l.ff_out_bias), bind(l.norm1_gain),
                                  bind(l.norm1_bias), bind(l.norm2_gain), bind(l.norm2_bias)});
  }
  b.classifier = bind(w.classifier);
  b.classifier_bias = bind(w.classifier_bias);
  return b;
}

constexpr std::size_t kChunk = 256;

}  // namespace

std::vector<Tensor*> EncoderWeights::parameters() {
  std::vector<Tensor*> out;
  collect<EncoderWeights, LayerWeights>(*this, out);
  return out;
}

std::vector<const Tensor*> EncoderWeights::parameters() const {
  std::vector<const Tensor*> out;
  collect<const EncoderWeights, const LayerWeights>(*this, out);
  return out;
}

std::vector<std::string> EncoderWeights::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < projections.size(); ++i) names.push_back("projection." + std::to_string(i));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    for (const char* n : {"query", "key", "value", "output", "output_bias", "ff_in", "ff_in_bias",
                          "ff_out", "ff_out_bias", "norm1_gain", "norm1_bias", "norm2_gain",
                          "norm2_bias"}) {
      names.push_back(p + n);
    }
  }
  names.push_back("classifier");
  names.push_back("classifier_bias");
  return names;
}

void EncoderWeights::zero_grad() {
  for (Tensor* t : parameters()) t->zero_grad();
}

bool operator==(const EncoderWeights& a, const EncoderWeights& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!(*pa[i] == *pb[i])) return false;
  }
  return true;
}

void EncoderWeights::validate(const GroupSchema& schema, const ModelConfig& config) const {
  config.validate();
  const std::size_t d = config.d_model, ff = config.d_ff;
  if (projections.size() != schema.group_count()) {
    throw DimensionError("weights carry " + std::to_string(projections.size()) +
                         " projections for " + std::to_string(schema.group_count()) + " groups");
  }
  if (layers.size() != config.layers) {
    throw DimensionError("weights carry " + std::to_string(layers.size()) + " layers, config says " +
                         std::to_string(config.layers));
  }
  const auto names = parameter_names();
  std::size_t n = 0;
  for (std::size_t i = 0; i < projections.size(); ++i) {
    expect_shape(projections[i], {d, schema.group(i).columns.size()}, names[n++]);
  }
  for (const LayerWeights& l : layers) {
    expect_shape(l.query, {d, d}, names[n++]);
    expect_shape(l.key, {d, d}, names[n++]);
    expect_shape(l.value, {d, d}, names[n++]);
    expect_shape(l.output, {d, d}, names[n++]);
    expect_shape(l.output_bias, {d}, names[n++]);
    expect_shape(l.ff_in, {d, ff}, names[n++]);
    expect_shape(l.ff_in_bias, {ff}, names[n++]);
    expect_shape(l.ff_out, {ff, d}, names[n++]);
    expect_shape(l.ff_out_bias, {d}, names[n++]);
    expect_shape(l.norm1_gain, {d}, names[n++]);
    expect_shape(l.norm1_bias, {d}, names[n++]);
    expect_shape(l.norm2_gain, {d}, names[n++]);
    expect_shape(l.norm2_bias, {d}, names[n++]);
  }
  expect_shape(classifier, {config.classes, d}, names[n++]);
  expect_shape(classifier_bias, {config.classes}, names[n++]);
}

EncoderWeights init_weights(const GroupSchema& schema, const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.d_model, ff = config.d_ff;
  EncoderWeights w;
  for (const auto& g : schema.groups()) {
    const std::size_t kdim = g.columns.size();
    w.projections.push_back(xavier(d, kdim, kdim, d, rng));
  }
  for (std::size_t l = 0; l < config.layers; ++l) {
    LayerWeights layer;
    layer.query = xavier(d, d, d, d, rng);
    layer.key = xavier(d, d, d, d, rng);
    layer.value = xavier(d, d, d, d, rng);
    layer.output = xavier(d, d, d, d, rng);
    layer.output_bias = Tensor({d});
    layer.ff_in = xavier(d, ff, d, ff, rng);
    layer.ff_in_bias = Tensor({ff});
    layer.ff_out = xavier(ff, d, ff, d, rng);
    layer.ff_out_bias = Tensor({d});
    layer.norm1_gain = Tensor({d}, 1.0);
    layer.norm1_bias = Tensor({d});
    layer.norm2_gain = Tensor({d}, 1.0);
    layer.norm2_bias = Tensor({d});
    w.layers.push_back(std::move(layer));
  }
  w.classifier = xavier(config.classes, d, d, config.classes, rng);
  w.classifier_bias = Tensor({config.classes});
  return w;
}

void AttentionStack::validate(double tolerance) const {
  if (matrices.empty()) throw StructureError("attention stack is empty");
  for (std::size_t i = 0; i < matrices.size(); ++i) {
    const Tensor& a = matrices[i];
    if (a.rank() != 2 || a.rows() != groups || a.cols() != groups) {
      throw StructureError("attention matrix " + std::to_string(i) + " has shape " +
                           k::shape_string(a.shape()) + ", expected " + std::to_string(groups) +
                           "x" + std::to_string(groups));
    }
    for (std::size_t r = 0; r < groups; ++r) {
      double total = 0.0;
      for (double v : a.row(r)) {
        if (!(v >= -tolerance && v <= 1.0 + tolerance)) {
          throw StructureError("attention matrix " + std::to_string(i) + " has an entry outside [0, 1]");
        }
        total += v;
      }
      if (std::abs(total - 1.0) > tolerance) {
        throw StructureError("attention matrix " + std::to_string(i) + " row " + std::to_string(r) +
                             " sums to " + std::to_string(total));
      }
    }
  }
}

BoundWeights bind_trainable(k::Tape& tape, EncoderWeights& weights) {
  return bind_with(weights, [&tape](Tensor& t) { return tape.parameter(t); });
}

BoundWeights bind_frozen(k::Tape& tape, const EncoderWeights& weights) {
  return bind_with(weights, [&tape](const Tensor& t) { return tape.constant(t); });
}

Var tokenize(const BoundWeights& weights, Var features, const GroupSchema& schema) {
  if (features.cols() != schema.feature_count()) {
    throw SchemaError("sample has " + std::to_string(features.cols()) + " features, schema expects " +
                      std::to_string(schema.feature_count()));
  }
  if (weights.projections.size() != schema.group_count()) {
    throw DimensionError("projection count does not match group count");
  }
  std::vector<Var> parts;
  for (std::size_t i = 0; i < schema.group_count(); ++i) {
    Var xi = k::select_cols(features, schema.group(i).columns);
    parts.push_back(k::matmul_nt(xi, weights.projections[i]));
  }
  return k::interleave_rows(parts);
}

ForwardGraph forward(const BoundWeights& weights, Var tokens, std::size_t groups,
                     const ModelConfig& config, const ForwardOptions& options) {
  config.validate();
  if (weights.layers.size() != config.layers) throw DimensionError("weights/config layer count mismatch");
  if (tokens.cols() != config.d_model) {
    throw DimensionError("tokens have width " + std::to_string(tokens.cols()) + ", d_model is " +
                         std::to_string(config.d_model));
  }
  const bool drop = options.train && config.dropout > 0.0;
  if (drop && options.dropout_rng == nullptr) throw ContractError("training forward needs a dropout generator");

  const std::size_t heads = config.heads, width = config.head_width();
  const double factor = 1.0 / std::sqrt(static_cast<double>(width));
  ForwardGraph graph;
  Var x = tokens;
  for (const BoundLayer& layer : weights.layers) {
    Var q = k::matmul(x, layer.query);
    Var key = k::matmul(x, layer.key);
    Var v = k::matmul(x, layer.value);
    std::vector<Var> head_out;
    for (std::size_t h = 0; h < heads; ++h) {
      Var qh = heads == 1 ? q : k::slice_cols(q, h * width, width);
      Var kh = heads == 1 ? key : k::slice_cols(key, h * width, width);
      Var vh = heads == 1 ? v : k::slice_cols(v, h * width, width);
      Var a = k::softmax_rows(k::block_scores(qh, kh, groups, factor));
      graph.attention.push_back(a);
      head_out.push_back(k::block_apply(a, vh, groups));
    }
    Var merged = heads == 1 ? head_out.front() : k::concat_cols(head_out);
    Var attended = k::add_row(k::matmul(merged, layer.output), layer.output_bias);
    if (drop) attended = k::dropout(attended, config.dropout, *options.dropout_rng);
    x = k::layer_norm(k::add(x, attended), layer.norm1_gain, layer.norm1_bias);

    Var hidden = k::relu(k::add_row(k::matmul(x, layer.ff_in), layer.ff_in_bias));
    Var ff = k::add_row(k::matmul(hidden, layer.ff_out), layer.ff_out_bias);
    if (drop) ff = k::dropout(ff, config.dropout, *options.dropout_rng);
    x = k::layer_norm(k::add(x, ff), layer.norm2_gain, layer.norm2_bias);
  }
  Var pooled = k::block_mean_rows(x, groups);
  graph.logits = k::add_row(k::matmul_nt(pooled, weights.classifier), weights.classifier_bias);
  return graph;
}

AttentionStack extract_attention(const ForwardGraph& graph, std::size_t sample, std::size_t groups,
                                 std::size_t heads) {
  AttentionStack stack;
  stack.groups = groups;
  stack.heads = heads;
  for (Var a : graph.attention) {
    const Tensor& all = a.value();
    std::vector<double> block(all.data().begin() + sample * groups * groups,
                              all.data().begin() + (sample + 1) * groups * groups);
    stack.matrices.emplace_back(k::Shape{groups, groups}, std::move(block));
  }
  return stack;
}

Tensor tokenize(std::span<const double> sample, const GroupSchema& schema, const EncoderWeights& weights) {
  k::Tape tape;
  BoundWeights bound;
  for (const Tensor& p : weights.projections) bound.projections.push_back(tape.constant(p));
  Var features = tape.constant(Tensor({1, sample.size()}, std::vector<double>(sample.begin(), sample.end())));
  return tokenize(bound, features, schema).value();
}

EncoderOutput encoder_forward(const Tensor& tokens, const EncoderWeights& weights,
                              const ModelConfig& config, bool train, std::uint64_t dropout_seed) {
  if (tokens.rank() != 2) throw DimensionError("encoder_forward expects an m x d token matrix");
  if (!tokens.all_finite()) throw NumericError("encoder_forward: non-finite tokens");
  k::Tape tape;
  Rng rng(dropout_seed);
  const BoundWeights bound = bind_frozen(tape, weights);
  const ForwardGraph graph =
      forward(bound, tape.constant(tokens), tokens.rows(), config, ForwardOptions{train, &rng});
  EncoderOutput out;
  const Tensor& logits = graph.logits.value();
  out.logits.assign(logits.data().begin(), logits.data().end());
  out.attention = extract_attention(graph, 0, tokens.rows(), config.heads);
  return out;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

Tensor take_rows(const Tensor& matrix, std::span<const std::size_t> rows) {
  const std::size_t c = matrix.cols();
  Tensor out({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(&matrix(rows[i], 0), c, &out(i, 0));
  }
  return out;
}

std::vector<Prediction> predict_batch(const Model& model, const Tensor& features, bool with_attention) {
  std::vector<Prediction> out;
  const std::size_t n = features.rows(), m = model.schema.group_count();
  out.reserve(n);
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const std::size_t count = std::min(kChunk, n - begin);
    std::vector<std::size_t> rows(count);
    for (std::size_t i = 0; i < count; ++i) rows[i] = begin + i;
    k::Tape tape;
    const BoundWeights bound = bind_frozen(tape, model.weights);
    Var tokens = tokenize(bound, tape.constant(take_rows(features, rows)), model.schema);
    const ForwardGraph graph = forward(bound, tokens, m, model.config);
    const Tensor probs = k::softmax_rows(graph.logits.value());
    for (std::size_t i = 0; i < count; ++i) {
      Prediction p;
      p.probabilities.assign(probs.row(i).begin(), probs.row(i).end());
      p.label = argmax(p.probabilities);
      if (with_attention) p.attention = extract_attention(graph, i, m, model.config.heads);
      out.push_back(std::move(p));
    }
  }
  return out;
}

Prediction predict(std::span<const double> sample, const Model& model) {
  Tensor one({1, sample.size()}, std::vector<double>(sample.begin(), sample.end()));
  return std::move(predict_batch(model, one).front());
}

Tensor predict_probabilities(const Model& model, const Tensor& features, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  const std::size_t n = features.rows(), m = model.schema.group_count();
  Tensor out({n, model.config.classes});
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const std::size_t count = std::min(kChunk, n - begin);
    std::vector<std::size_t> rows(count);
    for (std::size_t i = 0; i < count; ++i) rows[i] = begin + i;
    k::Tape tape;
    const BoundWeights bound = bind_frozen(tape, model.weights);
    Var tokens = tokenize(bound, tape.constant(take_rows(features, rows)), model.schema);
    const ForwardGraph graph = forward(bound, tokens, m, model.config);
    const Tensor probs = k::softmax_rows(k::scale(graph.logits, 1.0 / temperature).value());
    std::copy(probs.data().begin(), probs.data().end(), &out(begin, 0));
  }
  return out;
}

}  // namespace mla::model
