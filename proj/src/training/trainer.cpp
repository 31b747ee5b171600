#include "mla/training/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mla/error.hpp"
#include "mla/kernel/adam.hpp"
#include "mla/kernel/ops.hpp"
#include "mla/rng.hpp"

namespace mla::training {

namespace k = mla::kernel;
using kernel::Tensor;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
}

k::Var distillation_loss(k::Var student_logits, const Tensor& teacher_probs,
                         std::span<const k::Var> attention, double lambda, double temperature) {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  k::Var loss = k::cross_entropy_soft(k::scale(student_logits, 1.0 / temperature), teacher_probs);
  if (lambda == 0.0 || attention.empty()) return loss;
  const double per_sample = lambda / static_cast<double>(student_logits.rows());
  k::Var penalty = k::sum_xlogx(attention.front());
  for (std::size_t l = 1; l < attention.size(); ++l) penalty = k::add(penalty, k::sum_xlogx(attention[l]));
  return k::add(loss, k::scale(penalty, per_sample));
}

double distillation_loss(const Tensor& student_logits, const Tensor& teacher_probs,
                         std::span<const model::AttentionStack> attention, double lambda,
                         double temperature) {
  k::Tape tape;
  std::vector<k::Var> mats;
  for (const auto& stack : attention) {
    for (const Tensor& a : stack.matrices) mats.push_back(tape.constant(a));
  }
  return distillation_loss(tape.constant(student_logits), teacher_probs, mats, lambda, temperature)
      .value()[0];
}

namespace {

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
  Tensor out({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw DataError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
    out(i, labels[i]) = 1.0;
  }
  return out;
}

std::vector<std::size_t> predicted_labels(const model::Model& model, const data::TabularDataset& dataset,
                                          std::span<const std::size_t> rows) {
  const auto preds = model::predict_batch(model, model::take_rows(dataset.features, rows), false);
  std::vector<std::size_t> out;
  for (const auto& p : preds) out.push_back(p.label);
  return out;
}

TrainResult fit(const data::TabularDataset& dataset, const model::GroupSchema& schema,
                const model::ModelConfig& config, const TrainConfig& train, const Tensor& targets,
                double temperature, double lambda) {
  train.validate();
  config.validate();
  schema.validate(dataset.feature_count());
  if (config.classes != dataset.class_count()) {
    throw ConfigError("model has " + std::to_string(config.classes) + " classes, dataset has " +
                      std::to_string(dataset.class_count()));
  }
  if (targets.rows() != dataset.size() || targets.cols() != config.classes) {
    throw DimensionError("training targets must be n x C over all dataset rows");
  }

  TrainResult result;
  result.model = model::Model{schema, config, model::init_weights(schema, config, derive_seed(train.seed, 1))};
  RunRecord& record = result.record;
  record.seed = train.seed;
  record.lambda = lambda;
  record.temperature = temperature;
  record.metric = train.metric;

  const std::vector<std::size_t> train_rows = dataset.indices(data::Split::Train);
  const std::vector<std::size_t> val_rows = dataset.indices(data::Split::Validation);
  if (train.epochs > 0 && train_rows.empty()) throw DataError("training split is empty");
  std::vector<std::size_t> val_truth;
  for (std::size_t r : val_rows) val_truth.push_back(dataset.labels[r]);

  model::EncoderWeights& weights = result.model.weights;
  const std::vector<Tensor*> params = weights.parameters();
  k::AdamState adam;
  adam.learning_rate = train.learning_rate;
  Rng shuffle_rng(derive_seed(train.seed, 2));
  Rng dropout_rng(derive_seed(train.seed, 3));
  const std::size_t m = schema.group_count();

  model::EncoderWeights best = weights;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  std::vector<std::size_t> order = train_rows;

  for (std::size_t epoch = 1; epoch <= train.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_total = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += train.batch_size, ++batch_index) {
      const std::size_t count = std::min(train.batch_size, order.size() - begin);
      const std::span<const std::size_t> rows(order.data() + begin, count);
      k::Tape tape;
      const model::BoundWeights bound = model::bind_trainable(tape, weights);
      k::Var features = tape.constant(model::take_rows(dataset.features, rows));
      k::Var tokens = model::tokenize(bound, features, schema);
      const model::ForwardGraph graph =
          model::forward(bound, tokens, m, config, model::ForwardOptions{true, &dropout_rng});
      k::Var loss = distillation_loss(graph.logits, model::take_rows(targets, rows), graph.attention,
                                      lambda, temperature);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw TrainingError("loss diverged (non-finite) at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));
      }
      loss_total += value * static_cast<double>(count);
      weights.zero_grad();
      tape.backward(loss);
      try {
        k::adam_step(params, adam);
      } catch (const NumericError& e) {
        throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));
      }
    }
    for (Tensor* p : params) p->drop_grad();
    record.train_loss.push_back(loss_total / static_cast<double>(order.size()));

    if (val_rows.empty()) {
      record.validation_metric.push_back(std::numeric_limits<double>::quiet_NaN());
      best = weights;
      record.best_epoch = epoch;
      continue;
    }
    const double metric = evaluate(train.metric, val_truth, predicted_labels(result.model, dataset, val_rows),
                                   config.classes);
    record.validation_metric.push_back(metric);
    if (metric > best_metric) {
      best_metric = metric;
      best = weights;
      record.best_epoch = epoch;
      stale = 0;
    } else if (train.patience > 0 && ++stale >= train.patience) {
      break;
    }
  }
  weights = std::move(best);
  return result;
}

}  // namespace

TrainResult train_teacher(const data::TabularDataset& dataset, const model::GroupSchema& schema,
                          const model::ModelConfig& config, const TrainConfig& train) {
  return fit(dataset, schema, config, train, one_hot(dataset.labels, config.classes), 1.0, 0.0);
}

TrainResult distill_with_targets(const data::TabularDataset& dataset, const model::GroupSchema& schema,
                                 const model::ModelConfig& config, const TrainConfig& train,
                                 const Tensor& targets) {
  return fit(dataset, schema, config, train, targets, train.temperature, train.lambda);
}

TrainResult distill_student(const data::TabularDataset& dataset, const model::Model& teacher,
                            const model::GroupSchema& schema, const model::ModelConfig& config,
                            const TrainConfig& train) {
  if (teacher.schema != schema) throw ConfigError("student schema does not match the teacher's");
  if (teacher.config.classes != config.classes) throw ConfigError("student and teacher class counts differ");
  train.validate();
  const Tensor targets = model::predict_probabilities(teacher, dataset.features, train.temperature);
  return distill_with_targets(dataset, schema, config, train, targets);
}

LambdaSelection select_lambda(const data::TabularDataset& dataset, const model::Model& teacher,
                              const model::GroupSchema& schema, const model::ModelConfig& config,
                              const TrainConfig& train, std::vector<double> candidates) {
  if (candidates.empty()) throw ConfigError("lambda sweep needs at least one candidate");
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  const std::vector<std::size_t> val_rows = dataset.indices(data::Split::Validation);
  LambdaSelection out;
  double best_score = -std::numeric_limits<double>::infinity();
  for (double lambda : candidates) {
    TrainConfig cfg = train;
    cfg.lambda = lambda;
    TrainResult run = distill_student(dataset, teacher, schema, config, cfg);
    const double s = val_rows.empty() ? 0.0 : score(run.model, dataset, val_rows, train.metric);
    out.lambdas.push_back(lambda);
    out.scores.push_back(s);
    if (out.lambdas.size() == 1 || s > best_score) {
      best_score = s;
      out.best_lambda = lambda;
      out.best = std::move(run);
    }
  }
  return out;
}

double score(const model::Model& model, const data::TabularDataset& dataset,
             std::span<const std::size_t> rows, Metric metric) {
  std::vector<std::size_t> truth;
  for (std::size_t r : rows) truth.push_back(dataset.labels[r]);
  return evaluate(metric, truth, predicted_labels(model, dataset, rows), model.config.classes);
}

double agreement(const model::Model& a, const model::Model& b, const data::TabularDataset& dataset,
                 std::span<const std::size_t> rows) {
  const auto pa = predicted_labels(a, dataset, rows);
  const auto pb = predicted_labels(b, dataset, rows);
  return accuracy(pa, pb);
}

double mean_attention_entropy(const model::Model& model, const data::TabularDataset& dataset,
                              std::span<const std::size_t> rows) {
  const auto preds = model::predict_batch(model, model::take_rows(dataset.features, rows));
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& p : preds) {
    for (const Tensor& a : p.attention.matrices) {
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double h = 0.0;
        for (double v : a.row(r)) {
          if (v > 0.0) h -= v * std::log(v);
        }
        total += h;
        ++count;
      }
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

}  // namespace mla::training
