#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mla/data/dataset.hpp"
#include "mla/kernel/tape.hpp"
#include "mla/model/encoder.hpp"
#include "mla/training/metrics.hpp"

namespace mla::training {

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 30;
  double learning_rate = 1e-3;
  double temperature = 2.0;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  Metric metric = Metric::F1Macro;
  // Stop after this many epochs without validation improvement; 0 disables.
  std::size_t patience = 5;

  void validate() const;
};

struct RunRecord {
  std::uint64_t seed = 0;
  double lambda = 0.0;
  double temperature = 1.0;
  Metric metric = Metric::F1Macro;
  std::vector<double> train_loss;        // mean loss per epoch run
  std::vector<double> validation_metric; // per epoch run
  std::size_t best_epoch = 0;            // 1-based; 0 = initial weights kept
  std::string checkpoint;

  std::size_t epochs_run() const { return train_loss.size(); }
  friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

struct TrainResult {
  model::Model model;
  RunRecord record;
};

// Mean soft cross entropy of logits/T against teacher_probs plus
// lambda * (1/B) * sum over layers and entries of a*log(a), a clamped at 1e-12.
kernel::Var distillation_loss(kernel::Var student_logits, const kernel::Tensor& teacher_probs,
                              std::span<const kernel::Var> attention, double lambda,
                              double temperature);
double distillation_loss(const kernel::Tensor& student_logits, const kernel::Tensor& teacher_probs,
                         std::span<const model::AttentionStack> attention, double lambda,
                         double temperature);

// Hard-label training with Adam; temperature and lambda in the config are ignored.
TrainResult train_teacher(const data::TabularDataset& dataset, const model::GroupSchema& schema,
                          const model::ModelConfig& config, const TrainConfig& train);

// Distillation against explicit per-row targets (n x C over all dataset rows).
TrainResult distill_with_targets(const data::TabularDataset& dataset, const model::GroupSchema& schema,
                                 const model::ModelConfig& config, const TrainConfig& train,
                                 const kernel::Tensor& targets);

// Student trained on the teacher's temperature-T probabilities.
TrainResult distill_student(const data::TabularDataset& dataset, const model::Model& teacher,
                            const model::GroupSchema& schema, const model::ModelConfig& config,
                            const TrainConfig& train);

struct LambdaSelection {
  double best_lambda = 0.0;
  std::vector<double> lambdas;  // ascending
  std::vector<double> scores;   // best validation metric per lambda
  TrainResult best;
};

// One student per lambda; highest validation metric wins, ties go to the smaller lambda.
LambdaSelection select_lambda(const data::TabularDataset& dataset, const model::Model& teacher,
                              const model::GroupSchema& schema, const model::ModelConfig& config,
                              const TrainConfig& train, std::vector<double> candidates);

// Validation metric of a model on the given rows.
double score(const model::Model& model, const data::TabularDataset& dataset,
             std::span<const std::size_t> rows, Metric metric);

// Share of rows on which two models predict the same class.
double agreement(const model::Model& a, const model::Model& b, const data::TabularDataset& dataset,
                 std::span<const std::size_t> rows);

// Mean Shannon entropy (nats) of the attention rows over the given samples.
double mean_attention_entropy(const model::Model& model, const data::TabularDataset& dataset,
                              std::span<const std::size_t> rows);

}  // namespace mla::training
