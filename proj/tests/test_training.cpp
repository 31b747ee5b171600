#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "mla/data/prepare.hpp"
#include "mla/error.hpp"
#include "mla/training/manifest.hpp"
#include "mla/training/metrics.hpp"
#include "mla/training/trainer.hpp"
#include "oracles.hpp"

using namespace mla;
using namespace mla::training;

namespace {

data::PreparedData small_synth(std::uint64_t seed = 3) {
  data::SynthOptions o;
  o.samples = 400;
  o.groups = 3;
  o.features_per_group = 2;
  o.informative_group = 1;
  o.seed = seed;
  return data::synth_planted(o);
}

model::ModelConfig tiny_config(std::size_t layers, std::size_t heads) {
  return model::ModelConfig{layers, heads, 8, 16, 0.1, 2};
}

TrainConfig quick(std::uint64_t seed, std::size_t epochs = 4) {
  TrainConfig t;
  t.seed = seed;
  t.epochs = epochs;
  t.batch_size = 32;
  t.learning_rate = 3e-3;
  return t;
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("metrics on a hand example") {
    const std::vector<std::size_t> truth{0, 0, 1, 1, 2, 2};
    const std::vector<std::size_t> pred{0, 1, 1, 1, 2, 0};
    CHECK(accuracy(truth, pred) == doctest::Approx(4.0 / 6.0));
    // class 0: p=1/2 r=1/2 f=1/2; class 1: p=2/3 r=1 f=4/5; class 2: p=1 r=1/2 f=2/3
    CHECK(f1_macro(truth, pred, 3) == doctest::Approx((0.5 + 0.8 + 2.0 / 3.0) / 3.0).epsilon(1e-12));
    CHECK(parse_metric("accuracy") == Metric::Accuracy);
    CHECK_THROWS_AS(parse_metric("auc"), ConfigError);
  }

  TEST_CASE("distillation loss value") {
    const kernel::Tensor logits = kernel::Tensor::matrix(2, 2, {1.0, -1.0, 0.5, 2.0});
    const kernel::Tensor teacher = kernel::Tensor::matrix(2, 2, {0.7, 0.3, 0.2, 0.8});
    model::AttentionStack s1{2, 1, {kernel::Tensor::matrix(2, 2, {0.5, 0.5, 1.0, 0.0})}};
    model::AttentionStack s2{2, 1, {kernel::Tensor::matrix(2, 2, {0.9, 0.1, 0.25, 0.75})}};
    const std::vector<model::AttentionStack> stacks{s1, s2};
    const double T = 2.0, lambda = 0.3;
    long double ce = 0.0L;
    for (std::size_t i = 0; i < 2; ++i) {
      const auto p = oracle::softmax_ld({logits(i, 0) / T, logits(i, 1) / T});
      for (std::size_t c = 0; c < 2; ++c) ce -= teacher(i, c) * std::log(p[c]);
    }
    ce /= 2.0L;
    long double pen = 0.0L;
    for (const auto& s : stacks) {
      for (double a : s.matrices[0].data()) {
        const long double v = std::max(a, 1e-12);
        pen += v * std::log(v);
      }
    }
    const double expected = static_cast<double>(ce + lambda * pen / 2.0L);
    CHECK(distillation_loss(logits, teacher, stacks, lambda, T) == doctest::Approx(expected).epsilon(1e-13));
    CHECK(distillation_loss(logits, teacher, stacks, 0.0, T) == doctest::Approx(static_cast<double>(ce)).epsilon(1e-13));
    CHECK_THROWS_AS(distillation_loss(logits, teacher, stacks, -1.0, T), ConfigError);
    CHECK_THROWS_AS(distillation_loss(logits, teacher, stacks, 0.1, 0.0), ConfigError);
  }

  TEST_CASE("config validation") {
    TrainConfig t;
    t.batch_size = 0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = TrainConfig{};
    t.learning_rate = -1;
    CHECK_THROWS_AS(t.validate(), ConfigError);
  }

  TEST_CASE("teacher learns the planted signal and is reproducible") {
    const auto data = small_synth();
    const auto a = train_teacher(data.dataset, data.schema, tiny_config(1, 2), quick(7, 8));
    const auto b = train_teacher(data.dataset, data.schema, tiny_config(1, 2), quick(7, 8));
    CHECK(a.record == b.record);
    CHECK(a.model.weights == b.model.weights);
    const auto val = data.dataset.indices(data::Split::Validation);
    CHECK(score(a.model, data.dataset, val, Metric::Accuracy) > 0.85);
    const auto c = train_teacher(data.dataset, data.schema, tiny_config(1, 2), quick(8, 8));
    CHECK_FALSE(c.model.weights == a.model.weights);
  }

  TEST_CASE("distillation with one-hot targets, T=1, lambda=0 reproduces teacher training") {
    const auto data = small_synth();
    TrainConfig t = quick(11);
    t.temperature = 1.0;
    t.lambda = 0.0;
    kernel::Tensor targets({data.dataset.size(), 2});
    for (std::size_t i = 0; i < data.dataset.size(); ++i) targets(i, data.dataset.labels[i]) = 1.0;
    const auto teacher = train_teacher(data.dataset, data.schema, tiny_config(2, 1), t);
    const auto student = distill_with_targets(data.dataset, data.schema, tiny_config(2, 1), t, targets);
    CHECK(teacher.record.train_loss == student.record.train_loss);
    CHECK(teacher.model.weights == student.model.weights);
  }

  TEST_CASE("early stopping restores the best epoch") {
    const auto data = small_synth();
    TrainConfig t = quick(2, 20);
    t.learning_rate = 1e-12;
    t.patience = 2;
    const auto r = train_teacher(data.dataset, data.schema, tiny_config(1, 1), t);
    CHECK(r.record.epochs_run() == 3);
    CHECK(r.record.best_epoch == 1);
  }

  TEST_CASE("zero epochs keeps the initial weights") {
    const auto data = small_synth();
    TrainConfig t = quick(2, 0);
    const auto r = train_teacher(data.dataset, data.schema, tiny_config(1, 1), t);
    CHECK(r.record.best_epoch == 0);
    CHECK(r.model.weights == model::init_weights(data.schema, tiny_config(1, 1), derive_seed(2, 1)));
  }

  TEST_CASE("student distillation and lambda selection") {
    const auto data = small_synth();
    const auto teacher = train_teacher(data.dataset, data.schema, tiny_config(1, 2), quick(1, 5));
    TrainConfig t = quick(4, 3);
    t.lambda = 0.05;
    const auto fixed = distill_student(data.dataset, teacher.model, data.schema, tiny_config(2, 1), t);
    const auto one = select_lambda(data.dataset, teacher.model, data.schema, tiny_config(2, 1), t, {0.05});
    CHECK(one.best_lambda == 0.05);
    CHECK(one.best.model.weights == fixed.model.weights);

    // Lambdas this small change nothing, so scores tie and the smaller one wins.
    const auto tie = select_lambda(data.dataset, teacher.model, data.schema, tiny_config(2, 1), t, {1e-300, 0.0});
    CHECK(tie.lambdas == std::vector<double>{0.0, 1e-300});
    CHECK(tie.scores[0] == tie.scores[1]);
    CHECK(tie.best_lambda == 0.0);
    CHECK_THROWS_AS(select_lambda(data.dataset, teacher.model, data.schema, tiny_config(2, 1), t, {}), ConfigError);

    const auto other = fixture::consecutive_schema({3, 3});
    CHECK_THROWS_AS(distill_student(data.dataset, teacher.model, other, tiny_config(2, 1), t), ConfigError);
  }

  TEST_CASE("attention entropy is bounded by log m") {
    const auto data = small_synth();
    const auto r = train_teacher(data.dataset, data.schema, tiny_config(2, 1), quick(3, 1));
    const auto rows = data.dataset.indices(data::Split::Validation);
    const double h = mean_attention_entropy(r.model, data.dataset, rows);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(3.0) + 1e-12);
  }

  TEST_CASE("manifest round trip") {
    RunManifest m;
    m.kind = "student";
    m.data_source = {{"kind", "synth"}, {"seed", 3}};
    m.model_config = model::ModelConfig{4, 1, 64, 128, 0.1, 3};
    m.train_config.temperature = 2.0;
    m.train_config.lambda = 0.005;
    m.record.train_loss = {0.5, 0.25};
    m.record.validation_metric = {std::nan(""), 0.75};
    m.record.best_epoch = 2;
    m.checkpoint = "checkpoint.json";
    m.schema_digest = "00ff";
    m.lambda_candidates = {0.0, 0.005};
    m.lambda_scores = {0.7, 0.75};
    const std::string text = serialize_manifest(m);
    const RunManifest back = parse_manifest(text);
    CHECK(serialize_manifest(back) == text);
    CHECK(back.model_config == m.model_config);
    CHECK(std::isnan(back.record.validation_metric[0]));
    CHECK_THROWS_AS(parse_manifest("{}"), FormatError);
  }
}
