#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "mla/data/prepare.hpp"
#include "mla/error.hpp"
#include "mla/explain/explainers.hpp"
#include "mla/graph/attention_dag.hpp"
#include "oracles.hpp"

using namespace mla;
using namespace mla::explain;

namespace {

model::AttentionStack stack_of(std::vector<Tensor> layers) {
  model::AttentionStack s;
  s.groups = layers.front().rows();
  s.heads = 1;
  s.matrices = std::move(layers);
  return s;
}

Tensor identity(std::size_t m) {
  Tensor t({m, m});
  for (std::size_t i = 0; i < m; ++i) t(i, i) = 1.0;
  return t;
}

double predicted_probability(const model::Model& m, const std::vector<double>& x, std::size_t cls) {
  return model::predict(x, m).probabilities[cls];
}

}  // namespace

TEST_SUITE("explain") {
  TEST_CASE("method names") {
    CHECK(parse_method("MLA") == Method::MLA);
    CHECK(to_string(Method::SH) == "sh");
    CHECK_THROWS_WITH_AS(parse_method("lime"), doctest::Contains("mla, ll, sa, sh"), ConfigError);
  }

  TEST_CASE("rank_top breaks ties to the lower index and ignores monotone rescaling") {
    const std::vector<double> s{0.2, 0.5, 0.5, 0.1};
    CHECK(rank_top(s, 3) == std::vector<std::size_t>{1, 2, 0});
    std::vector<double> t;
    for (double v : s) t.push_back(std::exp(3 * v) + 7);
    CHECK(rank_top(t, 4) == rank_top(s, 4));
    CHECK_THROWS_AS(rank_top(s, 5), RangeError);
  }

  TEST_CASE("MLA on explicit stacks") {
    SUBCASE("identity picks the first group") {
      const Explanation e = explain_mla(stack_of({identity(3), identity(3)}), 1);
      CHECK(e.ranked == std::vector<std::size_t>{0});
      CHECK(e.heatmap.value() == identity(3));
    }
    SUBCASE("two groups, one layer, by enumeration") {
      const Tensor a = Tensor::matrix(2, 2, {0.35, 0.65, 0.8, 0.2});
      const Explanation e = explain_mla(stack_of({a}), 2);
      // Paths: 0->0 .35, 0->1 .65, 1->0 .8, 1->1 .2
      CHECK(e.ranked == std::vector<std::size_t>{1, 0});
      CHECK(e.scores == std::vector<double>{0.65, 0.8});
      CHECK(e.heatmap.value() == a);
    }
    SUBCASE("k = m gives a permutation") {
      Rng rng(4);
      const Explanation e =
          explain_mla(stack_of({oracle::random_stochastic(5, rng), oracle::random_stochastic(5, rng)}), 5);
      std::vector<std::size_t> sorted = e.ranked;
      std::sort(sorted.begin(), sorted.end());
      CHECK(sorted == std::vector<std::size_t>{0, 1, 2, 3, 4});
      CHECK_NOTHROW(e.validate(5));
      for (double v : e.heatmap->data()) CHECK((v > 0.0 && v <= 1.0));
    }
  }

  TEST_CASE("MLA ranking agrees with its own scores") {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
      const Explanation e = explain_mla(
          stack_of({oracle::random_stochastic(4, rng), oracle::random_stochastic(4, rng), oracle::random_stochastic(4, rng)}), 4);
      for (std::size_t i = 1; i < 4; ++i) CHECK(e.scores[e.ranked[i - 1]] >= e.scores[e.ranked[i]]);
    }
  }

  TEST_CASE("LL scores are column means of the last layer") {
    SUBCASE("uniform") {
      const Explanation e = explain_ll(stack_of({identity(4), Tensor({4, 4}, 0.25)}), 1);
      for (double s : e.scores) CHECK(s == 0.25);
      CHECK(e.ranked == std::vector<std::size_t>{0});
    }
    SUBCASE("dominant third column") {
      const Tensor a = Tensor::matrix(3, 3, {0.1, 0.2, 0.7, 0.1, 0.2, 0.7, 0.1, 0.2, 0.7});
      const Explanation e = explain_ll(stack_of({a}), 1);
      CHECK(e.ranked == std::vector<std::size_t>{2});
      CHECK(e.scores[2] == doctest::Approx(0.7).epsilon(1e-15));
    }
    SUBCASE("random against a direct column mean") {
      Rng rng(9);
      const Tensor a = oracle::random_stochastic(5, rng);
      const Explanation e = explain_ll(stack_of({oracle::random_stochastic(5, rng), a}), 2);
      for (std::size_t c = 0; c < 5; ++c) {
        long double mean = 0.0L;
        for (std::size_t j = 0; j < 5; ++j) mean += a(j, c);
        CHECK(std::abs(e.scores[c] - static_cast<double>(mean / 5.0L)) < 1e-12);
      }
      for (std::size_t j = 0; j < 5; ++j) {
        const auto row = e.heatmap->row(j);
        CHECK(std::accumulate(row.begin(), row.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
      }
    }
  }

  TEST_CASE("attention methods need a single head") {
    const model::AttentionStack two{2, 2, {identity(2), identity(2)}};
    CHECK_THROWS_AS(explain_ll(two, 1), StructureError);
    CHECK_THROWS_AS(explain_mla(two, 1), StructureError);
  }

  TEST_CASE("SA gradients match central differences") {
    const model::Model m = fixture::small_model({2, 1, 3}, 8, 2, 1, 3, 41);
    const std::vector<double> x{0.4, -1.2, 0.9, 0.1, -0.3, 1.5};
    const std::size_t cls = model::predict(x, m).label;
    const std::vector<double> g = input_gradient(m, x, cls);
    for (std::size_t i = 0; i < x.size(); ++i) {
      std::vector<double> xp = x;
      const double numeric = oracle::central_diff(
          [&](double v) {
            xp[i] = v;
            return -std::log(predicted_probability(m, xp, cls));
          },
          x[i]);
      CHECK(oracle::rel_err(g[i], numeric) < 1e-3);
    }
    const Explanation e = explain_sa(m, x, 3);
    CHECK(e.scores[0] == doctest::Approx((std::abs(g[0]) + std::abs(g[1])) / 2).epsilon(1e-15));
    CHECK(e.scores[2] == doctest::Approx((std::abs(g[3]) + std::abs(g[4]) + std::abs(g[5])) / 3).epsilon(1e-15));
  }

  TEST_CASE("SA: a feature with zero projection has zero gradient") {
    model::Model m = fixture::small_model({2, 2}, 8, 1, 1, 2, 43);
    for (std::size_t r = 0; r < 8; ++r) m.weights.projections[1](r, 0) = 0.0;
    const std::vector<double> g = input_gradient(m, std::vector<double>{1, 2, 3, 4}, 0);
    CHECK(g[2] == 0.0);
    CHECK(g[3] != 0.0);
  }

  TEST_CASE("SA: adding a zero-projection column leaves other groups unchanged") {
    const model::Model m = fixture::small_model({2, 2}, 8, 2, 1, 2, 44);
    model::Model wide = m;
    wide.schema = model::GroupSchema({{"g0", {0, 1}}, {"g1", {2, 3, 4}}});
    Tensor proj({8, 3});
    for (std::size_t r = 0; r < 8; ++r) {
      proj(r, 0) = m.weights.projections[1](r, 0);
      proj(r, 1) = m.weights.projections[1](r, 1);
    }
    wide.weights.projections[1] = proj;
    const std::vector<double> x{0.3, -0.7, 1.1, 0.2};
    const std::vector<double> xw{0.3, -0.7, 1.1, 0.2, 1.1};
    const Explanation a = explain_sa(m, x, 2), b = explain_sa(wide, xw, 2);
    CHECK(a.scores[0] == b.scores[0]);
    CHECK(b.scores[1] == doctest::Approx(a.scores[1] * 2.0 / 3.0).epsilon(1e-14));
  }

  TEST_CASE("SA target can be the true label") {
    const model::Model m = fixture::small_model({2, 2}, 8, 1, 1, 2, 45);
    const std::vector<double> x{0.3, -0.7, 1.1, 0.2};
    const std::size_t pred = model::predict(x, m).label;
    const Explanation own = explain_sa(m, x, 1, {SaTarget::Predicted, 0});
    const Explanation same = explain_sa(m, x, 1, {SaTarget::TrueLabel, pred});
    const Explanation other = explain_sa(m, x, 1, {SaTarget::TrueLabel, 1 - pred});
    CHECK(own.scores == same.scores);
    CHECK(own.scores != other.scores);
  }

  TEST_CASE("Shapley sampling against exact enumeration") {
    const model::Model m = fixture::small_model({3, 2, 3}, 8, 2, 1, 3, 51);
    const std::vector<double> x{0.9, -1.1, 0.4, 1.7, -0.2, 0.6, -1.4, 0.8};
    const std::vector<double> ref{0.1, 0.0, -0.2, 0.05, 0.3, -0.1, 0.0, 0.2};
    const std::size_t cls = model::predict(x, m).label;
    const auto exact = oracle::exact_shapley(
        [&](const std::vector<double>& z) { return predicted_probability(m, z, cls); }, x, ref);
    std::vector<double> est;
    const Explanation e = explain_sh(m, x, 3, column_background(ref), ShOptions{2000, 7}, &est);
    double err = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) err += std::abs(est[i] - exact[i]) / static_cast<double>(x.size());
    CHECK(err < 0.01);
    const double total = std::accumulate(est.begin(), est.end(), 0.0);
    CHECK(std::abs(total - (predicted_probability(m, x, cls) - predicted_probability(m, ref, cls))) < 1e-9);
    CHECK(e.scores[1] == doctest::Approx((std::abs(est[3]) + std::abs(est[4])) / 2).epsilon(1e-14));
  }

  TEST_CASE("Shapley null player and single feature") {
    model::Model m = fixture::small_model({2, 2}, 8, 1, 1, 2, 52);
    for (std::size_t r = 0; r < 8; ++r) m.weights.projections[0](r, 1) = 0.0;
    const std::vector<double> x{1.0, 2.0, -1.0, 0.5};
    std::vector<double> est;
    explain_sh(m, x, 2, column_background({0, 0, 0, 0}), ShOptions{50, 1}, &est);
    CHECK(est[1] == 0.0);

    const ValueFunction square = [](const Tensor& z) {
      std::vector<double> out;
      for (std::size_t i = 0; i < z.rows(); ++i) out.push_back(z(i, 0) * z(i, 0));
      return out;
    };
    const std::vector<double> one{3.0};
    const auto phi = shapley_sampled(square, one, column_background({1.0}), 5, 0);
    CHECK(phi[0] == 8.0);
    CHECK_THROWS_AS(shapley_sampled(square, one, column_background({1.0}), 0, 0), ConfigError);
  }

  TEST_CASE("Shapley is deterministic given the seed") {
    const model::Model m = fixture::small_model({2, 2}, 8, 1, 1, 2, 53);
    const std::vector<double> x{1.0, 2.0, -1.0, 0.5};
    const auto bg = column_background({0, 0, 0, 0});
    CHECK(explain_sh(m, x, 2, bg, {30, 9}).scores == explain_sh(m, x, 2, bg, {30, 9}).scores);
  }

  TEST_CASE("background treats one-hot blocks as single players") {
    data::TabularDataset ds;
    ds.id = "t";
    ds.features = Tensor::matrix(4, 4, {0.5, 1, 0, 0, -0.5, 0, 1, 0, 1.5, 0, 1, 0, -1.5, 0, 0, 1});
    ds.labels = {0, 1, 0, 1};
    ds.class_names = {"a", "b"};
    ds.column_names = {"x", "c=p", "c=q", "c=r"};
    ds.raw_columns = {{"x", data::ColumnKind::Numeric, 0, 1, {}},
                      {"c", data::ColumnKind::Categorical, 1, 3, {"p", "q", "r"}}};
    ds.splits.assign(4, data::Split::Train);
    ds.sample_ids = {0, 1, 2, 3};
    const model::GroupSchema schema({{"num", {0}}, {"cat", {1, 2, 3}}});
    const Background bg = make_background(ds, schema, 100, 0);
    CHECK(bg.players == std::vector<std::vector<std::size_t>>{{0}, {1, 2, 3}});
    CHECK(bg.reference == std::vector<double>{0.0, 0.0, 1.0, 0.0});
  }

  TEST_CASE("batch explanations equal per-sample calls") {
    data::SynthOptions o;
    o.samples = 120;
    o.groups = 3;
    o.features_per_group = 2;
    const auto data = data::synth_planted(o);
    model::Model m;
    m.schema = data.schema;
    m.config = model::ModelConfig{2, 1, 8, 16, 0.1, 2};
    m.weights = model::init_weights(m.schema, m.config, 3);
    const auto rows = data.dataset.indices(data::Split::Validation);
    ExplainOptions opt;
    opt.k = 2;
    opt.background = make_background(data.dataset, data.schema, 50, 0);
    opt.sh = ShOptions{20, 5};
    opt.jobs = 3;
    for (Method method : kAllMethods) {
      const auto batch = explain_batch(m, data.dataset, rows, method, opt);
      REQUIRE(batch.size() == rows.size());
      std::vector<double> dist(3, 0.0);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto x = data.dataset.features.row(rows[i]);
        Explanation one;
        switch (method) {
          case Method::MLA: one = explain_mla(m, x, 2); break;
          case Method::LL: one = explain_ll(m, x, 2); break;
          case Method::SA: one = explain_sa(m, x, 2); break;
          case Method::SH: {
            ShOptions sh = opt.sh;
            sh.seed = derive_seed(opt.sh.seed, data.dataset.sample_ids[rows[i]]);
            one = explain_sh(m, x, 2, *opt.background, sh);
            break;
          }
        }
        CHECK(batch[i].sample_id == data.dataset.sample_ids[rows[i]]);
        CHECK(batch[i].explanation.scores == one.scores);
        CHECK(batch[i].explanation.ranked == one.ranked);
        CHECK(batch[i].correct == (one.predicted == data.dataset.labels[rows[i]]));
        dist[batch[i].explanation.ranked[0]] += 100.0 / static_cast<double>(rows.size());
      }
      CHECK(std::accumulate(dist.begin(), dist.end(), 0.0) == doctest::Approx(100.0).epsilon(1e-12));
    }
    CHECK(explain_batch(m, data.dataset, std::vector<std::size_t>{}, Method::SA, opt).empty());
    opt.background.reset();
    CHECK_THROWS_AS(explain_batch(m, data.dataset, rows, Method::SH, opt), ConfigError);
  }

  TEST_CASE("interchange round trip") {
    ExplanationFile f;
    f.dataset_id = "synth";
    f.method = Method::SA;
    f.run_seed = 4;
    f.groups = 3;
    f.group_names = {"a", "b", "c"};
    f.class_names = {"no", "yes"};
    ExplanationRecord r;
    r.sample_id = 17;
    r.label = 1;
    r.correct = true;
    r.explanation.method = Method::SA;
    r.explanation.scores = {0.1, 1.0 / 3.0, 2e-17};
    r.explanation.ranked = {1, 0};
    r.explanation.predicted = 1;
    f.records = {r, r};
    f.records[1].sample_id = 18;
    const std::string text = serialize_explanations(f);
    const ExplanationFile back = parse_explanations(text);
    CHECK(serialize_explanations(back) == text);
    CHECK(back.records[0].explanation.scores == r.explanation.scores);
    CHECK(back.class_names == f.class_names);
    CHECK_THROWS_AS(parse_explanations(""), FormatError);
    CHECK_THROWS_AS(parse_explanations(text.substr(0, text.rfind('\n', text.size() - 2) + 1)), FormatError);
    std::string bad = text;
    bad.replace(bad.find("\"ranked\":[1,0]"), 14, "\"ranked\":[1,1]");
    CHECK_THROWS_AS(parse_explanations(bad), FormatError);
  }
}
