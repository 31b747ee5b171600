#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "mla/error.hpp"
#include "mla/kernel/adam.hpp"
#include "mla/kernel/ops.hpp"
#include "mla/kernel/tape.hpp"
#include "mla/rng.hpp"
#include "oracles.hpp"

using namespace mla;
using namespace mla::kernel;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t({r, c});
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

using Build = std::function<Var(std::vector<Var>&)>;

// Scalarizes the op output with a fixed random rank-one weighting and checks
// every input entry against a central difference.
void check_gradients(const std::vector<Tensor>& inputs, const Build& build, double tol = 1e-6) {
  Rng wrng(99);
  auto loss_of = [&](Tape& tape, std::vector<Var>& vars) {
    Var out = build(vars);
    if (out.value().size() == 1) return out;
    Var left = tape.constant(random_tensor(1, out.rows(), wrng));
    Var right = tape.constant(random_tensor(out.cols(), 1, wrng));
    return sum(matmul(matmul(left, out), right));
  };
  auto value_at = [&](const std::vector<Tensor>& xs) {
    wrng = Rng(99);
    Tape tape;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    return loss_of(tape, vars).value()[0];
  };

  wrng = Rng(99);
  Tape tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.input(x));
  Var loss = loss_of(tape, vars);
  tape.backward(loss);

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto g = tape.grad(vars[i]);
    for (std::size_t e = 0; e < inputs[i].size(); ++e) {
      const double analytic = g.empty() ? 0.0 : g[e];
      std::vector<Tensor> xs = inputs;
      const double numeric = oracle::central_diff(
          [&](double v) {
            xs[i][e] = v;
            return value_at(xs);
          },
          inputs[i][e]);
      INFO("input " << i << " entry " << e << " analytic " << analytic << " numeric " << numeric);
      CHECK(std::abs(analytic - numeric) <= tol * std::max(1.0, std::abs(numeric)));
    }
  }
}

}  // namespace

TEST_SUITE("kernel") {
  TEST_CASE("tensor construction and shape errors") {
    const Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    CHECK(m(1, 2) == 6.0);
    const Tensor v = Tensor::vector({1, 2});
    CHECK(v.rows() == 1);
    CHECK(v.cols() == 2);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(Tensor(Shape{0, 2}), DimensionError);
    CHECK_THROWS_AS(Tensor(Shape{1, 2, 3}), DimensionError);
  }

  TEST_CASE("matmul of a known product") {
    Tape t;
    Var a = t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    Var b = t.constant(Tensor::matrix(2, 1, {5, 6}));
    CHECK(matmul(a, b).value() == Tensor::matrix(2, 1, {17, 39}));
    CHECK_THROWS_AS(matmul(b, b), DimensionError);
  }

  TEST_CASE("gradients of every op match central differences") {
    Rng rng(5);
    const Tensor a = random_tensor(3, 4, rng), b = random_tensor(4, 2, rng), c = random_tensor(3, 4, rng);
    SUBCASE("matmul") { check_gradients({a, b}, [](auto& v) { return matmul(v[0], v[1]); }); }
    SUBCASE("matmul_nt") { check_gradients({a, c}, [](auto& v) { return matmul_nt(v[0], v[1]); }); }
    SUBCASE("add") { check_gradients({a, c}, [](auto& v) { return add(v[0], v[1]); }); }
    SUBCASE("add_row") {
      check_gradients({a, random_tensor(1, 4, rng)}, [](auto& v) { return add_row(v[0], v[1]); });
    }
    SUBCASE("scale") { check_gradients({a}, [](auto& v) { return scale(v[0], -1.7); }); }
    SUBCASE("relu away from the kink") {
      Tensor x = a;
      for (double& e : x.data()) e = e < 0 ? e - 0.1 : e + 0.1;
      check_gradients({x}, [](auto& v) { return relu(v[0]); });
    }
    SUBCASE("softmax_rows") { check_gradients({a}, [](auto& v) { return softmax_rows(v[0]); }); }
    SUBCASE("layer_norm") {
      check_gradients({a, random_tensor(1, 4, rng, 0.5, 1.5), random_tensor(1, 4, rng)},
                      [](auto& v) { return layer_norm(v[0], v[1], v[2]); });
    }
    SUBCASE("select_cols") {
      const std::vector<std::size_t> cols{3, 0, 2};
      check_gradients({a}, [&](auto& v) { return select_cols(v[0], cols); });
    }
    SUBCASE("slice_cols") { check_gradients({a}, [](auto& v) { return slice_cols(v[0], 1, 2); }); }
    SUBCASE("concat_cols") {
      check_gradients({a, random_tensor(3, 2, rng)}, [](auto& v) { return concat_cols(v); });
    }
    SUBCASE("interleave_rows") { check_gradients({a, c}, [](auto& v) { return interleave_rows(v); }); }
    SUBCASE("block_scores") {
      const Tensor q = random_tensor(6, 2, rng), k = random_tensor(6, 2, rng);
      check_gradients({q, k}, [](auto& v) { return block_scores(v[0], v[1], 3, 0.7); });
    }
    SUBCASE("block_apply") {
      const Tensor w = random_tensor(6, 3, rng), val = random_tensor(6, 2, rng);
      check_gradients({w, val}, [](auto& v) { return block_apply(v[0], v[1], 3); });
    }
    SUBCASE("block_mean_rows") {
      check_gradients({random_tensor(6, 2, rng)}, [](auto& v) { return block_mean_rows(v[0], 3); });
    }
    SUBCASE("cross_entropy_soft") {
      const Tensor targets = Tensor::matrix(3, 4, {0.1, 0.2, 0.3, 0.4, 1, 0, 0, 0, 0.25, 0.25, 0.25, 0.25});
      check_gradients({a}, [&](auto& v) { return cross_entropy_soft(v[0], targets); });
    }
    SUBCASE("sum_xlogx") {
      check_gradients({random_tensor(3, 3, rng, 0.05, 1.0)}, [](auto& v) { return sum_xlogx(v[0]); });
    }
  }

  TEST_CASE("interleave_rows puts sample b's tokens together") {
    Tape t;
    std::vector<Var> parts{t.constant(Tensor::matrix(2, 1, {1, 2})), t.constant(Tensor::matrix(2, 1, {10, 20}))};
    CHECK(interleave_rows(parts).value() == Tensor::matrix(4, 1, {1, 10, 2, 20}));
  }

  TEST_CASE("softmax agrees with a long double evaluation") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> row(7);
      for (double& v : row) v = rng.uniform(-30, 30);
      const Tensor p = softmax_rows(Tensor({1, row.size()}, row));
      const auto ref = oracle::softmax_ld(row);
      for (std::size_t i = 0; i < row.size(); ++i) {
        CHECK(std::abs(p[i] - static_cast<double>(ref[i])) <= 4e-16 + 4e-15 * static_cast<double>(ref[i]));
      }
    }
    const Tensor big = softmax_rows(Tensor::matrix(1, 2, {1000, 1001}));
    CHECK(big.all_finite());
    CHECK(big[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-14));
  }

  TEST_CASE("softmax rejects non-finite input") {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(softmax_rows(Tensor::matrix(1, 2, {nan, 0})), NumericError);
    CHECK_THROWS_AS(softmax_rows(Tensor::matrix(1, 2, {INFINITY, 0})), NumericError);
  }

  TEST_CASE("cross entropy matches a long double evaluation") {
    Rng rng(3);
    const Tensor logits = random_tensor(4, 3, rng, -5, 5);
    Tensor targets({4, 3});
    for (std::size_t i = 0; i < 4; ++i) targets(i, i % 3) = 1.0;
    Tape t;
    const double got = cross_entropy_soft(t.constant(logits), targets).value()[0];
    long double ref = 0.0L;
    for (std::size_t i = 0; i < 4; ++i) {
      const std::vector<double> row(logits.row(i).begin(), logits.row(i).end());
      ref -= std::log(oracle::softmax_ld(row)[i % 3]);
    }
    ref /= 4.0L;
    CHECK(std::abs(got - static_cast<double>(ref)) < 1e-14);
  }

  TEST_CASE("cross entropy validates targets") {
    Tape t;
    Var logits = t.constant(Tensor::matrix(1, 2, {0, 0}));
    CHECK_THROWS_AS(cross_entropy_soft(logits, Tensor::matrix(1, 2, {0.5, 0.6})), ValidationError);
    CHECK_THROWS_AS(cross_entropy_soft(logits, Tensor::matrix(1, 2, {-0.5, 1.5})), ValidationError);
    CHECK_THROWS_AS(cross_entropy_soft(logits, Tensor::matrix(1, 3, {0.2, 0.3, 0.5})), DimensionError);
  }

  TEST_CASE("sum_xlogx clamps tiny entries") {
    Tape t;
    Var x = t.input(Tensor::matrix(1, 3, {0.0, 1.0, 0.5}));
    Var s = sum_xlogx(x);
    CHECK(s.value()[0] == doctest::Approx(1e-12 * std::log(1e-12) + 0.5 * std::log(0.5)));
    t.backward(s);
    CHECK(t.grad(x)[0] == 0.0);
    CHECK(t.grad(x)[1] == doctest::Approx(1.0));
  }

  TEST_CASE("layer norm standardizes rows") {
    Tape t;
    Rng rng(8);
    Var y = layer_norm(t.constant(random_tensor(3, 6, rng, -4, 9)), t.constant(Tensor({1, 6}, 1.0)),
                       t.constant(Tensor({1, 6}, 0.0)));
    for (std::size_t r = 0; r < 3; ++r) {
      double mean = 0, sq = 0;
      for (double v : y.value().row(r)) mean += v / 6;
      for (double v : y.value().row(r)) sq += (v - mean) * (v - mean) / 6;
      CHECK(std::abs(mean) < 1e-12);
      CHECK(sq == doctest::Approx(1.0).epsilon(1e-4));
    }
  }

  TEST_CASE("dropout") {
    Tape t;
    Rng rng(1);
    Var x = t.constant(Tensor({1, 10000}, 2.0));
    CHECK(dropout(x, 0.0, rng).value() == x.value());
    const Tensor y = dropout(x, 0.25, rng).value();
    std::size_t zeros = 0;
    for (double v : y.data()) {
      CHECK((v == 0.0 || v == doctest::Approx(2.0 / 0.75)));
      zeros += v == 0.0;
    }
    CHECK(zeros == doctest::Approx(2500).epsilon(0.1));
  }

  TEST_CASE("backward contract") {
    Tape t;
    Var x = t.input(Tensor::matrix(1, 2, {1, 2}));
    CHECK_THROWS_AS(t.backward(x), ContractError);
    Tape u;
    Var y = u.input(Tensor::scalar(3));
    Var loss = scale(y, 2.0);
    u.backward(loss);
    CHECK(u.grad(y)[0] == 2.0);
    CHECK_THROWS_AS(u.backward(loss), ContractError);
  }

  TEST_CASE("parameter leaves accumulate into the tensor grad") {
    Tensor w = Tensor::matrix(1, 2, {3, 4});
    Tape t;
    Var p = t.parameter(w);
    t.backward(sum(add(p, p)));
    CHECK(w.grad()[0] == 2.0);
    CHECK(w.grad()[1] == 2.0);
  }

  TEST_CASE("Adam matches a textbook implementation") {
    Tensor p = Tensor::matrix(1, 3, {0.5, -1.0, 2.0});
    std::vector<double> theta{0.5, -1.0, 2.0};
    AdamState state;
    state.learning_rate = 0.01;
    oracle::AdamOracle ref;
    ref.lr = 0.01;
    Rng rng(4);
    Tensor* params[] = {&p};
    for (int step = 0; step < 25; ++step) {
      std::vector<double> g(3);
      for (double& v : g) v = rng.uniform(-2, 2);
      p.zero_grad();
      std::copy(g.begin(), g.end(), p.grad().begin());
      adam_step(params, state);
      ref.step(theta, g);
    }
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(p[i] - theta[i]) < 1e-14);
  }

  TEST_CASE("Adam refuses non-finite gradients without updating") {
    Tensor p = Tensor::matrix(1, 2, {1, 2});
    Tensor q = Tensor::matrix(1, 1, {5});
    q.grad()[0] = 1.0;
    p.grad()[1] = std::numeric_limits<double>::quiet_NaN();
    AdamState state;
    Tensor* params[] = {&q, &p};
    CHECK_THROWS_AS(adam_step(params, state), NumericError);
    CHECK(q[0] == 5.0);
    CHECK(p[0] == 1.0);
  }

  TEST_CASE("rng is reproducible") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  }
}
