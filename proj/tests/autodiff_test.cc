// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <functional>

#include "doctest.h"
#include "test_util.h"
#include "tsasr/autodiff.h"
#include "tsasr/selftest.h"

using namespace tsasr;
using namespace tsasr::ad;
using tsasr::testing::random_array;

TEST_CASE("layer norm statistics of [1,2,3]") {
  Tape t;
  Var x = t.constant(Array::matrix(1, 3, {1, 2, 3}));
  CHECK(row_mean(x).value()[0] == doctest::Approx(2.0).epsilon(1e-15));
  // Population std; with the stabilizer switched off it is exactly sqrt(2/3).
  CHECK(row_std(x, 0.0).value()[0] == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-15));
  CHECK(row_std(x, 1e-5).value()[0] ==
        doctest::Approx(std::sqrt(2.0 / 3.0 + 1e-5)).epsilon(1e-15));
}

TEST_CASE("softmax of zeros is uniform") {
  Tape t;
  Var y = softmax_rows(t.constant(Array::vector({0, 0, 0})));
  for (int i = 0; i < 3; ++i) CHECK(y.value()[i] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("identity matmul") {
  Rng rng(3);
  Tape t;
  Array a = random_array(rng, {3, 3});
  Array eye(Shape{3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Var y = matmul(t.constant(eye), t.constant(a));
  for (std::size_t i = 0; i < 9; ++i) CHECK(y.value()[i] == a[i]);
}

TEST_CASE("backward examples") {
  SUBCASE("sum of squares") {
    Parameter w("w", Array::vector({1, 2}));
    Tape t;
    Var v = t.parameter(w);
    t.backward(sum(mul(v, v)));
    CHECK(w.grad[0] == 2.0);
    CHECK(w.grad[1] == 4.0);
    // A second backward without reset accumulates.
    Tape t2;
    Var v2 = t2.parameter(w);
    t2.backward(sum(mul(v2, v2)));
    CHECK(w.grad[0] == 4.0);
    CHECK(w.grad[1] == 8.0);
  }
  SUBCASE("constant loss leaves grads at zero") {
    Parameter w("w", Array::vector({1, 2}));
    Tape t;
    t.parameter(w);
    t.backward(t.constant(Array::scalar(3.0)));
    CHECK(w.grad[0] == 0.0);
    CHECK(w.grad[1] == 0.0);
  }
  SUBCASE("log-sum-exp at zero") {
    Parameter w("w", Array::vector({0, 0}));
    Tape t;
    t.backward(log_sum_exp(t.parameter(w)));
    CHECK(w.grad[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(w.grad[1] == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("non-scalar loss rejected") {
    Parameter w("w", Array::vector({1, 2}));
    Tape t;
    CHECK_THROWS_AS(t.backward(t.parameter(w)), ShapeError);
  }
  SUBCASE("frozen parameters receive nothing") {
    Parameter w("w", Array::vector({1, 2}));
    w.frozen = true;
    Tape t;
    Var v = t.parameter(w);
    t.backward(sum(mul(v, v)));
    CHECK(w.grad[0] == 0.0);
  }
}

TEST_CASE("shape errors name both shapes") {
  Tape t;
  Var a = t.constant(Array(Shape{2, 3}));
  Var b = t.constant(Array(Shape{4, 5}));
  try {
    matmul(a, b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(t.constant(Array(Shape{0, 3})), ShapeError);
  CHECK_THROWS_AS(slice_rows(a, 1, 1), ShapeError);
  CHECK_THROWS_AS(conv1d(a, b, t.constant(Array(Shape{5})), 0, 1), ShapeError);
}


namespace {

std::size_t dim(Rng& rng, int hi = 4) {
  return static_cast<std::size_t>(rng.uniform_int(1, hi));
}

}  // namespace

TEST_CASE("every primitive passes grad-check on 100 random cases") {
  Rng rng(11);
  for (const auto& c : selftest::primitive_cases()) {
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) worst = std::max(worst, selftest::primitive_grad_error(c, rng));
    INFO(c.name << " worst relative error " << worst);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("grad-check accuracy and negative control") {
  Rng rng(5);
  SUBCASE("quadratic form") {
    Parameter x("x", random_array(rng, {1, 4}));
    Array a = random_array(rng, {4, 4});
    auto f = [&](Tape& t) {
      Var v = t.parameter(x);
      return sum(mul(matmul(v, t.constant(a)), v));
    };
    Parameter* ps[] = {&x};
    CHECK(grad_check(f, ps).max_rel_error < 1e-6);
  }
  SUBCASE("sign-flipped backward rule is detected") {
    Parameter x("x", random_array(rng, {1, 3}));
    auto bad_square = [](Var v) {
      Array y = v.value();
      for (auto& e : y.values()) e *= e;
      return v.tape()->record(std::move(y), {v}, [](const BackwardArgs& g) {
        for (std::size_t i = 0; i < g.out_grad.size(); ++i)
          (*g.in_grads[0])[i] -= 2.0 * (*g.in_values[0])[i] * g.out_grad[i];
      });
    };
    auto f = [&](Tape& t) { return sum(bad_square(t.parameter(x))); };
    Parameter* ps[] = {&x};
    CHECK(grad_check(f, ps).max_rel_error > 1e-2);
  }
  SUBCASE("non-finite objective names the coordinate") {
    Parameter x("x", Array::vector({1.0, 0.0}));
    auto f = [&](Tape& t) {
      Var v = t.parameter(x);
      Var s = t.record(Array::scalar(1.0 / v.value()[1] - 1.0 / v.value()[1]),
                       {v}, [](const BackwardArgs&) {});
      return add(s, sum(v));
    };
    Parameter* ps[] = {&x};
    CHECK_THROWS_AS(grad_check(f, ps), std::domain_error);
    CHECK(x.value[1] == 0.0);  // perturbation undone
  }
  SUBCASE("step outside (0, 1e-3] rejected") {
    Parameter x("x", Array::vector({1.0}));
    Parameter* ps[] = {&x};
    GradCheckOptions o;
    o.eps = 1e-2;
    CHECK_THROWS(grad_check([&](Tape& t) { return sum(t.parameter(x)); }, ps, o));
  }
}

TEST_CASE("concat then slice is the identity") {
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    Tape t;
    const std::size_t rows = dim(rng), w1 = dim(rng), w2 = dim(rng);
    Array a = random_array(rng, {rows, w1}), b = random_array(rng, {rows, w2});
    Var parts[] = {t.constant(a), t.constant(b)};
    Var c = concat_cols(parts);
    CHECK(slice_cols(c, 0, w1).value().storage() == a.storage());
    CHECK(slice_cols(c, w1, w1 + w2).value().storage() == b.storage());
    Var s = slice_rows(c, 0, rows);
    CHECK(s.value().storage() == c.value().storage());
  }
}

TEST_CASE("log-softmax agrees with log of softmax") {
  Rng rng(9);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    Tape t;
    Var x = t.constant(random_array(rng, {dim(rng), dim(rng, 8) + 1}, -20, 20));
    const Array& a = log_softmax_rows(x).value();
    const Array& b = softmax_rows(x).value();
    for (std::size_t k = 0; k < a.size(); ++k)
      worst = std::max(worst, std::abs(a[k] - std::log(b[k])));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("forward replay is bit-identical") {
  Rng r1(21), r2(21);
  Array x1 = random_array(r1, {5, 4}), x2 = random_array(r2, {5, 4});
  Array w1 = random_array(r1, {4, 3}), w2 = random_array(r2, {4, 3});
  Tape t1, t2;
  Var y1 = log_softmax_rows(gelu(matmul(t1.constant(x1), t1.constant(w1))));
  Var y2 = log_softmax_rows(gelu(matmul(t2.constant(x2), t2.constant(w2))));
  CHECK(y1.value().storage() == y2.value().storage());
}

TEST_CASE("gradients are finite for finite inputs") {
  Rng rng(13);
  Parameter x("x", random_array(rng, {6, 5}));
  Tape t;
  Var v = t.parameter(x);
  Var y = log_sum_exp(log_softmax_rows(
      div_col(sub_col(v, row_mean(v)), row_std(v, 1e-5))));
  t.backward(y);
  for (double g : x.grad.values()) CHECK(std::isfinite(g));
}
