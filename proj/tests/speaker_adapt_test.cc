// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "test_util.h"
#include "tsasr/encoder.h"
#include "tsasr/speaker_adapt.h"

using namespace tsasr;
using namespace tsasr::ad;
using tsasr::testing::max_abs_diff;
using tsasr::testing::random_array;

namespace {

Array eye(std::size_t n) {
  Array a(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) a.at(i, i) = 1.0;
  return a;
}

}  // namespace

TEST_CASE("add fusion examples") {
  Rng rng(1);
  Tape t;
  Array h = random_array(rng, {5, 4});
  Var hv = t.constant(h);
  Var e = t.constant(random_array(rng, {1, 4}));
  Var y = fuse_add(hv, e, t.constant(Array(Shape{4, 4})), t.constant(Array(Shape{4})));
  CHECK(max_abs_diff(y.value(), h) == 0.0);

  Var ones = t.constant(Array(Shape{1, 4}, 1.0));
  Var z = fuse_add(t.constant(Array(Shape{3, 4})), ones, t.constant(eye(4)),
                   t.constant(Array(Shape{4})));
  for (double v : z.value().values()) CHECK(v == 1.0);

  Var w = t.constant(random_array(rng, {4, 4}));
  Var b = t.constant(random_array(rng, {4}));
  Var e2 = t.constant(random_array(rng, {1, 4}));
  Var y1 = fuse_add(hv, e, w, b), y2 = fuse_add(hv, e2, w, b);
  for (std::size_t r = 1; r < 5; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(std::abs((y1.value().at(r, c) - y2.value().at(r, c)) -
                     (y1.value().at(0, c) - y2.value().at(0, c))) < 1e-12);
  CHECK_THROWS_AS(fuse_add(hv, t.constant(random_array(rng, {1, 3})), w, b), ShapeError);
}

TEST_CASE("cat fusion examples") {
  Rng rng(2);
  Tape t;
  const std::size_t D = 4, d = 3;
  Array h = random_array(rng, {5, D});
  Var e = t.constant(random_array(rng, {1, d}));
  Array w(Shape{D + d, D});
  for (std::size_t i = 0; i < D; ++i) w.at(i, i) = 1.0;
  Var y = fuse_cat(t.constant(h), e, t.constant(w), t.constant(Array(Shape{D})));
  CHECK(max_abs_diff(y.value(), h) < 1e-15);

  Array p = random_array(rng, {d, D});
  Array w2(Shape{D + d, D});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < D; ++j) w2.at(D + i, j) = p.at(i, j);
  Var z = fuse_cat(t.constant(h), e, t.constant(w2), t.constant(Array(Shape{D})));
  for (std::size_t j = 0; j < D; ++j) {
    double pe = 0;
    for (std::size_t i = 0; i < d; ++i) pe += e.value()[i] * p.at(i, j);
    for (std::size_t r = 0; r < 5; ++r) CHECK(std::abs(z.value().at(r, j) - pe) < 1e-12);
  }
}

TEST_CASE("cat fusion passes gradients to both branches") {
  Rng rng(3);
  Parameter h("h", random_array(rng, {4, 3}));
  Parameter e("e", random_array(rng, {1, 2}));
  Parameter w("w", random_array(rng, {5, 3}));
  Parameter b("b", random_array(rng, {3}));
  Parameter* ps[] = {&h, &e, &w, &b};
  auto f = [&](Tape& t) {
    Var y = fuse_cat(t.parameter(h), t.parameter(e), t.parameter(w), t.parameter(b));
    return sum(mul(y, y));
  };
  CHECK(grad_check(f, ps).max_rel_error < 1e-4);
  h.zero_grad();
  e.zero_grad();
  Tape t;
  t.backward(f(t));
  double gh = 0, ge = 0;
  for (double v : h.grad.values()) gh += std::abs(v);
  for (double v : e.grad.values()) ge += std::abs(v);
  CHECK(gh > 0.0);
  CHECK(ge > 0.0);
}

TEST_CASE("film fusion examples") {
  Tape t;
  Var h = t.constant(Array::matrix(1, 2, {1, 2}));
  Var y = fuse_film(h, t.constant(Array::matrix(1, 2, {2, 2})),
                    t.constant(Array::matrix(1, 2, {1, -1})));
  CHECK(y.value()[0] == 3.0);
  CHECK(y.value()[1] == 3.0);

  Rng rng(4);
  Array hr = random_array(rng, {4, 3});
  Var id = fuse_film(t.constant(hr), t.constant(Array(Shape{1, 3}, 1.0)),
                     t.constant(Array(Shape{1, 3})));
  CHECK(max_abs_diff(id.value(), hr) == 0.0);

  Array beta = random_array(rng, {1, 3});
  Var c = fuse_film(t.constant(hr), t.constant(Array(Shape{1, 3})), t.constant(beta));
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t j = 0; j < 3; ++j) CHECK(c.value().at(r, j) == beta[j]);
}

TEST_CASE("conditional layer norm examples") {
  Rng rng(5);
  Tape t;
  Array h = random_array(rng, {4, 6});
  Var gamma = t.constant(random_array(rng, {6}));
  Var beta = t.constant(random_array(rng, {6}));
  Var plain = layer_norm(t.constant(h), gamma, beta);
  Var g_hat = cln_scale(t.constant(Array(Shape{1, 6}, 1.0)), gamma, t.constant(Array(Shape{1, 6})));
  Var adapted = layer_norm(t.constant(h), g_hat, beta);
  CHECK(max_abs_diff(plain.value(), adapted.value()) == 0.0);

  // Constant features: the normalized input is exactly zero, output is beta.
  Var flat = layer_norm(t.constant(Array(Shape{2, 6}, 3.5)), g_hat, beta);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t j = 0; j < 6; ++j) CHECK(flat.value().at(r, j) == beta.value()[j]);

  // w(e1) = 2 w(e2), b = 0: outputs before the shift scale 2:1.
  Array w2 = random_array(rng, {1, 6});
  Array w1 = w2;
  for (double& v : w1.values()) v *= 2.0;
  Var zero_b = t.constant(Array(Shape{6}));
  Var a1 = layer_norm(t.constant(h), cln_scale(t.constant(w1), gamma, t.constant(Array(Shape{1, 6}))), zero_b);
  Var a2 = layer_norm(t.constant(h), cln_scale(t.constant(w2), gamma, t.constant(Array(Shape{1, 6}))), zero_b);
  for (std::size_t i = 0; i < a1.size(); ++i)
    CHECK(std::abs(a1.value()[i] - 2.0 * a2.value()[i]) < 1e-12);
}

TEST_CASE("fusion parameters live where each variant says") {
  EncoderConfig enc;
  enc.model_dim = 8;
  enc.ff_dim = 16;
  enc.conv = {{4, 2, 2}, {8, 2, 2}};
  for (FusionKind k : {FusionKind::kAdd, FusionKind::kCat, FusionKind::kFilm, FusionKind::kCln}) {
    ParameterStore base, fused;
    Rng r1(1), r2(1);
    init_encoder(base, enc, r1);
    init_encoder(fused, enc, r2);
    FusionConfig fc{k, 5, 8};
    init_fusion(fused, fc, r2);
    for (const auto& [path, p] : fused.all()) {
      if (base.has(path)) continue;
      if (k == FusionKind::kCln) {
        CHECK(path.rfind("encoder.block.0.", 0) == 0);
        CHECK(path.find(".cln.") != std::string::npos);
      } else {
        CHECK(path.rfind("fusion.", 0) == 0);
      }
    }
  }
  FusionConfig bad{FusionKind::kCln, 5, 8};
  bad.cln_blocks = 2;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(parse_fusion("film") == FusionKind::kFilm);
  CHECK_THROWS_AS(parse_fusion("gate"), ConfigError);
}

TEST_CASE("fusion variants start at the identity on h") {
  // add is excluded: its random projection of e is added from the start.
  for (FusionKind k : {FusionKind::kCat, FusionKind::kFilm}) {
    ParameterStore store;
    Rng rng(7);
    FusionConfig fc{k, 5, 8};
    init_fusion(store, fc, rng);
    for (auto& [path, p] : store.all())
      if (path.find("weight") != std::string::npos && k == FusionKind::kFilm) p.value.fill(0.0);
    if (k == FusionKind::kCat)
      for (std::size_t i = 8; i < 13; ++i)
        for (std::size_t j = 0; j < 8; ++j) store.get("fusion.cat.weight").value.at(i, j) = 0.0;
    Tape t;
    Binder bind(t, store);
    Array h = random_array(rng, {3, 8});
    Var y = apply_pre_fusion(bind, fc, t.constant(h), t.constant(random_array(rng, {1, 5})));
    CHECK(max_abs_diff(y.value(), h) < 1e-15);
  }
}
