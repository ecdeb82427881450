// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "test_util.h"
#include "tsasr/objectives.h"

using namespace tsasr;
using namespace tsasr::ad;
using tsasr::testing::random_lattice;
using tsasr::testing::random_tokens;

namespace {

Array log_probs(std::size_t T, std::size_t V, std::vector<double> p) {
  for (double& v : p) v = std::log(v);
  return Array::matrix(T, V, std::move(p));
}

double pair_sum(std::span<const Array> lat, std::span<const TokenSeq> refs,
                const Permutation& perm) {
  double s = 0.0;
  for (std::size_t k = 0; k < lat.size(); ++k) {
    const double l = ctc_loss_value(lat[k], refs[perm[k]]);
    s += l;
  }
  return s;
}

}  // namespace

TEST_CASE("ctc single frame single token") {
  Array lp = log_probs(1, 2, {0.3, 0.7});
  CHECK(ctc_loss_value(lp, TokenSeq{1}) == doctest::Approx(-std::log(0.7)).epsilon(1e-14));
}

TEST_CASE("ctc uniform T=2 has three alignments") {
  Array lp = log_probs(2, 3, {1. / 3, 1. / 3, 1. / 3, 1. / 3, 1. / 3, 1. / 3});
  CHECK(std::abs(ctc_loss_value(lp, TokenSeq{1}) - std::log(3.0)) < 1e-12);
  CHECK(std::abs(ctc_brute_force(lp, TokenSeq{1}) - std::log(3.0)) < 1e-12);
}

TEST_CASE("ctc repeated tokens need a separating blank") {
  Array lp = log_probs(2, 2, {0.5, 0.5, 0.5, 0.5});
  CHECK(ctc_min_frames(TokenSeq{1, 1}) == 3);
  CHECK(ctc_min_frames(TokenSeq{1, 2, 2, 1}) == 5);
  try {
    ctc_loss_value(lp, TokenSeq{1, 1});
    FAIL("expected CtcInfeasible");
  } catch (const CtcInfeasible& e) {
    const std::string msg = e.what();
    CHECK(msg.find("T = 2") != std::string::npos);
    CHECK(msg.find("3") != std::string::npos);
  }
}

TEST_CASE("ctc blank-only path") {
  Array lp = log_probs(1, 3, {0.2, 0.5, 0.3});
  CHECK(ctc_loss_value(lp, TokenSeq{}) == doctest::Approx(-std::log(0.2)).epsilon(1e-14));
  CHECK(ctc_brute_force(lp, TokenSeq{}) == doctest::Approx(-std::log(0.2)).epsilon(1e-14));
}

TEST_CASE("ctc zero-probability reference agrees with brute force") {
  // Token 2 never has mass, so P(ref) is exactly zero.
  Array lp(Shape{3, 3});
  for (std::size_t t = 0; t < 3; ++t) {
    lp.at(t, 0) = std::log(0.5);
    lp.at(t, 1) = std::log(0.5);
    lp.at(t, 2) = -INFINITY;
  }
  CHECK(std::isinf(ctc_loss_value(lp, TokenSeq{2})));
  CHECK(std::isinf(ctc_brute_force(lp, TokenSeq{2})));
  CtcResult r = ctc_forward_backward(lp, TokenSeq{2});
  for (double g : r.grad.values()) CHECK(g == 0.0);
}

TEST_CASE("ctc tokens are validated") {
  Array lp = log_probs(3, 3, std::vector<double>(9, 1. / 3));
  CHECK_THROWS_AS(ctc_loss_value(lp, TokenSeq{0}), std::invalid_argument);
  CHECK_THROWS_AS(ctc_loss_value(lp, TokenSeq{3}), std::invalid_argument);
}

TEST_CASE("ctc dynamic program matches brute force on random instances") {
  Rng rng(11);
  int feasible = 0, infeasible = 0;
  for (int n = 0; n < 200; ++n) {
    const std::size_t T = rng.uniform_int(1, 6);
    const std::size_t V = rng.uniform_int(2, 4);
    const std::size_t L = rng.uniform_int(0, 3);
    Array lp = random_lattice(rng, T, V);
    TokenSeq ref = random_tokens(rng, L, V);
    const double bf = ctc_brute_force(lp, ref);
    if (ctc_min_frames(ref) > T) {
      ++infeasible;
      CHECK(std::isinf(bf));
      CHECK_THROWS_AS(ctc_loss_value(lp, ref), CtcInfeasible);
      continue;
    }
    ++feasible;
    CHECK(std::isfinite(bf));
    CHECK(std::abs(ctc_loss_value(lp, ref) - bf) < 1e-9);
  }
  CHECK(feasible > 100);
  CHECK(infeasible > 0);
}

TEST_CASE("brute force size guard") {
  Array lp = log_probs(13, 3, std::vector<double>(39, 1. / 3));
  CHECK_THROWS_AS(ctc_brute_force(lp, TokenSeq{1}), std::invalid_argument);
}

TEST_CASE("ctc gradient matches finite differences") {
  Rng rng(5);
  for (int n = 0; n < 20; ++n) {
    const std::size_t T = rng.uniform_int(2, 6), V = rng.uniform_int(2, 5);
    TokenSeq ref = random_tokens(rng, rng.uniform_int(0, 2), V);
    if (ctc_min_frames(ref) > T) continue;
    Parameter logits("logits", tsasr::testing::random_array(rng, {T, V}));
    Parameter* ps[] = {&logits};
    auto res = grad_check(
        [&](Tape& t) { return ctc_loss(log_softmax_rows(t.parameter(logits)), ref); },
        ps);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("concentrating mass on a valid alignment lowers the loss") {
  // p' = (1 - lambda) p + lambda * onehot(alignment). Small lambda can raise
  // the loss (other valid alignments lose mass), so the check covers the
  // approach to the one-hot lattice, whose loss is exactly 0.
  Rng rng(8);
  const TokenSeq ref{1, 2};
  const int path[] = {0, 1, 1, 0, 2};
  for (int n = 0; n < 20; ++n) {
    Array p = tsasr::testing::random_lattice(rng, 5, 3);
    for (double& v : p.values()) v = std::exp(v);
    double prev = INFINITY;
    for (double lambda : {0.9, 0.99, 0.999, 1.0}) {
      Array lp(p.shape());
      for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t v = 0; v < 3; ++v)
          lp.at(t, v) = std::log((1 - lambda) * p.at(t, v) +
                                 lambda * (path[t] == static_cast<int>(v)));
      const double l = ctc_loss_value(lp, ref);
      CHECK(l < prev);
      prev = l;
    }
    CHECK(prev == 0.0);
  }
}

TEST_CASE("pit picks the cheaper assignment") {
  // L(1,1) = 2, L(2,2) = 3, L(1,2) = 1, L(2,1) = 2 on single-frame lattices.
  const double e1 = std::exp(-1.0), e2 = std::exp(-2.0), e3 = std::exp(-3.0);
  Array l1 = log_probs(1, 3, {1 - e2 - e1, e2, e1});
  Array l2 = log_probs(1, 3, {1 - e2 - e3, e2, e3});
  std::vector<Array> lat{l1, l2};
  std::vector<TokenSeq> refs{{1}, {2}};
  CHECK(std::abs(jsm_loss_value(lat, refs) - 5.0) < 1e-12);
  Permutation perm;
  CHECK(std::abs(pit_loss_value(lat, refs, &perm) - 3.0) < 1e-12);
  CHECK(perm == Permutation{1, 0});
}

TEST_CASE("pit ties break toward the identity") {
  Rng rng(2);
  std::vector<Array> lat{random_lattice(rng, 4, 3), random_lattice(rng, 4, 3)};
  std::vector<TokenSeq> refs{{1, 2}, {1, 2}};
  Permutation perm;
  pit_loss_value(lat, refs, &perm);
  CHECK(perm == Permutation{0, 1});
}

TEST_CASE("pit matches enumeration for K=3") {
  Rng rng(4);
  for (int n = 0; n < 30; ++n) {
    std::vector<Array> lat;
    std::vector<TokenSeq> refs;
    for (int k = 0; k < 3; ++k) {
      lat.push_back(random_lattice(rng, 6, 4));
      refs.push_back(random_tokens(rng, rng.uniform_int(0, 2), 4));
    }
    double best = INFINITY;
    for (const auto& p : all_permutations(3)) best = std::min(best, pair_sum(lat, refs, p));
    Permutation perm;
    const double v = pit_loss_value(lat, refs, &perm);
    CHECK(std::abs(v - best) < 1e-12);
    CHECK(std::abs(pair_sum(lat, refs, perm) - v) < 1e-12);
  }
}

TEST_CASE("pit properties on random sets") {
  Rng rng(21);
  for (int n = 0; n < 100; ++n) {
    const std::size_t K = rng.uniform_int(2, 4);
    std::vector<Array> lat;
    std::vector<TokenSeq> refs;
    for (std::size_t k = 0; k < K; ++k) {
      lat.push_back(random_lattice(rng, 6, 4));
      refs.push_back(random_tokens(rng, rng.uniform_int(1, 3), 4));
    }
    Permutation perm;
    const double pit = pit_loss_value(lat, refs, &perm);
    CHECK(pit <= jsm_loss_value(lat, refs) + 1e-12);

    // Relabel the references by sigma: refs2[j] = refs[sigma[j]].
    Permutation sigma(K);
    std::iota(sigma.begin(), sigma.end(), 0);
    rng.shuffle(sigma);
    std::vector<TokenSeq> refs2(K);
    for (std::size_t j = 0; j < K; ++j) refs2[j] = refs[sigma[j]];
    Permutation perm2;
    const double pit2 = pit_loss_value(lat, refs2, &perm2);
    CHECK(std::abs(pit - pit2) < 1e-12);
    // Every slot still gets the same reference content: sigma∘perm2 == perm
    // up to ties between equal references.
    for (std::size_t k = 0; k < K; ++k) CHECK(refs2[perm2[k]] == refs[perm[k]]);
  }
}

TEST_CASE("pit skips infeasible pairings and rejects all-infeasible sets") {
  Rng rng(6);
  std::vector<Array> lat{random_lattice(rng, 2, 3), random_lattice(rng, 5, 3)};
  // Slot 0 (T=2) can only carry the short reference.
  std::vector<TokenSeq> refs{{1, 2, 1}, {2}};
  Permutation perm;
  const double v = pit_loss_value(lat, refs, &perm);
  CHECK(std::isfinite(v));
  CHECK(perm == Permutation{1, 0});
  std::vector<TokenSeq> bad{{1, 2, 1}, {1, 1, 2}};
  CHECK_THROWS_AS(pit_loss_value(lat, bad, &perm), CtcInfeasible);
}

TEST_CASE("pit gradient flows through the winning assignment") {
  Rng rng(9);
  Parameter a("a", tsasr::testing::random_array(rng, {5, 3}));
  Parameter b("b", tsasr::testing::random_array(rng, {5, 3}));
  std::vector<TokenSeq> refs{{1, 2}, {2}};
  Parameter* ps[] = {&a, &b};
  auto res = grad_check(
      [&](Tape& t) {
        Var lat[] = {log_softmax_rows(t.parameter(a)), log_softmax_rows(t.parameter(b))};
        return pit_loss(lat, refs).loss;
      },
      ps);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("jsm loss is the per-slot sum") {
  Rng rng(12);
  std::vector<Array> lat{random_lattice(rng, 5, 4), random_lattice(rng, 5, 4)};
  std::vector<TokenSeq> empty{{}, {}};
  double blank = 0.0;
  for (const auto& l : lat)
    for (std::size_t t = 0; t < 5; ++t) blank -= l.at(t, kBlank);
  CHECK(std::abs(jsm_loss_value(lat, empty) - blank) < 1e-12);

  std::vector<TokenSeq> refs{{1, 3}, {2}};
  const double sep = ctc_loss_value(lat[0], refs[0]) + ctc_loss_value(lat[1], refs[1]);
  CHECK(std::abs(jsm_loss_value(lat, refs) - sep) < 1e-12);
  std::vector<TokenSeq> swapped{refs[1], refs[0]};
  CHECK(std::abs(jsm_loss_value(lat, swapped) - sep) > 1e-6);

  Tape t;
  Var vars[] = {t.constant(lat[0]), t.constant(lat[1])};
  CHECK(std::abs(jsm_loss(vars, refs).value()[0] - sep) < 1e-12);
}

TEST_CASE("jsm infeasibility names the speaker slot") {
  Rng rng(13);
  std::vector<Array> lat{random_lattice(rng, 5, 3), random_lattice(rng, 2, 3)};
  std::vector<TokenSeq> refs{{1}, {1, 1}};
  try {
    jsm_loss_value(lat, refs);
    FAIL("expected CtcInfeasible");
  } catch (const CtcInfeasible& e) {
    CHECK(std::string(e.what()).find("speaker slot 1") != std::string::npos);
  }
}

TEST_CASE("permutations are lexicographic") {
  auto p = all_permutations(3);
  REQUIRE(p.size() == 6);
  CHECK(p.front() == Permutation{0, 1, 2});
  CHECK(p.back() == Permutation{2, 1, 0});
  CHECK(std::is_sorted(p.begin(), p.end()));
}
