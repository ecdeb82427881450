// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "test_util.h"
#include "tsasr/metrics.h"

using namespace tsasr;
using namespace tsasr::ad;
using tsasr::testing::random_tokens;

namespace {

// Lattice whose per-frame argmax is the given path.
Array lattice_for_path(const std::vector<int>& path, std::size_t V) {
  Array lp(Shape{path.size(), V}, std::log(0.1 / (V - 1)));
  for (std::size_t t = 0; t < path.size(); ++t) lp.at(t, path[t]) = std::log(0.9);
  return lp;
}

std::size_t levenshtein(const TokenSeq& a, const TokenSeq& b) {
  std::vector<std::size_t> d(b.size() + 1);
  std::iota(d.begin(), d.end(), 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    auto prev = d;
    d[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      d[j] = std::min({prev[j] + 1, d[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1])});
  }
  return d.back();
}

}  // namespace

TEST_CASE("greedy decoding collapses repeats then drops blanks") {
  CHECK(greedy_decode(lattice_for_path({1, 1, 0, 2}, 3)) == TokenSeq{1, 2});
  CHECK(greedy_decode(lattice_for_path({0, 0, 0}, 3)).empty());
  CHECK(greedy_decode(lattice_for_path({1, 0, 1}, 3)) == TokenSeq{1, 1});
}

TEST_CASE("greedy decoding equals the path-level collapse") {
  Rng rng(3);
  for (int n = 0; n < 200; ++n) {
    Array lp = tsasr::testing::random_lattice(rng, rng.uniform_int(1, 12), 4);
    std::vector<int> path(lp.rows());
    for (std::size_t t = 0; t < lp.rows(); ++t) {
      int best = 0;
      for (std::size_t v = 1; v < 4; ++v)
        if (lp.at(t, v) > lp.at(t, best)) best = static_cast<int>(v);
      path[t] = best;
    }
    TokenSeq hyp = greedy_decode(lp);
    CHECK(hyp == ctc_collapse(path));
    CHECK(std::find(hyp.begin(), hyp.end(), kBlank) == hyp.end());
  }
}

TEST_CASE("wer examples") {
  EditCounts same = align({1, 2, 3}, {1, 2, 3});
  CHECK(same.errors() == 0);
  CHECK(same.rate() == 0.0);

  EditCounts sub = align({1, 2, 3}, {1, 4, 3});
  CHECK(sub.sub == 1);
  CHECK(sub.errors() == 1);
  CHECK(sub.rate() == doctest::Approx(1.0 / 3.0));

  EditCounts ins = align({1}, {1, 2, 3});
  CHECK(ins.ins == 2);
  CHECK(ins.rate() == 2.0);

  EditCounts empty = align({}, {1, 2});
  CHECK(empty.ins == 2);
  CHECK(empty.ref_len == 0);
  CHECK(std::isinf(empty.rate()));
  CHECK(align({}, {}).rate() == 0.0);
}

TEST_CASE("alignment tie-break prefers substitution") {
  EditCounts c = align({1, 2}, {3, 4});
  CHECK(c.sub == 2);
  CHECK(c.del == 0);
  CHECK(c.ins == 0);
}

TEST_CASE("edit counts are minimal and symmetric") {
  Rng rng(17);
  for (int n = 0; n < 300; ++n) {
    TokenSeq a = random_tokens(rng, rng.uniform_int(0, 8), 5);
    TokenSeq b = random_tokens(rng, rng.uniform_int(0, 8), 5);
    EditCounts ab = align(a, b), ba = align(b, a);
    CHECK(ab.errors() == levenshtein(a, b));
    CHECK(ab.ref_len == a.size());
    CHECK(ab.errors() == ba.errors());
    CHECK(ab.sub == ba.sub);
    CHECK(ab.del == ba.ins);
    CHECK(ab.ins == ba.del);
    CHECK(a.size() - ab.del + ab.ins == b.size());
  }
}

TEST_CASE("cpwer undoes a speaker swap") {
  std::vector<TokenSeq> refs{{1, 2, 3}, {4, 5}};
  CpwerResult r = cpwer(refs, {refs[1], refs[0]});
  CHECK(r.counts.errors() == 0);
  CHECK(r.perm == Permutation{1, 0});
}

TEST_CASE("cpwer two-case minimum") {
  std::vector<TokenSeq> refs{{1, 2, 3, 4, 5}, {1, 2, 3, 6, 7}};
  std::vector<TokenSeq> hyps{{1, 5, 6, 4, 5}, {1, 2, 3, 6, 5}};
  CHECK(align(refs[0], hyps[0]).errors() + align(refs[1], hyps[1]).errors() == 3);
  CHECK(align(refs[1], hyps[0]).errors() + align(refs[0], hyps[1]).errors() == 5);
  CpwerResult r = cpwer(refs, hyps);
  CHECK(r.counts.rate() == doctest::Approx(0.3));
  CHECK(r.perm == Permutation{0, 1});
}

TEST_CASE("cpwer matches enumeration") {
  Rng rng(23);
  for (int n = 0; n < 100; ++n) {
    const std::size_t K = rng.uniform_int(1, 4);
    std::vector<TokenSeq> refs, hyps;
    std::size_t N = 0;
    for (std::size_t k = 0; k < K; ++k) {
      refs.push_back(random_tokens(rng, rng.uniform_int(1, 6), 4));
      hyps.push_back(random_tokens(rng, rng.uniform_int(0, 6), 4));
      N += refs.back().size();
    }
    std::size_t best = SIZE_MAX;
    for (const auto& p : all_permutations(K)) {
      std::size_t e = 0;
      for (std::size_t k = 0; k < K; ++k) e += levenshtein(refs[p[k]], hyps[k]);
      best = std::min(best, e);
    }
    CpwerResult r = cpwer(refs, hyps);
    CHECK(r.counts.errors() == best);
    CHECK(r.counts.ref_len == N);
    std::size_t ident = 0;
    for (std::size_t k = 0; k < K; ++k) ident += align(refs[k], hyps[k]).errors();
    CHECK(r.counts.errors() <= ident);
    for (const auto& p : all_permutations(K)) {
      std::vector<TokenSeq> permuted(K);
      for (std::size_t k = 0; k < K; ++k) permuted[k] = refs[p[k]];
      CHECK(cpwer(refs, permuted).counts.errors() == 0);
    }
  }
}

TEST_CASE("cpwer rejects unequal speaker counts") {
  CHECK_THROWS_AS(cpwer({{1}, {2}}, {{1}}), std::invalid_argument);
}

TEST_CASE("score records round trip") {
  ScoreRecord r{"test-00003/g0", "cpwer", {1, 2, 3, 10}, {1, 0}};
  const std::string line = format_score_record(r);
  CHECK(line.find('\t') != std::string::npos);
  ScoreRecord back = parse_score_record(line);
  CHECK(back.group_id == r.group_id);
  CHECK(back.metric == r.metric);
  CHECK(back.counts == r.counts);
  CHECK(back.perm == r.perm);
  ScoreRecord w{"g", "wer", {0, 0, 0, 4}, {}};
  CHECK(parse_score_record(format_score_record(w)).perm.empty());
  CHECK(parse_tokens(format_tokens({3, 1, 2})) == TokenSeq{3, 1, 2});
  CHECK(parse_tokens(format_tokens({})).empty());
}
