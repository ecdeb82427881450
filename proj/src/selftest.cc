// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "tsasr/selftest.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "tsasr/metrics.h"
#include "tsasr/objectives.h"

namespace tsasr::selftest {

using namespace tsasr::ad;

namespace {

std::size_t dim(Rng& rng, int hi = 4) {
  return static_cast<std::size_t>(rng.uniform_int(1, hi));
}

Array random_values(Rng& rng, const Shape& shape, double lo, double hi) {
  Array a(shape);
  for (auto& v : a.values()) v = rng.uniform(lo, hi);
  return a;
}

Array random_log_probs(Rng& rng, std::size_t T, std::size_t V) {
  Array a(Shape{T, V});
  for (std::size_t t = 0; t < T; ++t) {
    double z = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < V; ++v) {
      a.at(t, v) = rng.uniform(-3.0, 3.0);
      z = std::max(z, a.at(t, v));
    }
    double s = 0.0;
    for (std::size_t v = 0; v < V; ++v) s += std::exp(a.at(t, v) - z);
    const double lse = z + std::log(s);
    for (std::size_t v = 0; v < V; ++v) a.at(t, v) -= lse;
  }
  return a;
}

TokenSeq random_seq(Rng& rng, std::size_t n, std::size_t V) {
  TokenSeq s(n);
  for (auto& x : s) x = static_cast<int>(rng.uniform_int(1, static_cast<std::int64_t>(V) - 1));
  return s;
}

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string sci(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

}  // namespace

std::vector<PrimitiveCase> primitive_cases() {
  std::vector<PrimitiveCase> cases;
  cases.push_back({"matmul",
                   [](Rng& r) {
                     auto m = dim(r), k = dim(r), n = dim(r);
                     return std::vector<Shape>{{m, k}, {k, n}};
                   },
                   [](Tape&, std::vector<Var>& v) { return matmul(v[0], v[1]); }});
  cases.push_back({"transpose",
                   [](Rng& r) { return std::vector<Shape>{{dim(r), dim(r)}}; },
                   [](Tape&, std::vector<Var>& v) { return transpose(v[0]); }});
  cases.push_back({"add",
                   [](Rng& r) {
                     Shape s{dim(r), dim(r)};
                     return std::vector<Shape>{s, s};
                   },
                   [](Tape&, std::vector<Var>& v) { return add(v[0], v[1]); }});
  cases.push_back({"sub",
                   [](Rng& r) {
                     Shape s{dim(r), dim(r)};
                     return std::vector<Shape>{s, s};
                   },
                   [](Tape&, std::vector<Var>& v) { return sub(v[0], v[1]); }});
  cases.push_back({"mul",
                   [](Rng& r) {
                     Shape s{dim(r), dim(r)};
                     return std::vector<Shape>{s, s};
                   },
                   [](Tape&, std::vector<Var>& v) { return mul(v[0], v[1]); }});
  cases.push_back({"scale",
                   [](Rng& r) { return std::vector<Shape>{{dim(r), dim(r)}}; },
                   [](Tape&, std::vector<Var>& v) { return scale(v[0], -1.7); }});
  cases.push_back({"reshape",
                   [](Rng& r) { return std::vector<Shape>{{2, dim(r) * 2}}; },
                   [](Tape&, std::vector<Var>& v) {
                     return reshape(v[0], Shape{v[0].size() / 4, 4});
                   }});
  cases.push_back({"add_row (broadcast over time)",
                   [](Rng& r) {
                     auto t = dim(r), d = dim(r);
                     return std::vector<Shape>{{t, d}, {d}};
                   },
                   [](Tape&, std::vector<Var>& v) { return add_row(v[0], v[1]); }});
  cases.push_back({"mul_row",
                   [](Rng& r) {
                     auto t = dim(r), d = dim(r);
                     return std::vector<Shape>{{t, d}, {d}};
                   },
                   [](Tape&, std::vector<Var>& v) { return mul_row(v[0], v[1]); }});
  cases.push_back({"sub_col",
                   [](Rng& r) {
                     auto t = dim(r), d = dim(r);
                     return std::vector<Shape>{{t, d}, {t}};
                   },
                   [](Tape&, std::vector<Var>& v) { return sub_col(v[0], v[1]); }});
  cases.push_back({"div_col",
                   [](Rng& r) {
                     auto t = dim(r), d = dim(r);
                     return std::vector<Shape>{{t, d}, {t}};
                   },
                   [](Tape&, std::vector<Var>& v) { return div_col(v[0], v[1]); },
                   0.5, 2.0});
  cases.push_back({"concat_cols",
                   [](Rng& r) {
                     auto t = dim(r);
                     return std::vector<Shape>{{t, dim(r)}, {t, dim(r)}, {t, dim(r)}};
                   },
                   [](Tape&, std::vector<Var>& v) { return concat_cols(v); }});
  cases.push_back({"slice_rows (time)",
                   [](Rng& r) { return std::vector<Shape>{{dim(r) + 2, dim(r)}}; },
                   [](Tape&, std::vector<Var>& v) {
                     return slice_rows(v[0], 1, v[0].rows() - 1);
                   }});
  cases.push_back({"slice_cols",
                   [](Rng& r) { return std::vector<Shape>{{dim(r), dim(r) + 2}}; },
                   [](Tape&, std::vector<Var>& v) {
                     return slice_cols(v[0], 1, v[0].cols());
                   }});
  cases.push_back({"conv1d",
                   [](Rng& r) {
                     auto cin = dim(r, 3), cout = dim(r, 3), k = dim(r, 3);
                     auto len = k + dim(r, 6);
                     return std::vector<Shape>{{len, cin}, {k * cin, cout}, {cout}};
                   },
                   [](Tape&, std::vector<Var>& v) {
                     const std::size_t k = v[1].rows() / v[0].cols();
                     return conv1d(v[0], v[1], v[2], k, 1 + v[0].rows() % 3);
                   }});
  cases.push_back({"gelu",
                   [](Rng& r) { return std::vector<Shape>{{dim(r), dim(r)}}; },
                   [](Tape&, std::vector<Var>& v) { return gelu(v[0]); }});
  cases.push_back({"softmax_rows",
                   [](Rng& r) { return std::vector<Shape>{{dim(r), dim(r) + 1}}; },
                   [](Tape&, std::vector<Var>& v) { return softmax_rows(v[0]); }});
  cases.push_back({"log_softmax_rows",
                   [](Rng& r) { return std::vector<Shape>{{dim(r), dim(r) + 1}}; },
                   [](Tape&, std::vector<Var>& v) { return log_softmax_rows(v[0]); }});
  cases.push_back({"row_mean",
                   [](Rng& r) { return std::vector<Shape>{{dim(r), dim(r)}}; },
                   [](Tape&, std::vector<Var>& v) { return row_mean(v[0]); }});
  cases.push_back({"row_std",
                   [](Rng& r) { return std::vector<Shape>{{dim(r), dim(r) + 1}}; },
                   [](Tape&, std::vector<Var>& v) { return row_std(v[0], 1e-5); }});
  cases.push_back({"sum",
                   [](Rng& r) { return std::vector<Shape>{{dim(r), dim(r)}}; },
                   [](Tape&, std::vector<Var>& v) { return sum(v[0]); }});
  cases.push_back({"log_sum_exp",
                   [](Rng& r) { return std::vector<Shape>{{dim(r), dim(r)}}; },
                   [](Tape&, std::vector<Var>& v) { return log_sum_exp(v[0]); }});
  return cases;
}

double primitive_grad_error(const PrimitiveCase& c, Rng& rng) {
  std::vector<Parameter> params;
  for (const Shape& s : c.shapes(rng))
    params.emplace_back("in" + std::to_string(params.size()),
                        random_values(rng, s, c.lo, c.hi));
  Array weights;
  {
    Tape t;
    std::vector<Var> in;
    for (auto& p : params) in.push_back(t.parameter(p));
    weights = random_values(rng, c.op(t, in).shape(), -1.0, 1.0);
  }
  std::vector<Parameter*> ptrs;
  for (auto& p : params) ptrs.push_back(&p);
  auto f = [&](Tape& t) {
    std::vector<Var> in;
    for (auto& p : params) in.push_back(t.parameter(p));
    return sum(mul(c.op(t, in), t.constant(weights)));
  };
  return grad_check(f, ptrs).max_rel_error;
}

ModelConfig toy_model_config(HeadKind head, FusionKind fusion) {
  ModelConfig c;
  c.encoder.model_dim = 8;
  c.encoder.num_heads = 2;
  c.encoder.ff_dim = 16;
  c.encoder.num_blocks = 2;
  c.encoder.conv = {{4, 4, 2}, {8, 2, 2}};
  c.encoder.vocab_size = 4;
  c.fusion.kind = fusion;
  c.fusion.embed_dim = 6;
  c.head = head;
  return c;
}

double model_grad_error(const ModelConfig& cfg, std::uint64_t seed) {
  Model m(cfg, seed);
  Rng rng(derive_seed(seed, "model-grad"));
  // Move away from the init so gradients are well above difference noise.
  for (auto& [path, p] : m.params().all())
    for (auto& v : p.value.values()) v += rng.uniform(-0.4, 0.4);
  std::vector<double> x(22);
  for (auto& v : x) v = rng.uniform(-1, 1);
  const std::size_t n_emb = cfg.head == HeadKind::kJsm ? cfg.num_speakers
                            : cfg.conditioned()         ? 1
                                                        : 0;
  std::vector<Parameter> embs;
  for (std::size_t k = 0; k < n_emb; ++k)
    embs.emplace_back("e" + std::to_string(k),
                      random_values(rng, {1, cfg.fusion.embed_dim}, -2, 2));
  std::vector<Parameter*> ps;
  for (auto& [path, p] : m.params().all()) ps.push_back(&p);
  for (auto& e : embs) ps.push_back(&e);
  const std::vector<TokenSeq> refs{{1, 2}, {3}};
  auto f = [&](Tape& t) {
    Binder bind(t, m.params());
    std::vector<Var> ev;
    for (auto& e : embs) ev.push_back(t.parameter(e));
    auto lat = m.forward(bind, x, ev);
    if (cfg.head == HeadKind::kPit) return pit_loss(lat, refs).loss;
    if (cfg.head == HeadKind::kJsm) return jsm_loss(lat, refs);
    return ctc_loss(lat[0], refs[0]);
  };
  GradCheckOptions opt;
  opt.max_coords_per_param = 12;
  return grad_check(f, ps, opt).max_rel_error;
}

SuiteResult primitive_gradients(std::uint64_t seed, std::size_t cases_per_op) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  SuiteResult r{"primitive gradients", true, "", 0.0};
  double worst = 0.0;
  std::string worst_op;
  for (const auto& c : primitive_cases()) {
    for (std::size_t i = 0; i < cases_per_op; ++i) {
      const double e = primitive_grad_error(c, rng);
      if (!(e < 1e-4)) r.passed = false;
      if (e > worst || std::isnan(e)) {
        worst = e;
        worst_op = c.name;
      }
    }
  }
  r.detail = std::to_string(primitive_cases().size()) + " ops x " +
             std::to_string(cases_per_op) + ", worst " + sci(worst) + " (" +
             worst_op + ")";
  r.seconds = since(t0);
  return r;
}

SuiteResult model_gradients(std::uint64_t seed) {
  const auto t0 = Clock::now();
  SuiteResult r{"model gradients", true, "", 0.0};
  std::vector<std::pair<std::string, ModelConfig>> cfgs;
  for (FusionKind k : {FusionKind::kAdd, FusionKind::kCat, FusionKind::kFilm,
                       FusionKind::kCln})
    cfgs.emplace_back("tse-" + fusion_name(k), toy_model_config(HeadKind::kCtc, k));
  ModelConfig shared = toy_model_config(HeadKind::kCtc, FusionKind::kCln);
  shared.fusion.cln_shared = true;
  cfgs.emplace_back("tse-cln-shared", shared);
  cfgs.emplace_back("baseline", toy_model_config(HeadKind::kCtc, FusionKind::kNone));
  cfgs.emplace_back("pit", toy_model_config(HeadKind::kPit, FusionKind::kNone));
  cfgs.emplace_back("jsm", toy_model_config(HeadKind::kJsm, FusionKind::kCln));
  std::ostringstream os;
  for (const auto& [name, c] : cfgs) {
    const double e = model_grad_error(c, seed);
    if (!(e < 1e-4)) r.passed = false;
    os << (os.tellp() > 0 ? " " : "") << name << "=" << sci(e);
  }
  r.detail = os.str();
  r.seconds = since(t0);
  return r;
}

SuiteResult ctc_brute_force_suite(std::uint64_t seed, std::size_t n) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  SuiteResult r{"ctc brute force", true, "", 0.0};
  double worst = 0.0;
  std::size_t infeasible = 0, mismatched = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t T = rng.uniform_int(1, 6);
    const std::size_t V = rng.uniform_int(2, 4);
    const Array lp = random_log_probs(rng, T, V);
    const TokenSeq ref = random_seq(rng, rng.uniform_int(0, 3), V);
    const double brute = ctc_brute_force(lp, ref);
    bool dp_infeasible = false;
    double dp = 0.0;
    try {
      dp = ctc_loss_value(lp, ref);
    } catch (const CtcInfeasible&) {
      dp_infeasible = true;
    }
    if (std::isinf(brute)) ++infeasible;
    if (dp_infeasible != std::isinf(brute)) {
      ++mismatched;
      continue;
    }
    if (!dp_infeasible) worst = std::max(worst, std::abs(dp - brute));
  }
  r.passed = mismatched == 0 && worst < 1e-9;
  r.detail = std::to_string(n) + " cases (" + std::to_string(infeasible) +
             " infeasible), max |dp - brute| " + sci(worst) +
             ", verdict mismatches " + std::to_string(mismatched);
  r.seconds = since(t0);
  return r;
}

std::size_t levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::size_t> d(b.size() + 1);
  std::iota(d.begin(), d.end(), 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = d[0];
    d[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = d[j];
      d[j] = std::min({d[j] + 1, d[j - 1] + 1, diag + (a[i - 1] != b[j - 1])});
      diag = up;
    }
  }
  return d[b.size()];
}

SuiteResult cpwer_suite(std::uint64_t seed, std::size_t n) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  SuiteResult r{"cpwer brute force", true, "", 0.0};
  std::size_t bad = 0, bad_perm = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t K = rng.uniform_int(1, 4);
    std::vector<TokenSeq> refs, hyps;
    for (std::size_t k = 0; k < K; ++k) {
      refs.push_back(random_seq(rng, rng.uniform_int(1, 6), 5));
      hyps.push_back(random_seq(rng, rng.uniform_int(0, 6), 5));
    }
    std::size_t best = SIZE_MAX;
    Permutation best_perm;
    for (const auto& p : all_permutations(K)) {
      std::size_t e = 0;
      for (std::size_t k = 0; k < K; ++k) e += levenshtein(refs[p[k]], hyps[k]);
      if (e < best) {
        best = e;
        best_perm = p;
      }
    }
    const CpwerResult c = cpwer(refs, hyps);
    if (c.counts.errors() != best || c.perm != best_perm) ++bad;
    for (const auto& p : all_permutations(K)) {
      std::vector<TokenSeq> permuted(K);
      for (std::size_t k = 0; k < K; ++k) permuted[k] = refs[p[k]];
      if (cpwer(refs, permuted).counts.errors() != 0) ++bad_perm;
    }
  }
  r.passed = bad == 0 && bad_perm == 0;
  r.detail = std::to_string(n) + " cases, enumeration mismatches " +
             std::to_string(bad) + ", nonzero self-permutation scores " +
             std::to_string(bad_perm);
  r.seconds = since(t0);
  return r;
}

SuiteResult pit_suite(std::uint64_t seed, std::size_t n) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  SuiteResult r{"pit properties", true, "", 0.0};
  std::size_t above_jsm = 0, not_invariant = 0, bad_compose = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t K = rng.uniform_int(2, 4);
    std::vector<Array> lat;
    std::vector<TokenSeq> refs;
    for (std::size_t k = 0; k < K; ++k) {
      lat.push_back(random_log_probs(rng, 6, 4));
      refs.push_back(random_seq(rng, rng.uniform_int(1, 3), 4));
    }
    Permutation perm;
    const double pit = pit_loss_value(lat, refs, &perm);
    if (!(pit <= jsm_loss_value(lat, refs) + 1e-12)) ++above_jsm;
    // The winning assignment, applied as a fixed order, gives the same value.
    std::vector<TokenSeq> assigned(K);
    for (std::size_t k = 0; k < K; ++k) assigned[k] = refs[perm[k]];
    if (std::abs(jsm_loss_value(lat, assigned) - pit) > 1e-9) ++bad_compose;
    // Relabeling references leaves the value and per-slot content unchanged.
    Permutation sigma(K);
    std::iota(sigma.begin(), sigma.end(), 0);
    for (std::size_t j = K; j > 1; --j)
      std::swap(sigma[j - 1], sigma[static_cast<std::size_t>(rng.uniform_int(0, j - 1))]);
    std::vector<TokenSeq> refs2(K);
    for (std::size_t j = 0; j < K; ++j) refs2[j] = refs[sigma[j]];
    Permutation perm2;
    const double pit2 = pit_loss_value(lat, refs2, &perm2);
    if (std::abs(pit - pit2) > 1e-12) ++not_invariant;
    for (std::size_t k = 0; k < K; ++k)
      if (refs2[perm2[k]] != refs[perm[k]]) ++bad_compose;
  }
  r.passed = above_jsm == 0 && not_invariant == 0 && bad_compose == 0;
  r.detail = std::to_string(n) + " cases: pit > jsm " + std::to_string(above_jsm) +
             ", relabel changes value " + std::to_string(not_invariant) +
             ", composition failures " + std::to_string(bad_compose);
  r.seconds = since(t0);
  return r;
}

std::vector<SuiteResult> run_all(std::uint64_t seed) {
  return {primitive_gradients(derive_seed(seed, "prim"), 100),
          model_gradients(derive_seed(seed, "model")),
          ctc_brute_force_suite(derive_seed(seed, "ctc"), 200),
          cpwer_suite(derive_seed(seed, "cpwer"), 100),
          pit_suite(derive_seed(seed, "pit"), 100)};
}

}  // namespace tsasr::selftest
