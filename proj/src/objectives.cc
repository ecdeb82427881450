// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "tsasr/objectives.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace tsasr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kInf = std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

std::size_t ctc_min_frames(std::span<const int> ref) {
  std::size_t n = ref.size();
  for (std::size_t i = 1; i < ref.size(); ++i)
    if (ref[i] == ref[i - 1]) ++n;
  return n;
}

void check_tokens(std::span<const int> ref, std::size_t vocab) {
  for (std::size_t i = 0; i < ref.size(); ++i)
    if (ref[i] <= kBlank || static_cast<std::size_t>(ref[i]) >= vocab)
      throw std::invalid_argument(
          "token " + std::to_string(ref[i]) + " at position " +
          std::to_string(i) + " is outside [1, " + std::to_string(vocab) + ")");
}

CtcResult ctc_forward_backward(const ad::Array& log_probs,
                               std::span<const int> ref, bool want_grad) {
  const std::size_t T = log_probs.rows(), V = log_probs.cols();
  check_tokens(ref, V);
  const std::size_t need = ctc_min_frames(ref);
  if (T < need)
    throw CtcInfeasible("ctc: lattice has T = " + std::to_string(T) +
                        " frames but the reference needs at least " +
                        std::to_string(need));
  // Extended label sequence with blanks between and around tokens.
  const std::size_t S = 2 * ref.size() + 1;
  std::vector<int> ext(S, kBlank);
  for (std::size_t i = 0; i < ref.size(); ++i) ext[2 * i + 1] = ref[i];
  auto lp = [&](std::size_t t, std::size_t s) {
    return log_probs[t * V + ext[s]];
  };
  auto can_skip = [&](std::size_t s) {  // transition s-2 -> s allowed
    return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2];
  };

  std::vector<double> alpha(T * S, kNegInf);
  alpha[0] = lp(0, 0);
  if (S > 1) alpha[1] = lp(0, 1);
  for (std::size_t t = 1; t < T; ++t) {
    const double* prev = &alpha[(t - 1) * S];
    double* cur = &alpha[t * S];
    for (std::size_t s = 0; s < S; ++s) {
      double a = prev[s];
      if (s >= 1) a = log_add(a, prev[s - 1]);
      if (can_skip(s)) a = log_add(a, prev[s - 2]);
      cur[s] = a == kNegInf ? kNegInf : a + lp(t, s);
    }
  }
  double log_p = alpha[(T - 1) * S + S - 1];
  if (S > 1) log_p = log_add(log_p, alpha[(T - 1) * S + S - 2]);

  CtcResult res;
  res.loss = -log_p;
  if (!want_grad) return res;
  res.grad = ad::Array(log_probs.shape());
  if (log_p == kNegInf) return res;

  // beta[t][s]: log-probability of finishing from state s at t, excluding
  // the emission at t, so alpha * beta is the occupancy of (t, s).
  std::vector<double> beta(T * S, kNegInf);
  beta[(T - 1) * S + S - 1] = 0.0;
  if (S > 1) beta[(T - 1) * S + S - 2] = 0.0;
  for (std::size_t t = T - 1; t-- > 0;) {
    const double* next = &beta[(t + 1) * S];
    double* cur = &beta[t * S];
    for (std::size_t s = 0; s < S; ++s) {
      double b = next[s] == kNegInf ? kNegInf : next[s] + lp(t + 1, s);
      if (s + 1 < S && next[s + 1] != kNegInf)
        b = log_add(b, next[s + 1] + lp(t + 1, s + 1));
      if (s + 2 < S && can_skip(s + 2) && next[s + 2] != kNegInf)
        b = log_add(b, next[s + 2] + lp(t + 1, s + 2));
      cur[s] = b;
    }
  }
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t s = 0; s < S; ++s) {
      const double ab = alpha[t * S + s] + beta[t * S + s];
      if (ab == kNegInf) continue;
      res.grad[t * V + ext[s]] -= std::exp(ab - log_p);
    }
  return res;
}

double ctc_loss_value(const ad::Array& log_probs, std::span<const int> ref) {
  return ctc_forward_backward(log_probs, ref, false).loss;
}

ad::Var ctc_loss(ad::Var log_probs, std::span<const int> ref) {
  if (!log_probs.valid()) throw std::logic_error("ctc_loss: unbound lattice");
  CtcResult r = ctc_forward_backward(log_probs.value(), ref,
                                     log_probs.requires_grad());
  return log_probs.tape()->record(
      ad::Array::scalar(r.loss), {log_probs},
      [g = std::move(r.grad)](const ad::BackwardArgs& a) {
        ad::Array& gx = *a.in_grads[0];
        const double d = a.out_grad[0];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += d * g[i];
      });
}

TokenSeq ctc_collapse(std::span<const int> path) {
  TokenSeq out;
  int prev = -1;
  for (int x : path) {
    if (x != prev && x != kBlank) out.push_back(x);
    prev = x;
  }
  return out;
}

double ctc_brute_force(const ad::Array& log_probs, std::span<const int> ref) {
  const std::size_t T = log_probs.rows(), V = log_probs.cols();
  double count = 1.0;
  for (std::size_t t = 0; t < T; ++t) count *= static_cast<double>(V);
  if (count > 1e6)
    throw std::invalid_argument("ctc_brute_force: |V|^T = " +
                                std::to_string(count) + " exceeds 1e6");
  std::vector<int> path(T, 0);
  double total = kNegInf;
  const TokenSeq target(ref.begin(), ref.end());
  while (true) {
    if (ctc_collapse(path) == target) {
      double lp = 0.0;
      for (std::size_t t = 0; t < T; ++t) lp += log_probs[t * V + path[t]];
      total = log_add(total, lp);
    }
    std::size_t t = 0;
    while (t < T && ++path[t] == static_cast<int>(V)) path[t++] = 0;
    if (t == T) break;
  }
  return total == kNegInf ? kInf : -total;
}

std::vector<Permutation> all_permutations(std::size_t k) {
  std::vector<Permutation> out;
  Permutation p(k);
  std::iota(p.begin(), p.end(), 0);
  do out.push_back(p);
  while (std::next_permutation(p.begin(), p.end()));
  return out;
}

namespace {

// Pairwise costs; infeasible pairs are flagged rather than thrown.
struct PairCosts {
  std::size_t k = 0;
  std::vector<double> cost;
  std::vector<char> feasible;
};

PairCosts pair_costs(std::span<const ad::Array* const> lattices,
                     std::span<const TokenSeq> refs) {
  const std::size_t K = lattices.size();
  if (refs.size() != K)
    throw std::invalid_argument("pit: " + std::to_string(K) +
                                " outputs but " + std::to_string(refs.size()) +
                                " references");
  if (K == 0 || K > 4)
    throw std::invalid_argument("pit: exhaustive search supports 1 <= K <= 4, got " +
                                std::to_string(K));
  PairCosts pc;
  pc.k = K;
  pc.cost.assign(K * K, kInf);
  pc.feasible.assign(K * K, 0);
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j) {
      if (lattices[i]->rows() < ctc_min_frames(refs[j])) continue;
      pc.cost[i * K + j] = ctc_loss_value(*lattices[i], refs[j]);
      pc.feasible[i * K + j] = 1;
    }
  return pc;
}

Permutation best_permutation(const PairCosts& pc, double* value) {
  bool found = false;
  double best = kInf;
  Permutation best_perm;
  for (const Permutation& p : all_permutations(pc.k)) {
    double total = 0.0;
    bool ok = true;
    for (std::size_t i = 0; i < pc.k && ok; ++i) {
      ok = pc.feasible[i * pc.k + p[i]];
      total += pc.cost[i * pc.k + p[i]];
    }
    if (!ok) continue;
    if (!found || total < best) {
      found = true;
      best = total;
      best_perm = p;
    }
  }
  if (!found)
    throw CtcInfeasible(
        "pit: every permutation pairs an output with a reference that does "
        "not fit its lattice");
  *value = best;
  return best_perm;
}

}  // namespace

PitResult pit_loss(std::span<const ad::Var> lattices,
                   std::span<const TokenSeq> refs) {
  std::vector<const ad::Array*> arrays;
  for (const ad::Var& v : lattices) arrays.push_back(&v.value());
  PairCosts pc = pair_costs(arrays, refs);
  PitResult res;
  res.perm = best_permutation(pc, &res.value);
  std::vector<ad::Var> terms;
  for (std::size_t k = 0; k < lattices.size(); ++k)
    terms.push_back(ctc_loss(lattices[k], refs[res.perm[k]]));
  res.loss = terms[0];
  for (std::size_t k = 1; k < terms.size(); ++k)
    res.loss = ad::add(res.loss, terms[k]);
  return res;
}

double pit_loss_value(std::span<const ad::Array> lattices,
                      std::span<const TokenSeq> refs, Permutation* perm) {
  std::vector<const ad::Array*> arrays;
  for (const ad::Array& a : lattices) arrays.push_back(&a);
  PairCosts pc = pair_costs(arrays, refs);
  double value = 0.0;
  Permutation p = best_permutation(pc, &value);
  if (perm) *perm = std::move(p);
  return value;
}

namespace {

void check_slot_count(std::size_t lattices, std::size_t refs) {
  if (lattices != refs)
    throw std::invalid_argument("jsm loss: " + std::to_string(lattices) +
                                " speaker lattices but " +
                                std::to_string(refs) + " references");
}

template <typename Fn>
auto with_slot(std::size_t k, Fn&& fn) {
  try {
    return fn();
  } catch (const CtcInfeasible& e) {
    throw CtcInfeasible("speaker slot " + std::to_string(k) + ": " + e.what());
  }
}

}  // namespace

ad::Var jsm_loss(std::span<const ad::Var> lattices,
                 std::span<const TokenSeq> refs) {
  check_slot_count(lattices.size(), refs.size());
  ad::Var total;
  for (std::size_t k = 0; k < lattices.size(); ++k) {
    ad::Var l = with_slot(k, [&] { return ctc_loss(lattices[k], refs[k]); });
    total = k == 0 ? l : ad::add(total, l);
  }
  return total;
}

double jsm_loss_value(std::span<const ad::Array> lattices,
                      std::span<const TokenSeq> refs) {
  check_slot_count(lattices.size(), refs.size());
  double total = 0.0;
  for (std::size_t k = 0; k < lattices.size(); ++k)
    total += with_slot(k, [&] { return ctc_loss_value(lattices[k], refs[k]); });
  return total;
}

}  // namespace tsasr
