// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0
//
// CTC (log-domain forward-backward), its brute-force twin, and
// permutation-invariant CTC for multi-output heads. Token 0 is the blank.

#ifndef TSASR_OBJECTIVES_H_
#define TSASR_OBJECTIVES_H_

#include <span>
#include <stdexcept>
#include <vector>

#include "tsasr/autodiff.h"

namespace tsasr {

using TokenSeq = std::vector<int>;
// perm[k] is the reference index paired with output slot k.
using Permutation = std::vector<int>;

inline constexpr int kBlank = 0;

class CtcInfeasible : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Shortest lattice that can emit ref: |ref| + number of adjacent repeats.
std::size_t ctc_min_frames(std::span<const int> ref);
// Throws std::invalid_argument for blanks or ids outside [1, vocab).
void check_tokens(std::span<const int> ref, std::size_t vocab);

struct CtcResult {
  double loss = 0.0;  // -log P(ref | lattice); +inf when P == 0
  ad::Array grad;     // d loss / d log_probs (minus the state occupancy)
};

// log_probs is T x |V|. Throws CtcInfeasible when T < ctc_min_frames(ref).
CtcResult ctc_forward_backward(const ad::Array& log_probs,
                               std::span<const int> ref,
                               bool want_grad = true);
double ctc_loss_value(const ad::Array& log_probs, std::span<const int> ref);
ad::Var ctc_loss(ad::Var log_probs, std::span<const int> ref);

// Sums every frame-level path that collapses to ref. Requires
// |V|^T <= 1e6. Returns +inf when no path collapses to ref.
double ctc_brute_force(const ad::Array& log_probs, std::span<const int> ref);

// Removes adjacent repeats, then blanks.
TokenSeq ctc_collapse(std::span<const int> path);

struct PitResult {
  ad::Var loss;
  double value = 0.0;
  Permutation perm;
};

// Exhaustive search for K <= 4; ties go to the lexicographically smallest
// permutation. Pairs whose reference cannot fit count as +inf; if every
// permutation contains such a pair the call throws CtcInfeasible.
PitResult pit_loss(std::span<const ad::Var> lattices,
                   std::span<const TokenSeq> refs);
// Value-only version over plain arrays.
double pit_loss_value(std::span<const ad::Array> lattices,
                      std::span<const TokenSeq> refs, Permutation* perm);

// Sum over slots of ctc_loss(lattice_k, ref_k) in the fixed slot order.
ad::Var jsm_loss(std::span<const ad::Var> lattices,
                 std::span<const TokenSeq> refs);
double jsm_loss_value(std::span<const ad::Array> lattices,
                      std::span<const TokenSeq> refs);

// All permutations of {0..k-1} in lexicographic order.
std::vector<Permutation> all_permutations(std::size_t k);

}  // namespace tsasr

#endif  // TSASR_OBJECTIVES_H_
