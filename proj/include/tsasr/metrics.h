// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Greedy CTC decoding, Levenshtein-aligned WER and concatenated
// minimum-permutation WER (cpWER).

#ifndef TSASR_METRICS_H_
#define TSASR_METRICS_H_

#include <string>
#include <vector>

#include "tsasr/autodiff.h"
#include "tsasr/objectives.h"

namespace tsasr {

struct EditCounts {
  std::size_t sub = 0;
  std::size_t del = 0;
  std::size_t ins = 0;
  std::size_t ref_len = 0;

  std::size_t errors() const { return sub + del + ins; }
  // errors / ref_len; 0 when both are 0, +inf when only ref_len is 0.
  double rate() const;
  EditCounts& operator+=(const EditCounts& o);
  bool operator==(const EditCounts& o) const = default;
};

// Per-frame argmax, collapse repeats, drop blanks.
TokenSeq greedy_decode(const ad::Array& log_probs);

// Unit-cost Levenshtein alignment; the backtrace prefers substitution (or
// match), then deletion, then insertion when costs tie.
EditCounts align(const TokenSeq& ref, const TokenSeq& hyp);

struct CpwerResult {
  EditCounts counts;
  Permutation perm;  // perm[k] = reference paired with hypothesis k
};

// Minimizes total edit count over permutations (K <= 4); ties go to the
// lexicographically smallest permutation.
CpwerResult cpwer(const std::vector<TokenSeq>& refs,
                  const std::vector<TokenSeq>& hyps);

// One line of a score file:
//   group-id  metric  S  D  I  N  rate  permutation
struct ScoreRecord {
  std::string group_id;
  std::string metric;
  EditCounts counts;
  Permutation perm;  // empty for plain wer
};

std::string format_score_record(const ScoreRecord& r);
ScoreRecord parse_score_record(const std::string& line);

std::string format_tokens(const TokenSeq& tokens);
TokenSeq parse_tokens(const std::string& text);

}  // namespace tsasr

#endif  // TSASR_METRICS_H_
