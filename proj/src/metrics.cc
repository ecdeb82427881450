// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "tsasr/metrics.h"

#include <algorithm>
#include <limits>
#include <sstream>

#include "tsasr/binary_io.h"
#include "tsasr/config.h"

namespace tsasr {

double EditCounts::rate() const {
  if (ref_len == 0)
    return errors() == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  return static_cast<double>(errors()) / static_cast<double>(ref_len);
}

EditCounts& EditCounts::operator+=(const EditCounts& o) {
  sub += o.sub;
  del += o.del;
  ins += o.ins;
  ref_len += o.ref_len;
  return *this;
}

TokenSeq greedy_decode(const ad::Array& log_probs) {
  const std::size_t T = log_probs.rows(), V = log_probs.cols();
  std::vector<int> path(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::size_t best = 0;
    for (std::size_t v = 1; v < V; ++v)
      if (log_probs[t * V + v] > log_probs[t * V + best]) best = v;
    path[t] = static_cast<int>(best);
  }
  return ctc_collapse(path);
}

// Minimizes edit cost, then the number of gaps (deletions + insertions)
// among optimal alignments. Along any path D - I is fixed by the lengths, so
// the split S/D/I is unique and swapping ref and hyp swaps D and I exactly.
EditCounts align(const TokenSeq& ref, const TokenSeq& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  using Cost = std::pair<std::size_t, std::size_t>;  // (errors, gaps)
  std::vector<Cost> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> Cost& {
    return d[i * (m + 1) + j];
  };
  auto plus = [](Cost c, std::size_t e, std::size_t g) {
    return Cost{c.first + e, c.second + g};
  };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = {i, i};
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = {j, j};
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({plus(at(i - 1, j - 1), ref[i - 1] != hyp[j - 1], 0),
                           plus(at(i - 1, j), 1, 1), plus(at(i, j - 1), 1, 1)});
  EditCounts c;
  c.ref_len = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        at(i, j) == plus(at(i - 1, j - 1), ref[i - 1] != hyp[j - 1], 0)) {
      if (ref[i - 1] != hyp[j - 1]) ++c.sub;
      --i;
      --j;
    } else if (i > 0 && at(i, j) == plus(at(i - 1, j), 1, 1)) {
      ++c.del;
      --i;
    } else {
      ++c.ins;
      --j;
    }
  }
  return c;
}

CpwerResult cpwer(const std::vector<TokenSeq>& refs,
                  const std::vector<TokenSeq>& hyps) {
  if (refs.size() != hyps.size())
    throw std::invalid_argument("cpwer: " + std::to_string(refs.size()) +
                                " reference speakers but " +
                                std::to_string(hyps.size()) + " hypotheses");
  const std::size_t K = refs.size();
  if (K == 0 || K > 4)
    throw std::invalid_argument("cpwer: supports 1 <= K <= 4, got " +
                                std::to_string(K));
  std::vector<EditCounts> pair(K * K);
  for (std::size_t h = 0; h < K; ++h)
    for (std::size_t r = 0; r < K; ++r) pair[h * K + r] = align(refs[r], hyps[h]);
  CpwerResult best;
  bool found = false;
  for (const Permutation& p : all_permutations(K)) {
    EditCounts total;
    for (std::size_t h = 0; h < K; ++h) total += pair[h * K + p[h]];
    if (!found || total.errors() < best.counts.errors()) {
      found = true;
      best.counts = total;
      best.perm = p;
    }
  }
  return best;
}

std::string format_tokens(const TokenSeq& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(tokens[i]);
  }
  return out;
}

TokenSeq parse_tokens(const std::string& text) {
  TokenSeq out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) {
    std::size_t pos = 0;
    int v = 0;
    try {
      v = std::stoi(tok, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != tok.size()) throw FormatError("bad token '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

std::string format_score_record(const ScoreRecord& r) {
  std::ostringstream os;
  os << r.group_id << '\t' << r.metric << '\t' << r.counts.sub << '\t'
     << r.counts.del << '\t' << r.counts.ins << '\t' << r.counts.ref_len
     << '\t' << format_double(r.counts.rate()) << '\t';
  if (r.perm.empty()) {
    os << '-';
  } else {
    for (std::size_t k = 0; k < r.perm.size(); ++k)
      os << (k ? "," : "") << r.perm[k];
  }
  return os.str();
}

ScoreRecord parse_score_record(const std::string& line) {
  std::istringstream is(line);
  ScoreRecord r;
  std::string rate, perm;
  if (!(is >> r.group_id >> r.metric >> r.counts.sub >> r.counts.del >>
        r.counts.ins >> r.counts.ref_len >> rate >> perm))
    throw FormatError("bad score record: " + line);
  if (perm != "-") {
    std::istringstream ps(perm);
    std::string x;
    while (std::getline(ps, x, ',')) r.perm.push_back(std::stoi(x));
  }
  return r;
}

}  // namespace tsasr
