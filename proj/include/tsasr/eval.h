// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation units and decoders. Two schemes:
//   utterance  every segment is cropped from its mixture and decoded alone
//   group      segments chained by overlap form a group; its whole span is
//              decoded and each speaker's words are scored together
// Decoders: baseline (no embedding), tse-iterative (one conditioned pass per
// speaker), jsm (one joint pass), pit (one pass, cpWER scoring).

#ifndef TSASR_EVAL_H_
#define TSASR_EVAL_H_

#include <map>
#include <string>
#include <vector>

#include "tsasr/corpus.h"
#include "tsasr/metrics.h"
#include "tsasr/model.h"

namespace tsasr {

struct UtteranceGroup {
  std::vector<std::size_t> members;  // indices into the segment list
  std::size_t start = 0;
  std::size_t end = 0;
  std::vector<int> speakers;  // in order of first appearance
  double overlap = 0.0;
};

// Connected components of the positive-length overlap graph, ordered by
// earliest start (ties by segment index).
std::vector<UtteranceGroup> build_groups(const std::vector<Segment>& segments);

// Time within [start, end) where at least two of the segments are active,
// divided by end - start.
double overlap_ratio(const std::vector<Segment>& segments,
                     const std::vector<std::size_t>& members,
                     std::size_t start, std::size_t end);
double overlap_ratio(const UtteranceGroup& g,
                     const std::vector<Segment>& segments);

// One decodable span with per-slot speakers and references.
struct EvalUnit {
  std::string id;
  std::size_t mixture = 0;  // index into the mixture list
  std::size_t start = 0;
  std::size_t end = 0;
  std::vector<int> speakers;
  std::vector<TokenSeq> refs;
  std::size_t participants = 0;  // leading slots that actually speak
  double overlap = 0.0;
};

// One unit per segment ("<mixture>/s<i>"); overlap is measured over the
// segment's own span.
std::vector<EvalUnit> utterance_units(const std::vector<Mixture>& mixtures);

// One unit per group ("<mixture>/g<i>"). Slots beyond the participants are
// filled, in speaker-id order, with mixture speakers absent from the group
// (empty references) until min_slots is reached, or with all of them when
// all_absent is set.
std::vector<EvalUnit> group_units(const std::vector<Mixture>& mixtures,
                                  std::size_t min_slots, bool all_absent);

enum class EvalMode { kUtterance, kGroup };
enum class Decoder { kBaseline, kTseIterative, kJsm, kPit };
enum class Metric { kWer, kCpwer };

std::string mode_name(EvalMode m);
EvalMode parse_mode(const std::string& s);
std::string decoder_name(Decoder d);
Decoder parse_decoder(const std::string& s);
std::string metric_name(Metric m);
Metric parse_metric(const std::string& s);

struct EvalConfig {
  EvalMode mode = EvalMode::kUtterance;
  Decoder decoder = Decoder::kTseIterative;
  Metric metric = Metric::kWer;
  bool distractors = false;  // also condition on absent mixture speakers
  std::size_t threads = 0;   // 0: default thread count

  // Checks decoder/mode/metric pairing against the model head.
  void validate(const ModelConfig& model) const;
};

struct Hypothesis {
  std::string unit_id;
  std::size_t slot = 0;
  int speaker = -1;  // -1 when the slot is not bound to a speaker (pit)
  TokenSeq tokens;
};

std::string format_hypothesis(const Hypothesis& h);
Hypothesis parse_hypothesis(const std::string& line);

struct UnitScore {
  ScoreRecord record;
  double overlap = 0.0;
};

struct EvalResult {
  std::vector<Hypothesis> hyps;
  std::vector<UnitScore> scores;
  EditCounts total;
};

using EmbeddingTable = std::map<int, std::vector<double>>;

// Decodes one unit; hypotheses are ordered by slot.
std::vector<Hypothesis> decode_unit(Model& model, const EvalConfig& cfg,
                                    const Mixture& mix, const EvalUnit& unit,
                                    const EmbeddingTable& emb);

// Scores a unit's hypotheses against its references.
UnitScore score_unit(const EvalConfig& cfg, const EvalUnit& unit,
                     const std::vector<Hypothesis>& hyps);

// Units for cfg over mixtures (audio loaded), decoded concurrently and
// merged in unit order.
std::vector<EvalUnit> eval_units(const EvalConfig& cfg, const Model& model,
                                 const std::vector<Mixture>& mixtures);
EvalResult evaluate(Model& model, const EvalConfig& cfg,
                    const std::vector<Mixture>& mixtures,
                    const EmbeddingTable& emb);

// Overlap-ratio breakdown with bins [0,.2) [.2,.4) [.4,.6) [.6,.8) [.8,1].
struct BreakdownBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t units = 0;
  EditCounts counts;
  // Pooled (S+D+I)/N; absent (nullopt-like) when the bin has no units.
  bool present() const { return units > 0; }
};
std::vector<BreakdownBin> breakdown(const std::vector<UnitScore>& scores);
std::string format_breakdown_table(const std::vector<BreakdownBin>& bins,
                                   const std::string& title);
std::string format_breakdown_records(const std::vector<BreakdownBin>& bins);
std::vector<BreakdownBin> parse_breakdown_records(const std::string& text);

// Offline scoring of a hypothesis file against a manifest.
EvalResult score_hypotheses(const EvalConfig& cfg,
                            const std::vector<Mixture>& mixtures,
                            const std::vector<Hypothesis>& hyps,
                            std::size_t slots);

std::size_t default_threads();

}  // namespace tsasr

#endif  // TSASR_EVAL_H_
