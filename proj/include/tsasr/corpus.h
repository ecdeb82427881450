// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic two-speaker corpus. A speaker is a carrier tone with its own
// frequency, phase, level and tremolo; a token is an on/off keying pattern
// of that carrier over a few frames followed by a silent gap frame. Mixtures
// sum two shifted utterances plus white noise at a configured SNR.

#ifndef TSASR_CORPUS_H_
#define TSASR_CORPUS_H_

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsasr/config.h"
#include "tsasr/objectives.h"

namespace tsasr {

struct CorpusConfig {
  std::uint64_t seed = 1;
  std::size_t num_speakers = 160;
  std::size_t num_tokens = 8;  // vocabulary without the blank
  std::size_t min_utt_tokens = 3;
  std::size_t max_utt_tokens = 6;
  std::size_t frame_samples = 8;  // samples per keying frame
  std::size_t code_frames = 5;    // keyed frames per token (plus one gap)
  std::size_t num_train = 500;
  std::size_t num_dev = 100;
  std::size_t num_test = 100;
  double sample_rate = 800.0;  // samples per nominal second
  double enroll_seconds = 3.0;
  double snr_db = 20.0;
  double render_noise = 0.01;  // per-utterance noise std
  double min_carrier_gap = 0.08;
  double overlap_min = 0.1;  // mixture overlap targets ~ U[min, max]
  double overlap_max = 1.0;
  double overlap_tolerance = 0.05;
  std::size_t max_gap_tokens = 2;  // largest silence between disjoint turns
  // Onset granularity in samples; 0 means one token length.
  std::size_t placement_grid = 0;
  std::size_t max_attempts = 1000;

  std::size_t token_samples() const { return (code_frames + 1) * frame_samples; }
  std::size_t grid() const {
    return placement_grid == 0 ? token_samples() : placement_grid;
  }
  std::size_t enroll_samples() const {
    return static_cast<std::size_t>(enroll_seconds * sample_rate);
  }
  void validate() const;
  void to_config(KeyValueConfig& kv) const;
  static CorpusConfig from_config(const KeyValueConfig& kv);
};

struct SpeakerProfile {
  int id = 0;
  double carrier = 0.0;  // cycles per sample
  double phase = 0.0;
  double amplitude = 1.0;
  double tremolo_rate = 0.0;  // cycles per sample
  double tremolo_phase = 0.0;
};

// Deterministic in (id, corpus seed).
SpeakerProfile make_profile(int id, std::uint64_t corpus_seed);

// On/off keying pattern of a token (1-based id).
const std::vector<int>& token_code(int token);

// Throws std::invalid_argument for an empty token list.
std::vector<double> render_utterance(const SpeakerProfile& profile,
                                     const TokenSeq& tokens,
                                     const CorpusConfig& cfg,
                                     std::uint64_t seed);

std::vector<double> render_enrollment(const SpeakerProfile& profile,
                                      const CorpusConfig& cfg,
                                      std::uint64_t seed);

struct Segment {
  std::size_t start = 0;  // samples, inclusive
  std::size_t end = 0;    // samples, exclusive
  int speaker = 0;
  TokenSeq tokens;
};

struct Mixture {
  std::string id;
  std::string audio_path;  // relative to the manifest directory
  std::vector<double> samples;
  std::size_t length = 0;
  std::vector<Segment> segments;
};

struct UtterancePlan {
  SpeakerProfile profile;
  TokenSeq tokens;
  std::uint64_t seed = 0;
};

class PlacementError : public std::runtime_error {
 public:
  PlacementError(const std::string& msg, double lo, double hi)
      : std::runtime_error(msg), achievable_lo(lo), achievable_hi(hi) {}
  double achievable_lo;
  double achievable_hi;
};

struct MixtureOptions {
  std::size_t grid = 1;
  std::size_t max_gap = 0;  // samples of silence allowed between turns
  double tolerance = 0.05;
  std::size_t max_attempts = 1000;
  double snr_db = 20.0;
  double render_noise = 0.01;
};

MixtureOptions mixture_options(const CorpusConfig& cfg);

// Shared time over the union of the two spans; 0 for disjoint spans.
double pair_overlap_ratio(std::size_t a_start, std::size_t a_end,
                          std::size_t b_start, std::size_t b_end);

// Places plan b relative to plan a by rejection sampling over grid offsets
// until the realized overlap is within tolerance of target.
Mixture make_mixture(const UtterancePlan& a, const UtterancePlan& b,
                     double target, std::uint64_t seed,
                     const CorpusConfig& cfg, const MixtureOptions& opts);

// The parts a mixture was built from, regenerated from its seed; used to
// check that samples == sum of shifted utterances + noise exactly.
struct MixtureParts {
  std::vector<std::vector<double>> shifted;
  std::vector<double> noise;
};
MixtureParts mixture_parts(const UtterancePlan& a, const UtterancePlan& b,
                           const Mixture& mix, std::uint64_t seed,
                           const CorpusConfig& cfg, const MixtureOptions& opts);

// Corpus on disk: manifest_<split>.tsv, audio/, enroll/, enroll.tsv,
// corpus.cfg.
struct CorpusPaths {
  std::string dir;
  std::string manifest(const std::string& split) const {
    return dir + "/manifest_" + split + ".tsv";
  }
  std::string enroll_map() const { return dir + "/enroll.tsv"; }
  std::string config() const { return dir + "/corpus.cfg"; }
};

// Generates one split deterministically (mixture i of split s uses a seed
// derived from (seed, s, i)).
std::vector<Mixture> generate_split(const CorpusConfig& cfg,
                                    const std::string& split,
                                    std::size_t count);
void synthesize_corpus(const CorpusConfig& cfg, const std::string& out_dir);

std::string format_manifest_line(const Mixture& m);
Mixture parse_manifest_line(const std::string& line);
void write_manifest(const std::string& path, const std::vector<Mixture>& mixes);
// Reads records only (no audio).
std::vector<Mixture> read_manifest(const std::string& path);
// Loads the audio for a mixture read from the manifest at manifest_path.
void load_audio(Mixture& m, const std::string& manifest_path);

std::map<int, std::string> read_enroll_map(const std::string& path);

}  // namespace tsasr

#endif  // TSASR_CORPUS_H_
