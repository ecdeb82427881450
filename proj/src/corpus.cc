// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "tsasr/corpus.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tsasr/binary_io.h"
#include "tsasr/rng.h"

namespace tsasr {

namespace fs = std::filesystem;

void CorpusConfig::validate() const {
  if (num_speakers < 2) throw ConfigError("corpus needs at least 2 speakers");
  if (num_tokens < 1 || num_tokens > 8)
    throw ConfigError("num_tokens must be in [1, 8] (one keying code each)");
  if (min_utt_tokens < 1 || max_utt_tokens < min_utt_tokens)
    throw ConfigError("bad utterance token range");
  if (frame_samples == 0 || code_frames != 5)
    throw ConfigError("tokens use 5 keyed frames of a positive frame length");
  if (!(overlap_min >= 0.0 && overlap_max <= 1.0 && overlap_min <= overlap_max))
    throw ConfigError("overlap target range must lie in [0, 1]");
  if (!(sample_rate > 0.0) || !(enroll_seconds > 0.0))
    throw ConfigError("sample rate and enrollment length must be positive");
}

void CorpusConfig::to_config(KeyValueConfig& kv) const {
  kv.set("seed", static_cast<long long>(seed));
  kv.set("num_speakers", num_speakers);
  kv.set("num_tokens", num_tokens);
  kv.set("min_utt_tokens", min_utt_tokens);
  kv.set("max_utt_tokens", max_utt_tokens);
  kv.set("frame_samples", frame_samples);
  kv.set("code_frames", code_frames);
  kv.set("num_train", num_train);
  kv.set("num_dev", num_dev);
  kv.set("num_test", num_test);
  kv.set("sample_rate", sample_rate);
  kv.set("enroll_seconds", enroll_seconds);
  kv.set("snr_db", snr_db);
  kv.set("render_noise", render_noise);
  kv.set("min_carrier_gap", min_carrier_gap);
  kv.set("overlap_min", overlap_min);
  kv.set("overlap_max", overlap_max);
  kv.set("overlap_tolerance", overlap_tolerance);
  kv.set("max_gap_tokens", max_gap_tokens);
  kv.set("placement_grid", placement_grid);
  kv.set("max_attempts", max_attempts);
}

CorpusConfig CorpusConfig::from_config(const KeyValueConfig& kv) {
  kv.check_keys({"seed", "num_speakers", "num_tokens", "min_utt_tokens",
                 "max_utt_tokens", "frame_samples", "code_frames", "num_train",
                 "num_dev", "num_test", "sample_rate", "enroll_seconds",
                 "snr_db", "render_noise", "min_carrier_gap", "overlap_min",
                 "overlap_max", "overlap_tolerance", "max_gap_tokens",
                 "placement_grid", "max_attempts"},
                "corpus config");
  CorpusConfig c;
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", c.seed));
  c.num_speakers = kv.get_int("num_speakers", c.num_speakers);
  c.num_tokens = kv.get_int("num_tokens", c.num_tokens);
  c.min_utt_tokens = kv.get_int("min_utt_tokens", c.min_utt_tokens);
  c.max_utt_tokens = kv.get_int("max_utt_tokens", c.max_utt_tokens);
  c.frame_samples = kv.get_int("frame_samples", c.frame_samples);
  c.code_frames = kv.get_int("code_frames", c.code_frames);
  c.num_train = kv.get_int("num_train", c.num_train);
  c.num_dev = kv.get_int("num_dev", c.num_dev);
  c.num_test = kv.get_int("num_test", c.num_test);
  c.sample_rate = kv.get_double("sample_rate", c.sample_rate);
  c.enroll_seconds = kv.get_double("enroll_seconds", c.enroll_seconds);
  c.snr_db = kv.get_double("snr_db", c.snr_db);
  c.render_noise = kv.get_double("render_noise", c.render_noise);
  c.min_carrier_gap = kv.get_double("min_carrier_gap", c.min_carrier_gap);
  c.overlap_min = kv.get_double("overlap_min", c.overlap_min);
  c.overlap_max = kv.get_double("overlap_max", c.overlap_max);
  c.overlap_tolerance = kv.get_double("overlap_tolerance", c.overlap_tolerance);
  c.max_gap_tokens = kv.get_int("max_gap_tokens", c.max_gap_tokens);
  c.placement_grid = kv.get_int("placement_grid", c.placement_grid);
  c.max_attempts = kv.get_int("max_attempts", c.max_attempts);
  c.validate();
  return c;
}

SpeakerProfile make_profile(int id, std::uint64_t corpus_seed) {
  Rng r(derive_seed(corpus_seed, "speaker", static_cast<std::uint64_t>(id)));
  SpeakerProfile p;
  p.id = id;
  p.carrier = r.uniform(0.05, 0.45);
  p.phase = r.uniform(0.0, 2.0 * M_PI);
  p.amplitude = r.uniform(0.8, 1.2);
  p.tremolo_rate = r.uniform(0.002, 0.01);
  p.tremolo_phase = r.uniform(0.0, 2.0 * M_PI);
  return p;
}

const std::vector<int>& token_code(int token) {
  // Every code starts "on" so token onsets are always audible.
  static const std::vector<std::vector<int>> kCodes = {
      {1, 0, 0, 0, 0}, {1, 0, 0, 1, 1}, {1, 0, 1, 0, 1}, {1, 0, 1, 1, 0},
      {1, 1, 0, 0, 1}, {1, 1, 0, 1, 0}, {1, 1, 1, 0, 0}, {1, 1, 1, 1, 1}};
  if (token < 1 || token > static_cast<int>(kCodes.size()))
    throw std::invalid_argument("no keying code for token " +
                                std::to_string(token));
  return kCodes[token - 1];
}

std::vector<double> render_utterance(const SpeakerProfile& profile,
                                     const TokenSeq& tokens,
                                     const CorpusConfig& cfg,
                                     std::uint64_t seed) {
  if (tokens.empty())
    throw std::invalid_argument("render_utterance: empty token sequence");
  const std::size_t tl = cfg.token_samples(), fl = cfg.frame_samples;
  std::vector<double> x(tokens.size() * tl, 0.0);
  Rng noise(seed);
  for (std::size_t u = 0; u < tokens.size(); ++u) {
    const auto& code = token_code(tokens[u]);
    for (std::size_t f = 0; f < code.size(); ++f) {
      if (!code[f]) continue;
      for (std::size_t j = 0; j < fl; ++j) {
        const std::size_t i = u * tl + f * fl + j;
        const double t = static_cast<double>(i);
        const double trem =
            1.0 + 0.2 * std::sin(2.0 * M_PI * profile.tremolo_rate * t +
                                 profile.tremolo_phase);
        x[i] = profile.amplitude * trem *
               std::sin(2.0 * M_PI * profile.carrier * t + profile.phase);
      }
    }
  }
  for (double& v : x) v += noise.normal(0.0, cfg.render_noise);
  return x;
}

namespace {

double mean_power(const std::vector<double>& x) {
  double p = 0.0;
  for (double v : x) p += v * v;
  return x.empty() ? 0.0 : p / static_cast<double>(x.size());
}

TokenSeq random_tokens(Rng& r, const CorpusConfig& cfg, std::size_t count) {
  TokenSeq t(count);
  for (auto& v : t)
    v = static_cast<int>(r.uniform_int(1, static_cast<std::int64_t>(cfg.num_tokens)));
  return t;
}

std::vector<double> white_noise(std::uint64_t seed, std::size_t n,
                                double stddev) {
  Rng r(seed);
  std::vector<double> out(n);
  for (auto& v : out) v = r.normal(0.0, stddev);
  return out;
}

double noise_std_for(const std::vector<double>& clean, double snr_db) {
  return std::sqrt(mean_power(clean) / std::pow(10.0, snr_db / 10.0));
}

}  // namespace

std::vector<double> render_enrollment(const SpeakerProfile& profile,
                                      const CorpusConfig& cfg,
                                      std::uint64_t seed) {
  Rng r(seed);
  const std::size_t want = cfg.enroll_samples();
  std::vector<double> x;
  while (x.size() < want) {
    const auto n = static_cast<std::size_t>(r.uniform_int(
        static_cast<std::int64_t>(cfg.min_utt_tokens),
        static_cast<std::int64_t>(cfg.max_utt_tokens)));
    TokenSeq toks = random_tokens(r, cfg, n);
    auto u = render_utterance(profile, toks, cfg, r.next_u64());
    x.insert(x.end(), u.begin(), u.end());
  }
  x.resize(want);
  const auto noise = white_noise(r.next_u64(), x.size(),
                                 noise_std_for(x, cfg.snr_db));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += noise[i];
  return x;
}

MixtureOptions mixture_options(const CorpusConfig& cfg) {
  MixtureOptions o;
  o.grid = cfg.grid();
  o.max_gap = cfg.max_gap_tokens * cfg.token_samples();
  o.tolerance = cfg.overlap_tolerance;
  o.max_attempts = cfg.max_attempts;
  o.snr_db = cfg.snr_db;
  o.render_noise = cfg.render_noise;
  return o;
}

double pair_overlap_ratio(std::size_t a_start, std::size_t a_end,
                          std::size_t b_start, std::size_t b_end) {
  const std::size_t lo = std::max(a_start, b_start);
  const std::size_t hi = std::min(a_end, b_end);
  const double ov = hi > lo ? static_cast<double>(hi - lo) : 0.0;
  const double uni =
      static_cast<double>((a_end - a_start) + (b_end - b_start)) - ov;
  return uni > 0.0 ? ov / uni : 0.0;
}

namespace {

struct Placement {
  std::size_t a_start = 0;
  std::size_t b_start = 0;
  std::size_t length = 0;
};

Placement placement_for(std::int64_t d, std::size_t la, std::size_t lb) {
  Placement p;
  p.a_start = d < 0 ? static_cast<std::size_t>(-d) : 0;
  p.b_start = static_cast<std::size_t>(static_cast<std::int64_t>(p.a_start) + d);
  p.length = std::max(p.a_start + la, p.b_start + lb);
  return p;
}

double ratio_for(std::int64_t d, std::size_t la, std::size_t lb) {
  const Placement p = placement_for(d, la, lb);
  return pair_overlap_ratio(p.a_start, p.a_start + la, p.b_start,
                            p.b_start + lb);
}

// Offset of b's onset relative to a's onset.
std::int64_t choose_offset(std::size_t la, std::size_t lb, double target,
                           std::uint64_t seed, const MixtureOptions& o) {
  if (!(target >= 0.0 && target <= 1.0))
    throw std::invalid_argument("overlap target " + std::to_string(target) +
                                " outside [0, 1]");
  const auto g = static_cast<std::int64_t>(std::max<std::size_t>(o.grid, 1));
  const auto dmin = -static_cast<std::int64_t>(lb + o.max_gap);
  const auto dmax = static_cast<std::int64_t>(la + o.max_gap);
  const std::int64_t kmin = -((-dmin) / g), kmax = dmax / g;
  double lo = 1.0, hi = 0.0;
  bool any = false;
  for (std::int64_t k = kmin; k <= kmax; ++k) {
    const double r = ratio_for(k * g, la, lb);
    lo = std::min(lo, r);
    hi = std::max(hi, r);
    if (std::abs(r - target) <= o.tolerance) any = true;
  }
  auto range = [&] {
    std::ostringstream os;
    os << "achievable overlap ratios lie in [" << lo << ", " << hi
       << "] on a " << g << "-sample grid for lengths " << la << " and " << lb;
    return os.str();
  };
  if (!any)
    throw PlacementError("overlap target " + std::to_string(target) +
                             " cannot be met within +-" +
                             std::to_string(o.tolerance) + "; " + range(),
                         lo, hi);
  Rng r(seed);
  for (std::size_t attempt = 0; attempt < o.max_attempts; ++attempt) {
    const std::int64_t d = r.uniform_int(kmin, kmax) * g;
    if (std::abs(ratio_for(d, la, lb) - target) <= o.tolerance) return d;
  }
  throw PlacementError("no placement for overlap target " +
                           std::to_string(target) + " after " +
                           std::to_string(o.max_attempts) + " attempts; " +
                           range(),
                       lo, hi);
}

}  // namespace

Mixture make_mixture(const UtterancePlan& a, const UtterancePlan& b,
                     double target, std::uint64_t seed,
                     const CorpusConfig& cfg, const MixtureOptions& opts) {
  CorpusConfig rc = cfg;
  rc.render_noise = opts.render_noise;
  const auto xa = render_utterance(a.profile, a.tokens, rc, a.seed);
  const auto xb = render_utterance(b.profile, b.tokens, rc, b.seed);
  const std::int64_t d = choose_offset(xa.size(), xb.size(), target,
                                       derive_seed(seed, "offset"), opts);
  const Placement p = placement_for(d, xa.size(), xb.size());
  Mixture m;
  m.length = p.length;
  m.samples.assign(p.length, 0.0);
  for (std::size_t i = 0; i < xa.size(); ++i) m.samples[p.a_start + i] += xa[i];
  for (std::size_t i = 0; i < xb.size(); ++i) m.samples[p.b_start + i] += xb[i];
  const auto noise = white_noise(derive_seed(seed, "noise"), p.length,
                                 noise_std_for(m.samples, opts.snr_db));
  for (std::size_t i = 0; i < p.length; ++i) m.samples[i] += noise[i];
  Segment sa{p.a_start, p.a_start + xa.size(), a.profile.id, a.tokens};
  Segment sb{p.b_start, p.b_start + xb.size(), b.profile.id, b.tokens};
  if (sb.start < sa.start)
    m.segments = {sb, sa};
  else
    m.segments = {sa, sb};
  return m;
}

MixtureParts mixture_parts(const UtterancePlan& a, const UtterancePlan& b,
                           const Mixture& mix, std::uint64_t seed,
                           const CorpusConfig& cfg, const MixtureOptions& opts) {
  CorpusConfig rc = cfg;
  rc.render_noise = opts.render_noise;
  MixtureParts parts;
  std::vector<double> clean(mix.length, 0.0);
  for (const UtterancePlan* plan : {&a, &b}) {
    const Segment* seg = nullptr;
    for (const auto& s : mix.segments)
      if (s.speaker == plan->profile.id) seg = &s;
    if (!seg) throw std::invalid_argument("mixture_parts: speaker not in mixture");
    const auto x = render_utterance(plan->profile, plan->tokens, rc, plan->seed);
    std::vector<double> shifted(mix.length, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      shifted[seg->start + i] = x[i];
      clean[seg->start + i] += x[i];
    }
    parts.shifted.push_back(std::move(shifted));
  }
  parts.noise = white_noise(derive_seed(seed, "noise"), mix.length,
                            noise_std_for(clean, opts.snr_db));
  return parts;
}

std::vector<Mixture> generate_split(const CorpusConfig& cfg,
                                    const std::string& split,
                                    std::size_t count) {
  cfg.validate();
  std::vector<SpeakerProfile> profiles;
  for (std::size_t s = 0; s < cfg.num_speakers; ++s)
    profiles.push_back(make_profile(static_cast<int>(s), cfg.seed));
  const MixtureOptions opts = mixture_options(cfg);
  std::vector<Mixture> out;
  for (std::size_t i = 0; i < count; ++i) {
    Rng r(derive_seed(cfg.seed, split, i));
    const auto last = static_cast<std::int64_t>(cfg.num_speakers) - 1;
    bool done = false;
    for (int attempt = 0; attempt < 1000 && !done; ++attempt) {
      const auto sa = r.uniform_int(0, last);
      const auto sb = r.uniform_int(0, last);
      if (sa == sb ||
          std::abs(profiles[sa].carrier - profiles[sb].carrier) <
              cfg.min_carrier_gap)
        continue;
      UtterancePlan pa, pb;
      pa.profile = profiles[sa];
      pb.profile = profiles[sb];
      for (UtterancePlan* p : {&pa, &pb}) {
        const auto n = static_cast<std::size_t>(r.uniform_int(
            static_cast<std::int64_t>(cfg.min_utt_tokens),
            static_cast<std::int64_t>(cfg.max_utt_tokens)));
        p->tokens = random_tokens(r, cfg, n);
        p->seed = r.next_u64();
      }
      const double target = r.uniform(cfg.overlap_min, cfg.overlap_max);
      const std::uint64_t mseed = r.next_u64();
      try {
        Mixture m = make_mixture(pa, pb, target, mseed, cfg, opts);
        char id[64];
        std::snprintf(id, sizeof(id), "%s-%05zu", split.c_str(), i);
        m.id = id;
        m.audio_path = "audio/" + m.id + ".f64";
        out.push_back(std::move(m));
        done = true;
      } catch (const PlacementError&) {
        // Redraw the plan; the target is unreachable for these lengths.
      }
    }
    if (!done)
      throw std::runtime_error("could not place mixture " + std::to_string(i) +
                               " of split " + split);
  }
  return out;
}

std::string format_manifest_line(const Mixture& m) {
  std::ostringstream os;
  os << m.id << '\t' << m.audio_path << '\t' << m.length;
  for (const auto& s : m.segments) {
    os << '\t' << s.start << ',' << s.end << ',' << s.speaker << ',';
    for (std::size_t k = 0; k < s.tokens.size(); ++k)
      os << (k ? " " : "") << s.tokens[k];
  }
  return os.str();
}

Mixture parse_manifest_line(const std::string& line) {
  std::vector<std::string> fields;
  std::istringstream is(line);
  std::string f;
  while (std::getline(is, f, '\t')) fields.push_back(f);
  if (fields.size() < 3) throw FormatError("bad manifest line: " + line);
  Mixture m;
  m.id = fields[0];
  m.audio_path = fields[1];
  m.length = std::stoull(fields[2]);
  for (std::size_t i = 3; i < fields.size(); ++i) {
    std::istringstream ss(fields[i]);
    std::string a, b, c, toks;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') ||
        !std::getline(ss, c, ','))
      throw FormatError("bad segment '" + fields[i] + "' in " + m.id);
    std::getline(ss, toks);
    Segment s;
    s.start = std::stoull(a);
    s.end = std::stoull(b);
    s.speaker = std::stoi(c);
    std::istringstream ts(toks);
    int t;
    while (ts >> t) s.tokens.push_back(t);
    if (!(s.start < s.end && s.end <= m.length))
      throw FormatError("segment span out of range in " + m.id);
    m.segments.push_back(std::move(s));
  }
  return m;
}

void write_manifest(const std::string& path, const std::vector<Mixture>& mixes) {
  std::string text;
  for (const auto& m : mixes) text += format_manifest_line(m) + '\n';
  write_file_atomic(path, text);
}

std::vector<Mixture> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path);
  std::vector<Mixture> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(parse_manifest_line(line));
  return out;
}

void load_audio(Mixture& m, const std::string& manifest_path) {
  const fs::path base = fs::path(manifest_path).parent_path();
  m.samples = read_audio((base / m.audio_path).string());
  if (m.samples.size() != m.length)
    throw FormatError("audio for " + m.id + " has " +
                      std::to_string(m.samples.size()) +
                      " samples, manifest says " + std::to_string(m.length));
}

std::map<int, std::string> read_enroll_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open enrollment map " + path);
  std::map<int, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw FormatError("bad enrollment map line: " + line);
    out[std::stoi(line.substr(0, tab))] = line.substr(tab + 1);
  }
  return out;
}

void synthesize_corpus(const CorpusConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  fs::create_directories(fs::path(out_dir) / "audio");
  fs::create_directories(fs::path(out_dir) / "enroll");
  CorpusPaths paths{out_dir};
  KeyValueConfig kv;
  cfg.to_config(kv);
  kv.save(paths.config());
  const std::pair<const char*, std::size_t> splits[] = {
      {"train", cfg.num_train}, {"dev", cfg.num_dev}, {"test", cfg.num_test}};
  for (const auto& [split, count] : splits) {
    auto mixes = generate_split(cfg, split, count);
    for (const auto& m : mixes)
      write_audio((fs::path(out_dir) / m.audio_path).string(), m.samples);
    write_manifest(paths.manifest(split), mixes);
  }
  std::string map;
  for (std::size_t s = 0; s < cfg.num_speakers; ++s) {
    const int id = static_cast<int>(s);
    char rel[64];
    std::snprintf(rel, sizeof(rel), "enroll/spk%04d.f64", id);
    const auto x = render_enrollment(make_profile(id, cfg.seed), cfg,
                                     derive_seed(cfg.seed, "enroll", s));
    write_audio((fs::path(out_dir) / rel).string(), x);
    map += std::to_string(id) + '\t' + rel + '\n';
  }
  write_file_atomic(paths.enroll_map(), map);
}

}  // namespace tsasr
