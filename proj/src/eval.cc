// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "tsasr/eval.h"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "tsasr/binary_io.h"
#include "tsasr/config.h"

namespace tsasr {

std::vector<UtteranceGroup> build_groups(const std::vector<Segment>& segments) {
  const std::size_t n = segments.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& a = segments[i];
      const auto& b = segments[j];
      if (std::max(a.start, b.start) < std::min(a.end, b.end))
        parent[find(i)] = find(j);
    }
  std::map<std::size_t, UtteranceGroup> by_root;
  for (std::size_t i = 0; i < n; ++i) by_root[find(i)].members.push_back(i);
  std::vector<UtteranceGroup> groups;
  for (auto& [root, g] : by_root) {
    std::sort(g.members.begin(), g.members.end(), [&](auto x, auto y) {
      return std::pair(segments[x].start, x) < std::pair(segments[y].start, y);
    });
    g.start = segments[g.members.front()].start;
    g.end = 0;
    for (auto m : g.members) {
      g.start = std::min(g.start, segments[m].start);
      g.end = std::max(g.end, segments[m].end);
      if (std::find(g.speakers.begin(), g.speakers.end(), segments[m].speaker) ==
          g.speakers.end())
        g.speakers.push_back(segments[m].speaker);
    }
    g.overlap = overlap_ratio(g, segments);
    groups.push_back(std::move(g));
  }
  std::sort(groups.begin(), groups.end(), [&](const auto& a, const auto& b) {
    return std::pair(a.start, a.members.front()) <
           std::pair(b.start, b.members.front());
  });
  return groups;
}

double overlap_ratio(const std::vector<Segment>& segments,
                     const std::vector<std::size_t>& members,
                     std::size_t start, std::size_t end) {
  if (end <= start) throw std::invalid_argument("overlap_ratio: empty span");
  // Sweep over clipped boundaries counting active segments.
  std::vector<std::pair<std::size_t, int>> events;
  for (auto m : members) {
    const std::size_t s = std::max(segments[m].start, start);
    const std::size_t e = std::min(segments[m].end, end);
    if (s >= e) continue;
    events.emplace_back(s, +1);
    events.emplace_back(e, -1);
  }
  std::sort(events.begin(), events.end());
  std::size_t multi = 0, prev = start;
  int active = 0;
  for (const auto& [t, delta] : events) {
    if (active >= 2) multi += t - prev;
    active += delta;
    prev = t;
  }
  return static_cast<double>(multi) / static_cast<double>(end - start);
}

double overlap_ratio(const UtteranceGroup& g,
                     const std::vector<Segment>& segments) {
  return overlap_ratio(segments, g.members, g.start, g.end);
}

std::vector<EvalUnit> utterance_units(const std::vector<Mixture>& mixtures) {
  std::vector<EvalUnit> units;
  for (std::size_t mi = 0; mi < mixtures.size(); ++mi) {
    const auto& segs = mixtures[mi].segments;
    std::vector<std::size_t> all(segs.size());
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t s = 0; s < segs.size(); ++s) {
      EvalUnit u;
      u.id = mixtures[mi].id + "/s" + std::to_string(s);
      u.mixture = mi;
      u.start = segs[s].start;
      u.end = segs[s].end;
      u.speakers = {segs[s].speaker};
      u.refs = {segs[s].tokens};
      u.participants = 1;
      u.overlap = overlap_ratio(segs, all, u.start, u.end);
      units.push_back(std::move(u));
    }
  }
  return units;
}

std::vector<EvalUnit> group_units(const std::vector<Mixture>& mixtures,
                                  std::size_t min_slots, bool all_absent) {
  std::vector<EvalUnit> units;
  for (std::size_t mi = 0; mi < mixtures.size(); ++mi) {
    const auto& segs = mixtures[mi].segments;
    std::vector<int> everyone;
    for (const auto& s : segs) everyone.push_back(s.speaker);
    std::sort(everyone.begin(), everyone.end());
    everyone.erase(std::unique(everyone.begin(), everyone.end()), everyone.end());
    const auto groups = build_groups(segs);
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const auto& g = groups[gi];
      EvalUnit u;
      u.id = mixtures[mi].id + "/g" + std::to_string(gi);
      u.mixture = mi;
      u.start = g.start;
      u.end = g.end;
      u.overlap = g.overlap;
      u.speakers = g.speakers;
      for (int spk : g.speakers) {
        TokenSeq ref;
        for (auto m : g.members)
          if (segs[m].speaker == spk)
            ref.insert(ref.end(), segs[m].tokens.begin(), segs[m].tokens.end());
        u.refs.push_back(std::move(ref));
      }
      u.participants = u.speakers.size();
      for (int spk : everyone) {
        if (!all_absent && u.speakers.size() >= min_slots) break;
        if (std::find(u.speakers.begin(), u.speakers.end(), spk) != u.speakers.end())
          continue;
        u.speakers.push_back(spk);
        u.refs.emplace_back();
      }
      units.push_back(std::move(u));
    }
  }
  return units;
}

std::string mode_name(EvalMode m) {
  return m == EvalMode::kUtterance ? "utterance" : "group";
}
EvalMode parse_mode(const std::string& s) {
  if (s == "utterance") return EvalMode::kUtterance;
  if (s == "group") return EvalMode::kGroup;
  throw ConfigError("unknown eval mode '" + s + "' (utterance, group)");
}
std::string decoder_name(Decoder d) {
  switch (d) {
    case Decoder::kBaseline: return "baseline";
    case Decoder::kTseIterative: return "tse-iterative";
    case Decoder::kJsm: return "jsm";
    case Decoder::kPit: return "pit";
  }
  return "?";
}
Decoder parse_decoder(const std::string& s) {
  for (Decoder d : {Decoder::kBaseline, Decoder::kTseIterative, Decoder::kJsm,
                    Decoder::kPit})
    if (decoder_name(d) == s) return d;
  throw ConfigError("unknown decoder '" + s +
                    "' (baseline, tse-iterative, jsm, pit)");
}
std::string metric_name(Metric m) { return m == Metric::kWer ? "wer" : "cpwer"; }
Metric parse_metric(const std::string& s) {
  if (s == "wer") return Metric::kWer;
  if (s == "cpwer") return Metric::kCpwer;
  throw ConfigError("unknown metric '" + s + "' (wer, cpwer)");
}

void EvalConfig::validate(const ModelConfig& model) const {
  const std::string d = decoder_name(decoder);
  auto need = [&](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("decoder " + d + " " + what);
  };
  switch (decoder) {
    case Decoder::kBaseline:
      need(model.head == HeadKind::kCtc && !model.conditioned(),
           "needs an unconditioned ctc checkpoint");
      break;
    case Decoder::kTseIterative:
      need(model.head == HeadKind::kCtc && model.conditioned(),
           "needs a speaker-conditioned ctc checkpoint");
      break;
    case Decoder::kJsm:
      need(model.head == HeadKind::kJsm, "needs a jsm checkpoint");
      need(mode == EvalMode::kGroup, "runs in group mode only");
      break;
    case Decoder::kPit:
      need(model.head == HeadKind::kPit, "needs a pit checkpoint");
      need(mode == EvalMode::kGroup, "runs in group mode only");
      need(metric == Metric::kCpwer, "is scored with cpwer only");
      break;
  }
  if (mode == EvalMode::kUtterance && metric == Metric::kCpwer)
    throw ConfigError("cpwer needs group mode");
}

std::string format_hypothesis(const Hypothesis& h) {
  return h.unit_id + '\t' + std::to_string(h.slot) + '\t' +
         (h.speaker < 0 ? std::string("-") : std::to_string(h.speaker)) + '\t' +
         format_tokens(h.tokens);
}

Hypothesis parse_hypothesis(const std::string& line) {
  std::vector<std::string> f;
  std::istringstream is(line);
  std::string x;
  while (std::getline(is, x, '\t')) f.push_back(x);
  if (f.size() == 3) f.emplace_back();
  if (f.size() != 4) throw FormatError("bad hypothesis line: " + line);
  Hypothesis h;
  h.unit_id = f[0];
  h.slot = std::stoul(f[1]);
  h.speaker = f[2] == "-" ? -1 : std::stoi(f[2]);
  h.tokens = parse_tokens(f[3]);
  return h;
}

namespace {

std::vector<double> crop(const Mixture& mix, const EvalUnit& u) {
  if (mix.samples.size() != mix.length)
    throw std::logic_error("audio of " + mix.id + " is not loaded");
  if (u.end <= u.start || u.end > mix.length)
    throw std::invalid_argument("unit " + u.id + " has an empty or out-of-range span");
  return {mix.samples.begin() + static_cast<std::ptrdiff_t>(u.start),
          mix.samples.begin() + static_cast<std::ptrdiff_t>(u.end)};
}

const std::vector<double>& embedding_of(const EmbeddingTable& emb, int spk) {
  auto it = emb.find(spk);
  if (it == emb.end())
    throw std::invalid_argument("no embedding for speaker " + std::to_string(spk));
  return it->second;
}

}  // namespace

std::vector<Hypothesis> decode_unit(Model& model, const EvalConfig& cfg,
                                    const Mixture& mix, const EvalUnit& unit,
                                    const EmbeddingTable& emb) {
  const auto x = crop(mix, unit);
  std::vector<Hypothesis> out;
  switch (cfg.decoder) {
    case Decoder::kBaseline: {
      const TokenSeq h = greedy_decode(model.infer(x, {})[0]);
      for (std::size_t k = 0; k < unit.speakers.size(); ++k)
        out.push_back({unit.id, k, unit.speakers[k], h});
      break;
    }
    case Decoder::kTseIterative:
      for (std::size_t k = 0; k < unit.speakers.size(); ++k)
        out.push_back({unit.id, k, unit.speakers[k],
                       greedy_decode(model.infer(
                           x, {embedding_of(emb, unit.speakers[k])})[0])});
      break;
    case Decoder::kJsm: {
      const std::size_t K = model.config().num_speakers;
      if (unit.speakers.size() != K)
        throw std::invalid_argument(
            "unit " + unit.id + " has " + std::to_string(unit.speakers.size()) +
            " speakers but the jsm model decodes K = " + std::to_string(K));
      std::vector<std::vector<double>> es;
      for (int s : unit.speakers) es.push_back(embedding_of(emb, s));
      const auto lat = model.infer(x, es);
      for (std::size_t k = 0; k < K; ++k)
        out.push_back({unit.id, k, unit.speakers[k], greedy_decode(lat[k])});
      break;
    }
    case Decoder::kPit: {
      const auto lat = model.infer(x, {});
      for (std::size_t k = 0; k < lat.size(); ++k)
        out.push_back({unit.id, k, -1, greedy_decode(lat[k])});
      break;
    }
  }
  return out;
}

UnitScore score_unit(const EvalConfig& cfg, const EvalUnit& unit,
                     const std::vector<Hypothesis>& hyps) {
  UnitScore us;
  us.overlap = unit.overlap;
  us.record.group_id = unit.id;
  us.record.metric = metric_name(cfg.metric);
  auto ref_of = [&](int spk) -> TokenSeq {
    for (std::size_t k = 0; k < unit.participants; ++k)
      if (unit.speakers[k] == spk) return unit.refs[k];
    return {};
  };
  auto participates = [&](int spk) {
    for (std::size_t k = 0; k < unit.participants; ++k)
      if (unit.speakers[k] == spk) return true;
    return false;
  };
  std::vector<TokenSeq> refs, hs;
  const bool unbound = !hyps.empty() && hyps[0].speaker < 0;
  if (unbound) {
    for (const auto& h : hyps) hs.push_back(h.tokens);
    if (unit.participants > hs.size())
      throw std::invalid_argument("unit " + unit.id + " has " +
                                  std::to_string(unit.participants) +
                                  " speakers but only " +
                                  std::to_string(hs.size()) + " output slots");
    for (std::size_t k = 0; k < hs.size(); ++k)
      refs.push_back(k < unit.participants ? unit.refs[k] : TokenSeq{});
  } else {
    for (const auto& h : hyps) {
      if (!cfg.distractors && !participates(h.speaker)) continue;
      refs.push_back(ref_of(h.speaker));
      hs.push_back(h.tokens);
    }
    // A participating speaker without a hypothesis is scored as all deleted.
    for (std::size_t k = 0; k < unit.participants; ++k) {
      const bool seen = std::any_of(hyps.begin(), hyps.end(), [&](const auto& h) {
        return h.speaker == unit.speakers[k];
      });
      if (!seen) {
        refs.push_back(unit.refs[k]);
        hs.emplace_back();
      }
    }
  }
  if (cfg.metric == Metric::kCpwer) {
    CpwerResult r = cpwer(refs, hs);
    us.record.counts = r.counts;
    us.record.perm = r.perm;
  } else {
    for (std::size_t k = 0; k < refs.size(); ++k)
      us.record.counts += align(refs[k], hs[k]);
  }
  return us;
}

std::vector<EvalUnit> eval_units(const EvalConfig& cfg, const Model& model,
                                 const std::vector<Mixture>& mixtures) {
  if (cfg.mode == EvalMode::kUtterance) return utterance_units(mixtures);
  const std::size_t min_slots =
      cfg.decoder == Decoder::kJsm ? model.config().num_speakers : 0;
  return group_units(mixtures, min_slots, cfg.distractors);
}

std::size_t default_threads() {
  if (const char* env = std::getenv("TSASR_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

EvalResult evaluate(Model& model, const EvalConfig& cfg,
                    const std::vector<Mixture>& mixtures,
                    const EmbeddingTable& emb) {
  cfg.validate(model.config());
  const auto units = eval_units(cfg, model, mixtures);
  std::vector<std::vector<Hypothesis>> hyps(units.size());
  const std::size_t nthreads =
      std::min<std::size_t>(cfg.threads ? cfg.threads : default_threads(),
                            std::max<std::size_t>(units.size(), 1));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto work = [&] {
    for (std::size_t i; (i = next++) < units.size();) {
      try {
        hyps[i] = decode_unit(model, cfg, mixtures[units[i].mixture], units[i], emb);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
        next = units.size();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < nthreads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  EvalResult res;
  for (std::size_t i = 0; i < units.size(); ++i) {
    res.scores.push_back(score_unit(cfg, units[i], hyps[i]));
    res.total += res.scores.back().record.counts;
    res.hyps.insert(res.hyps.end(), hyps[i].begin(), hyps[i].end());
  }
  return res;
}

std::vector<BreakdownBin> breakdown(const std::vector<UnitScore>& scores) {
  std::vector<BreakdownBin> bins(5);
  for (int b = 0; b < 5; ++b) {
    bins[b].lo = 0.2 * b;
    bins[b].hi = 0.2 * (b + 1);
  }
  for (const auto& s : scores) {
    if (!(s.overlap >= 0.0 && s.overlap <= 1.0))
      throw std::invalid_argument("overlap ratio outside [0, 1]");
    // Edges are exact multiples of 0.2 in decimal; compare in fifths.
    const int b = std::min(4, static_cast<int>(std::floor(s.overlap * 5.0 + 1e-12)));
    bins[b].units += 1;
    bins[b].counts += s.record.counts;
  }
  return bins;
}

std::string format_breakdown_table(const std::vector<BreakdownBin>& bins,
                                   const std::string& title) {
  std::ostringstream os;
  os << title << '\n';
  os << std::left << std::setw(12) << "overlap" << std::right << std::setw(7)
     << "units" << std::setw(7) << "N" << std::setw(7) << "S" << std::setw(7)
     << "D" << std::setw(7) << "I" << std::setw(9) << "WER%" << '\n';
  EditCounts all;
  std::size_t units = 0;
  for (const auto& b : bins) {
    char range[32];
    std::snprintf(range, sizeof(range), "%.0f-%.0f%%", 100 * b.lo, 100 * b.hi);
    os << std::left << std::setw(12) << range << std::right << std::setw(7)
       << b.units;
    if (!b.present()) {
      os << std::setw(7) << "-" << std::setw(7) << "-" << std::setw(7) << "-"
         << std::setw(7) << "-" << std::setw(9) << "-" << '\n';
      continue;
    }
    char rate[32];
    std::snprintf(rate, sizeof(rate), "%.2f", 100 * b.counts.rate());
    os << std::setw(7) << b.counts.ref_len << std::setw(7) << b.counts.sub
       << std::setw(7) << b.counts.del << std::setw(7) << b.counts.ins
       << std::setw(9) << rate << '\n';
    all += b.counts;
    units += b.units;
  }
  char rate[32];
  std::snprintf(rate, sizeof(rate), "%.2f", 100 * all.rate());
  os << std::left << std::setw(12) << "all" << std::right << std::setw(7) << units
     << std::setw(7) << all.ref_len << std::setw(7) << all.sub << std::setw(7)
     << all.del << std::setw(7) << all.ins << std::setw(9) << rate << '\n';
  return os.str();
}

// "lo hi units S D I N rate" per bin; absent bins carry "-" counts.
std::string format_breakdown_records(const std::vector<BreakdownBin>& bins) {
  std::ostringstream os;
  for (const auto& b : bins) {
    os << format_double(b.lo) << '\t' << format_double(b.hi) << '\t' << b.units;
    if (b.present())
      os << '\t' << b.counts.sub << '\t' << b.counts.del << '\t' << b.counts.ins
         << '\t' << b.counts.ref_len << '\t' << format_double(b.counts.rate());
    else
      os << "\t-\t-\t-\t-\t-";
    os << '\n';
  }
  return os.str();
}

std::vector<BreakdownBin> parse_breakdown_records(const std::string& text) {
  std::vector<BreakdownBin> bins;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    BreakdownBin b;
    std::string s, d, i, n, r;
    if (!(ls >> b.lo >> b.hi >> b.units >> s >> d >> i >> n >> r))
      throw FormatError("bad breakdown record: " + line);
    if (s != "-") {
      b.counts.sub = std::stoul(s);
      b.counts.del = std::stoul(d);
      b.counts.ins = std::stoul(i);
      b.counts.ref_len = std::stoul(n);
    }
    bins.push_back(b);
  }
  return bins;
}

EvalResult score_hypotheses(const EvalConfig& cfg,
                            const std::vector<Mixture>& mixtures,
                            const std::vector<Hypothesis>& hyps,
                            std::size_t slots) {
  std::vector<EvalUnit> units = cfg.mode == EvalMode::kUtterance
                                    ? utterance_units(mixtures)
                                    : group_units(mixtures, slots, cfg.distractors);
  std::map<std::string, std::vector<Hypothesis>> by_unit;
  for (const auto& h : hyps) by_unit[h.unit_id].push_back(h);
  EvalResult res;
  for (const auto& u : units) {
    auto it = by_unit.find(u.id);
    if (it == by_unit.end())
      throw FormatError("no hypotheses for unit " + u.id);
    auto& hs = it->second;
    std::sort(hs.begin(), hs.end(),
              [](const auto& a, const auto& b) { return a.slot < b.slot; });
    res.scores.push_back(score_unit(cfg, u, hs));
    res.total += res.scores.back().record.counts;
    res.hyps.insert(res.hyps.end(), hs.begin(), hs.end());
    by_unit.erase(it);
  }
  if (!by_unit.empty())
    throw FormatError("hypothesis for unknown unit " + by_unit.begin()->first);
  return res;
}

}  // namespace tsasr
