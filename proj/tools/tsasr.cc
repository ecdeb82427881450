// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: synth, embed, train, eval, score, selftest.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tsasr/binary_io.h"
#include "tsasr/config.h"
#include "tsasr/corpus.h"
#include "tsasr/embedding.h"
#include "tsasr/eval.h"
#include "tsasr/selftest.h"
#include "tsasr/train.h"

namespace fs = std::filesystem;
using namespace tsasr;

namespace {

// Removes whatever a failed subcommand wrote: the whole directory if it did
// not exist before, otherwise only the registered files.
class OutputGuard {
 public:
  explicit OutputGuard(const std::string& dir)
      : dir_(dir), existed_(!dir.empty() && fs::exists(dir)) {}
  ~OutputGuard() {
    if (committed_ || dir_.empty()) return;
    std::error_code ec;
    if (!existed_) {
      fs::remove_all(dir_, ec);
      return;
    }
    for (const auto& f : files_) fs::remove(f, ec);
  }
  void add(const std::string& path) { files_.push_back(path); }
  void commit() { committed_ = true; }

 private:
  std::string dir_;
  bool existed_;
  bool committed_ = false;
  std::vector<std::string> files_;
};

void log(const std::string& msg) { std::cerr << msg << std::endl; }

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> num_train, num_dev, num_test;
};

int run_synth(const SynthArgs& a) {
  CorpusConfig cfg;
  if (!a.config.empty()) cfg = CorpusConfig::from_config(KeyValueConfig::load(a.config));
  if (a.seed) cfg.seed = *a.seed;
  if (a.num_train) cfg.num_train = *a.num_train;
  if (a.num_dev) cfg.num_dev = *a.num_dev;
  if (a.num_test) cfg.num_test = *a.num_test;
  cfg.validate();
  OutputGuard guard(a.out);
  if (fs::exists(CorpusPaths{a.out}.config()))
    throw ConfigError("output directory " + a.out + " already holds a corpus");
  synthesize_corpus(cfg, a.out);
  guard.commit();
  log("wrote corpus to " + a.out);
  return 0;
}

// ---- embed ----------------------------------------------------------------

int run_embed(const std::string& corpus, std::size_t dim, const std::string& out) {
  OutputGuard guard(out);
  const EmbedPaths p{out};
  for (const auto& f : {p.projector(), p.embeddings(), p.raw()}) guard.add(f);
  embed_corpus(corpus, dim, out);
  guard.commit();
  log("wrote " + std::to_string(dim) + "-dim embeddings to " + out);
  return 0;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string config, corpus, embeddings, out, objective, fusion, warm_start;
  std::optional<std::size_t> steps, batch, eval_interval, threads, dev_mixtures,
      embed_dim, model_dim;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  bool cln_shared = false, freeze_frontend = false;
};

int run_train(const TrainArgs& a) {
  KeyValueConfig kv;
  if (!a.config.empty()) kv = KeyValueConfig::load(a.config);
  if (!a.objective.empty()) kv.set("objective", a.objective);
  const Objective obj = parse_objective(kv.get_string("objective", "ctc-tse"));
  const bool conditioned = obj == Objective::kCtcTse || obj == Objective::kJsm;
  if (!a.fusion.empty())
    kv.set("fusion", a.fusion);
  else if (!kv.has("fusion"))
    kv.set("fusion", conditioned ? "cln" : "none");
  if (!a.corpus.empty()) kv.set("corpus", a.corpus);
  if (!a.embeddings.empty()) kv.set("embeddings", a.embeddings);
  if (!a.out.empty()) kv.set("out_dir", a.out);
  if (!a.warm_start.empty()) kv.set("warm_start", a.warm_start);
  if (a.steps) kv.set("max_steps", *a.steps);
  if (a.batch) kv.set("batch_size", *a.batch);
  if (a.eval_interval) kv.set("eval_interval", *a.eval_interval);
  if (a.threads) kv.set("threads", *a.threads);
  if (a.dev_mixtures) kv.set("dev_mixtures", *a.dev_mixtures);
  if (a.model_dim) kv.set("model_dim", *a.model_dim);
  if (a.lr) kv.set("lr", *a.lr);
  if (a.seed) kv.set("seed", static_cast<long long>(*a.seed));
  if (a.cln_shared) kv.set("cln_shared", true);
  if (a.freeze_frontend) kv.set("freeze_frontend", true);
  // The embedding dimension comes from the projector unless stated.
  if (a.embed_dim) kv.set("embed_dim", *a.embed_dim);
  if (conditioned && !kv.has("embed_dim") && kv.has("embeddings")) {
    const std::string proj = EmbedPaths{kv.get_string("embeddings")}.projector();
    if (!fs::exists(proj)) throw ConfigError("missing embedding file " + proj);
    kv.set("embed_dim", Projector::load(proj).target_dim());
  }
  const TrainConfig cfg = TrainConfig::from_config(kv);
  OutputGuard guard(cfg.out_dir);
  const TrainPaths p{cfg.out_dir};
  for (const auto& f : {p.config(), p.runlog(), p.checkpoint()}) guard.add(f);
  const RunLog rl = run_training(cfg, log);
  guard.commit();
  log("wrote " + p.checkpoint());
  return rl.steps.empty() ? 1 : 0;
}

// ---- eval / score ---------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, corpus, split = "test", embeddings, out, mode, decoder,
      metric, hyps, fusion, head;
  std::optional<std::size_t> threads, embed_dim, num_speakers;
  bool distractors = false, breakdown = false;
};

EvalConfig eval_config(const EvalArgs& a, const ModelConfig& mc) {
  if (!a.fusion.empty() && parse_fusion(a.fusion) != mc.fusion.kind)
    throw ConfigError("--fusion " + a.fusion + " contradicts the checkpoint (" +
                      fusion_name(mc.fusion.kind) + ")");
  if (!a.head.empty() && parse_head(a.head) != mc.head)
    throw ConfigError("--head " + a.head + " contradicts the checkpoint (" +
                      head_name(mc.head) + ")");
  if (a.embed_dim && mc.conditioned() && *a.embed_dim != mc.fusion.embed_dim)
    throw ConfigError("--embed-dim contradicts the checkpoint (" +
                      std::to_string(mc.fusion.embed_dim) + ")");
  if (a.num_speakers && mc.head != HeadKind::kCtc && *a.num_speakers != mc.num_speakers)
    throw ConfigError("--num-speakers contradicts the checkpoint (" +
                      std::to_string(mc.num_speakers) + ")");
  EvalConfig c;
  switch (mc.head) {
    case HeadKind::kCtc:
      c.decoder = mc.conditioned() ? Decoder::kTseIterative : Decoder::kBaseline;
      break;
    case HeadKind::kJsm:
      c.decoder = Decoder::kJsm;
      c.mode = EvalMode::kGroup;
      break;
    case HeadKind::kPit:
      c.decoder = Decoder::kPit;
      c.mode = EvalMode::kGroup;
      c.metric = Metric::kCpwer;
      break;
  }
  if (!a.decoder.empty()) c.decoder = parse_decoder(a.decoder);
  if (!a.mode.empty()) c.mode = parse_mode(a.mode);
  if (!a.metric.empty()) c.metric = parse_metric(a.metric);
  c.distractors = a.distractors;
  c.threads = a.threads.value_or(0);
  c.validate(mc);
  return c;
}

std::string summary_line(const EvalConfig& c, const EvalResult& r) {
  char rate[64];
  std::snprintf(rate, sizeof(rate), "%.2f", 100 * r.total.rate());
  std::ostringstream os;
  os << mode_name(c.mode) << ' ' << decoder_name(c.decoder) << ' '
     << metric_name(c.metric) << ' ' << rate << "% (S " << r.total.sub << " D "
     << r.total.del << " I " << r.total.ins << " N " << r.total.ref_len << ", "
     << r.scores.size() << " units)";
  return os.str();
}

void write_results(const std::string& out, OutputGuard& guard, const EvalConfig& c,
                   const EvalResult& r, bool hyps, bool bd) {
  fs::create_directories(out);
  auto put = [&](const std::string& name, const std::string& text) {
    guard.add(out + "/" + name);
    write_file_atomic(out + "/" + name, text);
  };
  if (hyps) {
    std::string h;
    for (const auto& x : r.hyps) h += format_hypothesis(x) + '\n';
    put("hyps.tsv", h);
  }
  std::string s;
  for (const auto& u : r.scores)
    s += format_score_record(u.record) + '\t' + format_double(u.overlap) + '\n';
  put("scores.tsv", s);
  put("summary.txt", summary_line(c, r) + '\n');
  if (bd) {
    const auto bins = breakdown(r.scores);
    put("breakdown.tsv", format_breakdown_records(bins));
    put("breakdown.txt", format_breakdown_table(bins, summary_line(c, r)));
  }
}

std::vector<Mixture> load_manifest(const std::string& corpus, const std::string& split,
                                   bool audio) {
  const std::string path = CorpusPaths{corpus}.manifest(split);
  if (!fs::exists(path)) throw ConfigError("missing manifest " + path);
  auto m = read_manifest(path);
  if (audio)
    for (auto& x : m) load_audio(x, path);
  return m;
}

int run_eval(const EvalArgs& a) {
  const ModelConfig mc = Model::peek_config(a.checkpoint);
  const EvalConfig c = eval_config(a, mc);
  EmbeddingTable emb;
  if (mc.conditioned()) {
    if (a.embeddings.empty()) throw ConfigError("this checkpoint needs --embeddings");
    emb = read_embeddings(EmbedPaths{a.embeddings}.embeddings());
    for (const auto& [spk, e] : emb)
      if (e.size() != mc.fusion.embed_dim)
        throw ConfigError("embeddings in " + a.embeddings + " have dim " +
                          std::to_string(e.size()) + " but the checkpoint expects " +
                          std::to_string(mc.fusion.embed_dim));
  }
  Model model = Model::load(a.checkpoint);
  const auto mixes = load_manifest(a.corpus, a.split, true);
  OutputGuard guard(a.out);
  const EvalResult r = evaluate(model, c, mixes, emb);
  if (!a.out.empty()) write_results(a.out, guard, c, r, true, a.breakdown);
  guard.commit();
  std::cout << summary_line(c, r) << '\n';
  if (a.breakdown) std::cout << format_breakdown_table(breakdown(r.scores), "breakdown");
  return 0;
}

int run_score(const EvalArgs& a) {
  EvalConfig c;
  c.mode = a.mode.empty() ? EvalMode::kGroup : parse_mode(a.mode);
  c.metric = a.metric.empty() ? Metric::kWer : parse_metric(a.metric);
  c.distractors = a.distractors;
  if (c.mode == EvalMode::kUtterance && c.metric == Metric::kCpwer)
    throw ConfigError("cpwer needs group mode");
  std::ifstream is(a.hyps);
  if (!is) throw std::runtime_error("cannot open " + a.hyps);
  std::vector<Hypothesis> hyps;
  std::map<std::string, std::size_t> per_unit;
  for (std::string line; std::getline(is, line);) {
    if (line.empty()) continue;
    hyps.push_back(parse_hypothesis(line));
    ++per_unit[hyps.back().unit_id];
  }
  std::size_t slots = 0;
  for (const auto& [u, n] : per_unit) slots = std::max(slots, n);
  const auto mixes = load_manifest(a.corpus, a.split, false);
  const EvalResult r = score_hypotheses(c, mixes, hyps, slots);
  OutputGuard guard(a.out);
  if (!a.out.empty()) write_results(a.out, guard, c, r, false, a.breakdown);
  guard.commit();
  std::cout << summary_line(c, r) << '\n';
  if (a.breakdown) std::cout << format_breakdown_table(breakdown(r.scores), "breakdown");
  return 0;
}

// ---- selftest -------------------------------------------------------------

int run_selftest(std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : selftest::run_all(seed)) {
    std::printf("%s %-20s %6.2fs  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                r.seconds, r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tsasr: target-speaker ASR toolkit on synthetic mixtures"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("--config", sa.config, "corpus config file")->check(CLI::ExistingFile);
  synth->add_option("--out", sa.out, "output directory")->required();
  synth->add_option("--seed", sa.seed, "master seed");
  synth->add_option("--num-train", sa.num_train);
  synth->add_option("--num-dev", sa.num_dev);
  synth->add_option("--num-test", sa.num_test);

  std::string ecorpus, eout;
  std::size_t edim = 64;
  auto* embed = app.add_subcommand("embed", "speaker embeddings and PCA projector");
  embed->add_option("--corpus", ecorpus, "corpus directory")->required()->check(CLI::ExistingDirectory);
  embed->add_option("--dim", edim, "embedding dimension d");
  embed->add_option("--out", eout, "output directory")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", ta.config, "train config file")->check(CLI::ExistingFile);
  train->add_option("--corpus", ta.corpus, "corpus directory");
  train->add_option("--embeddings", ta.embeddings, "embedding directory");
  train->add_option("--out", ta.out, "output directory");
  train->add_option("--objective", ta.objective, "ctc-baseline | ctc-tse | pit | jsm")
      ->check(CLI::IsMember({"ctc-baseline", "ctc-tse", "pit", "jsm"}));
  train->add_option("--fusion", ta.fusion, "none | add | cat | film | cln")
      ->check(CLI::IsMember({"none", "add", "cat", "film", "cln"}));
  train->add_option("--warm-start", ta.warm_start, "checkpoint to initialize from")
      ->check(CLI::ExistingFile);
  train->add_option("--steps", ta.steps);
  train->add_option("--batch-size", ta.batch);
  train->add_option("--eval-interval", ta.eval_interval);
  train->add_option("--dev-mixtures", ta.dev_mixtures);
  train->add_option("--threads", ta.threads);
  train->add_option("--embed-dim", ta.embed_dim);
  train->add_option("--model-dim", ta.model_dim);
  train->add_option("--lr", ta.lr);
  train->add_option("--seed", ta.seed);
  train->add_flag("--cln-shared", ta.cln_shared, "one cln weight pair for both norms");
  train->add_flag("--freeze-frontend", ta.freeze_frontend, "keep conv frontend fixed");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "decode and score a split");
  eval->add_option("--checkpoint", ea.checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--corpus", ea.corpus)->required()->check(CLI::ExistingDirectory);
  eval->add_option("--split", ea.split, "train | dev | test");
  eval->add_option("--embeddings", ea.embeddings, "embedding directory");
  eval->add_option("--out", ea.out, "output directory");
  eval->add_option("--mode", ea.mode, "utterance | group");
  eval->add_option("--decoder", ea.decoder, "baseline | tse-iterative | jsm | pit");
  eval->add_option("--metric", ea.metric, "wer | cpwer");
  eval->add_option("--threads", ea.threads);
  eval->add_option("--fusion", ea.fusion, "must match the checkpoint");
  eval->add_option("--head", ea.head, "must match the checkpoint");
  eval->add_option("--embed-dim", ea.embed_dim, "must match the checkpoint");
  eval->add_option("--num-speakers", ea.num_speakers, "must match the checkpoint");
  eval->add_flag("--distractors", ea.distractors, "also decode absent mixture speakers");
  eval->add_flag("--breakdown", ea.breakdown, "overlap-ratio WER table");

  EvalArgs sc;
  auto* score = app.add_subcommand("score", "score a hypothesis file offline");
  score->add_option("--corpus", sc.corpus)->required()->check(CLI::ExistingDirectory);
  score->add_option("--split", sc.split);
  score->add_option("--hyps", sc.hyps)->required()->check(CLI::ExistingFile);
  score->add_option("--mode", sc.mode, "utterance | group");
  score->add_option("--metric", sc.metric, "wer | cpwer");
  score->add_option("--out", sc.out, "output directory");
  score->add_flag("--distractors", sc.distractors);
  score->add_flag("--breakdown", sc.breakdown);

  std::uint64_t st_seed = 1;
  auto* selftest = app.add_subcommand("selftest", "run the oracle suites");
  selftest->add_option("--seed", st_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands()[0];
    std::cerr << sub->help();
    return 2;
  }

  try {
    if (*synth) return run_synth(sa);
    if (*embed) return run_embed(ecorpus, edim, eout);
    if (*train) return run_train(ta);
    if (*eval) return run_eval(ea);
    if (*score) return run_score(sc);
    if (*selftest) return run_selftest(st_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
