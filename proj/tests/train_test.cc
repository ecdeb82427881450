// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "test_util.h"
#include "tsasr/embedding.h"
#include "tsasr/train.h"

using namespace tsasr;

namespace {

// One-mixture corpus with eight enrolled speakers and 4-dim embeddings.
struct Fixture {
  std::string corpus, emb;
  TrainData data;

  explicit Fixture(const std::string& name, std::size_t num_train = 1) {
    const std::string root = tsasr::testing::scratch_dir(name);
    corpus = root + "/corpus";
    emb = root + "/emb";
    CorpusConfig c;
    c.seed = 3;
    c.num_speakers = 8;
    c.num_train = num_train;
    c.num_dev = 2;
    c.num_test = 1;
    synthesize_corpus(c, corpus);
    embed_corpus(corpus, 4, emb);
    data.train = load_split(corpus, "train");
    data.dev = load_split(corpus, "dev");
    data.embeddings = read_embeddings(EmbedPaths{emb}.embeddings());
  }
};

TrainConfig small_config(Objective o, const Fixture& f, const std::string& out) {
  TrainConfig c;
  c.objective = o;
  c.corpus_dir = f.corpus;
  c.embed_dir = f.emb;
  c.out_dir = out;
  c.model.encoder.model_dim = 16;
  c.model.encoder.ff_dim = 32;
  c.model.encoder.conv = {{16, 16, 2}, {16, 4, 2}, {16, 4, 2}};
  c.model.fusion.embed_dim = 4;
  const bool cond = o == Objective::kCtcTse || o == Objective::kJsm;
  c.model.fusion.kind = cond ? FusionKind::kCln : FusionKind::kNone;
  c.model.head = o == Objective::kPit   ? HeadKind::kPit
                 : o == Objective::kJsm ? HeadKind::kJsm
                                        : HeadKind::kCtc;
  c.batch_size = 4;
  c.max_steps = 20;
  c.eval_interval = 10;
  c.threads = 1;
  return c;
}

}  // namespace

TEST_CASE("adam first step moves each weight by lr against the gradient sign") {
  ParameterStore store;
  store.add("a", ad::Array::vector({1.0, -2.0}));
  store.add("b", ad::Array::vector({0.5}));
  store.get("b").frozen = true;
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.clip_norm = 0.0;
  Adam adam(store, cfg);
  std::vector<double> g{3.0, -0.5, 7.0};
  CHECK(adam.step(g) == doctest::Approx(std::sqrt(9.0 + 0.25)));
  CHECK(store.get("a").value[0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(store.get("a").value[1] == doctest::Approx(-1.9).epsilon(1e-7));
  CHECK(store.get("b").value[0] == 0.5);  // frozen

  // Clipping rescales the whole gradient; the first Adam step is scale-free,
  // so compare the second moments through a second step instead.
  ParameterStore s2;
  s2.add("a", ad::Array::vector({0.0}));
  AdamConfig c2;
  c2.clip_norm = 1.0;
  Adam clipped(s2, c2);
  std::vector<double> big{10.0};
  CHECK(clipped.step(big) == doctest::Approx(10.0));
  std::vector<double> bad{1.0, 2.0};
  CHECK_THROWS(clipped.step(bad));
}

TEST_CASE("train config round trip and validation") {
  TrainConfig c;
  c.corpus_dir = "c";
  c.embed_dir = "e";
  c.out_dir = "o";
  c.model.fusion.kind = FusionKind::kFilm;
  c.adam.lr = 3e-4;
  c.seed = 77;
  c.tse_group_examples = false;
  KeyValueConfig kv;
  c.to_config(kv);
  const TrainConfig back = TrainConfig::from_config(kv);
  KeyValueConfig kv2;
  back.to_config(kv2);
  CHECK(kv.to_string() == kv2.to_string());
  CHECK_NOTHROW(back.validate());

  TrainConfig bad = c;
  bad.objective = Objective::kCtcBaseline;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.max_steps = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.embed_dir.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  kv.set("learning_rate", 0.1);
  CHECK_THROWS_AS(TrainConfig::from_config(kv), ConfigError);
}

TEST_CASE("training examples per objective") {
  Fixture f("train_examples", 3);
  const std::size_t segs = 6;
  CHECK(training_examples(Objective::kCtcBaseline, f.data.train, 2).size() == segs);
  const auto groups = group_units(f.data.train, 0, false);
  std::size_t multi = 0;
  for (const auto& g : groups) multi += g.participants > 1 ? g.participants : 0;
  CHECK(training_examples(Objective::kCtcTse, f.data.train, 2, true).size() ==
        segs + multi);
  const auto jsm = training_examples(Objective::kJsm, f.data.train, 2);
  CHECK(jsm.size() == groups.size());
  for (const auto& ex : jsm) {
    CHECK(ex.speakers.size() == 2);
    CHECK(ex.refs.size() == 2);
  }
}

TEST_CASE("memorizing one mixture cuts the loss by 90 percent") {
  Fixture f("train_memorize");
  for (Objective o : {Objective::kCtcTse, Objective::kCtcBaseline}) {
    TrainConfig c = small_config(o, f, "");
    c.max_steps = 200;
    c.eval_interval = 0;
    c.model.encoder = EncoderConfig{};
    Model m(c.model, 1);
    const RunLog log = train(m, c, f.data);
    REQUIRE(log.steps.size() == 200);
    CAPTURE(objective_name(o));
    CHECK(log.steps.back().loss <= 0.1 * log.steps.front().loss);
  }
}

TEST_CASE("training is deterministic and thread-count independent") {
  Fixture f("train_determinism", 2);
  for (Objective o : {Objective::kCtcTse, Objective::kJsm, Objective::kPit}) {
    CAPTURE(objective_name(o));
    TrainConfig c = small_config(o, f, "");
    Model a(c.model, 5), b(c.model, 5), d(c.model, 5);
    const RunLog la = train(a, c, f.data);
    const RunLog lb = train(b, c, f.data);
    c.threads = 3;
    const RunLog ld = train(d, c, f.data);
    CHECK(la.format(false) == lb.format(false));
    CHECK(la.format(false) == ld.format(false));
    CHECK(a.serialize() == b.serialize());
    CHECK(a.serialize() == d.serialize());
    CHECK(la.evals.size() == 2);
  }
}

TEST_CASE("zero step size keeps the loss constant") {
  Fixture f("train_lr0");
  TrainConfig c = small_config(Objective::kCtcTse, f, "");
  c.adam.lr = 0.0;
  c.eval_interval = 0;
  Model m(c.model, 2);
  const std::string before = m.serialize();
  const RunLog log = train(m, c, f.data);
  for (const auto& s : log.steps)
    CHECK(s.loss == doctest::Approx(log.steps[0].loss).epsilon(1e-12));
  CHECK(m.serialize() == before);
}

TEST_CASE("frozen frontend is never updated") {
  Fixture f("train_freeze");
  TrainConfig c = small_config(Objective::kCtcTse, f, "");
  c.model.freeze_frontend = true;
  Model m(c.model, 2);
  const ParameterStore before = m.params();
  train(m, c, f.data);
  std::size_t frozen = 0, moved = 0;
  for (const auto& [path, p] : m.params().all()) {
    const bool same = p.value.storage() == before.get(path).value.storage();
    if (path.rfind("encoder.conv.", 0) == 0) {
      ++frozen;
      CHECK(same);
    } else if (!same) {
      ++moved;
    }
  }
  CHECK(frozen == 6);
  CHECK(moved > 0);
}

TEST_CASE("divergence guard names the step and the examples") {
  Fixture f("train_diverge");
  TrainConfig c = small_config(Objective::kCtcTse, f, "");
  Model m(c.model, 2);
  m.params().get("head.out.bias").value[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train(m, c, f.data);
    FAIL("expected TrainDivergence");
  } catch (const TrainDivergence& e) {
    const std::string msg = e.what();
    CHECK(msg.find("step 1") != std::string::npos);
    CHECK(msg.find(f.data.train[0].id) != std::string::npos);
  }
}

TEST_CASE("run_training writes its outputs and checks its inputs") {
  Fixture f("train_run");
  const std::string out = tsasr::testing::scratch_dir("train_run_out") + "/m";
  TrainConfig c = small_config(Objective::kCtcTse, f, out);
  run_training(c);
  const TrainPaths p{out};
  CHECK(std::filesystem::exists(p.checkpoint()));
  CHECK(std::filesystem::exists(p.runlog()));
  const TrainConfig back = TrainConfig::from_config(KeyValueConfig::load(p.config()));
  CHECK(back.seed == c.seed);
  CHECK(Model::peek_config(p.checkpoint()).fusion.embed_dim == 4);

  TrainConfig wrong_dim = c;
  wrong_dim.model.fusion.embed_dim = 5;
  CHECK_THROWS_AS(run_training(wrong_dim), ConfigError);
  TrainConfig no_corpus = c;
  no_corpus.corpus_dir = out + "/nowhere";
  CHECK_THROWS_AS(run_training(no_corpus), ConfigError);
  TrainConfig vocab = c;
  vocab.model.encoder.vocab_size = 5;
  CHECK_THROWS_AS(run_training(vocab), ConfigError);

  // JSM warm-started from the TSE checkpoint copies the shared encoder.
  TrainConfig j = small_config(Objective::kJsm, f, out + "_jsm");
  j.warm_start = p.checkpoint();
  j.max_steps = 1;
  CHECK_NOTHROW(run_training(j));
}
