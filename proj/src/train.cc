// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "tsasr/train.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "tsasr/binary_io.h"
#include "tsasr/config.h"
#include "tsasr/embedding.h"
#include "tsasr/objectives.h"
#include "tsasr/rng.h"

namespace tsasr {

namespace fs = std::filesystem;

std::string objective_name(Objective o) {
  switch (o) {
    case Objective::kCtcBaseline: return "ctc-baseline";
    case Objective::kCtcTse: return "ctc-tse";
    case Objective::kPit: return "pit";
    case Objective::kJsm: return "jsm";
  }
  return "?";
}

Objective parse_objective(const std::string& s) {
  for (Objective o : {Objective::kCtcBaseline, Objective::kCtcTse,
                      Objective::kPit, Objective::kJsm})
    if (objective_name(o) == s) return o;
  throw ConfigError("unknown objective '" + s +
                    "' (ctc-baseline, ctc-tse, pit, jsm)");
}

void TrainConfig::validate() const {
  ModelConfig m = model;
  m.fusion.model_dim = m.encoder.model_dim;  // derived, as in Model
  m.validate();
  const std::string o = objective_name(objective);
  const bool cond = model.conditioned();
  switch (objective) {
    case Objective::kCtcBaseline:
      if (model.head != HeadKind::kCtc || cond)
        throw ConfigError(o + " needs a ctc head without fusion");
      break;
    case Objective::kCtcTse:
      if (model.head != HeadKind::kCtc || !cond)
        throw ConfigError(o + " needs a ctc head with a fusion variant");
      break;
    case Objective::kPit:
      if (model.head != HeadKind::kPit || cond)
        throw ConfigError(o + " needs a pit head without fusion");
      break;
    case Objective::kJsm:
      if (model.head != HeadKind::kJsm || !cond)
        throw ConfigError(o + " needs a jsm head with a fusion variant");
      break;
  }
  if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(adam.lr >= 0.0) || !std::isfinite(adam.lr))
    throw ConfigError("lr must be finite and >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) ||
      !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw ConfigError("moment decays must lie in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (!(adam.clip_norm >= 0.0)) throw ConfigError("clip_norm must be >= 0");
  if (corpus_dir.empty()) throw ConfigError("corpus directory not set");
  if (out_dir.empty()) throw ConfigError("output directory not set");
  if (cond && embed_dir.empty())
    throw ConfigError(o + " needs an embedding directory");
}

void TrainConfig::to_config(KeyValueConfig& kv) const {
  model.to_config(kv);
  kv.set("objective", objective_name(objective));
  kv.set("corpus", corpus_dir);
  kv.set("embeddings", embed_dir);
  kv.set("out_dir", out_dir);
  kv.set("warm_start", warm_start);
  kv.set("lr", adam.lr);
  kv.set("beta1", adam.beta1);
  kv.set("beta2", adam.beta2);
  kv.set("adam_eps", adam.eps);
  kv.set("clip_norm", adam.clip_norm);
  kv.set("batch_size", batch_size);
  kv.set("max_steps", max_steps);
  kv.set("eval_interval", eval_interval);
  kv.set("dev_mixtures", dev_mixtures);
  kv.set("seed", static_cast<long long>(seed));
  kv.set("threads", threads);
  kv.set("tse_group_examples", tse_group_examples);
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& kv) {
  kv.check_keys({"model_dim", "num_blocks", "num_heads", "ff_dim", "conv_layers",
                 "vocab_size", "positional", "fusion", "embed_dim", "cln_shared",
                 "head", "num_speakers", "freeze_frontend", "objective", "corpus",
                 "embeddings", "out_dir", "warm_start", "lr", "beta1", "beta2",
                 "adam_eps", "clip_norm", "batch_size", "max_steps",
                 "eval_interval", "dev_mixtures", "seed", "threads",
                 "tse_group_examples"},
                "train config");
  TrainConfig c;
  c.objective = parse_objective(kv.get_string("objective", "ctc-tse"));
  KeyValueConfig mkv = kv;
  if (!kv.has("head"))
    mkv.set("head", c.objective == Objective::kPit   ? "pit"
                    : c.objective == Objective::kJsm ? "jsm"
                                                     : "ctc");
  c.model = ModelConfig::from_config(mkv);
  c.corpus_dir = kv.get_string("corpus", "");
  c.embed_dir = kv.get_string("embeddings", "");
  c.out_dir = kv.get_string("out_dir", "");
  c.warm_start = kv.get_string("warm_start", "");
  c.adam.lr = kv.get_double("lr", c.adam.lr);
  c.adam.beta1 = kv.get_double("beta1", c.adam.beta1);
  c.adam.beta2 = kv.get_double("beta2", c.adam.beta2);
  c.adam.eps = kv.get_double("adam_eps", c.adam.eps);
  c.adam.clip_norm = kv.get_double("clip_norm", c.adam.clip_norm);
  auto count = [&](const char* key, std::size_t fallback) -> std::size_t {
    const long long v = kv.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError(std::string(key) + " must be >= 0");
    return static_cast<std::size_t>(v);
  };
  c.batch_size = count("batch_size", c.batch_size);
  c.max_steps = count("max_steps", c.max_steps);
  c.eval_interval = count("eval_interval", c.eval_interval);
  c.dev_mixtures = count("dev_mixtures", c.dev_mixtures);
  c.seed = count("seed", c.seed);
  c.threads = count("threads", c.threads);
  c.tse_group_examples = kv.get_bool("tse_group_examples", c.tse_group_examples);
  return c;
}

std::vector<TrainExample> training_examples(Objective o,
                                            const std::vector<Mixture>& mixes,
                                            std::size_t num_speakers,
                                            bool tse_groups) {
  const bool grouped = o == Objective::kPit || o == Objective::kJsm;
  const auto units = grouped ? group_units(mixes, num_speakers, false)
                             : utterance_units(mixes);
  std::vector<TrainExample> out;
  for (const auto& u : units) {
    if (grouped && u.speakers.size() > num_speakers)
      throw std::invalid_argument("group " + u.id + " has " +
                                  std::to_string(u.speakers.size()) +
                                  " speakers; the model decodes K = " +
                                  std::to_string(num_speakers));
    out.push_back({u.id, u.mixture, u.start, u.end, u.speakers, u.refs});
  }
  if (o == Objective::kCtcTse && tse_groups)
    for (const auto& g : group_units(mixes, 0, false)) {
      if (g.participants < 2) continue;
      for (std::size_t k = 0; k < g.participants; ++k)
        out.push_back({g.id + "/" + std::to_string(g.speakers[k]), g.mixture,
                       g.start, g.end, {g.speakers[k]}, {g.refs[k]}});
    }
  return out;
}

std::string RunLog::format(bool with_times) const {
  std::ostringstream os;
  std::size_t e = 0;
  auto put_eval = [&](const EvalRecord& r) {
    os << "eval\t" << r.step << '\t' << r.metric << '\t' << r.counts.errors()
       << '\t' << r.counts.ref_len << '\t' << format_double(r.counts.rate());
    if (with_times) os << '\t' << format_double(r.seconds);
    os << '\n';
  };
  for (const auto& s : steps) {
    os << "step\t" << s.step << '\t' << format_double(s.loss);
    if (with_times) os << '\t' << format_double(s.seconds);
    os << '\n';
    while (e < evals.size() && evals[e].step == s.step) put_eval(evals[e++]);
  }
  while (e < evals.size()) put_eval(evals[e++]);
  return os.str();
}

Adam::Adam(ParameterStore& store, const AdamConfig& cfg)
    : store_(store), cfg_(cfg) {
  m_.assign(store.num_values(), 0.0);
  v_.assign(store.num_values(), 0.0);
}

double Adam::step(std::vector<double>& grads) {
  if (grads.size() != m_.size())
    throw std::invalid_argument("gradient size does not match the store");
  double sq = 0.0;
  std::size_t off = 0;
  for (const auto& [path, p] : store_.all()) {
    if (!p.frozen)
      for (std::size_t i = 0; i < p.value.size(); ++i)
        sq += grads[off + i] * grads[off + i];
    off += p.value.size();
  }
  const double norm = std::sqrt(sq);
  const double clip =
      cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  off = 0;
  for (auto& [path, p] : store_.all()) {
    const std::size_t n = p.value.size();
    if (!p.frozen) {
      double* w = p.value.data();
      for (std::size_t i = 0; i < n; ++i) {
        const double g = grads[off + i] * clip;
        double& m = m_[off + i];
        double& v = v_[off + i];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
        w[i] -= cfg_.lr * (m / c1) / (std::sqrt(v / c2) + cfg_.eps);
      }
    }
    off += n;
  }
  return norm;
}

namespace {

std::vector<Var> example_lattices(Model& model, Binder& bind,
                                  const TrainExample& ex, const Mixture& mix,
                                  const EmbeddingTable& emb) {
  const std::span<const double> x(mix.samples.data() + ex.start, ex.end - ex.start);
  std::vector<Var> es;
  if (model.config().conditioned()) {
    const std::size_t n = model.config().head == HeadKind::kJsm ? ex.speakers.size() : 1;
    for (std::size_t k = 0; k < n; ++k) {
      auto it = emb.find(ex.speakers[k]);
      if (it == emb.end())
        throw std::invalid_argument("no embedding for speaker " +
                                    std::to_string(ex.speakers[k]));
      es.push_back(bind.tape().constant(Array({1, it->second.size()}, it->second)));
    }
  }
  return model.forward(bind, x, es);
}

Var example_loss(Objective o, std::span<const Var> lat, const TrainExample& ex) {
  switch (o) {
    case Objective::kPit: return pit_loss(lat, ex.refs).loss;
    case Objective::kJsm: return jsm_loss(lat, ex.refs);
    default: return ctc_loss(lat[0], ex.refs[0]);
  }
}

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

double batch_gradient(Model& model, Objective o,
                      const std::vector<const TrainExample*>& batch,
                      const std::vector<Mixture>& mixes,
                      const EmbeddingTable& emb, std::size_t threads,
                      std::vector<double>& grads) {
  ParameterStore& store = model.params();
  std::unordered_map<const ad::Parameter*, std::size_t> offset;
  std::size_t total = 0;
  for (const auto& [path, p] : store.all()) {
    offset[&p] = total;
    total += p.value.size();
  }
  const std::size_t B = batch.size();
  std::vector<double> losses(B, 0.0);
  std::vector<std::vector<double>> per(B);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  auto work = [&] {
    for (std::size_t i; (i = next++) < B;) {
      try {
        const TrainExample& ex = *batch[i];
        ad::Tape tape;
        tape.set_accumulate_params(false);
        Binder bind(tape, store);
        const auto lat = example_lattices(model, bind, ex, mixes[ex.mixture], emb);
        const Var loss = example_loss(o, lat, ex);
        losses[i] = tape.value(loss)[0];
        per[i].assign(total, 0.0);
        if (!std::isfinite(losses[i])) continue;
        tape.backward(loss);
        for (const auto& [p, g] : tape.parameter_grads())
          std::copy(g->data(), g->data() + g->size(), per[i].begin() + offset.at(p));
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
        next = B;
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t n = std::min(std::max<std::size_t>(threads, 1), B);
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);

  std::string bad;
  for (std::size_t i = 0; i < B; ++i)
    if (!std::isfinite(losses[i]) || !all_finite(per[i]))
      bad += (bad.empty() ? "" : ", ") + batch[i]->id;
  if (!bad.empty()) throw TrainDivergence("non-finite loss or gradient in " + bad);

  grads.assign(total, 0.0);
  double mean = 0.0;
  const double inv = 1.0 / static_cast<double>(B);
  for (std::size_t i = 0; i < B; ++i) {
    mean += losses[i] * inv;
    for (std::size_t j = 0; j < total; ++j) grads[j] += per[i][j] * inv;
  }
  return mean;
}

namespace {

// Shuffled epochs; windows of 16 batches are sorted by span length and cut
// into batches, and batch order is shuffled again.
class BatchSource {
 public:
  BatchSource(const std::vector<TrainExample>& ex, std::size_t batch,
              std::uint64_t seed)
      : ex_(ex), batch_(batch), seed_(seed) {}

  std::vector<const TrainExample*> next() {
    if (pos_ == batches_.size()) refill();
    return batches_[pos_++];
  }

 private:
  void refill() {
    Rng rng(derive_seed(seed_, "epoch", epoch_++));
    std::vector<std::size_t> order(ex_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, rng);
    batches_.clear();
    pos_ = 0;
    const std::size_t window = batch_ * 16;
    for (std::size_t w = 0; w < order.size(); w += window) {
      auto b = order.begin() + static_cast<std::ptrdiff_t>(w);
      auto e = order.begin() +
               static_cast<std::ptrdiff_t>(std::min(order.size(), w + window));
      std::stable_sort(b, e, [&](std::size_t x, std::size_t y) {
        return ex_[x].end - ex_[x].start < ex_[y].end - ex_[y].start;
      });
    }
    for (std::size_t i = 0; i < order.size(); i += batch_) {
      std::vector<const TrainExample*> bt;
      for (std::size_t j = i; j < std::min(order.size(), i + batch_); ++j)
        bt.push_back(&ex_[order[j]]);
      batches_.push_back(std::move(bt));
    }
    shuffle(batches_, rng);
  }

  template <typename T>
  static void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform_int(0, i - 1))]);
  }

  const std::vector<TrainExample>& ex_;
  std::size_t batch_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::vector<const TrainExample*>> batches_;
  std::size_t pos_ = 0;
};

EvalConfig dev_eval_config(Objective o, std::size_t threads) {
  EvalConfig c;
  c.threads = threads;
  switch (o) {
    case Objective::kCtcBaseline:
      c.decoder = Decoder::kBaseline;
      break;
    case Objective::kCtcTse:
      c.decoder = Decoder::kTseIterative;
      break;
    case Objective::kPit:
      c.mode = EvalMode::kGroup;
      c.decoder = Decoder::kPit;
      c.metric = Metric::kCpwer;
      break;
    case Objective::kJsm:
      c.mode = EvalMode::kGroup;
      c.decoder = Decoder::kJsm;
      break;
  }
  return c;
}

}  // namespace

RunLog train(Model& model, const TrainConfig& cfg, const TrainData& data,
             const std::function<void(const Model&, std::size_t)>& on_checkpoint,
             const ProgressFn& progress) {
  const ModelConfig& mc = model.config();
  const std::size_t threads = cfg.threads ? cfg.threads : default_threads();
  // Spans too short for the frontend or for their references are dropped.
  std::vector<TrainExample> examples;
  std::size_t dropped = 0;
  for (auto& ex : training_examples(cfg.objective, data.train, mc.num_speakers,
                                        cfg.tse_group_examples)) {
    const std::size_t len = ex.end - ex.start;
    bool ok = len >= mc.encoder.receptive_field();
    if (ok) {
      const std::size_t T = mc.encoder.num_frames(len);
      for (const auto& r : ex.refs) ok = ok && ctc_min_frames(r) <= T;
    }
    if (ok)
      examples.push_back(std::move(ex));
    else
      ++dropped;
  }
  if (examples.empty()) throw std::invalid_argument("no usable training examples");
  if (progress)
    progress(std::to_string(examples.size()) + " training examples (" +
             std::to_string(dropped) + " too short)");

  const std::vector<Mixture> dev(
      data.dev.begin(),
      data.dev.begin() + static_cast<std::ptrdiff_t>(
                             cfg.dev_mixtures ? std::min(cfg.dev_mixtures, data.dev.size())
                                              : data.dev.size()));
  const EvalConfig ecfg = dev_eval_config(cfg.objective, threads);

  Adam adam(model.params(), cfg.adam);
  BatchSource source(examples, cfg.batch_size, derive_seed(cfg.seed, "batches"));
  RunLog log;
  std::vector<double> grads;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    auto batch = source.next();
    // jsm: fresh slot order per use so the head cannot rely on speaker order.
    std::vector<TrainExample> permuted;
    if (cfg.objective == Objective::kJsm) {
      permuted.reserve(batch.size());
      for (std::size_t j = 0; j < batch.size(); ++j) {
        TrainExample ex = *batch[j];
        Rng rng(derive_seed(cfg.seed, "slots", (step - 1) * cfg.batch_size + j));
        for (std::size_t i = ex.speakers.size(); i > 1; --i) {
          const auto k = static_cast<std::size_t>(rng.uniform_int(0, i - 1));
          std::swap(ex.speakers[i - 1], ex.speakers[k]);
          std::swap(ex.refs[i - 1], ex.refs[k]);
        }
        permuted.push_back(std::move(ex));
      }
      for (std::size_t j = 0; j < batch.size(); ++j) batch[j] = &permuted[j];
    }
    double loss;
    try {
      loss = batch_gradient(model, cfg.objective, batch, data.train,
                            data.embeddings, threads, grads);
    } catch (const TrainDivergence& e) {
      throw TrainDivergence("diverged at step " + std::to_string(step) + ": " +
                            e.what());
    }
    adam.step(grads);
    log.steps.push_back({step, loss, elapsed()});
    if (progress && (step % 100 == 0 || step == 1))
      progress("step " + std::to_string(step) + " loss " + format_double(loss));
    const bool eval_now = step == cfg.max_steps ||
                          (cfg.eval_interval && step % cfg.eval_interval == 0);
    if (!eval_now) continue;
    EvalRecord r;
    r.step = step;
    r.metric = metric_name(ecfg.metric);
    if (!dev.empty()) r.counts = evaluate(model, ecfg, dev, data.embeddings).total;
    r.seconds = elapsed();
    log.evals.push_back(r);
    if (progress)
      progress("eval step " + std::to_string(step) + " dev " + r.metric + " " +
               format_double(r.counts.rate()));
    if (on_checkpoint) on_checkpoint(model, step);
  }
  return log;
}

std::vector<Mixture> load_split(const std::string& corpus_dir,
                                const std::string& split) {
  const std::string path = CorpusPaths{corpus_dir}.manifest(split);
  auto mixes = read_manifest(path);
  for (auto& m : mixes) load_audio(m, path);
  return mixes;
}

RunLog run_training(const TrainConfig& cfg_in, const ProgressFn& progress) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  const CorpusPaths corpus{cfg.corpus_dir};
  for (const std::string& p :
       {corpus.config(), corpus.manifest("train"), corpus.manifest("dev")})
    if (!fs::exists(p)) throw ConfigError("missing corpus file " + p);
  const CorpusConfig cc = CorpusConfig::from_config(KeyValueConfig::load(corpus.config()));
  if (cfg.model.encoder.vocab_size != cc.num_tokens + 1)
    throw ConfigError("vocab_size " + std::to_string(cfg.model.encoder.vocab_size) +
                      " does not match the corpus (" +
                      std::to_string(cc.num_tokens + 1) + " with blank)");

  TrainData data;
  if (cfg.model.conditioned()) {
    const EmbedPaths ep{cfg.embed_dir};
    for (const std::string& p : {ep.projector(), ep.embeddings()})
      if (!fs::exists(p)) throw ConfigError("missing embedding file " + p);
    const Projector proj = Projector::load(ep.projector());
    if (proj.target_dim() != cfg.model.fusion.embed_dim)
      throw ConfigError("embed_dim " + std::to_string(cfg.model.fusion.embed_dim) +
                        " does not match the projector (d = " +
                        std::to_string(proj.target_dim()) + ")");
    data.embeddings = read_embeddings(ep.embeddings());
    for (const auto& [spk, e] : data.embeddings)
      if (e.size() != proj.target_dim())
        throw FormatError("embedding of speaker " + std::to_string(spk) +
                          " has the wrong dimension");
  }
  if (!cfg.warm_start.empty() && !fs::exists(cfg.warm_start))
    throw ConfigError("missing warm-start checkpoint " + cfg.warm_start);

  data.train = load_split(cfg.corpus_dir, "train");
  data.dev = load_split(cfg.corpus_dir, "dev");

  Model model(cfg.model, derive_seed(cfg.seed, "init"));
  if (!cfg.warm_start.empty()) {
    const Model src = Model::load(cfg.warm_start);
    const std::size_t n = model.warm_start_from(src);
    if (n == 0)
      throw ConfigError("warm-start checkpoint " + cfg.warm_start +
                        " shares no parameters with this model");
    if (progress)
      progress("warm start: copied " + std::to_string(n) + " of " +
               std::to_string(model.params().size()) + " parameter arrays");
  }

  const TrainPaths out{cfg.out_dir};
  fs::create_directories(cfg.out_dir);
  KeyValueConfig resolved;
  cfg.to_config(resolved);
  write_file_atomic(out.config(), resolved.to_string());
  auto checkpoint = [&](const Model& m, std::size_t) { m.save(out.checkpoint()); };
  RunLog log = train(model, cfg, data, checkpoint, progress);
  write_file_atomic(out.runlog(), log.format());
  return log;
}

}  // namespace tsasr
