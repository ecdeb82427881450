// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Mini-batch training with Adam and global-norm clipping. Every example is
// run on its own tape (optionally on worker threads); per-example gradients
// are summed in example order so results do not depend on scheduling.

#ifndef TSASR_TRAIN_H_
#define TSASR_TRAIN_H_

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsasr/corpus.h"
#include "tsasr/eval.h"
#include "tsasr/model.h"

namespace tsasr {

enum class Objective { kCtcBaseline, kCtcTse, kPit, kJsm };

std::string objective_name(Objective o);
Objective parse_objective(const std::string& s);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // 0 disables clipping
};

struct TrainConfig {
  std::string corpus_dir;
  std::string embed_dir;  // needed by ctc-tse and jsm
  std::string out_dir;
  std::string warm_start;  // optional checkpoint to copy matching params from
  Objective objective = Objective::kCtcTse;
  ModelConfig model;
  AdamConfig adam;
  std::size_t batch_size = 8;
  std::size_t max_steps = 3000;
  std::size_t eval_interval = 500;  // 0: evaluate at the end only
  std::size_t dev_mixtures = 0;     // 0: the whole dev split
  std::uint64_t seed = 1;
  std::size_t threads = 0;  // 0: default thread count
  // ctc-tse: also train on the span of every multi-speaker group, once per
  // participant, so the model learns to stay silent where its target is.
  bool tse_group_examples = true;

  // Objective/head/fusion agreement and numeric ranges.
  void validate() const;
  void to_config(KeyValueConfig& kv) const;
  static TrainConfig from_config(const KeyValueConfig& kv);
};

class TrainDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One training example: a span of a mixture with per-slot speakers/refs.
struct TrainExample {
  std::string id;
  std::size_t mixture = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  std::vector<int> speakers;
  std::vector<TokenSeq> refs;
};

// ctc-baseline and ctc-tse train on segmented utterances (ctc-tse plus
// per-speaker group spans when tse_groups is set); pit and jsm on overlap
// groups padded to K slots.
std::vector<TrainExample> training_examples(Objective o,
                                            const std::vector<Mixture>& mixes,
                                            std::size_t num_speakers,
                                            bool tse_groups = false);

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;  // mean per-example loss of the batch
  double seconds = 0.0;
};
struct EvalRecord {
  std::size_t step = 0;
  std::string metric;
  EditCounts counts;
  double seconds = 0.0;
};
struct RunLog {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  // Tab-separated "step"/"eval" records; wall-times optional so that logs
  // can be compared byte for byte.
  std::string format(bool with_times = true) const;
};

// Adam state over a flat parameter vector (store iteration order).
class Adam {
 public:
  Adam(ParameterStore& store, const AdamConfig& cfg);
  // grads is flat in store order; frozen parameters are never touched.
  // Returns the pre-clipping global gradient norm.
  double step(std::vector<double>& grads);
  std::size_t size() const { return m_.size(); }

 private:
  ParameterStore& store_;
  AdamConfig cfg_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

// Mean loss and flat gradient of a batch. Throws TrainDivergence naming the
// offending example when a loss or gradient is not finite.
double batch_gradient(Model& model, Objective o,
                      const std::vector<const TrainExample*>& batch,
                      const std::vector<Mixture>& mixes,
                      const EmbeddingTable& emb, std::size_t threads,
                      std::vector<double>& grads);

struct TrainData {
  std::vector<Mixture> train;  // audio loaded
  std::vector<Mixture> dev;
  EmbeddingTable embeddings;
};

using ProgressFn = std::function<void(const std::string&)>;

// Trains in memory. Invokes on_checkpoint after every evaluation.
RunLog train(Model& model, const TrainConfig& cfg, const TrainData& data,
             const std::function<void(const Model&, std::size_t)>& on_checkpoint = {},
             const ProgressFn& progress = {});

// Loads corpus and embeddings from disk, trains, and writes train.cfg,
// runlog.tsv and model.ckpt into cfg.out_dir.
RunLog run_training(const TrainConfig& cfg, const ProgressFn& progress = {});

struct TrainPaths {
  std::string dir;
  std::string config() const { return dir + "/train.cfg"; }
  std::string runlog() const { return dir + "/runlog.tsv"; }
  std::string checkpoint() const { return dir + "/model.ckpt"; }
};

// Loads a split with audio.
std::vector<Mixture> load_split(const std::string& corpus_dir,
                                const std::string& split);

}  // namespace tsasr

#endif  // TSASR_TRAIN_H_
