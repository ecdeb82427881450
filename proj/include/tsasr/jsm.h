// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Joint speaker modeling head: the K per-speaker encoder outputs are
// concatenated along features, projected back to D, passed through one more
// transformer block, and mapped to K x |V| outputs (one lattice per slot,
// bound to the order of the input embeddings).

#ifndef TSASR_JSM_H_
#define TSASR_JSM_H_

#include <span>
#include <vector>

#include "tsasr/encoder.h"

namespace tsasr {

struct JsmConfig {
  std::size_t num_speakers = 2;
  std::size_t model_dim = 64;
  std::size_t num_heads = 2;
  std::size_t ff_dim = 128;
  std::size_t vocab_size = 9;
  // Whether the head adds the encoder's sinusoidal positions again after
  // the combine projection.
  bool positional = true;
};

// Parameters under "jsm.combine", "jsm.block", "jsm.final_ln", "jsm.out".
void init_jsm_head(ParameterStore& store, const JsmConfig& cfg, Rng& rng);

// hidden: K arrays of T x D. Returns K log-posterior lattices T x |V|.
std::vector<Var> jsm_head(Binder& bind, const JsmConfig& cfg,
                          std::span<const Var> hidden);

// Splits a T x (K |V|) output into K log-softmaxed T x |V| lattices.
std::vector<Var> split_log_softmax(Var logits, std::size_t num_speakers,
                                   std::size_t vocab);

}  // namespace tsasr

#endif  // TSASR_JSM_H_
