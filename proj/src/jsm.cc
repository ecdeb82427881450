// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "tsasr/jsm.h"

namespace tsasr {

void init_jsm_head(ParameterStore& store, const JsmConfig& cfg, Rng& rng) {
  if (cfg.num_speakers < 2)
    throw ConfigError("jsm head needs K >= 2, got " +
                      std::to_string(cfg.num_speakers));
  const std::size_t D = cfg.model_dim;
  add_linear(store, rng, "jsm.combine", cfg.num_speakers * D, D);
  init_transformer_block(store, D, cfg.ff_dim, rng, "jsm.block");
  add_layer_norm(store, "jsm.final_ln", D);
  add_linear(store, rng, "jsm.out", D, cfg.num_speakers * cfg.vocab_size);
}

std::vector<Var> split_log_softmax(Var logits, std::size_t num_speakers,
                                   std::size_t vocab) {
  if (logits.cols() != num_speakers * vocab)
    throw ad::ShapeError("output layer " + ad::shape_string(logits.shape()) +
                         " does not factor as " + std::to_string(num_speakers) +
                         " x " + std::to_string(vocab));
  std::vector<Var> out;
  for (std::size_t k = 0; k < num_speakers; ++k)
    out.push_back(
        ad::log_softmax_rows(ad::slice_cols(logits, k * vocab, (k + 1) * vocab)));
  return out;
}

std::vector<Var> jsm_head(Binder& bind, const JsmConfig& cfg,
                          std::span<const Var> hidden) {
  if (hidden.size() != cfg.num_speakers)
    throw std::invalid_argument("jsm head: expected " +
                                std::to_string(cfg.num_speakers) +
                                " speaker streams, got " +
                                std::to_string(hidden.size()));
  for (const Var& h : hidden)
    if (h.shape() != hidden[0].shape())
      throw ad::ShapeError("jsm head: stream shapes differ: " +
                           ad::shape_string(hidden[0].shape()) + " vs " +
                           ad::shape_string(h.shape()));
  Var x = linear(bind, "jsm.combine", ad::concat_cols(hidden));
  if (cfg.positional)
    x = ad::add(x, bind.tape().constant(positional_encoding(x.rows(), x.cols())));
  x = transformer_block(bind, "jsm.block", cfg.num_heads, x);
  x = layer_norm(x, bind("jsm.final_ln.gamma"), bind("jsm.final_ln.beta"));
  return split_log_softmax(linear(bind, "jsm.out", x), cfg.num_speakers,
                           cfg.vocab_size);
}

}  // namespace tsasr
