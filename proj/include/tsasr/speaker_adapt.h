// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Speaker adaptation layers that condition the encoder on a speaker
// embedding e (1 x d):
//   add   h + e W + b                      (before the transformer)
//   cat   [h ; e] W + b                    (before the transformer)
//   film  gamma(e) * h + beta(e)           (before the transformer)
//   cln   both layer norms of block 0 use  w(e) * gamma + b(e)  as scale

#ifndef TSASR_SPEAKER_ADAPT_H_
#define TSASR_SPEAKER_ADAPT_H_

#include <string>

#include "tsasr/encoder.h"

namespace tsasr {

enum class FusionKind { kNone, kAdd, kCat, kFilm, kCln };

std::string fusion_name(FusionKind kind);
FusionKind parse_fusion(const std::string& name);

struct FusionConfig {
  FusionKind kind = FusionKind::kNone;
  std::size_t embed_dim = 64;
  std::size_t model_dim = 64;
  // cln only: one w/b pair shared by both layer norms instead of one each.
  bool cln_shared = false;
  // cln only: number of bottom blocks adapted; only 1 is supported.
  std::size_t cln_blocks = 1;

  void validate() const;
};

// Parameter paths owned by the fusion layer. Pre-transformer variants live
// under "fusion.*"; cln lives inside "<encoder>.block.0".
void init_fusion(ParameterStore& store, const FusionConfig& cfg, Rng& rng,
                 const std::string& encoder_prefix = "encoder");

Var fuse_add(Var h, Var e, Var weight, Var bias);
Var fuse_cat(Var h, Var e, Var weight, Var bias);
Var fuse_film(Var h, Var gamma, Var beta);
// gamma_hat = w * gamma + b for the conditional layer norm.
Var cln_scale(Var w, Var gamma, Var b);

// Applies add/cat/film to the conv output; identity for none/cln.
Var apply_pre_fusion(Binder& bind, const FusionConfig& cfg, Var h, Var e);
// Conditional layer-norm scales for the bottom block (empty unless cln).
BlockHooks cln_hooks(Binder& bind, const FusionConfig& cfg, Var e,
                     const std::string& encoder_prefix = "encoder");

}  // namespace tsasr

#endif  // TSASR_SPEAKER_ADAPT_H_
