// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "tsasr/speaker_adapt.h"

namespace tsasr {

std::string fusion_name(FusionKind kind) {
  switch (kind) {
    case FusionKind::kNone: return "none";
    case FusionKind::kAdd: return "add";
    case FusionKind::kCat: return "cat";
    case FusionKind::kFilm: return "film";
    case FusionKind::kCln: return "cln";
  }
  return "?";
}

FusionKind parse_fusion(const std::string& name) {
  if (name == "none") return FusionKind::kNone;
  if (name == "add") return FusionKind::kAdd;
  if (name == "cat") return FusionKind::kCat;
  if (name == "film") return FusionKind::kFilm;
  if (name == "cln") return FusionKind::kCln;
  throw ConfigError("unknown fusion '" + name + "' (add|cat|film|cln|none)");
}

void FusionConfig::validate() const {
  if (kind == FusionKind::kNone) return;
  if (embed_dim == 0) throw ConfigError("embedding dim must be positive");
  if (kind == FusionKind::kCln && cln_blocks != 1)
    throw ConfigError("cln adapts only the bottom block; got cln_blocks = " +
                      std::to_string(cln_blocks));
}

namespace {

// A linear map d -> D whose bias starts at bias_init.
void add_embedding_net(ParameterStore& store, Rng& rng,
                       const std::string& prefix, std::size_t d, std::size_t D,
                       double bias_init) {
  store.add(prefix + ".weight", init_weight(rng, d, D));
  store.add(prefix + ".bias", Array(ad::Shape{D}, bias_init));
}

}  // namespace

void init_fusion(ParameterStore& store, const FusionConfig& cfg, Rng& rng,
                 const std::string& encoder_prefix) {
  cfg.validate();
  const std::size_t d = cfg.embed_dim, D = cfg.model_dim;
  switch (cfg.kind) {
    case FusionKind::kNone:
      break;
    case FusionKind::kAdd:
      add_embedding_net(store, rng, "fusion.add", d, D, 0.0);
      break;
    case FusionKind::kCat: {
      // Rows for h start at the identity so training begins from the
      // unconditioned encoder; rows for e are ordinary random weights.
      Array w = init_weight(rng, D + d, D);
      for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = 0; j < D; ++j) w.at(i, j) = i == j ? 1.0 : 0.0;
      store.add("fusion.cat.weight", std::move(w));
      store.add("fusion.cat.bias", Array(ad::Shape{D}));
      break;
    }
    case FusionKind::kFilm:
      add_embedding_net(store, rng, "fusion.film.gamma", d, D, 1.0);
      add_embedding_net(store, rng, "fusion.film.beta", d, D, 0.0);
      break;
    case FusionKind::kCln: {
      const std::string b0 = encoder_prefix + ".block.0";
      if (cfg.cln_shared) {
        add_embedding_net(store, rng, b0 + ".cln.w", d, D, 1.0);
        add_embedding_net(store, rng, b0 + ".cln.b", d, D, 0.0);
      } else {
        for (const char* ln : {".ln1", ".ln2"}) {
          add_embedding_net(store, rng, b0 + ln + ".cln.w", d, D, 1.0);
          add_embedding_net(store, rng, b0 + ln + ".cln.b", d, D, 0.0);
        }
      }
      break;
    }
  }
}

Var fuse_add(Var h, Var e, Var weight, Var bias) {
  if (e.size() != weight.rows())
    throw ad::ShapeError("fuse_add: embedding " + ad::shape_string(e.shape()) +
                         " does not match projection " +
                         ad::shape_string(weight.shape()));
  return ad::add_row(ad::add_row(h, ad::matmul(e, weight)), bias);
}

Var fuse_cat(Var h, Var e, Var weight, Var bias) {
  const std::size_t D = h.cols(), d = e.size();
  if (weight.rows() != D + d)
    throw ad::ShapeError("fuse_cat: features " + ad::shape_string(h.shape()) +
                         " plus embedding " + ad::shape_string(e.shape()) +
                         " do not match projection " +
                         ad::shape_string(weight.shape()));
  // [h ; e] W == h W_h + e W_e, with the embedding term broadcast over time.
  Var from_h = ad::matmul(h, ad::slice_rows(weight, 0, D));
  Var from_e = ad::add_row(ad::matmul(e, ad::slice_rows(weight, D, D + d)), bias);
  return ad::add_row(from_h, from_e);
}

Var fuse_film(Var h, Var gamma, Var beta) {
  return ad::add_row(ad::mul_row(h, gamma), beta);
}

Var cln_scale(Var w, Var gamma, Var b) {
  const ad::Shape s{gamma.size()};
  if (w.size() != gamma.size() || b.size() != gamma.size())
    throw ad::ShapeError("cln_scale: " + ad::shape_string(w.shape()) + " vs " +
                         ad::shape_string(gamma.shape()));
  return ad::add(ad::mul(ad::reshape(w, s), ad::reshape(gamma, s)),
                 ad::reshape(b, s));
}

Var apply_pre_fusion(Binder& bind, const FusionConfig& cfg, Var h, Var e) {
  switch (cfg.kind) {
    case FusionKind::kNone:
    case FusionKind::kCln:
      return h;
    case FusionKind::kAdd:
      return fuse_add(h, e, bind("fusion.add.weight"), bind("fusion.add.bias"));
    case FusionKind::kCat:
      return fuse_cat(h, e, bind("fusion.cat.weight"), bind("fusion.cat.bias"));
    case FusionKind::kFilm:
      return fuse_film(h, linear(bind, "fusion.film.gamma", e),
                       linear(bind, "fusion.film.beta", e));
  }
  return h;
}

BlockHooks cln_hooks(Binder& bind, const FusionConfig& cfg, Var e,
                     const std::string& encoder_prefix) {
  BlockHooks hooks;
  if (cfg.kind != FusionKind::kCln) return hooks;
  const std::string b0 = encoder_prefix + ".block.0";
  const std::string n1 = cfg.cln_shared ? b0 + ".cln" : b0 + ".ln1.cln";
  const std::string n2 = cfg.cln_shared ? b0 + ".cln" : b0 + ".ln2.cln";
  Var w1 = linear(bind, n1 + ".w", e), c1 = linear(bind, n1 + ".b", e);
  Var w2 = cfg.cln_shared ? w1 : linear(bind, n2 + ".w", e);
  Var c2 = cfg.cln_shared ? c1 : linear(bind, n2 + ".b", e);
  hooks.ln1_gamma = cln_scale(w1, bind(b0 + ".ln1.gamma"), c1);
  hooks.ln2_gamma = cln_scale(w2, bind(b0 + ".ln2.gamma"), c2);
  return hooks;
}

}  // namespace tsasr
