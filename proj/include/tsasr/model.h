// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Full model wiring: conv frontend -> optional speaker fusion -> positions
// -> transformer blocks (cln inside block 0) -> final LN -> head.
//   ctc head: D -> |V| (baseline when unconditioned, TSE otherwise)
//   pit head: D -> K |V|, no speaker conditioning
//   jsm head: K conditioned encoder passes combined into K lattices

#ifndef TSASR_MODEL_H_
#define TSASR_MODEL_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tsasr/encoder.h"
#include "tsasr/jsm.h"
#include "tsasr/speaker_adapt.h"

namespace tsasr {

enum class HeadKind { kCtc, kPit, kJsm };

std::string head_name(HeadKind kind);
HeadKind parse_head(const std::string& name);

struct ModelConfig {
  EncoderConfig encoder;
  FusionConfig fusion;
  HeadKind head = HeadKind::kCtc;
  std::size_t num_speakers = 2;
  bool freeze_frontend = false;

  void validate() const;
  bool conditioned() const { return fusion.kind != FusionKind::kNone; }
  // Number of lattices produced per forward pass.
  std::size_t num_outputs() const {
    return head == HeadKind::kCtc ? 1 : num_speakers;
  }
  JsmConfig jsm_config() const;
  void to_config(KeyValueConfig& kv) const;
  static ModelConfig from_config(const KeyValueConfig& kv);
};

inline constexpr const char* kCheckpointMagic = "TSASR-CHECKPOINT";
inline constexpr int kCheckpointVersion = 1;

class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  // T x D encoder output for one embedding (1 x d; ignored, and may be an
  // unbound Var, when the model is unconditioned).
  Var encode(Binder& bind, std::span<const double> samples, Var e,
             std::vector<Array>* attention = nullptr) const;

  // Lattices (T x |V| log-posteriors) for every output slot. ctc: one
  // embedding (or none when unconditioned); pit: none; jsm: K.
  std::vector<Var> forward(Binder& bind, std::span<const double> samples,
                           std::span<const Var> embeddings) const;

  // Inference convenience over plain arrays.
  std::vector<Array> infer(std::span<const double> samples,
                           const std::vector<std::vector<double>>& embeddings);

  // Copies every parameter whose path and shape also exist in src; returns
  // the number copied.
  std::size_t warm_start_from(const Model& src);

  // Marks conv-frontend parameters frozen according to the config.
  void apply_freeze();

  std::string serialize() const;
  void save(const std::string& path) const;
  static Model deserialize(const std::string& bytes, const std::string& what);
  static Model load(const std::string& path);
  // Only the header config (cheap; used to validate flags).
  static ModelConfig peek_config(const std::string& path);

 private:
  ModelConfig cfg_;
  ParameterStore params_;
};

}  // namespace tsasr

#endif  // TSASR_MODEL_H_
