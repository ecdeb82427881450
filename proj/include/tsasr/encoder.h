// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Toy wav2vec-style encoder: a strided 1-D convolution stack over raw
// samples followed by pre-LN transformer blocks.

#ifndef TSASR_ENCODER_H_
#define TSASR_ENCODER_H_

#include <span>
#include <string>
#include <vector>

#include "tsasr/autodiff.h"
#include "tsasr/config.h"
#include "tsasr/rng.h"

namespace tsasr {

using ad::Array;
using ad::Binder;
using ad::ParameterStore;
using ad::Tape;
using ad::Var;

struct ConvLayerSpec {
  std::size_t channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 0;
};

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kInitStd = 0.02;

struct EncoderConfig {
  std::size_t model_dim = 64;
  std::size_t num_blocks = 2;
  std::size_t num_heads = 2;
  std::size_t ff_dim = 128;
  std::vector<ConvLayerSpec> conv = {{32, 16, 2}, {64, 4, 2}, {64, 4, 2}};
  std::size_t vocab_size = 9;
  bool positional = true;

  // Throws ConfigError on an inconsistent configuration.
  void validate() const;
  std::size_t downsample() const;
  // Shortest input that yields one frame.
  std::size_t receptive_field() const;
  // Frames produced for an input of len samples; throws if len is shorter
  // than the receptive field.
  std::size_t num_frames(std::size_t len) const;

  void to_config(KeyValueConfig& kv) const;
  static EncoderConfig from_config(const KeyValueConfig& kv);
};

// "32:16:2,64:4:2" <-> conv layer list.
std::string format_conv_layers(const std::vector<ConvLayerSpec>& layers);
std::vector<ConvLayerSpec> parse_conv_layers(const std::string& text);

// Weight matrices ~ N(0, 0.02), biases 0, layer-norm scale 1 / shift 0.
// (Conv front-end layers use a fan-in scaled uniform instead.)
Array init_weight(Rng& rng, std::size_t rows, std::size_t cols);
void add_linear(ParameterStore& store, Rng& rng, const std::string& prefix,
                std::size_t in, std::size_t out);
void add_layer_norm(ParameterStore& store, const std::string& prefix,
                    std::size_t dim);

// Parameters under "<prefix>.conv.*", "<prefix>.block.<i>.*" and
// "<prefix>.final_ln.*".
void init_encoder(ParameterStore& store, const EncoderConfig& cfg, Rng& rng,
                  const std::string& prefix = "encoder");
void init_transformer_block(ParameterStore& store, std::size_t dim,
                            std::size_t ff_dim, Rng& rng,
                            const std::string& prefix);

Var linear(Binder& bind, const std::string& prefix, Var x);
// (x - mean) / sqrt(var + eps) per row, then scaled by gamma and shifted by
// beta (both length-D vectors).
Var layer_norm(Var x, Var gamma, Var beta);
Var normalize_rows(Var x);

// samples (length L) -> T x D.
Var conv_frontend(Binder& bind, const EncoderConfig& cfg,
                  std::span<const double> samples,
                  const std::string& prefix = "encoder");

Array positional_encoding(std::size_t frames, std::size_t dim);

// Per-block hooks: replacement scales for the two layer norms (CLN) and an
// optional sink for attention weights (one T x T array per head).
struct BlockHooks {
  Var ln1_gamma;
  Var ln2_gamma;
  std::vector<Array>* attention = nullptr;
};

Var multi_head_attention(Binder& bind, const std::string& prefix,
                         std::size_t num_heads, Var x,
                         std::vector<Array>* attention = nullptr);
Var transformer_block(Binder& bind, const std::string& prefix,
                      std::size_t num_heads, Var x,
                      const BlockHooks& hooks = {});

}  // namespace tsasr

#endif  // TSASR_ENCODER_H_
