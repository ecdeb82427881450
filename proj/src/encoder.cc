// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "tsasr/encoder.h"

#include <cmath>
#include <sstream>

namespace tsasr {

std::string format_conv_layers(const std::vector<ConvLayerSpec>& layers) {
  std::string out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(layers[i].channels) + ':' +
           std::to_string(layers[i].kernel) + ':' +
           std::to_string(layers[i].stride);
  }
  return out;
}

std::vector<ConvLayerSpec> parse_conv_layers(const std::string& text) {
  std::vector<ConvLayerSpec> layers;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    ConvLayerSpec s;
    char c1 = 0, c2 = 0;
    std::istringstream it(item);
    if (!(it >> s.channels >> c1 >> s.kernel >> c2 >> s.stride) || c1 != ':' ||
        c2 != ':')
      throw ConfigError("bad conv layer spec '" + item +
                        "' (want channels:kernel:stride)");
    layers.push_back(s);
  }
  return layers;
}

void EncoderConfig::validate() const {
  if (model_dim == 0 || num_heads == 0 || model_dim % num_heads != 0)
    throw ConfigError("model dim " + std::to_string(model_dim) +
                      " is not divisible by " + std::to_string(num_heads) +
                      " heads");
  if (num_blocks == 0) throw ConfigError("need at least one block");
  if (ff_dim == 0) throw ConfigError("ff dim must be positive");
  if (vocab_size < 2)
    throw ConfigError("vocab size must be >= 2 (blank plus one token)");
  if (conv.empty()) throw ConfigError("need at least one conv layer");
  for (const auto& l : conv)
    if (l.channels == 0 || l.kernel == 0 || l.stride == 0)
      throw ConfigError("conv layer extents must be positive: " +
                        format_conv_layers(conv));
  if (conv.back().channels != model_dim)
    throw ConfigError("last conv layer has " +
                      std::to_string(conv.back().channels) +
                      " channels but model dim is " +
                      std::to_string(model_dim));
  if (model_dim % 2 != 0 && positional)
    throw ConfigError("sinusoidal positions need an even model dim");
}

std::size_t EncoderConfig::downsample() const {
  std::size_t r = 1;
  for (const auto& l : conv) r *= l.stride;
  return r;
}

std::size_t EncoderConfig::receptive_field() const {
  std::size_t rf = 1, jump = 1;
  for (const auto& l : conv) {
    rf += (l.kernel - 1) * jump;
    jump *= l.stride;
  }
  return rf;
}

std::size_t EncoderConfig::num_frames(std::size_t len) const {
  std::size_t n = len;
  for (const auto& l : conv) {
    if (n < l.kernel)
      throw ad::ShapeError("input of " + std::to_string(len) +
                           " samples is shorter than the receptive field (" +
                           std::to_string(receptive_field()) + ")");
    n = (n - l.kernel) / l.stride + 1;
  }
  return n;
}

void EncoderConfig::to_config(KeyValueConfig& kv) const {
  kv.set("model_dim", model_dim);
  kv.set("num_blocks", num_blocks);
  kv.set("num_heads", num_heads);
  kv.set("ff_dim", ff_dim);
  kv.set("conv_layers", format_conv_layers(conv));
  kv.set("vocab_size", vocab_size);
  kv.set("positional", positional);
}

EncoderConfig EncoderConfig::from_config(const KeyValueConfig& kv) {
  EncoderConfig c;
  c.model_dim = kv.get_int("model_dim", c.model_dim);
  c.num_blocks = kv.get_int("num_blocks", c.num_blocks);
  c.num_heads = kv.get_int("num_heads", c.num_heads);
  c.ff_dim = kv.get_int("ff_dim", c.ff_dim);
  if (kv.has("conv_layers")) c.conv = parse_conv_layers(kv.get_string("conv_layers"));
  c.vocab_size = kv.get_int("vocab_size", c.vocab_size);
  c.positional = kv.get_bool("positional", c.positional);
  c.validate();
  return c;
}

Array init_weight(Rng& rng, std::size_t rows, std::size_t cols) {
  Array w(ad::Shape{rows, cols});
  for (auto& v : w.values()) v = rng.normal(0.0, kInitStd);
  return w;
}

void add_linear(ParameterStore& store, Rng& rng, const std::string& prefix,
                std::size_t in, std::size_t out) {
  store.add(prefix + ".weight", init_weight(rng, in, out));
  store.add(prefix + ".bias", Array(ad::Shape{out}));
}

void add_layer_norm(ParameterStore& store, const std::string& prefix,
                    std::size_t dim) {
  store.add(prefix + ".gamma", Array(ad::Shape{dim}, 1.0));
  store.add(prefix + ".beta", Array(ad::Shape{dim}));
}

void init_transformer_block(ParameterStore& store, std::size_t dim,
                            std::size_t ff_dim, Rng& rng,
                            const std::string& prefix) {
  add_layer_norm(store, prefix + ".ln1", dim);
  add_linear(store, rng, prefix + ".attn.q", dim, dim);
  // No key bias: it shifts every score of a query row by the same amount,
  // so softmax ignores it and its gradient is identically zero.
  store.add(prefix + ".attn.k.weight", init_weight(rng, dim, dim));
  add_linear(store, rng, prefix + ".attn.v", dim, dim);
  add_linear(store, rng, prefix + ".attn.out", dim, dim);
  add_layer_norm(store, prefix + ".ln2", dim);
  add_linear(store, rng, prefix + ".ff.in", dim, ff_dim);
  add_linear(store, rng, prefix + ".ff.out", ff_dim, dim);
}

void init_encoder(ParameterStore& store, const EncoderConfig& cfg, Rng& rng,
                  const std::string& prefix) {
  cfg.validate();
  std::size_t cin = 1;
  for (std::size_t i = 0; i < cfg.conv.size(); ++i) {
    const auto& l = cfg.conv[i];
    const std::string p = prefix + ".conv." + std::to_string(i);
    // Fan-in scaled uniform, weights and bias alike. The 0.02 normal used
    // elsewhere leaves the strided front end nearly silent and slows
    // conditioning badly.
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.kernel * cin));
    Array w(ad::Shape{l.kernel * cin, l.channels});
    for (auto& v : w.values()) v = rng.uniform(-bound, bound);
    Array bias(ad::Shape{l.channels});
    for (auto& v : bias.values()) v = rng.uniform(-bound, bound);
    store.add(p + ".weight", std::move(w));
    store.add(p + ".bias", std::move(bias));
    cin = l.channels;
  }
  for (std::size_t b = 0; b < cfg.num_blocks; ++b)
    init_transformer_block(store, cfg.model_dim, cfg.ff_dim, rng,
                           prefix + ".block." + std::to_string(b));
  add_layer_norm(store, prefix + ".final_ln", cfg.model_dim);
}

Var linear(Binder& bind, const std::string& prefix, Var x) {
  return ad::add_row(ad::matmul(x, bind(prefix + ".weight")),
                     bind(prefix + ".bias"));
}

Var normalize_rows(Var x) {
  Var centered = ad::sub_col(x, ad::row_mean(x));
  return ad::div_col(centered, ad::row_std(x, kLayerNormEps));
}

Var layer_norm(Var x, Var gamma, Var beta) {
  return ad::add_row(ad::mul_row(normalize_rows(x), gamma), beta);
}

Var conv_frontend(Binder& bind, const EncoderConfig& cfg,
                  std::span<const double> samples, const std::string& prefix) {
  cfg.num_frames(samples.size());  // validates the length
  Var h = bind.tape().constant(
      Array(ad::Shape{samples.size(), 1},
            std::vector<double>(samples.begin(), samples.end())));
  for (std::size_t i = 0; i < cfg.conv.size(); ++i) {
    const std::string p = prefix + ".conv." + std::to_string(i);
    h = ad::conv1d(h, bind(p + ".weight"), bind(p + ".bias"),
                   cfg.conv[i].kernel, cfg.conv[i].stride);
    if (i + 1 < cfg.conv.size()) h = ad::gelu(h);
  }
  return h;
}

Array positional_encoding(std::size_t frames, std::size_t dim) {
  Array pe(ad::Shape{frames, dim});
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t i = 0; i < dim; i += 2) {
      const double angle =
          static_cast<double>(t) /
          std::pow(10000.0, static_cast<double>(i) / static_cast<double>(dim));
      pe.at(t, i) = std::sin(angle);
      if (i + 1 < dim) pe.at(t, i + 1) = std::cos(angle);
    }
  return pe;
}

Var multi_head_attention(Binder& bind, const std::string& prefix,
                         std::size_t num_heads, Var x,
                         std::vector<Array>* attention) {
  const std::size_t dim = x.cols();
  if (num_heads == 0 || dim % num_heads != 0)
    throw ad::ShapeError("attention: dim " + std::to_string(dim) +
                         " not divisible by " + std::to_string(num_heads));
  const std::size_t dh = dim / num_heads;
  Var q = linear(bind, prefix + ".q", x);
  Var k = ad::matmul(x, bind(prefix + ".k.weight"));
  Var v = linear(bind, prefix + ".v", x);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  for (std::size_t h = 0; h < num_heads; ++h) {
    Var qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = ad::slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = ad::slice_cols(v, h * dh, (h + 1) * dh);
    Var p = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), scale));
    if (attention) attention->push_back(p.value());
    heads.push_back(ad::matmul(p, vh));
  }
  Var ctx = num_heads == 1 ? heads[0] : ad::concat_cols(heads);
  return linear(bind, prefix + ".out", ctx);
}

Var transformer_block(Binder& bind, const std::string& prefix,
                      std::size_t num_heads, Var x, const BlockHooks& hooks) {
  Var g1 = hooks.ln1_gamma.valid() ? hooks.ln1_gamma : bind(prefix + ".ln1.gamma");
  Var g2 = hooks.ln2_gamma.valid() ? hooks.ln2_gamma : bind(prefix + ".ln2.gamma");
  Var h = layer_norm(x, g1, bind(prefix + ".ln1.beta"));
  x = ad::add(x, multi_head_attention(bind, prefix + ".attn", num_heads, h,
                                      hooks.attention));
  h = layer_norm(x, g2, bind(prefix + ".ln2.beta"));
  h = linear(bind, prefix + ".ff.out", ad::gelu(linear(bind, prefix + ".ff.in", h)));
  return ad::add(x, h);
}

}  // namespace tsasr
