// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "test_util.h"
#include "tsasr/encoder.h"

using namespace tsasr;
using namespace tsasr::ad;
using tsasr::testing::random_array;
using tsasr::testing::max_abs_diff_row;

namespace {

EncoderConfig kernel2_config() {
  EncoderConfig c;
  c.model_dim = 8;
  c.ff_dim = 16;
  c.conv = {{4, 2, 2}, {4, 2, 2}, {8, 2, 2}};
  return c;
}

}  // namespace

TEST_CASE("frame count follows the stride formula") {
  EncoderConfig c = kernel2_config();
  CHECK(c.downsample() == 8);
  CHECK(c.num_frames(80) == 10);
  CHECK(c.receptive_field() == 8);
  CHECK_THROWS_AS(c.num_frames(7), std::invalid_argument);

  EncoderConfig d;  // defaults: 32:16:2, 64:4:2, 64:4:2
  CHECK(d.downsample() == 8);
  CHECK(d.receptive_field() == 34);
  CHECK(d.num_frames(144) == 14);

  ParameterStore store;
  Rng rng(1);
  init_encoder(store, c, rng);
  Tape t;
  Binder bind(t, store);
  std::vector<double> x(80, 0.1);
  Var h = conv_frontend(bind, c, x);
  CHECK(h.rows() == 10);
  CHECK(h.cols() == 8);
}

TEST_CASE("zero input with zero bias gives constant frames") {
  EncoderConfig c = kernel2_config();
  ParameterStore store;
  Rng rng(2);
  init_encoder(store, c, rng);
  for (auto& [path, p] : store.all())
    if (path.find(".bias") != std::string::npos) p.value.fill(0.0);
  Tape t;
  Binder bind(t, store);
  Var h = conv_frontend(bind, c, std::vector<double>(120, 0.0));
  for (std::size_t r = 1; r < h.rows(); ++r)
    for (std::size_t j = 0; j < h.cols(); ++j) CHECK(h.value().at(r, j) == h.value().at(0, j));
}

TEST_CASE("each frame depends only on its receptive field") {
  EncoderConfig c = kernel2_config();
  ParameterStore store;
  Rng rng(3);
  init_encoder(store, c, rng);
  std::vector<double> x(80);
  for (auto& v : x) v = rng.uniform(-1, 1);
  Tape t1, t2;
  Binder b1(t1, store), b2(t2, store);
  Var h1 = conv_frontend(b1, c, x);
  x[79] += 1.0;  // only the last frame sees the last sample
  Var h2 = conv_frontend(b2, c, x);
  for (std::size_t r = 0; r + 1 < h1.rows(); ++r)
    for (std::size_t j = 0; j < h1.cols(); ++j) CHECK(h1.value().at(r, j) == h2.value().at(r, j));
  CHECK(max_abs_diff_row(h1.value(), h2.value(), 9) > 0.0);
}

TEST_CASE("single-frame attention is the identity") {
  ParameterStore store;
  Rng rng(4);
  init_transformer_block(store, 8, 16, rng, "blk");
  Tape t;
  Binder bind(t, store);
  std::vector<Array> att;
  multi_head_attention(bind, "blk.attn", 2, t.constant(random_array(rng, {1, 8})), &att);
  REQUIRE(att.size() == 2);
  for (const auto& a : att) CHECK(a[0] == 1.0);
}

TEST_CASE("attention rows are distributions") {
  ParameterStore store;
  Rng rng(5);
  init_transformer_block(store, 8, 16, rng, "blk");
  for (auto& [path, p] : store.all())
    for (auto& v : p.value.values()) v += rng.uniform(-0.5, 0.5);
  for (int n = 0; n < 20; ++n) {
    Tape t;
    Binder bind(t, store);
    std::vector<Array> att;
    multi_head_attention(bind, "blk.attn", 2,
                         t.constant(random_array(rng, {static_cast<std::size_t>(rng.uniform_int(1, 9)), 8})), &att);
    for (const auto& a : att)
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double s = 0;
        for (std::size_t c = 0; c < a.cols(); ++c) {
          CHECK(a.at(r, c) >= 0.0);
          s += a.at(r, c);
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
      }
  }
}

TEST_CASE("transformer block is permutation equivariant without positions") {
  ParameterStore store;
  Rng rng(6);
  init_transformer_block(store, 8, 16, rng, "blk");
  for (auto& [path, p] : store.all())
    for (auto& v : p.value.values()) v += rng.uniform(-0.3, 0.3);
  Array x = random_array(rng, {6, 8});
  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  Array xp(Shape{6, 8});
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 8; ++c) xp.at(r, c) = x.at(perm[r], c);
  Tape t;
  Binder bind(t, store);
  Var y = transformer_block(bind, "blk", 2, t.constant(x));
  Var yp = transformer_block(bind, "blk", 2, t.constant(xp));
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 8; ++c)
      CHECK(std::abs(yp.value().at(r, c) - y.value().at(perm[r], c)) < 1e-12);
}

TEST_CASE("positional encoding layout") {
  Array pe = positional_encoding(3, 4);
  CHECK(pe.at(0, 0) == 0.0);
  CHECK(pe.at(0, 1) == 1.0);
  CHECK(pe.at(2, 0) == doctest::Approx(std::sin(2.0)));
  CHECK(pe.at(2, 3) == doctest::Approx(std::cos(2.0 / 100.0)));
}

TEST_CASE("encoder config validation and round trip") {
  EncoderConfig c;
  c.num_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = EncoderConfig();
  c.conv.back().channels = 32;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = EncoderConfig();
  c.vocab_size = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(parse_conv_layers("32:16"), ConfigError);

  EncoderConfig d = kernel2_config();
  d.positional = false;
  KeyValueConfig kv;
  d.to_config(kv);
  EncoderConfig e = EncoderConfig::from_config(kv);
  CHECK(e.model_dim == d.model_dim);
  CHECK(format_conv_layers(e.conv) == "4:2:2,4:2:2,8:2:2");
  CHECK(e.positional == false);
}

TEST_CASE("parameter count is a function of the config") {
  ParameterStore a, b;
  Rng r1(1), r2(99);
  init_encoder(a, kernel2_config(), r1);
  init_encoder(b, kernel2_config(), r2);
  CHECK(a.num_values() == b.num_values());
  CHECK(a.size() == b.size());
  for (const auto& [path, p] : a.all())
    for (double v : p.value.values()) CHECK(std::isfinite(v));
}
