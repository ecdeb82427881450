// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "tsasr/model.h"

#include <fstream>
#include <sstream>

#include "tsasr/binary_io.h"

namespace tsasr {

std::string head_name(HeadKind kind) {
  switch (kind) {
    case HeadKind::kCtc: return "ctc";
    case HeadKind::kPit: return "pit";
    case HeadKind::kJsm: return "jsm";
  }
  return "?";
}

HeadKind parse_head(const std::string& name) {
  if (name == "ctc") return HeadKind::kCtc;
  if (name == "pit") return HeadKind::kPit;
  if (name == "jsm") return HeadKind::kJsm;
  throw ConfigError("unknown head '" + name + "' (ctc|pit|jsm)");
}

void ModelConfig::validate() const {
  encoder.validate();
  fusion.validate();
  if (fusion.model_dim != encoder.model_dim)
    throw ConfigError("fusion dim " + std::to_string(fusion.model_dim) +
                      " differs from model dim " +
                      std::to_string(encoder.model_dim));
  if (head != HeadKind::kCtc && num_speakers < 2)
    throw ConfigError("multi-speaker heads need K >= 2");
  if (head == HeadKind::kPit && num_speakers > 4)
    throw ConfigError("pit supports at most 4 speakers");
  if (head == HeadKind::kPit && conditioned())
    throw ConfigError("the pit head takes no speaker embedding");
  if (head == HeadKind::kJsm && !conditioned())
    throw ConfigError("the jsm head needs a speaker fusion layer");
}

JsmConfig ModelConfig::jsm_config() const {
  JsmConfig j;
  j.num_speakers = num_speakers;
  j.model_dim = encoder.model_dim;
  j.num_heads = encoder.num_heads;
  j.ff_dim = encoder.ff_dim;
  j.vocab_size = encoder.vocab_size;
  j.positional = encoder.positional;
  return j;
}

void ModelConfig::to_config(KeyValueConfig& kv) const {
  encoder.to_config(kv);
  kv.set("fusion", fusion_name(fusion.kind));
  kv.set("embed_dim", fusion.embed_dim);
  kv.set("cln_shared", fusion.cln_shared);
  kv.set("head", head_name(head));
  kv.set("num_speakers", num_speakers);
  kv.set("freeze_frontend", freeze_frontend);
}

ModelConfig ModelConfig::from_config(const KeyValueConfig& kv) {
  ModelConfig c;
  c.encoder = EncoderConfig::from_config(kv);
  c.fusion.kind = parse_fusion(kv.get_string("fusion", "none"));
  c.fusion.embed_dim = kv.get_int("embed_dim", c.fusion.embed_dim);
  c.fusion.cln_shared = kv.get_bool("cln_shared", false);
  c.fusion.model_dim = c.encoder.model_dim;
  c.head = parse_head(kv.get_string("head", "ctc"));
  c.num_speakers = kv.get_int("num_speakers", c.num_speakers);
  c.freeze_frontend = kv.get_bool("freeze_frontend", false);
  c.validate();
  return c;
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.fusion.model_dim = cfg_.encoder.model_dim;
  cfg_.validate();
  Rng rng(seed);
  init_encoder(params_, cfg_.encoder, rng);
  init_fusion(params_, cfg_.fusion, rng);
  const std::size_t D = cfg_.encoder.model_dim, V = cfg_.encoder.vocab_size;
  switch (cfg_.head) {
    case HeadKind::kCtc:
      add_linear(params_, rng, "head.out", D, V);
      break;
    case HeadKind::kPit:
      add_linear(params_, rng, "head.out", D, cfg_.num_speakers * V);
      break;
    case HeadKind::kJsm:
      init_jsm_head(params_, cfg_.jsm_config(), rng);
      break;
  }
  apply_freeze();
}

void Model::apply_freeze() {
  for (auto& [path, p] : params_.all())
    if (path.rfind("encoder.conv.", 0) == 0) p.frozen = cfg_.freeze_frontend;
}

Var Model::encode(Binder& bind, std::span<const double> samples, Var e,
                  std::vector<Array>* attention) const {
  const EncoderConfig& ec = cfg_.encoder;
  if (cfg_.conditioned()) {
    if (!e.valid())
      throw std::invalid_argument("model is speaker-conditioned but no "
                                  "embedding was given");
    if (e.size() != cfg_.fusion.embed_dim)
      throw ad::ShapeError("embedding " + ad::shape_string(e.shape()) +
                           " does not match configured dim " +
                           std::to_string(cfg_.fusion.embed_dim));
    if (e.rows() != 1) e = ad::reshape(e, ad::Shape{1, e.size()});
  }
  Var h = conv_frontend(bind, ec, samples);
  h = apply_pre_fusion(bind, cfg_.fusion, h, e);
  if (ec.positional)
    h = ad::add(h, bind.tape().constant(positional_encoding(h.rows(), h.cols())));
  for (std::size_t b = 0; b < ec.num_blocks; ++b) {
    BlockHooks hooks;
    if (b == 0) hooks = cln_hooks(bind, cfg_.fusion, e);
    hooks.attention = attention;
    h = transformer_block(bind, "encoder.block." + std::to_string(b),
                          ec.num_heads, h, hooks);
  }
  return layer_norm(h, bind("encoder.final_ln.gamma"),
                    bind("encoder.final_ln.beta"));
}

std::vector<Var> Model::forward(Binder& bind, std::span<const double> samples,
                                std::span<const Var> embeddings) const {
  const std::size_t V = cfg_.encoder.vocab_size;
  switch (cfg_.head) {
    case HeadKind::kCtc: {
      const std::size_t want = cfg_.conditioned() ? 1 : 0;
      if (embeddings.size() != want && !(want == 0 && embeddings.size() == 1))
        throw std::invalid_argument("ctc model expects " + std::to_string(want) +
                                    " embedding(s), got " +
                                    std::to_string(embeddings.size()));
      Var e = cfg_.conditioned() ? embeddings[0] : Var();
      Var h = encode(bind, samples, e);
      return {ad::log_softmax_rows(linear(bind, "head.out", h))};
    }
    case HeadKind::kPit: {
      Var h = encode(bind, samples, Var());
      return split_log_softmax(linear(bind, "head.out", h), cfg_.num_speakers, V);
    }
    case HeadKind::kJsm: {
      if (embeddings.size() != cfg_.num_speakers)
        throw std::invalid_argument("jsm model expects " +
                                    std::to_string(cfg_.num_speakers) +
                                    " embeddings, got " +
                                    std::to_string(embeddings.size()));
      std::vector<Var> hidden;
      for (const Var& e : embeddings) hidden.push_back(encode(bind, samples, e));
      return jsm_head(bind, cfg_.jsm_config(), hidden);
    }
  }
  return {};
}

std::vector<Array> Model::infer(
    std::span<const double> samples,
    const std::vector<std::vector<double>>& embeddings) {
  Tape tape;
  Binder bind(tape, params_);
  std::vector<Var> es;
  for (const auto& e : embeddings)
    es.push_back(tape.constant(Array(ad::Shape{1, e.size()}, e)));
  std::vector<Array> out;
  for (const Var& v : forward(bind, samples, es)) out.push_back(v.value());
  return out;
}

std::size_t Model::warm_start_from(const Model& src) {
  std::size_t n = 0;
  for (auto& [path, p] : params_.all()) {
    if (!src.params_.has(path)) continue;
    const auto& q = src.params_.get(path);
    if (q.value.shape() != p.value.shape()) continue;
    p.value = q.value;
    ++n;
  }
  return n;
}

std::string Model::serialize() const {
  std::ostringstream os(std::ios::binary);
  os << kCheckpointMagic << '\n';
  os << "version = " << kCheckpointVersion << '\n';
  KeyValueConfig kv;
  cfg_.to_config(kv);
  os << kv.to_string();
  for (const auto& [path, p] : params_.all()) {
    os << "param " << path;
    for (auto d : p.value.shape()) os << ' ' << d;
    os << '\n';
  }
  os << "end_header\n";
  for (const auto& [path, p] : params_.all()) write_f64_le(os, p.value.values());
  return os.str();
}

void Model::save(const std::string& path) const {
  write_file_atomic(path, serialize());
}

namespace {

struct Header {
  KeyValueConfig config;
  std::vector<std::pair<std::string, ad::Shape>> params;
};

Header read_checkpoint_header(std::istream& is, const std::string& what) {
  std::string magic;
  if (!std::getline(is, magic) || magic != kCheckpointMagic)
    throw FormatError(what + ": not a checkpoint (bad magic)");
  std::string version;
  std::getline(is, version);
  if (version != "version = " + std::to_string(kCheckpointVersion))
    throw FormatError(what + ": unsupported checkpoint version line '" +
                      version + "' (this build reads version " +
                      std::to_string(kCheckpointVersion) + ")");
  Header h;
  std::string text;
  for (const std::string& line : read_header_lines(is, "end_header", what)) {
    if (line.rfind("param ", 0) == 0) {
      std::istringstream ls(line.substr(6));
      std::string path;
      ls >> path;
      ad::Shape shape;
      std::size_t d;
      while (ls >> d) shape.push_back(d);
      h.params.emplace_back(path, shape);
    } else {
      text += line + '\n';
    }
  }
  h.config = KeyValueConfig::parse(text, what);
  return h;
}

}  // namespace

Model Model::deserialize(const std::string& bytes, const std::string& what) {
  std::istringstream is(bytes, std::ios::binary);
  Header h = read_checkpoint_header(is, what);
  Model m(ModelConfig::from_config(h.config), 0);
  const auto& all = m.params_.all();
  if (h.params.size() != all.size())
    throw FormatError(what + ": checkpoint lists " +
                      std::to_string(h.params.size()) +
                      " parameters but its config implies " +
                      std::to_string(all.size()));
  auto it = all.begin();
  for (const auto& [path, shape] : h.params) {
    if (path != it->first || shape != it->second.value.shape())
      throw FormatError(what + ": parameter " + path + " " +
                        ad::shape_string(shape) + " does not match expected " +
                        it->first + " " +
                        ad::shape_string(it->second.value.shape()));
    ++it;
  }
  for (auto& [path, p] : m.params_.all()) read_f64_le(is, p.value.values());
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError(what + ": trailing bytes after parameters");
  return m;
}

Model Model::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str(), path);
}

ModelConfig Model::peek_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  return ModelConfig::from_config(read_checkpoint_header(in, path).config);
}

}  // namespace tsasr
