// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "tsasr/embedding.h"

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tsasr/binary_io.h"
#include "tsasr/config.h"
#include "tsasr/corpus.h"

namespace tsasr {

namespace {
const char kProjectorMagic[] = "TSASR-PROJECTOR";
const int kProjectorVersion = 1;
}  // namespace

std::vector<double> extract_embedding(std::span<const double> samples,
                                      const SpectralConfig& cfg) {
  if (cfg.frame < 4 || cfg.frame % 2 || cfg.hop == 0)
    throw EmbeddingError("spectral frame must be even and >= 4, hop > 0");
  if (samples.size() < cfg.frame)
    throw EmbeddingError("enrollment of " + std::to_string(samples.size()) +
                         " samples is shorter than one " +
                         std::to_string(cfg.frame) + "-sample frame");
  if (std::all_of(samples.begin(), samples.end(),
                  [](double v) { return v == 0.0; }))
    throw EmbeddingError("enrollment signal is identically zero");
  const std::size_t n = cfg.frame, bins = n / 2;
  std::vector<double> window(n);
  for (std::size_t i = 0; i < n; ++i)  // symmetric Hann
    window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (n - 1));
  Eigen::FFT<double> fft;
  std::vector<double> frame(n);
  std::vector<std::complex<double>> spec;
  std::vector<double> sum(bins, 0.0), sumsq(bins, 0.0);
  std::size_t frames = 0;
  for (std::size_t s = 0; s + n <= samples.size(); s += cfg.hop, ++frames) {
    for (std::size_t i = 0; i < n; ++i) frame[i] = samples[s + i] * window[i];
    fft.fwd(spec, frame);
    for (std::size_t b = 0; b < bins; ++b) {
      const double v = std::log(std::norm(spec[b + 1]) + cfg.floor);
      sum[b] += v;
      sumsq[b] += v * v;
    }
  }
  std::vector<double> out(2 * bins);
  for (std::size_t b = 0; b < bins; ++b) {
    const double mu = sum[b] / frames;
    out[b] = mu;
    out[bins + b] = std::sqrt(std::max(0.0, sumsq[b] / frames - mu * mu));
  }
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw EmbeddingError("cosine of unequal dims");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

PcaSpectrum pca_spectrum(const std::vector<std::vector<double>>& data) {
  if (data.empty()) throw EmbeddingError("PCA needs at least one vector");
  const std::size_t n = data.size(), dim = data[0].size();
  Eigen::MatrixXd x(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (data[i].size() != dim)
      throw EmbeddingError("PCA input vector " + std::to_string(i) + " has " +
                           std::to_string(data[i].size()) + " dims, expected " +
                           std::to_string(dim));
    for (std::size_t j = 0; j < dim; ++j) x(i, j) = data[i][j];
  }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success)
    throw EmbeddingError("covariance eigendecomposition failed");
  PcaSpectrum out;
  out.mean.assign(mu.data(), mu.data() + dim);
  for (std::size_t k = 0; k < dim; ++k) {  // Eigen sorts ascending
    const Eigen::Index c = static_cast<Eigen::Index>(dim - 1 - k);
    out.eigenvalues.push_back(std::max(0.0, es.eigenvalues()(c)));
    std::vector<double> v(dim);
    for (std::size_t j = 0; j < dim; ++j) v[j] = es.eigenvectors()(j, c);
    // Deterministic sign: largest-magnitude entry positive.
    const auto it = std::max_element(v.begin(), v.end(), [](double a, double b) {
      return std::abs(a) < std::abs(b);
    });
    if (*it < 0)
      for (double& e : v) e = -e;
    out.vectors.push_back(std::move(v));
  }
  return out;
}

Projector fit_pca(const std::vector<std::vector<double>>& data, std::size_t d) {
  if (d == 0) throw EmbeddingError("PCA target dimension must be positive");
  if (data.size() <= d)
    throw EmbeddingError("PCA to " + std::to_string(d) + " dims needs more than " +
                         std::to_string(d) + " vectors, got " +
                         std::to_string(data.size()));
  if (d > data[0].size())
    throw EmbeddingError("PCA target dimension " + std::to_string(d) +
                         " exceeds source dimension " +
                         std::to_string(data[0].size()));
  PcaSpectrum s = pca_spectrum(data);
  const double tol = 1e-10 * std::max(s.eigenvalues[0], 1e-300);
  std::size_t rank = 0;
  for (double e : s.eigenvalues)
    if (e > tol) ++rank;
  if (rank < d)
    throw EmbeddingError("covariance has rank " + std::to_string(rank) +
                         ", below the requested " + std::to_string(d) +
                         " dims; at most " + std::to_string(rank) +
                         " are achievable");
  Projector p;
  p.mean = s.mean;
  p.basis.assign(s.vectors.begin(), s.vectors.begin() + d);
  p.eigenvalues.assign(s.eigenvalues.begin(), s.eigenvalues.begin() + d);
  // Projected coordinates have zero mean and variance eigenvalue[k].
  double var = 0.0;
  for (double e : p.eigenvalues) var += e;
  p.scale = 1.0 / std::sqrt(var / static_cast<double>(d));
  return p;
}

std::vector<double> Projector::project(std::span<const double> raw) const {
  if (raw.size() != source_dim())
    throw EmbeddingError("projector expects " + std::to_string(source_dim()) +
                         "-dim input, got " + std::to_string(raw.size()));
  std::vector<double> out(target_dim(), 0.0);
  for (std::size_t k = 0; k < target_dim(); ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < raw.size(); ++j)
      acc += basis[k][j] * (raw[j] - mean[j]);
    out[k] = scale * acc;
  }
  return out;
}

std::string Projector::serialize() const {
  std::ostringstream os(std::ios::binary);
  os << kProjectorMagic << '\n'
     << "version = " << kProjectorVersion << '\n'
     << "source_dim = " << source_dim() << '\n'
     << "target_dim = " << target_dim() << '\n'
     << "scale = " << format_double(scale) << '\n'
     << "end_header\n";
  write_f64_le(os, mean);
  write_f64_le(os, eigenvalues);
  for (const auto& row : basis) write_f64_le(os, row);
  return os.str();
}

Projector Projector::deserialize(const std::string& bytes,
                                 const std::string& what) {
  std::istringstream is(bytes, std::ios::binary);
  auto lines = read_header_lines(is, "end_header", what);
  if (lines.empty() || lines[0] != kProjectorMagic)
    throw FormatError(what + ": not a projector file");
  std::string body;
  for (std::size_t i = 1; i < lines.size(); ++i) body += lines[i] + '\n';
  const auto kv = KeyValueConfig::parse(body, what);
  if (kv.get_int("version") != kProjectorVersion)
    throw FormatError(what + ": unsupported projector version " +
                      kv.get_string("version"));
  const auto src = static_cast<std::size_t>(kv.get_int("source_dim"));
  const auto dst = static_cast<std::size_t>(kv.get_int("target_dim"));
  Projector p;
  p.scale = kv.get_double("scale");
  p.mean.resize(src);
  p.eigenvalues.resize(dst);
  p.basis.assign(dst, std::vector<double>(src));
  read_f64_le(is, p.mean);
  read_f64_le(is, p.eigenvalues);
  for (auto& row : p.basis) read_f64_le(is, row);
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError(what + ": trailing bytes after projector data");
  return p;
}

void Projector::save(const std::string& path) const {
  write_file_atomic(path, serialize());
}

Projector Projector::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open projector " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str(), path);
}

void write_embeddings(const std::string& path,
                      const std::map<int, std::vector<double>>& emb) {
  std::string text;
  for (const auto& [id, v] : emb) {
    text += std::to_string(id) + '\t';
    for (std::size_t i = 0; i < v.size(); ++i)
      text += (i ? " " : "") + format_double(v[i]);
    text += '\n';
  }
  write_file_atomic(path, text);
}

std::map<int, std::vector<double>> read_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open embeddings " + path);
  std::map<int, std::vector<double>> out;
  std::string line;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("bad embedding line in " + path);
    std::istringstream vs(line.substr(tab + 1));
    std::vector<double> v;
    std::string tok;
    while (vs >> tok) v.push_back(std::stod(tok));
    if (v.empty() || (dim && v.size() != dim))
      throw FormatError("inconsistent embedding dimension in " + path);
    dim = v.size();
    out[std::stoi(line.substr(0, tab))] = std::move(v);
  }
  return out;
}

void embed_corpus(const std::string& corpus_dir, std::size_t d,
                  const std::string& out_dir) {
  CorpusPaths cp{corpus_dir};
  const auto enroll = read_enroll_map(cp.enroll_map());
  std::map<int, std::vector<double>> raw;
  std::vector<std::vector<double>> fit;
  for (const auto& [id, rel] : enroll) {
    const auto x = read_audio(
        (std::filesystem::path(corpus_dir) / rel).string());
    try {
      raw[id] = extract_embedding(x);
    } catch (const EmbeddingError& e) {
      throw EmbeddingError("speaker " + std::to_string(id) + ": " + e.what());
    }
    fit.push_back(raw[id]);
  }
  const Projector p = fit_pca(fit, d);
  std::map<int, std::vector<double>> projected;
  for (const auto& [id, v] : raw) projected[id] = p.project(v);
  std::filesystem::create_directories(out_dir);
  EmbedPaths ep{out_dir};
  write_embeddings(ep.raw(), raw);
  p.save(ep.projector());
  write_embeddings(ep.embeddings(), projected);
}

}  // namespace tsasr
