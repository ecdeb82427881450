// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Toy speaker embeddings: per-bin log-power means and deviations of a
// short-time spectrum, reduced by PCA fitted on enrollment vectors.

#ifndef TSASR_EMBEDDING_H_
#define TSASR_EMBEDDING_H_

#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsasr {

class EmbeddingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SpectralConfig {
  std::size_t frame = 256;  // Hann window length
  std::size_t hop = 128;
  double floor = 1e-6;      // added to |X|^2 before the log
  // Raw dimension is 2 * (frame / 2): bins 1..frame/2, mean then std.
  std::size_t raw_dim() const { return frame; }
};

// Throws EmbeddingError when samples are shorter than one frame or carry no
// energy at all.
std::vector<double> extract_embedding(std::span<const double> samples,
                                      const SpectralConfig& cfg = {});

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Eigendecomposition of the sample covariance (population normalization),
// eigenvalues descending, one eigenvector per row.
struct PcaSpectrum {
  std::vector<double> mean;
  std::vector<double> eigenvalues;
  std::vector<std::vector<double>> vectors;
};
PcaSpectrum pca_spectrum(const std::vector<std::vector<double>>& data);

struct Projector {
  std::vector<double> mean;                 // source_dim
  std::vector<std::vector<double>> basis;   // target_dim rows of source_dim
  std::vector<double> eigenvalues;          // target_dim, descending
  double scale = 1.0;  // 1 / std of the projected fitting data

  std::size_t source_dim() const { return mean.size(); }
  std::size_t target_dim() const { return basis.size(); }
  // scale * basis * (raw - mean)
  std::vector<double> project(std::span<const double> raw) const;

  std::string serialize() const;
  static Projector deserialize(const std::string& bytes,
                               const std::string& what);
  void save(const std::string& path) const;
  static Projector load(const std::string& path);
};

// Requires more vectors than d and a covariance of rank >= d; otherwise
// EmbeddingError names the achievable rank.
Projector fit_pca(const std::vector<std::vector<double>>& data, std::size_t d);

// "speaker-id <TAB> v1 v2 ..." lines, ids ascending.
void write_embeddings(const std::string& path,
                      const std::map<int, std::vector<double>>& emb);
std::map<int, std::vector<double>> read_embeddings(const std::string& path);

struct EmbedPaths {
  std::string dir;
  std::string projector() const { return dir + "/projector.bin"; }
  std::string embeddings() const { return dir + "/embeddings.tsv"; }
  std::string raw() const { return dir + "/raw_embeddings.tsv"; }
};

// Extracts raw embeddings for every enrolled speaker of a corpus, fits the
// projector to dimension d and writes projector + projected embeddings.
void embed_corpus(const std::string& corpus_dir, std::size_t d,
                  const std::string& out_dir);

}  // namespace tsasr

#endif  // TSASR_EMBEDDING_H_
