#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rast/corpus.hpp"

namespace rast {

using Embedding = Eigen::VectorXf;
using EmbeddingMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Hashed bag-of-tokens encoder with a trainable projection: every token maps
/// to a column of `weights` through FNV-1a modulo the bucket count, and a
/// template's embedding is the sum of its tokens' columns.
class HashBagEncoder {
 public:
  HashBagEncoder() = default;
  HashBagEncoder(std::size_t dim, std::size_t buckets, std::uint64_t seed);

  Embedding encode(const Tokens& tokens) const;
  std::size_t bucket(std::string_view token) const;

  /// grad.col(bucket(t)) += d_embedding for every token t.
  void accumulate_grad(const Tokens& tokens, const Embedding& d_embedding,
                       Eigen::MatrixXf& grad) const;

  std::size_t dim() const { return static_cast<std::size_t>(weights_.rows()); }
  std::size_t buckets() const { return static_cast<std::size_t>(weights_.cols()); }
  Eigen::MatrixXf& weights() { return weights_; }
  const Eigen::MatrixXf& weights() const { return weights_; }

 private:
  Eigen::MatrixXf weights_;  // dim x buckets
};

/// Two independent encoders: candidates (templates in the corpus) and queries.
/// `version` increases on every parameter update and tags index freshness.
class DualEncoder {
 public:
  DualEncoder() = default;
  /// Both encoders start from the same random projection so that the untrained
  /// retriever scores by token overlap; they are separate copies afterwards.
  static DualEncoder initialize(std::size_t dim, std::size_t buckets, std::uint64_t seed);

  Embedding encode_candidate(const Template& z) const { return candidate_.encode(z.tokens); }
  Embedding encode_query(const Template& z0) const { return query_.encode(z0.tokens); }

  HashBagEncoder& candidate() { return candidate_; }
  HashBagEncoder& query() { return query_; }
  const HashBagEncoder& candidate() const { return candidate_; }
  const HashBagEncoder& query() const { return query_; }

  std::size_t dim() const { return query_.dim(); }
  std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }

  void save(const std::filesystem::path& dir) const;
  static DualEncoder load(const std::filesystem::path& dir);

 private:
  HashBagEncoder candidate_;
  HashBagEncoder query_;
  std::uint64_t version_ = 0;
};

struct RetrieverGrad {
  Eigen::MatrixXf query;
  Eigen::MatrixXf candidate;

  static RetrieverGrad zeros_like(const DualEncoder& enc);
  void set_zero();
  double squared_norm() const;
};

/// Inner product; throws DimensionMismatch.
double score(const Embedding& q, const Embedding& c);

struct RetrievalIndex {
  std::shared_ptr<const TemplateCorpus> corpus;
  EmbeddingMatrix candidate_embeddings;  // |Z| x d
  std::uint64_t encoder_version = 0;
  std::filesystem::path corpus_path;  // recorded in the manifest when saved

  std::size_t size() const { return corpus ? corpus->size() : 0; }
  std::size_t dim() const { return static_cast<std::size_t>(candidate_embeddings.cols()); }
  /// Throws StaleIndex if the live encoder moved past this index.
  void check_fresh(const DualEncoder& encoder) const;

  /// Writes <stem>.json (manifest) and <stem>.f32 (row-major little-endian floats).
  void save(const std::filesystem::path& manifest_path) const;
  static RetrievalIndex load(const std::filesystem::path& manifest_path);
};

RetrievalIndex build_index(std::shared_ptr<const TemplateCorpus> corpus, const DualEncoder& encoder);

struct ScoredTemplate {
  std::size_t corpus_index;
  double score;
};

/// Exact maximum-inner-product search: the K best candidates by score,
/// descending, ties broken by corpus order. Throws KTooLarge.
std::vector<ScoredTemplate> retrieve_top_k(const RetrievalIndex& index, const Embedding& query,
                                           std::size_t k);
std::vector<ScoredTemplate> retrieve_top_k(const RetrievalIndex& index, const DualEncoder& encoder,
                                           const Template& z0, std::size_t k);

/// Numerically stable softmax.
std::vector<double> softmax(const std::vector<double>& scores);

/// Softmax of query-candidate scores restricted to `pool`, both sides encoded
/// with the live encoder.
std::vector<double> retrieval_distribution(const DualEncoder& encoder, const Template& z0,
                                           const std::vector<Template>& pool);

/// Accumulates scale * d/dφ log p_φ(pool[selected] | z0), p_φ normalized over
/// the pool, into grad.
void accumulate_retrieval_log_prob_grad(const DualEncoder& encoder, const Template& z0,
                                        const std::vector<Template>& pool, std::size_t selected,
                                        double scale, RetrieverGrad& grad);

}  // namespace rast
