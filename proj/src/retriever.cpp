#include "rast/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "binary_io.hpp"
#include "rast/error.hpp"

namespace rast {

using nlohmann::json;

HashBagEncoder::HashBagEncoder(std::size_t dim, std::size_t buckets, std::uint64_t seed)
    : weights_(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(buckets)) {
  RAST_REQUIRE(dim > 0 && buckets > 0, ErrorCode::kInvalidArgument, "encoder needs dim, buckets > 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f / std::sqrt(static_cast<float>(dim)));
  for (Eigen::Index c = 0; c < weights_.cols(); ++c)
    for (Eigen::Index r = 0; r < weights_.rows(); ++r) weights_(r, c) = normal(rng);
}

std::size_t HashBagEncoder::bucket(std::string_view token) const {
  return static_cast<std::size_t>(fnv1a(token) % static_cast<std::uint64_t>(weights_.cols()));
}

Embedding HashBagEncoder::encode(const Tokens& tokens) const {
  Embedding e = Embedding::Zero(weights_.rows());
  for (const auto& t : tokens) e += weights_.col(static_cast<Eigen::Index>(bucket(t)));
  return e;
}

void HashBagEncoder::accumulate_grad(const Tokens& tokens, const Embedding& d_embedding,
                                     Eigen::MatrixXf& grad) const {
  for (const auto& t : tokens) grad.col(static_cast<Eigen::Index>(bucket(t))) += d_embedding;
}

DualEncoder DualEncoder::initialize(std::size_t dim, std::size_t buckets, std::uint64_t seed) {
  DualEncoder enc;
  enc.candidate_ = HashBagEncoder(dim, buckets, seed);
  enc.query_ = enc.candidate_;
  return enc;
}

void DualEncoder::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json m;
  m["backend"] = "hash-bag";
  m["dimension"] = dim();
  m["buckets"] = query_.buckets();
  m["encoder_version"] = version_;
  std::ofstream(dir / "retriever.json") << m.dump(2) << '\n';
  std::vector<float> blob;
  blob.reserve(2 * static_cast<std::size_t>(query_.weights().size()));
  for (const auto* w : {&candidate_.weights(), &query_.weights()})
    blob.insert(blob.end(), w->data(), w->data() + w->size());
  detail::write_binary(dir / "retriever.bin", blob.data(), blob.size());
}

DualEncoder DualEncoder::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "retriever.json");
  RAST_REQUIRE(in.good(), ErrorCode::kIo, "missing retriever manifest in " + dir.string());
  auto m = json::parse(in);
  RAST_REQUIRE(m.at("backend") == "hash-bag", ErrorCode::kValidation, "unknown retriever backend");
  const auto dim = m.at("dimension").get<Eigen::Index>();
  const auto buckets = m.at("buckets").get<Eigen::Index>();
  auto blob = detail::read_binary<float>(dir / "retriever.bin",
                                         static_cast<std::size_t>(2 * dim * buckets));
  DualEncoder enc;
  enc.candidate_.weights() = Eigen::Map<Eigen::MatrixXf>(blob.data(), dim, buckets);
  enc.query_.weights() = Eigen::Map<Eigen::MatrixXf>(blob.data() + dim * buckets, dim, buckets);
  enc.version_ = m.at("encoder_version").get<std::uint64_t>();
  return enc;
}

RetrieverGrad RetrieverGrad::zeros_like(const DualEncoder& enc) {
  RetrieverGrad g;
  g.query = Eigen::MatrixXf::Zero(enc.query().weights().rows(), enc.query().weights().cols());
  g.candidate =
      Eigen::MatrixXf::Zero(enc.candidate().weights().rows(), enc.candidate().weights().cols());
  return g;
}

void RetrieverGrad::set_zero() {
  query.setZero();
  candidate.setZero();
}

double RetrieverGrad::squared_norm() const {
  return static_cast<double>(query.squaredNorm()) + static_cast<double>(candidate.squaredNorm());
}

double score(const Embedding& q, const Embedding& c) {
  RAST_REQUIRE(q.size() == c.size(), ErrorCode::kDimensionMismatch,
               "embedding dimensions differ: " + std::to_string(q.size()) + " vs " +
                   std::to_string(c.size()));
  double s = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i) s += static_cast<double>(q[i]) * c[i];
  return s;
}

void RetrievalIndex::check_fresh(const DualEncoder& encoder) const {
  RAST_REQUIRE(encoder.version() == encoder_version, ErrorCode::kStaleIndex,
               "index built with encoder version " + std::to_string(encoder_version) +
                   " but live encoder is at " + std::to_string(encoder.version()));
}

void RetrievalIndex::save(const std::filesystem::path& manifest_path) const {
  auto matrix_path = manifest_path;
  matrix_path.replace_extension(".f32");
  json m;
  m["corpus_path"] = corpus_path.string();
  m["dimension"] = dim();
  m["rows"] = size();
  m["encoder_version"] = encoder_version;
  m["matrix_file"] = matrix_path.filename().string();
  std::ofstream out(manifest_path);
  RAST_REQUIRE(out.good(), ErrorCode::kIo, "cannot write " + manifest_path.string());
  out << m.dump(2) << '\n';
  detail::write_binary(matrix_path, candidate_embeddings.data(),
                       static_cast<std::size_t>(candidate_embeddings.size()));
}

RetrievalIndex RetrievalIndex::load(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  RAST_REQUIRE(in.good(), ErrorCode::kIo, "cannot open index manifest " + manifest_path.string());
  auto m = json::parse(in);
  RetrievalIndex index;
  index.corpus_path = m.at("corpus_path").get<std::string>();
  auto corpus_path = index.corpus_path;
  if (corpus_path.is_relative()) corpus_path = manifest_path.parent_path() / corpus_path;
  index.corpus = std::make_shared<const TemplateCorpus>(read_corpus(corpus_path));
  const auto rows = m.at("rows").get<std::size_t>();
  const auto dim = m.at("dimension").get<std::size_t>();
  RAST_REQUIRE(rows == index.corpus->size(), ErrorCode::kValidation,
               "index rows do not match corpus size");
  auto blob = detail::read_binary<float>(
      manifest_path.parent_path() / m.at("matrix_file").get<std::string>(), rows * dim);
  index.candidate_embeddings = Eigen::Map<EmbeddingMatrix>(
      blob.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
  index.encoder_version = m.at("encoder_version").get<std::uint64_t>();
  return index;
}

RetrievalIndex build_index(std::shared_ptr<const TemplateCorpus> corpus, const DualEncoder& encoder) {
  RAST_REQUIRE(corpus && !corpus->empty(), ErrorCode::kEmptyCorpus, "cannot index an empty corpus");
  RetrievalIndex index;
  index.candidate_embeddings.resize(static_cast<Eigen::Index>(corpus->size()),
                                    static_cast<Eigen::Index>(encoder.dim()));
  for (std::size_t i = 0; i < corpus->size(); ++i)
    index.candidate_embeddings.row(static_cast<Eigen::Index>(i)) =
        encoder.encode_candidate(corpus->templates[i]).transpose();
  index.encoder_version = encoder.version();
  index.corpus = std::move(corpus);
  return index;
}

std::vector<ScoredTemplate> retrieve_top_k(const RetrievalIndex& index, const Embedding& query,
                                           std::size_t k) {
  const std::size_t n = index.size();
  RAST_REQUIRE(k >= 1, ErrorCode::kInvalidArgument, "K must be positive");
  RAST_REQUIRE(k <= n, ErrorCode::kKTooLarge,
               "K=" + std::to_string(k) + " exceeds corpus size " + std::to_string(n));
  RAST_REQUIRE(static_cast<std::size_t>(query.size()) == index.dim(),
               ErrorCode::kDimensionMismatch, "query dimension does not match index");
  std::vector<ScoredTemplate> all(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    auto row = index.candidate_embeddings.row(static_cast<Eigen::Index>(i));
    for (Eigen::Index j = 0; j < query.size(); ++j) s += static_cast<double>(row[j]) * query[j];
    all[i] = {i, s};
  }
  auto better = [](const ScoredTemplate& a, const ScoredTemplate& b) {
    return a.score > b.score || (a.score == b.score && a.corpus_index < b.corpus_index);
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  return all;
}

std::vector<ScoredTemplate> retrieve_top_k(const RetrievalIndex& index, const DualEncoder& encoder,
                                           const Template& z0, std::size_t k) {
  return retrieve_top_k(index, encoder.encode_query(z0), k);
}

std::vector<double> softmax(const std::vector<double>& scores) {
  RAST_REQUIRE(!scores.empty(), ErrorCode::kInvalidArgument, "softmax of an empty vector");
  const double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) z += p[i] = std::exp(scores[i] - m);
  for (auto& v : p) v /= z;
  return p;
}

namespace {

std::vector<double> pool_scores(const Embedding& q, const std::vector<Embedding>& cands) {
  std::vector<double> s;
  s.reserve(cands.size());
  for (const auto& c : cands) s.push_back(score(q, c));
  return s;
}

}  // namespace

std::vector<double> retrieval_distribution(const DualEncoder& encoder, const Template& z0,
                                           const std::vector<Template>& pool) {
  RAST_REQUIRE(!pool.empty(), ErrorCode::kEmptyPool, "retrieval pool is empty");
  std::vector<Embedding> cands;
  cands.reserve(pool.size());
  for (const auto& z : pool) cands.push_back(encoder.encode_candidate(z));
  return softmax(pool_scores(encoder.encode_query(z0), cands));
}

void accumulate_retrieval_log_prob_grad(const DualEncoder& encoder, const Template& z0,
                                        const std::vector<Template>& pool, std::size_t selected,
                                        double scale, RetrieverGrad& grad) {
  RAST_REQUIRE(selected < pool.size(), ErrorCode::kInvalidArgument, "selected index outside pool");
  const Embedding q = encoder.encode_query(z0);
  std::vector<Embedding> cands;
  cands.reserve(pool.size());
  for (const auto& z : pool) cands.push_back(encoder.encode_candidate(z));
  const auto p = softmax(pool_scores(q, cands));

  // log p_s = q·c_s - logsumexp_j(q·c_j)
  //   d/dq   = c_s - Σ_j p_j c_j
  //   d/dc_j = (1[j = s] - p_j) q
  Embedding dq = cands[selected];
  for (std::size_t j = 0; j < pool.size(); ++j) dq -= static_cast<float>(p[j]) * cands[j];
  encoder.query().accumulate_grad(z0.tokens, static_cast<float>(scale) * dq, grad.query);
  for (std::size_t j = 0; j < pool.size(); ++j) {
    const double coef = (j == selected ? 1.0 : 0.0) - p[j];
    if (coef == 0.0) continue;
    encoder.candidate().accumulate_grad(pool[j].tokens, static_cast<float>(scale * coef) * q,
                                        grad.candidate);
  }
}

}  // namespace rast
