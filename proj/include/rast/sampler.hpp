#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "rast/corpus.hpp"
#include "rast/generator.hpp"
#include "rast/retriever.hpp"

namespace rast {

/// Indices into the clustered list.
struct StyleCluster {
  std::vector<std::size_t> members;
  std::size_t medoid = 0;
};

/// Agglomerative complete-linkage clustering on 1 - Jaccard into exactly
/// min(k, |S|) clusters. Equal-distance merges go to the lexicographically
/// smallest (i, j) pair. Clusters are ordered by their first member; members
/// ascend. The medoid minimizes summed distance to the other members, earliest
/// member on ties.
std::vector<StyleCluster> cluster_templates(const std::vector<Template>& templates, std::size_t k);

enum class SampleMode { kTraining, kInference };

struct SamplerOptions {
  std::size_t pool_size = 100;
  std::size_t k = 3;
  double top_p = 0.9;
  std::size_t top_k = 30;
  SampleMode mode = SampleMode::kTraining;
  DecodeOptions decode;
  /// Templates equal to this one are dropped from the pool.
  std::optional<Template> exclude;
};

struct SampledPair {
  std::size_t pool_index = 0;
  Template style;
  GenerationOutput question;
};

struct DiversitySample {
  std::vector<Template> pool;
  std::vector<double> pool_probs;  // p_φ(z | z0) over the pool, live encoder
  std::vector<StyleCluster> clusters;
  std::vector<SampledPair> pairs;  // one per cluster, cluster order
  std::uint64_t encoder_version = 0;
};

/// Retrieves a pool for z0 from the index, re-encodes it with the live
/// encoder, clusters it and picks one style per cluster (uniformly when
/// training, highest p_φ when inferring), then nucleus-samples one question
/// per style. Throws EmptyPool.
DiversitySample diversity_sample(const SequenceModel& model, const ContextAnswer& x, const Template& z0,
                                 const RetrievalIndex& index, const DualEncoder& encoder,
                                 const SamplerOptions& options, std::mt19937_64& rng);

/// Pool positions chosen per cluster (no question sampling).
std::vector<std::size_t> select_styles(const std::vector<StyleCluster>& clusters,
                                       const std::vector<double>& pool_probs, SampleMode mode,
                                       std::mt19937_64& rng);

struct RankedQuestion {
  std::size_t rank = 1;
  Tokens style;  // empty for rank 1
  Question question;
  double log_prob = 0.0;
};

struct TopNResult {
  std::string id;
  Template query;  // z0, from the vanilla model's greedy question
  std::vector<RankedQuestion> outputs;
};

struct InferenceOptions {
  std::size_t n = 5;
  std::size_t pool_size = 500;
  double top_p = 0.9;
  std::size_t top_k = 30;
  DecodeOptions decode;
  std::uint64_t seed = 13;
};

/// Top-N questions per sample. Rank 1 is the style model's greedy decode with
/// an empty template. z0 comes from the vanilla model's greedy question and
/// retrieves the pool (z0 itself excluded) for N − 1 more styles, picked in
/// inference mode and nucleus-sampled. Each sample draws from its own stream
/// of the root seed, so results do not depend on batch composition.
std::vector<TopNResult> generate_top_n(const SequenceModel& vanilla, const SequenceModel& style,
                                       const RetrievalIndex& index, const DualEncoder& encoder,
                                       const std::vector<Sample>& samples, const InferenceOptions& options,
                                       const Tagger& tagger);

/// Independent generator for item `index` under a root seed.
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t index);

}  // namespace rast
