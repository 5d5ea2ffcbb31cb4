#include "rast/sampler.hpp"

#include <algorithm>
#include <limits>

#include "rast/error.hpp"

namespace rast {

std::vector<StyleCluster> cluster_templates(const std::vector<Template>& templates, std::size_t k) {
  RAST_REQUIRE(!templates.empty(), ErrorCode::kEmptyPool, "cannot cluster an empty template list");
  RAST_REQUIRE(k >= 1, ErrorCode::kInvalidArgument, "k must be >= 1");
  const std::size_t n = templates.size();

  std::vector<TokenSet> sets;
  sets.reserve(n);
  for (const auto& t : templates) sets.push_back(t.token_set());
  std::vector<std::vector<double>> point(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) point[i][j] = point[j][i] = 1.0 - jaccard(sets[i], sets[j]);

  // Cluster-level complete-linkage distances, keyed by each cluster's first member.
  auto link = point;
  std::vector<std::vector<std::size_t>> members(n);
  std::vector<bool> alive(n, true);
  for (std::size_t i = 0; i < n; ++i) members[i] = {i};

  // Row minimum over alive j > i, smallest j on ties.
  std::vector<double> row_min(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> row_arg(n, n);
  auto refresh = [&](std::size_t i) {
    row_min[i] = std::numeric_limits<double>::infinity();
    row_arg[i] = n;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (alive[j] && link[i][j] < row_min[i]) {
        row_min[i] = link[i][j];
        row_arg[i] = j;
      }
    }
  };
  for (std::size_t i = 0; i < n; ++i) refresh(i);

  std::size_t count = n;
  const std::size_t target = std::min(k, n);
  while (count > target) {
    std::size_t bi = n;
    for (std::size_t i = 0; i < n; ++i)
      if (alive[i] && row_arg[i] < n && (bi == n || row_min[i] < row_min[bi])) bi = i;
    const std::size_t bj = row_arg[bi];
    for (std::size_t m = 0; m < n; ++m) {
      if (!alive[m] || m == bi || m == bj) continue;
      link[bi][m] = link[m][bi] = std::max(link[bi][m], link[bj][m]);
    }
    members[bi].insert(members[bi].end(), members[bj].begin(), members[bj].end());
    std::sort(members[bi].begin(), members[bi].end());
    alive[bj] = false;
    --count;
    // Distances only grow, so only rows pointing at the merged pair go stale.
    for (std::size_t m = 0; m < n; ++m)
      if (alive[m] && (m == bi || row_arg[m] == bi || row_arg[m] == bj)) refresh(m);
  }

  std::vector<StyleCluster> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!alive[i]) continue;
    StyleCluster c;
    c.members = members[i];
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a : c.members) {
      double sum = 0.0;
      for (std::size_t b : c.members) sum += point[a][b];
      if (sum < best) {
        best = sum;
        c.medoid = a;
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<std::size_t> select_styles(const std::vector<StyleCluster>& clusters,
                                       const std::vector<double>& pool_probs, SampleMode mode,
                                       std::mt19937_64& rng) {
  std::vector<std::size_t> chosen;
  chosen.reserve(clusters.size());
  for (const auto& c : clusters) {
    if (mode == SampleMode::kTraining) {
      std::uniform_int_distribution<std::size_t> pick(0, c.members.size() - 1);
      chosen.push_back(c.members[pick(rng)]);
    } else {
      std::size_t best = c.members.front();
      for (std::size_t m : c.members)
        if (pool_probs[m] > pool_probs[best]) best = m;
      chosen.push_back(best);
    }
  }
  return chosen;
}

DiversitySample diversity_sample(const SequenceModel& model, const ContextAnswer& x, const Template& z0,
                                 const RetrievalIndex& index, const DualEncoder& encoder,
                                 const SamplerOptions& options, std::mt19937_64& rng) {
  RAST_REQUIRE(options.k >= 1, ErrorCode::kInvalidArgument, "k must be >= 1");
  RAST_REQUIRE(index.size() > 0, ErrorCode::kEmptyPool, "retrieval index is empty");

  DiversitySample out;
  out.encoder_version = encoder.version();
  // Over-fetch by one when excluding, since z0 itself is the likeliest hit.
  const std::size_t want = options.pool_size + (options.exclude ? 1 : 0);
  const auto hits = retrieve_top_k(index, encoder.encode_query(z0), std::min(want, index.size()));
  for (const auto& h : hits) {
    const auto& t = index.corpus->templates[h.corpus_index];
    if (options.exclude && t == *options.exclude) continue;
    if (out.pool.size() == options.pool_size) break;
    out.pool.push_back(t);
  }
  RAST_REQUIRE(!out.pool.empty(), ErrorCode::kEmptyPool, "retrieval returned no templates");

  out.pool_probs = retrieval_distribution(encoder, z0, out.pool);
  out.clusters = cluster_templates(out.pool, options.k);
  const auto chosen = select_styles(out.clusters, out.pool_probs, options.mode, rng);
  for (std::size_t pos : chosen) {
    SampledPair pair;
    pair.pool_index = pos;
    pair.style = out.pool[pos];
    pair.question = sample_nucleus(model, x, pair.style.tokens, options.top_p, options.top_k, rng,
                                   options.decode);
    out.pairs.push_back(std::move(pair));
  }
  return out;
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

std::vector<TopNResult> generate_top_n(const SequenceModel& vanilla, const SequenceModel& style,
                                       const RetrievalIndex& index, const DualEncoder& encoder,
                                       const std::vector<Sample>& samples, const InferenceOptions& options,
                                       const Tagger& tagger) {
  RAST_REQUIRE(options.n >= 1, ErrorCode::kInvalidArgument, "N must be >= 1");
  std::vector<TopNResult> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& x = samples[i].input;
    TopNResult r;
    r.id = samples[i].id;
    const Question yv = vanilla_generate(vanilla, x, options.decode);
    r.query = Template::parse("?");
    if (!yv.empty()) {
      try {
        r.query = template_for(yv, x, tagger);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kAllMasked) throw;
      }
    }

    const auto top = generate_greedy(style, x, Tokens{}, options.decode);
    r.outputs.push_back({1, {}, top.question, top.total_log_prob});

    if (options.n > 1) {
      SamplerOptions so;
      so.pool_size = options.pool_size;
      so.k = options.n - 1;
      so.top_p = options.top_p;
      so.top_k = options.top_k;
      so.mode = SampleMode::kInference;
      so.decode = options.decode;
      so.exclude = r.query;
      auto rng = stream_rng(options.seed, i);
      try {
        const auto ds = diversity_sample(style, x, r.query, index, encoder, so, rng);
        for (const auto& pair : ds.pairs)
          r.outputs.push_back({r.outputs.size() + 1, pair.style.tokens, pair.question.question,
                               pair.question.total_log_prob});
      } catch (const Error& e) {
        // The corpus held nothing but z0.
        if (e.code() != ErrorCode::kEmptyPool) throw;
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace rast
