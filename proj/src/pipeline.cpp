#include "rast/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include "rast/error.hpp"
#include "rast/feature_model.hpp"
#include "rast/retriever.hpp"
#include "rast/sampler.hpp"
#include "rast/synthbench.hpp"

namespace rast::pipeline {

using nlohmann::json;

namespace {

const char* kManifestFile = "manifest.json";

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

void copy_model_files(const fs::path& from, const fs::path& to, const std::string& name) {
  for (const char* ext : {".json", ".bin"})
    fs::copy_file(from / (name + ext), to / (name + ext), fs::copy_options::overwrite_existing);
}

}  // namespace

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::kData: return "data";
    case Stage::kCorpus: return "corpus";
    case Stage::kIndex: return "index";
    case Stage::kSupervised: return "supervised";
    case Stage::kReinforce: return "reinforce";
    case Stage::kGenerate: return "generate";
    case Stage::kEvaluate: return "evaluate";
  }
  return "?";
}

Manifest Manifest::load_or_default(const fs::path& run_dir) {
  Manifest m;
  std::ifstream in(run_dir / kManifestFile);
  if (!in.good()) return m;
  json j;
  try {
    j = json::parse(in);
    m.root_seed = j.at("root_seed").get<std::uint64_t>();
    if (j.contains("world_seed") && !j["world_seed"].is_null()) m.world_seed = j["world_seed"].get<std::uint64_t>();
    m.config_hash = j.value("config_hash", "");
    m.config = j.value("config", json::object());
    m.paths = j.value("paths", std::map<std::string, std::string>{});
    m.stages = j.value("stages", std::map<std::string, bool>{});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kValidation, "corrupt manifest in " + run_dir.string() + ": " + e.what());
  }
  return m;
}

void Manifest::save(const fs::path& run_dir) const {
  fs::create_directories(run_dir);
  json j;
  j["root_seed"] = root_seed;
  j["world_seed"] = world_seed ? json(*world_seed) : json(nullptr);
  j["config_hash"] = config_hash;
  j["config"] = config;
  j["paths"] = paths;
  j["stages"] = stages;
  const auto tmp = run_dir / (std::string(kManifestFile) + ".tmp");
  {
    std::ofstream out(tmp);
    RAST_REQUIRE(out.good(), ErrorCode::kIo, "cannot write manifest in " + run_dir.string());
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, run_dir / kManifestFile);
}

bool Manifest::done(Stage s) const {
  auto it = stages.find(stage_name(s));
  return it != stages.end() && it->second;
}

void Manifest::mark(Stage s) { stages[stage_name(s)] = true; }

void Manifest::require(Stage s) const {
  RAST_REQUIRE(done(s), ErrorCode::kStageDependency, "stage '" + stage_name(s) + "' has not been run");
}

fs::path Manifest::path(const std::string& key, Stage producer) const {
  auto it = paths.find(key);
  RAST_REQUIRE(it != paths.end(), ErrorCode::kStageDependency,
               "no " + key + " recorded; run stage '" + stage_name(producer) + "' first or pass it explicitly");
  return it->second;
}

RunLock::RunLock(const fs::path& run_dir) : path_(run_dir / ".lock") {
  fs::create_directories(run_dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  RAST_REQUIRE(fd >= 0, ErrorCode::kIo, "run directory is locked by another process: " + path_.string());
  const auto pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

fs::path resolve(const fs::path& p) {
  if (p.is_absolute()) return p;
  if (const char* base = std::getenv("RAST_DATA_DIR"); base && *base) return fs::path(base) / p;
  return p;
}

json load_config_file(const fs::path& path) {
  std::ifstream in(resolve(path));
  RAST_REQUIRE(in.good(), ErrorCode::kValidation, "cannot open config " + path.string());
  json file;
  try {
    file = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kValidation, "config is not valid JSON: " + std::string(e.what()));
  }
  RAST_REQUIRE(file.is_object(), ErrorCode::kValidation, "config must be a flat JSON object");
  return file;
}

TrainerConfig resolve_config(const json& file, const json& flags) {
  std::string preset = "toy";
  try {
    if (flags.contains("preset")) preset = flags["preset"].get<std::string>();
    else if (file.contains("preset")) preset = file["preset"].get<std::string>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::kValidation, "preset must be a string");
  }
  TrainerConfig c;
  try {
    c = TrainerConfig::from_preset(preset);
  } catch (const Error& e) {
    throw Error(ErrorCode::kValidation, e.what());
  }
  c.apply_json(file);
  c.apply_json(flags);
  c.validate();
  return c;
}

std::string config_hash(const TrainerConfig& config) { return hex(fnv1a(config.to_json().dump())); }

std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose) { return fnv1a(purpose, root ^ 0x9e3779b97f4a7c15ULL); }

// ---------------------------------------------------------------------------

void cmd_synth(const fs::path& run_dir, std::uint64_t seed, const SynthSizes& sizes,
               const std::optional<fs::path>& out_dir) {
  RunLock lock(run_dir);
  auto m = Manifest::load_or_default(run_dir);
  const fs::path dir = out_dir ? resolve(*out_dir) : run_dir / "data";
  fs::create_directories(dir);
  synth::SyntheticWorld world(seed);
  write_dataset(dir / "train.jsonl", world.sample(sizes.train, 0));
  write_dataset(dir / "dev.jsonl", world.sample(sizes.dev, 1));
  write_dataset(dir / "test.jsonl", world.sample(sizes.test, 2));
  m.world_seed = seed;
  m.paths["train"] = (dir / "train.jsonl").string();
  m.paths["dev"] = (dir / "dev.jsonl").string();
  m.paths["test"] = (dir / "test.jsonl").string();
  m.mark(Stage::kData);
  m.save(run_dir);
}

CorpusBuildResult cmd_build_corpus(const fs::path& run_dir, const std::optional<fs::path>& dataset,
                                   const std::optional<fs::path>& out, double threshold) {
  RunLock lock(run_dir);
  auto m = Manifest::load_or_default(run_dir);
  const fs::path in = dataset ? resolve(*dataset) : m.path("train", Stage::kData);
  const fs::path dst = out ? resolve(*out) : run_dir / "corpus.jsonl";
  const auto samples = read_dataset(in);
  RAST_REQUIRE(!samples.empty(), ErrorCode::kValidation, "dataset " + in.string() + " is empty");
  RuleTagger tagger;
  auto result = build_corpus(samples, tagger, threshold);
  if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
  write_corpus(dst, result.corpus);
  if (dataset) m.paths["train"] = in.string();
  m.paths["corpus"] = dst.string();
  m.mark(Stage::kCorpus);
  m.save(run_dir);
  return result;
}

void cmd_build_index(const fs::path& run_dir, const std::optional<fs::path>& corpus,
                     const std::optional<fs::path>& checkpoint, const std::optional<fs::path>& out,
                     const TrainerConfig& config) {
  RunLock lock(run_dir);
  auto m = Manifest::load_or_default(run_dir);
  fs::path corpus_path;
  if (corpus) {
    corpus_path = resolve(*corpus);
  } else {
    m.require(Stage::kCorpus);
    corpus_path = m.path("corpus", Stage::kCorpus);
  }
  auto z = std::make_shared<const TemplateCorpus>(read_corpus(corpus_path, config.dedup_threshold));

  fs::path retriever_dir;
  DualEncoder encoder;
  if (checkpoint) {
    retriever_dir = resolve(*checkpoint);
    encoder = DualEncoder::load(retriever_dir);
  } else {
    retriever_dir = run_dir / "retriever";
    encoder = DualEncoder::initialize(config.retriever_dim, config.retriever_buckets,
                                      derive_seed(config.seed, "retriever"));
    encoder.save(retriever_dir);
  }
  auto index = build_index(z, encoder);
  index.corpus_path = fs::absolute(corpus_path);
  const fs::path dst = out ? resolve(*out) : run_dir / "index" / "index.json";
  fs::create_directories(dst.parent_path());
  index.save(dst);

  m.paths["corpus"] = corpus_path.string();
  m.paths["retriever"] = retriever_dir.string();
  m.paths["index"] = dst.string();
  m.root_seed = config.seed;
  m.mark(Stage::kIndex);
  m.save(run_dir);
}

namespace {

std::vector<Sample> load_split(const Manifest& m, const std::string& key) {
  auto it = m.paths.find(key);
  if (it == m.paths.end()) return {};
  return read_dataset(it->second);
}

}  // namespace

TrainResult cmd_train(const fs::path& run_dir, const TrainerConfig& config, bool force, const ProgressFn& progress) {
  RunLock lock(run_dir);
  auto m = Manifest::load_or_default(run_dir);
  m.require(Stage::kCorpus);
  m.require(Stage::kIndex);
  RAST_REQUIRE(m.world_seed.has_value(), ErrorCode::kValidation,
               "training needs the synthetic-world QA oracle; run `synth` to create the data");
  config.validate();

  TrainData data;
  data.train = read_dataset(m.path("train", Stage::kData));
  data.dev = load_split(m, "dev");
  data.corpus = std::make_shared<const TemplateCorpus>(
      read_corpus(m.path("corpus", Stage::kCorpus), config.dedup_threshold));
  RuleTagger tagger;

  m.config = config.to_json();
  m.config_hash = config_hash(config);
  m.root_seed = config.seed;

  const fs::path sl_dir = run_dir / "sl";
  if (force || !m.done(Stage::kSupervised)) {
    if (progress) progress("supervised stage");
    auto models = supervised_stage(data, config, tagger);
    models.vanilla->save(sl_dir, "vanilla");
    models.style->save(sl_dir, "style");
    if (progress) {
      std::ostringstream msg;
      msg << std::fixed << std::setprecision(4) << "supervised loss: vanilla " << models.vanilla_loss << " style "
          << models.style_loss;
      progress(msg.str());
    }
    m.paths["sl"] = sl_dir.string();
    m.mark(Stage::kSupervised);
    m.stages.erase(stage_name(Stage::kReinforce));
    m.save(run_dir);
  }

  const auto vanilla = load_model(m.path("sl", Stage::kSupervised), "vanilla");
  auto style = load_model(m.path("sl", Stage::kSupervised), "style");
  auto encoder = DualEncoder::load(m.path("retriever", Stage::kIndex));
  synth::SyntheticWorld world(*m.world_seed);
  synth::OracleQa qa(world, config.oracle_eps);

  const fs::path rl_dir = run_dir / "rl";
  fs::remove_all(rl_dir);
  auto result = rl_stage(data, *vanilla, std::move(style), std::move(encoder), qa, config, tagger, rl_dir, progress);
  const fs::path best = rl_dir / "checkpoints" / "best";
  copy_model_files(sl_dir, best, "vanilla");
  for (std::size_t e = 1; e <= config.rl_epochs; ++e)
    copy_model_files(sl_dir, rl_dir / "checkpoints" / ("epoch-" + std::to_string(e)), "vanilla");
  m.paths["rl"] = rl_dir.string();
  m.paths["checkpoint"] = best.string();
  m.mark(Stage::kReinforce);
  m.save(run_dir);
  return result;
}

void cmd_generate(const fs::path& run_dir, const std::optional<fs::path>& checkpoint,
                  const std::optional<fs::path>& dataset, std::optional<std::size_t> n,
                  const std::optional<fs::path>& out, const TrainerConfig& config) {
  RunLock lock(run_dir);
  auto m = Manifest::load_or_default(run_dir);
  fs::path ckpt;
  if (checkpoint) {
    ckpt = resolve(*checkpoint);
  } else {
    m.require(Stage::kReinforce);
    ckpt = m.path("checkpoint", Stage::kReinforce);
  }
  const fs::path data_path = dataset ? resolve(*dataset) : m.path("test", Stage::kData);
  m.require(Stage::kCorpus);
  const auto samples = read_dataset(data_path);

  const fs::path vanilla_dir =
      fs::exists(ckpt / "vanilla.json") ? ckpt : m.path("sl", Stage::kSupervised);
  const auto vanilla = adapt_vocabulary(*load_model(vanilla_dir, "vanilla"), samples);
  const auto style = adapt_vocabulary(*load_model(ckpt, "style"), samples);
  const auto encoder = DualEncoder::load(ckpt);
  auto corpus = std::make_shared<const TemplateCorpus>(
      read_corpus(m.path("corpus", Stage::kCorpus), config.dedup_threshold));
  const auto index = build_index(corpus, encoder);
  index.check_fresh(encoder);

  InferenceOptions opt;
  opt.n = n.value_or(config.outputs);
  opt.pool_size = config.eval_pool;
  opt.top_p = config.top_p;
  opt.top_k = config.top_k;
  opt.decode = config.decode();
  opt.seed = derive_seed(config.seed, "generate");
  RuleTagger tagger;
  const auto results = generate_top_n(*vanilla, *style, index, encoder, samples, opt, tagger);

  const fs::path dst = out ? resolve(*out) : run_dir / "outputs.jsonl";
  if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
  std::ofstream os(dst);
  RAST_REQUIRE(os.good(), ErrorCode::kIo, "cannot write " + dst.string());
  for (const auto& r : results)
    for (const auto& q : r.outputs) {
      json line;
      line["id"] = r.id;
      line["rank"] = q.rank;
      line["template"] = join(q.style);
      line["question"] = q.question.raw;
      line["log_prob"] = q.log_prob;
      os << line.dump() << '\n';
    }
  m.paths["outputs"] = dst.string();
  m.paths["outputs_dataset"] = data_path.string();
  m.mark(Stage::kGenerate);
  m.save(run_dir);
}

std::vector<TopNOutputs> read_outputs(const fs::path& outputs, const std::vector<Sample>& dataset) {
  std::unordered_map<std::string, const Sample*> by_id;
  for (const auto& s : dataset) by_id[s.id] = &s;
  std::ifstream in(outputs);
  RAST_REQUIRE(in.good(), ErrorCode::kIo, "cannot open " + outputs.string());

  std::vector<TopNOutputs> out;
  std::unordered_map<std::string, std::size_t> slot;
  std::vector<std::vector<std::pair<std::size_t, Question>>> ranked;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string id, question;
    std::size_t rank = 0;
    try {
      const auto j = json::parse(line);
      id = j.at("id").get<std::string>();
      question = j.at("question").get<std::string>();
      rank = j.value("rank", std::size_t{0});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kValidation, outputs.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    auto it = by_id.find(id);
    RAST_REQUIRE(it != by_id.end(), ErrorCode::kValidation,
                 outputs.string() + ":" + std::to_string(lineno) + ": id " + id + " not in dataset");
    auto [pos, fresh] = slot.emplace(id, out.size());
    if (fresh) {
      TopNOutputs o;
      o.id = id;
      o.references = {it->second->question};
      o.input = it->second->input;
      out.push_back(std::move(o));
      ranked.emplace_back();
    }
    auto& r = ranked[pos->second];
    r.emplace_back(rank == 0 ? r.size() + 1 : rank, Question::from_string(question));
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::stable_sort(ranked[i].begin(), ranked[i].end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [rank, q] : ranked[i]) out[i].hypotheses.push_back(std::move(q));
  }
  RAST_REQUIRE(!out.empty(), ErrorCode::kValidation, outputs.string() + " holds no outputs");
  return out;
}

MetricReport cmd_evaluate(const fs::path& run_dir, const std::optional<fs::path>& outputs,
                          const std::optional<fs::path>& dataset, std::optional<std::uint64_t> world_seed,
                          const std::optional<fs::path>& report_out) {
  RunLock lock(run_dir);
  auto m = Manifest::load_or_default(run_dir);
  fs::path out_path;
  if (outputs) {
    out_path = resolve(*outputs);
  } else {
    m.require(Stage::kGenerate);
    out_path = m.path("outputs", Stage::kGenerate);
  }
  fs::path data_path;
  if (dataset) data_path = resolve(*dataset);
  else if (m.paths.count("outputs_dataset")) data_path = m.paths.at("outputs_dataset");
  else data_path = m.path("test", Stage::kData);

  const auto samples = read_dataset(data_path);
  const auto top_n = read_outputs(out_path, samples);
  if (!world_seed) world_seed = m.world_seed;
  std::optional<synth::SyntheticWorld> world;
  std::optional<synth::OracleQa> qa;
  if (world_seed) {
    world.emplace(*world_seed);
    qa.emplace(*world, m.config.value("oracle_eps", 0.05));
  }
  auto report = evaluate_outputs(top_n, qa ? &*qa : nullptr);

  const fs::path dst = report_out ? resolve(*report_out) : run_dir / "report.json";
  if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
  std::ofstream os(dst);
  RAST_REQUIRE(os.good(), ErrorCode::kIo, "cannot write " + dst.string());
  os << report.to_json() << '\n';
  m.paths["report"] = dst.string();
  m.mark(Stage::kEvaluate);
  m.save(run_dir);
  return report;
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kValidation:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kAnswerNotInContext:
    case ErrorCode::kInputTooLong:
    case ErrorCode::kKTooLarge:
      return 2;
    case ErrorCode::kStageDependency:
      return 3;
    default:
      return 1;
  }
}

}  // namespace rast::pipeline
