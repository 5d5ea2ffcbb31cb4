#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "rast/corpus.hpp"
#include "rast/error.hpp"
#include "rast/metrics.hpp"
#include "rast/trainer.hpp"

namespace rast::pipeline {

namespace fs = std::filesystem;

enum class Stage { kData, kCorpus, kIndex, kSupervised, kReinforce, kGenerate, kEvaluate };
std::string stage_name(Stage stage);

/// manifest.json inside a run directory.
struct Manifest {
  std::uint64_t root_seed = 13;
  std::optional<std::uint64_t> world_seed;  // set when the data came from `synth`
  std::string config_hash;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, std::string> paths;
  std::map<std::string, bool> stages;

  static Manifest load_or_default(const fs::path& run_dir);
  void save(const fs::path& run_dir) const;

  bool done(Stage s) const;
  void mark(Stage s);
  /// Throws StageDependency naming the stage that should have produced it.
  fs::path path(const std::string& key, Stage producer) const;
  void require(Stage s) const;
};

/// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const fs::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

/// Relative paths resolve against RAST_DATA_DIR when it is set.
fs::path resolve(const fs::path& p);

/// Flat JSON object from a config file; ValidationError otherwise.
nlohmann::json load_config_file(const fs::path& path);

/// Preset (flag, else file "preset" key, else "toy"), then the file layer, then the flags.
TrainerConfig resolve_config(const nlohmann::json& file_layer, const nlohmann::json& flag_overrides);
std::string config_hash(const TrainerConfig& config);

/// Seed for a named consumer of the root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose);

struct SynthSizes {
  std::size_t train = 500;
  std::size_t dev = 100;
  std::size_t test = 100;
};

void cmd_synth(const fs::path& run_dir, std::uint64_t seed, const SynthSizes& sizes,
               const std::optional<fs::path>& out_dir);

CorpusBuildResult cmd_build_corpus(const fs::path& run_dir, const std::optional<fs::path>& dataset,
                                   const std::optional<fs::path>& out, double threshold);

/// Without a checkpoint, a fresh retriever is initialized from the config and saved in the run.
void cmd_build_index(const fs::path& run_dir, const std::optional<fs::path>& corpus,
                     const std::optional<fs::path>& checkpoint, const std::optional<fs::path>& out,
                     const TrainerConfig& config);

/// Supervised then policy-gradient stage; a finished stage is skipped unless force.
TrainResult cmd_train(const fs::path& run_dir, const TrainerConfig& config, bool force,
                      const ProgressFn& progress = {});

/// JSONL lines {id, rank, template, question, log_prob}.
void cmd_generate(const fs::path& run_dir, const std::optional<fs::path>& checkpoint,
                  const std::optional<fs::path>& dataset, std::optional<std::size_t> n,
                  const std::optional<fs::path>& out, const TrainerConfig& config);

/// Reads a generation dump and its dataset; EM/F1 need a synthetic world seed.
std::vector<TopNOutputs> read_outputs(const fs::path& outputs, const std::vector<Sample>& dataset);

MetricReport cmd_evaluate(const fs::path& run_dir, const std::optional<fs::path>& outputs,
                          const std::optional<fs::path>& dataset, std::optional<std::uint64_t> world_seed,
                          const std::optional<fs::path>& report_out);

/// Exit status for an error: 2 validation, 3 stage dependency, 1 otherwise.
int exit_code(ErrorCode code);

}  // namespace rast::pipeline
