// Command-line front end for the question-generation pipeline.
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "rast/error.hpp"
#include "rast/pipeline.hpp"

namespace fs = std::filesystem;
namespace pl = rast::pipeline;
using nlohmann::json;

namespace {

struct ConfigFlags {
  std::optional<std::string> config_file;
  std::optional<std::string> preset;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda, kl_beta, top_p, generator_lr, retriever_lr, sl_lr;
  std::optional<std::size_t> sl_epochs, rl_epochs, batch_size, clusters, top_k, outputs, train_pool, eval_pool;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "Flat JSON config file");
    app->add_option("--preset", preset, "toy | squad1 | squad2 | newsqa");
    app->add_option("--seed", seed, "Root seed");
    app->add_option("--lambda", lambda, "Diversity reward weight");
    app->add_option("--kl-beta", kl_beta, "KL penalty weight");
    app->add_option("--top-p", top_p, "Nucleus mass");
    app->add_option("--top-k", top_k, "Nucleus token cap");
    app->add_option("--generator-lr", generator_lr, "Policy-gradient generator learning rate");
    app->add_option("--retriever-lr", retriever_lr, "Retriever learning rate");
    app->add_option("--sl-lr", sl_lr, "Supervised learning rate");
    app->add_option("--sl-epochs", sl_epochs, "Supervised epochs");
    app->add_option("--rl-epochs", rl_epochs, "Policy-gradient epochs");
    app->add_option("--batch-size", batch_size, "Batch size");
    app->add_option("--clusters", clusters, "Templates per training sample");
    app->add_option("--outputs", outputs, "Questions per sample at inference");
    app->add_option("--train-pool", train_pool, "Retrieval pool size while training");
    app->add_option("--eval-pool", eval_pool, "Retrieval pool size at inference");
  }

  json overrides() const {
    json j = json::object();
    auto put = [&](const char* key, const auto& v) {
      if (v) j[key] = *v;
    };
    put("preset", preset);
    put("seed", seed);
    put("lambda", lambda);
    put("kl_beta", kl_beta);
    put("top_p", top_p);
    put("top_k", top_k);
    put("generator_lr", generator_lr);
    put("retriever_lr", retriever_lr);
    put("sl_lr", sl_lr);
    put("sl_epochs", sl_epochs);
    put("rl_epochs", rl_epochs);
    put("batch_size", batch_size);
    put("clusters", clusters);
    put("outputs", outputs);
    put("train_pool", train_pool);
    put("eval_pool", eval_pool);
    return j;
  }

  // The run's recorded config stands in for a file when none is given.
  rast::TrainerConfig resolve(const fs::path& run_dir) const {
    json file = json::object();
    if (config_file) {
      file = pl::load_config_file(*config_file);
    } else {
      const auto m = pl::Manifest::load_or_default(run_dir);
      if (!m.config.empty()) file = m.config;
    }
    return pl::resolve_config(file, overrides());
  }
};

std::optional<fs::path> as_path(const std::optional<std::string>& s) {
  if (!s) return std::nullopt;
  return fs::path(*s);
}

void fail(const std::string& error, const std::string& message) {
  json j;
  j["error"] = error;
  j["message"] = message;
  std::cerr << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval-augmented style-transfer question generation"};
  app.require_subcommand(1);
  std::string run_dir_arg = "run";
  app.add_option("--run-dir", run_dir_arg, "Run directory holding the manifest (relative to RAST_DATA_DIR if set)");

  auto* synth = app.add_subcommand("synth", "Generate the synthetic train/dev/test world");
  std::uint64_t synth_seed = 13;
  std::string sizes_arg = "500,100,100";
  std::optional<std::string> synth_out;
  synth->add_option("--seed", synth_seed, "World seed");
  synth->add_option("--sizes", sizes_arg, "train,dev,test sample counts");
  synth->add_option("--out", synth_out, "Output directory (default <run-dir>/data)");

  auto* corpus = app.add_subcommand("build-corpus", "Mask questions into a deduplicated template corpus");
  std::optional<std::string> corpus_dataset, corpus_out;
  double threshold = 0.8;
  corpus->add_option("--dataset", corpus_dataset, "Training JSONL (default: the run's train split)");
  corpus->add_option("--out", corpus_out, "Corpus JSONL (default <run-dir>/corpus.jsonl)");
  corpus->add_option("--threshold", threshold, "Jaccard dedup threshold in (0, 1]");

  auto* index = app.add_subcommand("build-index", "Embed the corpus with the candidate encoder");
  std::optional<std::string> index_corpus, index_ckpt, index_out;
  ConfigFlags index_cfg;
  index->add_option("--corpus", index_corpus, "Corpus JSONL (default: the run's corpus)");
  index->add_option("--checkpoint", index_ckpt, "Retriever checkpoint dir (default: fresh retriever)");
  index->add_option("--out", index_out, "Index manifest path (default <run-dir>/index/index.json)");
  index_cfg.attach(index);

  auto* train = app.add_subcommand("train", "Supervised then policy-gradient training");
  ConfigFlags train_cfg;
  bool force = false;
  train_cfg.attach(train);
  train->add_flag("--force", force, "Redo the supervised stage even if it finished");

  auto* generate = app.add_subcommand("generate", "Top-N question generation");
  std::optional<std::string> gen_ckpt, gen_dataset, gen_out;
  std::optional<std::size_t> gen_n;
  ConfigFlags gen_cfg;
  generate->add_option("--checkpoint", gen_ckpt, "Checkpoint dir (default: the run's best)");
  generate->add_option("--dataset", gen_dataset, "Dataset JSONL (default: the run's test split)");
  generate->add_option("-n,--top-n", gen_n, "Questions per sample");
  generate->add_option("--out", gen_out, "Dump JSONL (default <run-dir>/outputs.jsonl)");
  gen_cfg.attach(generate);

  auto* evaluate = app.add_subcommand("evaluate", "BLEU diversity metrics and oracle EM/F1");
  std::optional<std::string> ev_outputs, ev_dataset, ev_report;
  std::optional<std::uint64_t> ev_world;
  evaluate->add_option("--outputs", ev_outputs, "Generation dump (default: the run's)");
  evaluate->add_option("--dataset", ev_dataset, "Dataset JSONL with the references");
  evaluate->add_option("--world-seed", ev_world, "Synthetic world seed for the QA oracle");
  evaluate->add_option("--report", ev_report, "Report JSON (default <run-dir>/report.json)");

  auto* show = app.add_subcommand("show-config", "Print the resolved configuration");
  ConfigFlags show_cfg;
  show_cfg.attach(show);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("ValidationError", e.what());
    return 2;
  }

  const fs::path run_dir = pl::resolve(run_dir_arg);
  try {
    if (*synth) {
      pl::SynthSizes sizes;
      char c1 = 0, c2 = 0;
      std::istringstream in(sizes_arg);
      if (!(in >> sizes.train >> c1 >> sizes.dev >> c2 >> sizes.test) || c1 != ',' || c2 != ',')
        throw rast::Error(rast::ErrorCode::kValidation, "--sizes must look like 500,100,100");
      pl::cmd_synth(run_dir, synth_seed, sizes, as_path(synth_out));
      std::cout << "wrote " << sizes.train << "/" << sizes.dev << "/" << sizes.test << " samples\n";
    } else if (*corpus) {
      const auto r = pl::cmd_build_corpus(run_dir, as_path(corpus_dataset), as_path(corpus_out), threshold);
      std::cout << "corpus: " << r.corpus.size() << " templates, " << r.skipped << " samples skipped\n";
    } else if (*index) {
      pl::cmd_build_index(run_dir, as_path(index_corpus), as_path(index_ckpt), as_path(index_out),
                          index_cfg.resolve(run_dir));
      std::cout << "index built\n";
    } else if (*train) {
      const auto r = pl::cmd_train(run_dir, train_cfg.resolve(run_dir), force,
                                   [](const std::string& msg) { std::cerr << msg << std::endl; });
      std::cout << "best epoch " << r.best_epoch << ", dev oracle BLEU " << r.best_oracle_bleu << "\n";
    } else if (*generate) {
      pl::cmd_generate(run_dir, as_path(gen_ckpt), as_path(gen_dataset), gen_n, as_path(gen_out),
                       gen_cfg.resolve(run_dir));
      std::cout << "generation done\n";
    } else if (*evaluate) {
      const auto r = pl::cmd_evaluate(run_dir, as_path(ev_outputs), as_path(ev_dataset), ev_world,
                                      as_path(ev_report));
      std::cout << r.table();
    } else if (*show) {
      std::cout << show_cfg.resolve(run_dir).to_json().dump(2) << "\n";
    }
  } catch (const rast::Error& e) {
    fail(std::string(rast::to_string(e.code())), e.what());
    return pl::exit_code(e.code());
  } catch (const std::exception& e) {
    fail("InternalError", e.what());
    return 1;
  }
  return 0;
}
