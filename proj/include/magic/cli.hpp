#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "magic/analysis.hpp"
#include "magic/mixing.hpp"
#include "magic/search.hpp"

namespace magic {

// One experiment, fully specified: search space, task, training, and the
// per-subcommand knobs. Every field has a default; the key=value config file
// and --set overrides address them by dotted key (see config_reference()).
struct ExperimentConfig {
  uint64_t seed = 1;       // net init + training streams (task streams have their own seeds)
  std::string out;         // output dir; empty -> $MAGICNAS_OUT or "out"
  std::string checkpoint;  // input checkpoint stem (analyze / rank)
  int jobs = 1;            // accepted bound on worker threads; execution is sequential

  int layers = 6;
  int d_model = 64;
  std::string ops = "mha4x16,ffn64,conv3,conv5";

  TaskSpec task;
  TrainConfig train;

  int og_layer = 0;              // probed layer for the similarity matrix / m-curve
  std::vector<int> m_values = {1, 2, 3, 4};
  std::vector<int> sweep_layers; // og-layer sweep; empty skips the sweep artifact
  int repeats = 10;
  int analysis_batch = 32;

  int rank_children = 16;
  int64_t rank_steps = 0;  // standalone budget for rank; 0 reuses train.steps

  int deletions = 0;              // slots removed per shrink epoch; 0 -> scaled default
  bool search_standalone = false; // also train the final child standalone

  std::string child;  // standalone subject, e.g. "0,1,2,3,0,1"

  int mixing_layers = 12;
  int mixing_ops = 4;
  bool mixing_lazy = false;
  double mixing_eps = 0.01;
  int mixing_t_max = 0;              // 0 -> mixing_steps_for(eps, layers)
  std::string mixing_mode = "auto";  // auto | full | lumped

  SupernetConfig space() const;  // vocab/seq_len copied from the task
  Task make_task() const;
};

// "mha4x16,ffn64,conv3" -> candidate operator specs
std::vector<OperatorSpec> parse_operator_list(const std::string& csv);

// Applies one dotted-key assignment; unknown keys and malformed values throw
// ConfigError naming the key.
void apply_config_kv(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// key=value lines ('#' comments); later assignments win.
ExperimentConfig parse_config_text(const std::string& text,
                                   ExperimentConfig base = ExperimentConfig{});
ExperimentConfig load_config_file(const std::string& path,
                                  ExperimentConfig base = ExperimentConfig{});

// Every key with its documented default and description.
std::string config_reference();

// Resolved values keyed like the config file; recorded in run_meta.json.
nlohmann::ordered_json config_json(const ExperimentConfig& cfg);

// Artifact renderers. Byte-deterministic, C-locale numerics ('.' decimal).
std::string similarity_csv(const SimilarityMatrix& s);
std::string mcurve_csv(const MCurve& c);
std::string sweep_csv(const LayerSweep& s);
std::string mixing_csv(const MixingReport& r);
std::string trainlog_jsonl(const TrainLog& log);
std::string anchor_jsonl(const TrainLog& log, const TrainConfig& cfg);

// Subcommand entry point: 0 success, 2 config error, 3 runtime/divergence.
int run_cli(int argc, const char* const* argv);

}  // namespace magic
