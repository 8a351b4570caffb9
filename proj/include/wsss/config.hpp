#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "wsss/c2amh.hpp"
#include "wsss/dataset.hpp"
#include "wsss/trainer.hpp"

namespace wsss {

enum class Stage {
  generate,
  train_vanilla,
  train_pnoc,
  make_priors,
  train_c2amh,
  make_saliency,
  make_seeds,
  refine_rw,
  evaluate,
  report,
};

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& name);

struct RefineConfig {
  int radius = 5;
  double sigma = 0;  // 0 selects the median feature-distance heuristic
  // Walk temperature/length tuned on the synthetic benchmark: at 64x64
  // with color-only affinity, long low-beta walks (e.g. beta 8, t 256)
  // diffuse mass across region boundaries and erase the priors.
  double beta = 32;
  int t_iters = 8;
  std::string crf_plugin = "identity";
  double delta_fg = 0.4;
  double delta_bg = 0.1;
  double delta_sal = 0.5;
};

struct EvalConfig {
  double delta_bg = 0.25;
  std::vector<double> sweep_deltas;  // default 0.05:0.95:0.05
};

// Flat, sectioned key-value config; round-trips losslessly and rejects
// unknown keys.
struct PipelineConfig {
  std::filesystem::path data_root;
  std::filesystem::path eval_root;
  std::filesystem::path out;
  uint64_t seed = 1;
  std::vector<Stage> stages;  // default: the full ordered pipeline
  bool force = false;

  SyntheticSpec synthetic_train;
  SyntheticSpec synthetic_eval;
  TrainConfig train;
  C2amConfig c2am;
  RefineConfig refine;
  EvalConfig eval;
};

PipelineConfig default_pipeline_config();
PipelineConfig parse_pipeline_config(const std::string& text);
PipelineConfig load_pipeline_config(const std::filesystem::path& file);
std::string serialize_pipeline_config(const PipelineConfig& cfg);

std::vector<double> parse_delta_range(const std::string& spec);  // lo:hi:step

}  // namespace wsss
