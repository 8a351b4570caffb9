#pragma once

#include <filesystem>
#include <vector>

#include "wsss/config.hpp"
#include "wsss/evalkit.hpp"

namespace wsss {

// Fixed on-disk layout under cfg.out.
struct PipelineLayout {
  std::filesystem::path root;
  std::filesystem::path run_vanilla() const { return root / "runs" / "vanilla"; }
  std::filesystem::path run_pnoc() const { return root / "runs" / "pnoc"; }
  std::filesystem::path priors_train() const { return root / "priors_train"; }
  std::filesystem::path priors_eval() const { return root / "priors_eval"; }
  std::filesystem::path c2amh() const { return root / "c2amh"; }
  std::filesystem::path saliency_train() const { return root / "saliency_train"; }
  std::filesystem::path saliency_eval() const { return root / "saliency_eval"; }
  std::filesystem::path seeds() const { return root / "seeds"; }
  std::filesystem::path masks_rw() const { return root / "masks_rw"; }
  std::filesystem::path report() const { return root / "report"; }
};

struct StageStatus {
  Stage stage;
  bool skipped = false;  // artifacts already present and force was off
};

struct PipelineResult {
  std::vector<StageStatus> stages;
  PipelineLayout layout;
};

// The artifact a stage is judged complete by; its absence forces a
// (re-)run, and downstream stages report it by name when missing.
std::filesystem::path stage_artifact(const PipelineConfig& cfg, Stage stage);

// Group axes of the synthetic class set, keyed into the per-class IoU
// vector (index 0 = background).
GroupSpec synthetic_groups(long num_classes);

// Runs cfg.stages in the given order. Stages whose artifact already
// exists are skipped unless cfg.force; missing upstream artifacts raise
// a stage failure naming the absent path.
PipelineResult run_pipeline(const PipelineConfig& cfg);

}  // namespace wsss
