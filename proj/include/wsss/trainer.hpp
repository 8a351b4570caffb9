#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "wsss/dataset.hpp"
#include "wsss/model.hpp"
#include "wsss/objectives.hpp"

namespace wsss {

enum class TrainMode { vanilla, puzzle, p_oc, p_noc };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

struct TrainConfig {
  TrainMode mode = TrainMode::vanilla;
  int epochs = 15;
  double lr_scratch = 0.1;
  double lr_pretrained = 0.01;
  bool pretrained = false;  // toy backbones start from scratch
  double weight_decay = 1e-4;
  double momentum = 0.9;
  int batch_size = 16;
  int accumulation = 1;  // apply the f update every N steps
  uint64_t seed = 1;
  long image_size = 64;
  ToyCnnConfig model;
  ScheduleSet sched;  // total_steps filled in by train()
  AugmentPolicy augment_policy = AugmentPolicy::color_jitter;
  bool re_restrict_to_present = true;
  std::string oc_checkpoint;  // vanilla weights; required for p_oc/p_noc
  bool epoch_miou_estimate = false;  // uses dataset GT masks; diagnostic only
  double estimate_delta_bg = 0.25;
  bool emit_priors = true;
  std::vector<double> tta_scales = {0.5, 1.0, 1.5, 2.0};
  bool tta_flip = true;

  double base_lr() const { return pretrained ? lr_pretrained : lr_scratch; }
};

// Plain SGD with momentum and decoupled-from-nothing weight decay:
// buf = momentum*buf + (g + wd*p); p -= lr*buf.
// Returns false (and leaves params untouched) on non-finite gradients.
struct SgdState {
  std::vector<torch::Tensor> momentum;
};

bool sgd_step(std::vector<torch::Tensor>& params,
              const std::vector<torch::Tensor>& grads, SgdState& state,
              double lr, double weight_decay, double momentum);

// Uniform draw over the positive entries of y, consuming exactly one
// RNG draw.
long sample_class(const torch::Tensor& y, std::mt19937_64& rng);

struct StepResult {
  LossReport f_report;
  std::optional<LossReport> noc_report;
  bool f_update_applied = false;
  bool noc_phase_ran = false;
  bool noc_phase_skipped_schedule = false;  // k_noc said not this step
};

// One alternating-optimization step:
//   (i)  forward f on x and its tiles, forward the erasing classifier on
//        the soft-masked input, update f by the combined loss;
//   (ii) when step % k_noc == 0 (p_noc only), rebuild a hard-masked
//        input with psi detached and update the erasing classifier.
StepResult pnoc_step(const torch::Tensor& x, const torch::Tensor& y, ToyCnn& f,
                     ToyCnn* erasing, const TrainConfig& cfg, long step,
                     std::mt19937_64& class_rng, SgdState& f_state,
                     SgdState* noc_state, int accum_phase);

struct TrainResult {
  std::filesystem::path run_dir;
  long total_steps = 0;
};

// Runs the full schedule, writing config.snapshot, metrics.log,
// checkpoints/step-N.bin and (optionally) priors/<id>.cams under out.
// resume_checkpoint, when set, restores model/optimizer/RNG state and
// continues from the saved epoch.
TrainResult train(const Dataset& dataset, TrainConfig cfg,
                  const std::filesystem::path& out,
                  const std::filesystem::path& resume_checkpoint = {});

// Stable content hash of a parameter list (order-sensitive).
uint64_t parameter_hash(const std::vector<torch::Tensor>& params);

void save_model_checkpoint(const std::filesystem::path& file, ToyCnn& f,
                           ToyCnn* noc);
std::shared_ptr<ToyCnn> load_model_checkpoint(const std::filesystem::path& file,
                                              const ToyCnnConfig& cfg,
                                              const std::string& prefix = "f");

void emit_priors_for(ToyCnn& model, const Dataset& dataset,
                     const std::filesystem::path& out_dir,
                     const std::vector<double>& scales, bool flip);

}  // namespace wsss
