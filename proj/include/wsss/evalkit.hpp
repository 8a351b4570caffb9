#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wsss/cam_core.hpp"
#include "wsss/dataset.hpp"

namespace wsss {

// Streaming confusion matrix over C foreground classes plus background
// (row/col 0). GT value 255 is ignored; predictions must be total.
struct ConfusionMatrix {
  explicit ConfusionMatrix(long num_classes);

  long num_classes;      // foreground classes
  torch::Tensor counts;  // int64 [C+1, C+1], rows = gt, cols = pred
  long ignored = 0;

  void accumulate(const torch::Tensor& pred, const torch::Tensor& gt);
  void merge(const ConfusionMatrix& other);
  long total() const;
};

struct IouReport {
  std::vector<double> per_class;  // percent; NaN where union is empty
  double mean = 0.0;              // percent over defined classes
  bool defined = false;
};

IouReport miou(const ConfusionMatrix& conf);

// Argmax-with-background decision rule: background where the prior peak
// is below delta_bg, argmax class otherwise.
torch::Tensor decide_mask(const torch::Tensor& prior, double delta_bg);

struct SweepPoint {
  double delta;
  double miou;  // percent
};

// Evaluates the full prior set at each threshold; writes a CSV
// (delta,miou) and a rendered curve image next to it.
std::vector<SweepPoint> threshold_sweep(
    const std::filesystem::path& priors_dir,
    const std::filesystem::path& gt_dir, const std::vector<double>& thresholds,
    long num_classes, const std::filesystem::path& csv_file,
    const std::filesystem::path& plot_file);

// name -> member class indices into the per-class IoU vector.
using GroupSpec = std::map<std::string, std::vector<int>>;

// Mean of member IoUs per group; empty groups map to NaN (printed n/a).
std::map<std::string, double> group_report(
    const std::vector<double>& per_class_iou, const GroupSpec& groups);

std::string render_group_table(const std::map<std::string, double>& rows);

// Single-scale, no-TTA mIoU estimate at a fixed common frame; a cheap
// per-epoch proxy for the full TTA score, never fed back into training.
double estimate_epoch_miou(ClassifierModel& model, const Dataset& samples,
                           long common_size, double delta_bg);

// Directory evaluation: pred/<id>.png vs gt/<id>.png.
IouReport evaluate_mask_dirs(const std::filesystem::path& pred_dir,
                             const std::filesystem::path& gt_dir,
                             long num_classes,
                             const std::filesystem::path& csv_file = {});

// Prior-file evaluation at a fixed threshold.
IouReport evaluate_priors(const std::filesystem::path& priors_dir,
                          const std::filesystem::path& gt_dir,
                          long num_classes, double delta_bg);

std::string format_percent(double value);  // two decimals, n/a for NaN

}  // namespace wsss
