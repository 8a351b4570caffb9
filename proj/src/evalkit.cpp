#include "wsss/evalkit.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

#include "wsss/cams_io.hpp"
#include "wsss/errors.hpp"

namespace wsss {

namespace fs = std::filesystem;

ConfusionMatrix::ConfusionMatrix(long num_classes)
    : num_classes(num_classes),
      counts(torch::zeros({num_classes + 1, num_classes + 1}, torch::kInt64)) {}

void ConfusionMatrix::accumulate(const torch::Tensor& pred,
                                 const torch::Tensor& gt) {
  if (!pred.sizes().equals(gt.sizes()))
    throw DataError("ConfusionMatrix: pred/gt shape mismatch");
  auto p = pred.flatten().to(torch::kInt64);
  auto g = gt.flatten().to(torch::kInt64);
  if ((p == 255).any().item<bool>())
    throw DataError("ConfusionMatrix: predictions must be total (no 255)");
  if ((p > num_classes).any().item<bool>() || (p < 0).any().item<bool>())
    throw DataError("ConfusionMatrix: prediction class out of range");
  auto valid = g != 255;
  ignored += (valid.logical_not()).sum().item<long>();
  p = p.masked_select(valid);
  g = g.masked_select(valid);
  if ((g > num_classes).any().item<bool>())
    throw DataError("ConfusionMatrix: gt class out of range");
  auto flat = g * (num_classes + 1) + p;
  auto binned = torch::bincount(flat, {}, (num_classes + 1) * (num_classes + 1));
  counts += binned.reshape({num_classes + 1, num_classes + 1});
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes)
    throw DataError("ConfusionMatrix: merging different class counts");
  counts += other.counts;
  ignored += other.ignored;
}

long ConfusionMatrix::total() const { return counts.sum().item<long>(); }

IouReport miou(const ConfusionMatrix& conf) {
  IouReport rep;
  long n = conf.num_classes + 1;
  auto counts = conf.counts;
  double sum = 0.0;
  long defined = 0;
  for (long c = 0; c < n; ++c) {
    long tp = counts[c][c].item<long>();
    long fn = counts[c].sum().item<long>() - tp;
    long fp = counts.select(1, c).sum().item<long>() - tp;
    long uni = tp + fp + fn;
    if (uni == 0) {
      // Class absent from both prediction and GT: excluded from the mean.
      rep.per_class.push_back(std::nan(""));
      continue;
    }
    double iou = 100.0 * static_cast<double>(tp) / static_cast<double>(uni);
    rep.per_class.push_back(iou);
    sum += iou;
    ++defined;
  }
  rep.defined = defined > 0;
  rep.mean = defined > 0 ? sum / static_cast<double>(defined)
                         : std::nan("");
  return rep;
}

torch::Tensor decide_mask(const torch::Tensor& prior, double delta_bg) {
  auto peak = std::get<0>(prior.max(0));
  auto cls = prior.argmax(0) + 1;
  return torch::where(peak < delta_bg, torch::zeros_like(cls), cls);
}

std::string format_percent(double value) {
  if (std::isnan(value)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", value);
  return buf;
}

namespace {

std::vector<std::string> list_prior_ids(const fs::path& priors_dir) {
  std::vector<std::string> ids;
  if (!fs::is_directory(priors_dir))
    throw DataError("priors directory missing: " + priors_dir.string());
  for (const auto& entry : fs::directory_iterator(priors_dir))
    if (entry.path().extension() == ".cams")
      ids.push_back(entry.path().stem().string());
  std::sort(ids.begin(), ids.end());
  if (ids.empty())
    throw DataError("no .cams files in " + priors_dir.string());
  return ids;
}

torch::Tensor load_gt_for(const fs::path& gt_dir, const std::string& id) {
  auto file = gt_dir / (id + ".png");
  if (!fs::exists(file)) throw DataError("missing GT mask " + file.string());
  return read_mask(file);
}

torch::Tensor prior_at_gt_size(const torch::Tensor& prior,
                               const torch::Tensor& gt) {
  if (prior.size(1) == gt.size(0) && prior.size(2) == gt.size(1)) return prior;
  return resize_bilinear(prior, gt.size(0), gt.size(1));
}

void render_curve(const std::vector<SweepPoint>& curve,
                  const fs::path& plot_file) {
  const int w = 640, h = 480, m = 48;
  cv::Mat img(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
  cv::rectangle(img, {m, m}, {w - m, h - m}, cv::Scalar(0, 0, 0), 1);
  auto px = [&](double delta) {
    return m + static_cast<int>((w - 2 * m) * delta);
  };
  auto py = [&](double miou) {
    return h - m - static_cast<int>((h - 2 * m) * miou / 100.0);
  };
  for (std::size_t i = 1; i < curve.size(); ++i)
    cv::line(img, {px(curve[i - 1].delta), py(curve[i - 1].miou)},
             {px(curve[i].delta), py(curve[i].miou)}, cv::Scalar(180, 80, 0), 2);
  for (const auto& p : curve)
    cv::circle(img, {px(p.delta), py(p.miou)}, 3, cv::Scalar(0, 0, 200), -1);
  cv::putText(img, "delta_bg", {w / 2 - 40, h - 12}, cv::FONT_HERSHEY_SIMPLEX,
              0.5, cv::Scalar(0, 0, 0));
  cv::putText(img, "mIoU (%)", {8, 24}, cv::FONT_HERSHEY_SIMPLEX, 0.5,
              cv::Scalar(0, 0, 0));
  cv::imwrite(plot_file.string(), img);
}

}  // namespace

IouReport evaluate_priors(const fs::path& priors_dir, const fs::path& gt_dir,
                          long num_classes, double delta_bg) {
  ConfusionMatrix conf(num_classes);
  for (const auto& id : list_prior_ids(priors_dir)) {
    auto prior = load_cams(priors_dir / (id + ".cams"));
    auto gt = load_gt_for(gt_dir, id);
    conf.accumulate(decide_mask(prior_at_gt_size(prior, gt), delta_bg), gt);
  }
  return miou(conf);
}

std::vector<SweepPoint> threshold_sweep(const fs::path& priors_dir,
                                        const fs::path& gt_dir,
                                        const std::vector<double>& thresholds,
                                        long num_classes,
                                        const fs::path& csv_file,
                                        const fs::path& plot_file) {
  for (double t : thresholds)
    if (t <= 0 || t >= 1)
      throw ConfigError("threshold_sweep: thresholds must lie in (0,1)");
  auto ids = list_prior_ids(priors_dir);

  // Load priors once; evaluate every threshold against the same pairs.
  std::vector<SweepPoint> curve;
  for (double delta : thresholds) {
    ConfusionMatrix conf(num_classes);
    for (const auto& id : ids) {
      auto prior = load_cams(priors_dir / (id + ".cams"));
      auto gt = load_gt_for(gt_dir, id);
      conf.accumulate(decide_mask(prior_at_gt_size(prior, gt), delta), gt);
    }
    curve.push_back({delta, miou(conf).mean});
  }

  if (!csv_file.empty()) {
    std::ofstream csv(csv_file);
    csv << "delta,miou\n";
    for (const auto& p : curve) {
      char line[64];
      std::snprintf(line, sizeof(line), "%.6f,%.2f\n", p.delta, p.miou);
      csv << line;
    }
  }
  if (!plot_file.empty()) render_curve(curve, plot_file);
  return curve;
}

std::map<std::string, double> group_report(
    const std::vector<double>& per_class_iou, const GroupSpec& groups) {
  std::map<std::string, double> rows;
  for (const auto& [name, members] : groups) {
    if (members.empty()) {
      rows[name] = std::nan("");
      continue;
    }
    double sum = 0.0;
    long defined = 0;
    for (int c : members) {
      if (c < 0 || c >= static_cast<int>(per_class_iou.size()))
        throw ConfigError("group_report: unknown class index " +
                          std::to_string(c) + " in group " + name);
      if (!std::isnan(per_class_iou[c])) {
        sum += per_class_iou[c];
        ++defined;
      }
    }
    rows[name] = defined > 0 ? sum / defined : std::nan("");
  }
  return rows;
}

std::string render_group_table(const std::map<std::string, double>& rows) {
  std::ostringstream out;
  out << "group,mean_iou\n";
  for (const auto& [name, value] : rows)
    out << name << "," << format_percent(value) << "\n";
  return out.str();
}

double estimate_epoch_miou(ClassifierModel& model, const Dataset& samples,
                           long common_size, double delta_bg) {
  if (samples.size() == 0)
    throw DataError("estimate_epoch_miou: empty sample list");
  ConfusionMatrix conf(model.num_classes());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto s = samples.load(i, /*with_mask=*/true);
    if (!s.gt_mask.defined())
      throw DataError("estimate_epoch_miou: missing GT mask for " + s.id);
    auto image = resize_bilinear(s.image, common_size, common_size);
    auto prior = single_scale_prior(model, image);
    auto mask = decide_mask(prior, delta_bg);
    auto gt = s.gt_mask.to(torch::kFloat32).unsqueeze(0).unsqueeze(0);
    gt = torch::nn::functional::interpolate(
        gt, torch::nn::functional::InterpolateFuncOptions()
                .size(std::vector<long>{common_size, common_size})
                .mode(torch::kNearest));
    conf.accumulate(mask, gt.squeeze().to(torch::kInt64));
  }
  return miou(conf).mean;
}

IouReport evaluate_mask_dirs(const fs::path& pred_dir, const fs::path& gt_dir,
                             long num_classes, const fs::path& csv_file) {
  if (!fs::is_directory(pred_dir))
    throw DataError("prediction directory missing: " + pred_dir.string());
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(pred_dir))
    if (entry.path().extension() == ".png")
      ids.push_back(entry.path().stem().string());
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw DataError("no masks in " + pred_dir.string());
  ConfusionMatrix conf(num_classes);
  for (const auto& id : ids) {
    auto pred = read_mask(pred_dir / (id + ".png"));
    auto gt = load_gt_for(gt_dir, id);
    conf.accumulate(pred, gt);
  }
  auto rep = miou(conf);
  if (!csv_file.empty()) {
    std::ofstream csv(csv_file);
    csv << "class,iou\n";
    for (std::size_t c = 0; c < rep.per_class.size(); ++c)
      csv << c << "," << format_percent(rep.per_class[c]) << "\n";
    csv << "mean," << format_percent(rep.mean) << "\n";
  }
  return rep;
}

}  // namespace wsss
