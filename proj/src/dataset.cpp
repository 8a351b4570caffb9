#include "wsss/dataset.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "wsss/cam_core.hpp"
#include "wsss/errors.hpp"

namespace wsss {

namespace fs = std::filesystem;

torch::Tensor read_image(const fs::path& file) {
  cv::Mat bgr = cv::imread(file.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("cannot decode image " + file.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8)
               .clone()
               .permute({2, 0, 1})
               .to(torch::kFloat32) /
           255.0;
  return t;
}

void write_image(const fs::path& file, const torch::Tensor& image) {
  auto t = (image.clamp(0, 1) * 255.0)
               .round()
               .to(torch::kUInt8)
               .permute({1, 2, 0})
               .contiguous();
  cv::Mat rgb(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_8UC3,
              t.data_ptr());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(file.string(), bgr))
    throw DataError("cannot write image " + file.string());
}

torch::Tensor read_mask(const fs::path& file) {
  cv::Mat m = cv::imread(file.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw DataError("cannot decode mask " + file.string());
  return torch::from_blob(m.data, {m.rows, m.cols}, torch::kUInt8)
      .clone()
      .to(torch::kInt64);
}

void write_mask(const fs::path& file, const torch::Tensor& mask) {
  auto t = mask.to(torch::kUInt8).contiguous();
  cv::Mat m(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_8UC1,
            t.data_ptr());
  if (!cv::imwrite(file.string(), m))
    throw DataError("cannot write mask " + file.string());
}

void write_gray(const fs::path& file, const torch::Tensor& map01) {
  write_mask(file, (map01.clamp(0, 1) * 255.0).round().to(torch::kInt64));
}

torch::Tensor read_gray(const fs::path& file) {
  return read_mask(file).to(torch::kFloat32) / 255.0;
}

bool Dataset::has_mask(const std::string& id) const {
  return fs::exists(root / "masks" / (id + ".png"));
}

torch::Tensor Dataset::label_vector(const std::string& id) const {
  auto it = labels.find(id);
  if (it == labels.end()) throw DataError("no labels for sample " + id);
  auto y = torch::zeros({num_classes}, torch::kFloat32);
  for (int c : it->second) y[c - 1] = 1.0;
  return y;
}

ImageSample Dataset::load(std::size_t index, bool with_mask) const {
  if (index >= ids.size()) throw DataError("sample index out of range");
  const std::string& id = ids[index];
  {
    std::lock_guard<std::mutex> lock(cache_->mu);
    auto it = cache_->entries.find(index);
    if (it != cache_->entries.end() &&
        (!with_mask || it->second.second.defined())) {
      ImageSample s;
      s.id = id;
      s.image = it->second.first;
      s.labels = label_vector(id);
      if (with_mask) s.gt_mask = it->second.second;
      return s;
    }
  }
  ImageSample s;
  s.id = id;
  s.image = read_image(root / "images" / (id + ".png"));
  // Odd dimensions are resized to the nearest even size at ingestion so
  // tile/merge stay exact inverses.
  long h = s.image.size(1), w = s.image.size(2);
  long eh = std::max<long>(8, h - (h % 2)), ew = std::max<long>(8, w - (w % 2));
  bool resized = eh != h || ew != w;
  if (resized) s.image = resize_bilinear(s.image, eh, ew);
  s.labels = label_vector(id);
  if (with_mask) {
    auto mask_file = root / "masks" / (id + ".png");
    if (fs::exists(mask_file)) {
      s.gt_mask = read_mask(mask_file);
      if (resized) {
        auto m = s.gt_mask.to(torch::kFloat32).unsqueeze(0).unsqueeze(0);
        m = torch::nn::functional::interpolate(
            m, torch::nn::functional::InterpolateFuncOptions()
                   .size(std::vector<long>{eh, ew})
                   .mode(torch::kNearest));
        s.gt_mask = m.squeeze().to(torch::kInt64);
      }
      auto valid =
          (s.gt_mask <= num_classes).logical_or(s.gt_mask == 255).all();
      if (!valid.item<bool>())
        throw DataError("mask for " + id + " holds out-of-range class values");
    }
  }
  {
    std::lock_guard<std::mutex> lock(cache_->mu);
    auto& entry = cache_->entries[index];
    entry.first = s.image;
    if (s.gt_mask.defined()) entry.second = s.gt_mask;
  }
  return s;
}

Dataset load_voc(const fs::path& root) {
  Dataset ds;
  ds.root = root;
  auto labels_file = root / "labels.txt";
  std::ifstream in(labels_file);
  if (!in) throw DataError("cannot open " + labels_file.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, class_list;
    if (!(ls >> id >> class_list))
      throw DataError("labels.txt line " + std::to_string(line_no) +
                      ": expected '<id> <class,...>'");
    std::vector<int> classes;
    std::istringstream cs(class_list);
    std::string tok;
    while (std::getline(cs, tok, ',')) {
      try {
        classes.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        throw DataError("labels.txt line " + std::to_string(line_no) +
                        ": bad class id '" + tok + "'");
      }
      if (classes.back() < 1)
        throw DataError("labels.txt line " + std::to_string(line_no) +
                        ": class ids are 1-based");
    }
    if (classes.empty())
      throw DataError("labels.txt line " + std::to_string(line_no) +
                      ": empty class list");
    if (!fs::exists(root / "images" / (id + ".png")))
      throw DataError("labels.txt line " + std::to_string(line_no) +
                      ": missing image for sample " + id);
    ds.ids.push_back(id);
    ds.labels[id] = classes;
    for (int c : classes) ds.num_classes = std::max<long>(ds.num_classes, c);
  }
  if (ds.ids.empty()) throw DataError("empty dataset at " + root.string());
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

struct Rgb {
  double r, g, b;
};

// Class hues: blob=red, box=green, wedge=blue, bar=yellow, ring=magenta.
const Rgb kHues[5] = {{0.85, 0.15, 0.15},
                      {0.15, 0.75, 0.20},
                      {0.20, 0.30, 0.90},
                      {0.90, 0.85, 0.15},
                      {0.85, 0.20, 0.80}};

// Shape bodies carry a weak class tint; the saturated core is the
// strong, augmentation-robust cue. A classifier trained under color
// jitter shortcuts to the core, so covering the body takes the kind of
// secondary-evidence pressure the erasing objectives provide.
cv::Scalar body_color(int cls, double mix) {
  const Rgb& h = kHues[cls - 1];
  double g = 0.5;
  return {g + (h.r - g) * mix, g + (h.g - g) * mix, g + (h.b - g) * mix};
}

cv::Scalar core_color(int cls) {
  const Rgb& h = kHues[cls - 1];
  return {h.r, h.g, h.b};
}

double urand(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int irand(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Draws one shape of class cls into img (float RGB) and its class index
// into mask. Returns the core center so the marker lands on the shape.
void draw_shape(cv::Mat& img, cv::Mat& mask, int cls, int size,
                std::mt19937_64& rng) {
  int margin = size / 6;
  cv::Point center(irand(rng, margin, size - 1 - margin),
                   irand(rng, margin, size - 1 - margin));
  double mix = urand(rng, 0.15, 0.25);
  cv::Scalar body = body_color(cls, mix);
  cv::Point core_at = center;

  switch (cls) {
    case 1: {  // blob: large circle
      int radius = irand(rng, size / 4, size / 3);
      cv::circle(img, center, radius, body, cv::FILLED, cv::LINE_8);
      cv::circle(mask, center, radius, cls, cv::FILLED, cv::LINE_8);
      break;
    }
    case 2: {  // box
      int half = irand(rng, size / 8, size / 5);
      cv::Rect rect(center.x - half, center.y - half, 2 * half, 2 * half);
      cv::rectangle(img, rect, body, cv::FILLED, cv::LINE_8);
      cv::rectangle(mask, rect, cls, cv::FILLED, cv::LINE_8);
      break;
    }
    case 3: {  // wedge: triangle
      int half = irand(rng, size / 7, size / 4);
      std::vector<cv::Point> pts = {
          {center.x, center.y - half},
          {center.x - half, center.y + half},
          {center.x + half, center.y + half}};
      cv::fillConvexPoly(img, pts, body, cv::LINE_8);
      cv::fillConvexPoly(mask, pts, cls, cv::LINE_8);
      core_at = {center.x, center.y + half / 3};
      break;
    }
    case 4: {  // bar: thin rotated stroke
      double angle = urand(rng, 0, 3.14159265);
      int len = irand(rng, size / 3, size / 2);
      cv::Point d(static_cast<int>(std::cos(angle) * len),
                  static_cast<int>(std::sin(angle) * len));
      int thickness = std::max(2, size / 24);
      cv::line(img, center - d, center + d, body, thickness, cv::LINE_8);
      cv::line(mask, center - d, center + d, cls, thickness, cv::LINE_8);
      break;
    }
    default: {  // ring
      int radius = irand(rng, size / 6, size / 4);
      int thickness = std::max(2, size / 18);
      cv::circle(img, center, radius, body, thickness, cv::LINE_8);
      cv::circle(mask, center, radius, cls, thickness, cv::LINE_8);
      core_at = {center.x, center.y - radius};
    }
  }
  // Small saturated core so a classifier can succeed while attending to
  // only part of the object.
  int core_r = std::max(2, size / 26);
  cv::circle(img, core_at, core_r, core_color(cls), cv::FILLED, cv::LINE_8);
  cv::circle(mask, core_at, core_r, cls, cv::FILLED, cv::LINE_8);
}

std::vector<int> pick_classes(const SyntheticSpec& spec, std::mt19937_64& rng) {
  std::vector<int> classes;
  int primary = irand(rng, 1, spec.num_classes);
  classes.push_back(primary);
  if (urand(rng, 0, 1) < spec.co_occurrence) {
    // Box and wedge form the high-co-occurrence pair; other classes draw
    // a uniform partner.
    int extra;
    if (primary == 2)
      extra = urand(rng, 0, 1) < 0.8 ? 3 : irand(rng, 1, spec.num_classes);
    else if (primary == 3)
      extra = urand(rng, 0, 1) < 0.8 ? 2 : irand(rng, 1, spec.num_classes);
    else
      extra = irand(rng, 1, spec.num_classes);
    if (extra != primary) classes.push_back(extra);
    if (static_cast<int>(classes.size()) < spec.max_shapes &&
        urand(rng, 0, 1) < 0.3) {
      int third = irand(rng, 1, spec.num_classes);
      if (std::find(classes.begin(), classes.end(), third) == classes.end())
        classes.push_back(third);
    }
  }
  return classes;
}

}  // namespace

void generate_synthetic(const SyntheticSpec& spec, const fs::path& dir) {
  if (spec.num_classes < 1 || spec.num_classes > 5)
    throw ConfigError("generate_synthetic: num_classes must be in [1,5]");
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "masks", ec);
  std::ofstream labels_out(dir / "labels.txt");
  if (!labels_out)
    throw DataError("generate_synthetic: cannot write to " + dir.string());

  std::mt19937_64 rng(spec.seed);
  int size = spec.image_size;
  for (int i = 0; i < spec.n_images; ++i) {
    cv::Mat img(size, size, CV_64FC3, cv::Scalar(0.5, 0.5, 0.5));
    cv::Mat mask(size, size, CV_8UC1, cv::Scalar(0));
    // Mild background gradient so the background is not constant.
    double gx = urand(rng, -0.08, 0.08), gy = urand(rng, -0.08, 0.08);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        double v = gx * (x - size / 2.0) / size + gy * (y - size / 2.0) / size;
        img.at<cv::Vec3d>(y, x) += cv::Vec3d(v, v, v);
      }

    for (int cls : pick_classes(spec, rng)) draw_shape(img, mask, cls, size, rng);

    // Pixel noise, drawn in scanline order.
    std::normal_distribution<double> noise(0.0, spec.noise);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        auto& px = img.at<cv::Vec3d>(y, x);
        for (int c = 0; c < 3; ++c)
          px[c] = std::clamp(px[c] + noise(rng), 0.0, 1.0);
      }

    // Labels come from the final mask, so fully occluded shapes are not
    // reported as present.
    std::vector<int> present;
    for (int c = 1; c <= spec.num_classes; ++c)
      if (cv::countNonZero(mask == c) > 0) present.push_back(c);
    if (present.empty()) {
      // Degenerate scene (all shapes occluded); stamp a blob to keep the
      // training invariant of at least one positive label.
      draw_shape(img, mask, 1, size, rng);
      present.push_back(1);
    }

    char id[32];
    std::snprintf(id, sizeof(id), "img_%05d", i);
    auto img_t = torch::from_blob(img.data, {size, size, 3}, torch::kFloat64)
                     .clone()
                     .permute({2, 0, 1})
                     .to(torch::kFloat32);
    write_image(dir / "images" / (std::string(id) + ".png"), img_t);
    auto mask_t = torch::from_blob(mask.data, {size, size}, torch::kUInt8)
                      .clone()
                      .to(torch::kInt64);
    write_mask(dir / "masks" / (std::string(id) + ".png"), mask_t);
    labels_out << id << " ";
    for (std::size_t k = 0; k < present.size(); ++k)
      labels_out << (k ? "," : "") << present[k];
    labels_out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Augmentation

namespace {

torch::Tensor reflect_pad_to(const torch::Tensor& x, long h, long w) {
  auto out = x;
  while (out.size(-2) < h || out.size(-1) < w) {
    long ph = std::min(h - out.size(-2), out.size(-2) - 1);
    long pw = std::min(w - out.size(-1), out.size(-1) - 1);
    ph = std::max<long>(ph, 0);
    pw = std::max<long>(pw, 0);
    out = torch::reflection_pad2d(out.unsqueeze(0), {0, pw, 0, ph}).squeeze(0);
  }
  return out;
}

// Hue rotation around the gray axis (Rec.601 YIQ rotation matrix).
torch::Tensor rotate_hue(const torch::Tensor& img, double angle) {
  double c = std::cos(angle), s = std::sin(angle);
  auto m = torch::tensor(
      {{0.299 + 0.701 * c + 0.168 * s, 0.587 - 0.587 * c + 0.330 * s,
        0.114 - 0.114 * c - 0.497 * s},
       {0.299 - 0.299 * c - 0.328 * s, 0.587 + 0.413 * c + 0.035 * s,
        0.114 - 0.114 * c + 0.292 * s},
       {0.299 - 0.300 * c + 1.250 * s, 0.587 - 0.588 * c - 1.050 * s,
        0.114 + 0.886 * c - 0.203 * s}},
      torch::kFloat32);
  auto flat = img.reshape({3, -1});
  return torch::matmul(m, flat).reshape(img.sizes());
}

}  // namespace

ImageSample augment(const ImageSample& sample, AugmentPolicy policy,
                    long out_size, std::mt19937_64& rng) {
  ImageSample out;
  out.id = sample.id;
  out.labels = sample.labels;

  double scale = urand(rng, 0.5, 2.0);
  long h = sample.image.size(1), w = sample.image.size(2);
  long sh = std::max<long>(8, std::lround(h * scale));
  long sw = std::max<long>(8, std::lround(w * scale));
  auto img = resize_bilinear(sample.image, sh, sw);
  torch::Tensor mask;
  if (sample.gt_mask.defined()) {
    auto m = sample.gt_mask.to(torch::kFloat32).unsqueeze(0).unsqueeze(0);
    m = torch::nn::functional::interpolate(
        m, torch::nn::functional::InterpolateFuncOptions()
               .size(std::vector<long>{sh, sw})
               .mode(torch::kNearest));
    mask = m.squeeze(0).squeeze(0);
  }

  img = reflect_pad_to(img, out_size, out_size);
  if (mask.defined())
    mask = reflect_pad_to(mask.unsqueeze(0), out_size, out_size).squeeze(0);

  long max_y = img.size(-2) - out_size, max_x = img.size(-1) - out_size;
  long oy = max_y > 0 ? static_cast<long>(rng() % (max_y + 1)) : 0;
  long ox = max_x > 0 ? static_cast<long>(rng() % (max_x + 1)) : 0;
  img = img.narrow(-2, oy, out_size).narrow(-1, ox, out_size).contiguous();
  if (mask.defined())
    mask = mask.narrow(-2, oy, out_size)
               .narrow(-1, ox, out_size)
               .contiguous()
               .to(torch::kInt64);

  if (policy == AugmentPolicy::color_jitter) {
    double brightness = urand(rng, -0.12, 0.12);
    double contrast = urand(rng, 0.75, 1.25);
    double saturation = urand(rng, 0.7, 1.3);
    double hue = urand(rng, -0.15, 0.15);
    auto mean = img.mean();
    img = (img - mean) * contrast + mean + brightness;
    auto gray = img.mean(0, /*keepdim=*/true).expand_as(img);
    img = gray + (img - gray) * saturation;
    img = rotate_hue(img, hue);
  }
  out.image = img.clamp(0, 1);
  out.gt_mask = mask;
  return out;
}

}  // namespace wsss
