#include "wsss/refinement.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <mutex>

#include "wsss/errors.hpp"

namespace wsss {

double SeedMap::unknown_fraction() const {
  return (labels == kUnknownLabel).to(torch::kFloat64).mean().item<double>();
}

SeedMap seeds_from_priors(const torch::Tensor& prior, double delta_bg,
                          double delta_fg) {
  if (delta_bg >= delta_fg)
    throw ConfigError("seeds_from_priors: delta_bg must be below delta_fg");
  auto peak = std::get<0>(prior.max(0));
  auto cls = prior.argmax(0) + 1;
  auto labels = torch::full_like(cls, kUnknownLabel);
  labels = torch::where(peak > delta_fg, cls, labels);
  labels = torch::where(peak < delta_bg, torch::zeros_like(cls), labels);
  return SeedMap{labels};
}

SeedMap seeds_with_saliency(const torch::Tensor& prior,
                            const torch::Tensor& saliency, double delta_fg,
                            double delta_sal) {
  if (!saliency.sizes().equals({prior.size(1), prior.size(2)}))
    throw DataError("seeds_with_saliency: saliency/prior shape mismatch");
  auto peak = std::get<0>(prior.max(0));
  auto cls = prior.argmax(0) + 1;
  auto labels = torch::full_like(cls, kUnknownLabel);
  labels = torch::where(peak > delta_fg, cls, labels);
  // Saliency owns the background decision and overrides the prior.
  labels = torch::where(saliency < delta_sal, torch::zeros_like(cls), labels);
  return SeedMap{labels};
}

AffinityGraph build_affinity(const torch::Tensor& features, int radius,
                             double sigma) {
  if (radius < 1) throw ConfigError("build_affinity: radius must be >= 1");
  if (features.dim() != 3)
    throw DataError("build_affinity: expected [K,h,w] features");
  long k = features.size(0), h = features.size(1), w = features.size(2);
  auto feat = features.to(torch::kFloat32).contiguous();
  auto acc = feat.accessor<float, 3>();

  auto sqdist = [&](long y0, long x0, long y1, long x1) {
    double d = 0;
    for (long c = 0; c < k; ++c) {
      double diff = acc[c][y0][x0] - acc[c][y1][x1];
      d += diff * diff;
    }
    return d;
  };

  // Neighbor offsets within the disk, fixed scan order.
  std::vector<std::pair<int, int>> offsets;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dy * dy + dx * dx <= radius * radius) offsets.emplace_back(dy, dx);

  if (sigma <= 0) {
    std::vector<double> dists;
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x)
        for (auto [dy, dx] : offsets) {
          long ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          if (ny * w + nx <= y * w + x) continue;  // each pair once
          dists.push_back(std::sqrt(sqdist(y, x, ny, nx)));
        }
    if (dists.empty()) throw DataError("build_affinity: degenerate image");
    auto mid = dists.begin() + dists.size() / 2;
    std::nth_element(dists.begin(), mid, dists.end());
    sigma = std::max(*mid, 1e-3);
  }

  AffinityGraph g;
  g.h = h;
  g.w = w;
  g.sigma = sigma;
  g.row_ptr.reserve(h * w + 1);
  g.row_ptr.push_back(0);
  double inv = 1.0 / (2.0 * sigma * sigma);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      for (auto [dy, dx] : offsets) {
        long ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        double wgt = std::exp(-sqdist(y, x, ny, nx) * inv);
        g.col_index.push_back(static_cast<int>(ny * w + nx));
        g.weight.push_back(static_cast<float>(wgt));
      }
      g.row_ptr.push_back(static_cast<long>(g.col_index.size()));
    }
  return g;
}

torch::Tensor add_background_channel(const torch::Tensor& prior) {
  auto bg = (1.0 - std::get<0>(prior.max(0))).clamp(0, 1).unsqueeze(0);
  return torch::cat({bg, prior}, 0);
}

torch::Tensor random_walk(const torch::Tensor& prior_with_bg,
                          const AffinityGraph& graph, double beta,
                          int t_iters) {
  if (beta < 1) throw ConfigError("random_walk: beta must be >= 1");
  if (t_iters < 0) throw ConfigError("random_walk: t must be >= 0");
  long channels = prior_with_bg.size(0);
  long n = graph.h * graph.w;
  if (prior_with_bg.size(1) != graph.h || prior_with_bg.size(2) != graph.w)
    throw DataError("random_walk: prior/graph shape mismatch");

  // Transition matrix: elementwise power, then row-normalize. Rows with
  // no mass become self-loops.
  std::vector<double> tw(graph.weight.size());
  for (std::size_t i = 0; i < tw.size(); ++i)
    tw[i] = std::pow(static_cast<double>(graph.weight[i]), beta);
  std::vector<double> degree(n, 0.0);
  for (long i = 0; i < n; ++i)
    for (long e = graph.row_ptr[i]; e < graph.row_ptr[i + 1]; ++e)
      degree[i] += tw[e];
  for (long i = 0; i < n; ++i)
    if (degree[i] <= 0) degree[i] = 1.0;  // self-loop fallback

  auto cur = prior_with_bg.to(torch::kFloat64)
                 .reshape({channels, n})
                 .contiguous()
                 .clone();
  auto nxt = torch::empty_like(cur);
  double* ca = cur.data_ptr<double>();
  double* na = nxt.data_ptr<double>();
  for (int t = 0; t < t_iters; ++t) {
    for (long c = 0; c < channels; ++c) {
      const double* src = ca + c * n;
      double* dst = na + c * n;
      for (long i = 0; i < n; ++i) {
        double sum = 0;
        for (long e = graph.row_ptr[i]; e < graph.row_ptr[i + 1]; ++e)
          sum += tw[e] * src[graph.col_index[e]];
        dst[i] = sum / degree[i];
      }
    }
    std::swap(cur, nxt);
    std::swap(ca, na);
  }

  auto out = cur.reshape({channels, graph.h, graph.w});
  auto pixel_sum = out.sum(0, /*keepdim=*/true).clamp_min(1e-12);
  return (out / pixel_sum).to(prior_with_bg.dtype());
}

namespace {

std::map<std::string, CrfPlugin>& crf_registry() {
  static std::map<std::string, CrfPlugin> registry;
  return registry;
}

std::mutex crf_mutex;

}  // namespace

void register_crf_plugin(const std::string& name, CrfPlugin plugin) {
  std::lock_guard<std::mutex> lock(crf_mutex);
  crf_registry()[name] = std::move(plugin);
}

std::vector<std::string> registered_crf_plugins() {
  std::lock_guard<std::mutex> lock(crf_mutex);
  std::vector<std::string> names;
  for (const auto& [name, fn] : crf_registry()) names.push_back(name);
  return names;
}

torch::Tensor crf_refine(const torch::Tensor& image,
                         const torch::Tensor& prob_map,
                         const std::string& plugin_name) {
  if (plugin_name.empty() || plugin_name == "identity") {
    std::cerr << "crf_refine: no plugin configured, skipping CRF\n";
    return prob_map;
  }
  CrfPlugin plugin;
  {
    std::lock_guard<std::mutex> lock(crf_mutex);
    auto it = crf_registry().find(plugin_name);
    if (it == crf_registry().end()) {
      std::string known = "identity";
      for (const auto& [name, fn] : crf_registry()) known += ", " + name;
      throw ConfigError("crf_refine: unknown plugin '" + plugin_name +
                        "'; registered: " + known);
    }
    plugin = it->second;
  }
  try {
    return plugin(image, prob_map);
  } catch (const std::exception& e) {
    std::cerr << "crf_refine: plugin '" << plugin_name << "' failed ("
              << e.what() << "), falling back to identity\n";
    return prob_map;
  }
}

}  // namespace wsss
