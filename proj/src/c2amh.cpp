#include "wsss/c2amh.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "wsss/cam_core.hpp"
#include "wsss/cams_io.hpp"
#include "wsss/errors.hpp"
#include "wsss/trainer.hpp"

namespace wsss {

namespace fs = std::filesystem;

constexpr double kCosEps = 1e-6;

Disentangler::Disentangler(long feature_channels) {
  // The trunk mirrors the first two blocks of the CAM classifier so a
  // classifier checkpoint can seed it (the backbone role): with randomly
  // initialized features, foreground and background directions overlap
  // too much for the contrastive loss to find the appearance split.
  torch::nn::Sequential trunk;
  long c1 = std::max<long>(feature_channels / 2, 8);
  long in = 3;
  for (long out : {c1, feature_channels}) {
    trunk->push_back(torch::nn::Conv2d(
        torch::nn::Conv2dOptions(in, out, 3).stride(2).padding(1)));
    trunk->push_back(torch::nn::BatchNorm2d(out));
    trunk->push_back(torch::nn::ReLU());
    trunk->push_back(torch::nn::Conv2d(
        torch::nn::Conv2dOptions(out, out, 3).stride(1).padding(1)));
    trunk->push_back(torch::nn::BatchNorm2d(out));
    trunk->push_back(torch::nn::ReLU());
    in = out;
  }
  trunk_ = register_module("trunk", trunk);
  head_ = register_module(
      "head",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(feature_channels, 1, 1)));
  // Near-zero head: P starts at ~0.5 but off the exact v_f == v_b
  // stationary point of the contrastive loss.
  torch::NoGradGuard no_grad;
  head_->weight.normal_(0.0, 0.05);
  head_->bias.zero_();
}

std::pair<torch::Tensor, torch::Tensor> Disentangler::forward(
    const torch::Tensor& images) {
  auto x = images.dim() == 3 ? images.unsqueeze(0) : images;
  auto features = trunk_->forward(x);
  // The head reads a unit-length feature vector per pixel: unnormalized
  // ReLU activations give logits large enough to start deep inside
  // sigmoid saturation, where the contrastive gradient dies.
  auto unit = features / (features.norm(2, 1, /*keepdim=*/true) + 1e-8);
  auto p = torch::sigmoid(head_->forward(unit)).squeeze(1);  // [B,h,w]
  if (images.dim() == 3) return {features.squeeze(0), p.squeeze(0)};
  return {features, p};
}

std::pair<torch::Tensor, torch::Tensor> fg_bg_features(const torch::Tensor& a,
                                                       const torch::Tensor& p) {
  bool batched = a.dim() == 3;
  auto af = batched ? a : a.unsqueeze(0);  // [B,K,hw]
  auto pf = batched ? p : p.unsqueeze(0);  // [B,hw]
  if (af.size(-1) != pf.size(-1))
    throw DataError("fg_bg_features: spatial dimension mismatch");
  auto pw = pf.unsqueeze(1);  // [B,1,hw]
  auto v_f = (af * pw).mean(-1);
  auto v_b = (af * (1.0 - pw)).mean(-1);
  if (!batched) return {v_f.squeeze(0), v_b.squeeze(0)};
  return {v_f, v_b};
}

namespace {

// Affine squash onto [eps, 1-eps] rather than a hard clamp: the batch
// starts with v_f ~ v_b, i.e. every cross similarity at the upper
// boundary, and a clamp would zero the negative term's gradient exactly
// where it is needed to pull the two views apart.
torch::Tensor rectify(const torch::Tensor& cos) {
  return kCosEps + (1.0 - 2.0 * kCosEps) * torch::relu(cos);
}

torch::Tensor l2_rows(const torch::Tensor& v) {
  return v / (v.norm(2, -1, /*keepdim=*/true) + 1e-12);
}

}  // namespace

torch::Tensor cosine_matrix(const torch::Tensor& vectors) {
  auto n = l2_rows(vectors);
  return rectify(torch::matmul(n, n.t()));
}

torch::Tensor cosine_matrix_cross(const torch::Tensor& a,
                                  const torch::Tensor& b) {
  return rectify(torch::matmul(l2_rows(a), l2_rows(b).t()));
}

torch::Tensor rank_weights(const torch::Tensor& s, double alpha) {
  long n = s.size(0);
  if (n < 2) throw DataError("rank_weights: need at least two samples");
  auto w = torch::zeros_like(s);
  auto sd = s.detach().to(torch::kFloat64).contiguous();
  auto acc = sd.accessor<double, 2>();
  for (long i = 0; i < n; ++i) {
    std::vector<long> cols;
    for (long j = 0; j < n; ++j)
      if (j != i) cols.push_back(j);
    std::stable_sort(cols.begin(), cols.end(), [&](long a, long b) {
      return acc[i][a] > acc[i][b];  // ties keep index order
    });
    for (std::size_t rank = 0; rank < cols.size(); ++rank)
      w[i][cols[rank]] = std::exp(-alpha * static_cast<double>(rank));
  }
  return w;
}

torch::Tensor c2am_loss(const SimilarityTriple& trip, const torch::Tensor& w_f,
                        const torch::Tensor& w_b) {
  long n = trip.s_f.size(0);
  if (trip.s_b.size(0) != n || trip.s_neg.size(0) != n)
    throw DataError("c2am_loss: matrix sizes differ");
  for (const auto* s : {&trip.s_f, &trip.s_b, &trip.s_neg})
    if ((*s <= 0).any().item<bool>() || (*s >= 1).any().item<bool>())
      throw DataError("c2am_loss: similarities must lie in (0,1)");
  auto off_diag = 1.0 - torch::eye(n, trip.s_f.options());
  double pair_norm = static_cast<double>(n) * static_cast<double>(n - 1);
  auto pos_f = -(w_f * trip.s_f.log() * off_diag).sum() / pair_norm;
  auto pos_b = -(w_b * trip.s_b.log() * off_diag).sum() / pair_norm;
  auto neg = -(1.0 - trip.s_neg).log().sum() /
             (static_cast<double>(n) * static_cast<double>(n));
  return pos_f + pos_b + neg;
}

HintMask extract_hints(const torch::Tensor& prior, const C2amConfig& cfg,
                       const std::string& prior_id) {
  if (cfg.delta_bg >= cfg.delta_fg)
    throw ConfigError("extract_hints: delta_bg must be below delta_fg");
  auto peak = std::get<0>(prior.max(0));
  HintMask mask;
  mask.fg = peak > cfg.delta_fg;
  mask.bg = peak < cfg.delta_bg;
  mask.source_prior_id = prior_id;
  return mask;
}

torch::Tensor c2amh_loss(const SimilarityTriple& trip, const torch::Tensor& w_f,
                         const torch::Tensor& w_b, const torch::Tensor& p_batch,
                         const torch::Tensor& fg_hints, double lambda_h) {
  auto base = c2am_loss(trip, w_f, w_b);
  if (lambda_h == 0.0) return base;
  auto hints = fg_hints.to(p_batch.dtype());
  auto count = hints.sum();
  if (count.item<double>() <= 0) return base;
  // BCE with target 1 over hinted pixels only.
  auto bce = -(p_batch.clamp_min(1e-7).log() * hints).sum() / count;
  return base + lambda_h * bce;
}

torch::Tensor emit_saliency(Disentangler& model, const torch::Tensor& image) {
  torch::NoGradGuard no_grad;
  model.eval();
  auto [features, p] = model.forward(image);
  return resize_bilinear(p.unsqueeze(0), image.size(-2), image.size(-1))
      .squeeze(0);
}

namespace {

torch::Tensor hint_mask_for(const fs::path& priors_dir, const std::string& id,
                            long h, long w, const C2amConfig& cfg) {
  auto prior = load_cams(priors_dir / (id + ".cams"));
  auto peak = std::get<0>(prior.max(0)).unsqueeze(0);
  peak = resize_bilinear(peak, h, w).squeeze(0);
  return peak > cfg.delta_fg;
}

}  // namespace

std::shared_ptr<Disentangler> train_c2amh(const Dataset& dataset,
                                          const fs::path& priors_dir,
                                          const C2amConfig& cfg,
                                          const fs::path& out) {
  if (cfg.delta_bg >= cfg.delta_fg)
    throw ConfigError("train_c2amh: delta_bg must be below delta_fg");
  bool use_hints = !priors_dir.empty();
  if (use_hints && !fs::is_directory(priors_dir))
    throw DataError("train_c2amh: priors directory missing: " +
                    priors_dir.string());
  fs::create_directories(out);

  torch::manual_seed(cfg.seed);
  auto model = std::make_shared<Disentangler>(cfg.feature_channels);
  if (!cfg.backbone_checkpoint.empty()) {
    auto ar = TensorArchive::load(cfg.backbone_checkpoint);
    torch::NoGradGuard no_grad;
    // Only the trunk is shared with the classifier; its head has a
    // different shape and role (class scores vs a single saliency logit).
    auto seed_from = [&](const torch::OrderedDict<std::string, torch::Tensor>&
                             dict) {
      for (const auto& item : dict) {
        if (item.key().rfind("trunk.", 0) != 0) continue;
        if (!ar.has("f." + item.key())) continue;
        auto src = ar.get("f." + item.key()).to(item.value().dtype());
        if (src.sizes() != item.value().sizes())
          throw ConfigError("train_c2amh: backbone tensor " + item.key() +
                            " has incompatible shape");
        item.value().copy_(src);
      }
    };
    seed_from(model->named_parameters());
    seed_from(model->named_buffers());
  }
  std::mt19937_64 data_rng(cfg.seed * 5 + 1);

  long batch = std::min<long>(cfg.batch, static_cast<long>(dataset.size()));
  if (batch < 2) throw ConfigError("train_c2amh: need a batch of at least 2");
  long steps_per_epoch = static_cast<long>(dataset.size()) / batch;
  long total_steps = steps_per_epoch * cfg.epochs;

  std::ofstream metrics(out / "metrics.log");
  std::ofstream snapshot(out / "config.snapshot");
  snapshot << "alpha = " << cfg.alpha << "\nlambda_h = " << cfg.lambda_h
           << "\ndelta_fg = " << cfg.delta_fg << "\ndelta_bg = " << cfg.delta_bg
           << "\nbatch = " << cfg.batch << "\nepochs = " << cfg.epochs
           << "\nlr = " << cfg.lr << "\ntrunk_lr_scale = " << cfg.trunk_lr_scale
           << "\nbackbone = "
           << (cfg.backbone_checkpoint.empty() ? "none" : cfg.backbone_checkpoint)
           << "\nseed = " << cfg.seed
           << "\nhints = " << (use_hints ? priors_dir.string() : "none")
           << "\n";

  SgdState opt_head, opt_trunk;
  std::vector<torch::Tensor> head_params, trunk_params;
  for (const auto& item : model->named_parameters())
    (item.key().rfind("head.", 0) == 0 ? head_params : trunk_params)
        .push_back(item.value());
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), data_rng);
    for (long b = 0; b < steps_per_epoch; ++b) {
      std::vector<torch::Tensor> images;
      std::vector<torch::Tensor> hints;
      for (long k = 0; k < batch; ++k) {
        auto s = dataset.load(order[b * batch + k]);
        auto img = resize_bilinear(s.image, cfg.image_size, cfg.image_size);
        images.push_back(img);
        if (use_hints)
          hints.push_back(hint_mask_for(priors_dir, s.id,
                                        cfg.image_size / model->stride(),
                                        cfg.image_size / model->stride(), cfg));
      }
      auto x = torch::stack(images);
      model->train();
      if (cfg.trunk_lr_scale == 0.0) model->eval_trunk();
      auto [features, p] = model->forward(x);
      auto a_flat = features.flatten(2);  // [B,K,hw]
      auto p_flat = p.flatten(1);         // [B,hw]
      auto [v_f, v_b] = fg_bg_features(a_flat, p_flat);
      SimilarityTriple trip{cosine_matrix(v_f), cosine_matrix(v_b),
                            cosine_matrix_cross(v_f, v_b)};
      auto w_f = rank_weights(trip.s_f.detach(), cfg.alpha);
      auto w_b = rank_weights(trip.s_b.detach(), cfg.alpha);
      torch::Tensor loss;
      if (use_hints) {
        auto hint_batch = torch::stack(hints).flatten(1);
        loss = c2amh_loss(trip, w_f, w_b, p_flat, hint_batch, cfg.lambda_h);
      } else {
        loss = c2am_loss(trip, w_f, w_b);
      }
      for (auto& par : model->parameters())
        if (par.grad().defined()) par.grad().zero_();
      loss.backward();
      double lr = cfg.lr * (1.0 - static_cast<double>(step) /
                                      static_cast<double>(total_steps));
      auto grads_of = [](const std::vector<torch::Tensor>& params) {
        std::vector<torch::Tensor> grads;
        for (const auto& par : params) grads.push_back(par.grad());
        return grads;
      };
      sgd_step(head_params, grads_of(head_params), opt_head, lr,
               cfg.weight_decay, cfg.momentum);
      if (cfg.trunk_lr_scale > 0.0)
        sgd_step(trunk_params, grads_of(trunk_params), opt_trunk,
                 lr * cfg.trunk_lr_scale, cfg.weight_decay, cfg.momentum);
      char buf[64];
      std::snprintf(buf, sizeof(buf), "step=%ld loss=%.6f", step,
                    loss.item<double>());
      metrics << buf << "\n";
      ++step;
    }
  }

  TensorArchive ar;
  for (const auto& item : model->named_parameters())
    ar.add("d." + item.key(), item.value());
  for (const auto& item : model->named_buffers())
    ar.add("d." + item.key(), item.value());
  ar.save(out / "model.bin");
  return model;
}

std::shared_ptr<Disentangler> load_disentangler(const fs::path& model_file,
                                                long feature_channels) {
  auto ar = TensorArchive::load(model_file);
  auto model = std::make_shared<Disentangler>(feature_channels);
  torch::NoGradGuard no_grad;
  for (const auto& item : model->named_parameters())
    item.value().copy_(ar.get("d." + item.key()));
  for (const auto& item : model->named_buffers())
    if (ar.has("d." + item.key()))
      item.value().copy_(
          ar.get("d." + item.key()).to(item.value().dtype()));
  return model;
}

void make_saliency(Disentangler& model, const Dataset& dataset,
                   const fs::path& out_dir) {
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto s = dataset.load(i);
    auto sal = emit_saliency(model, s.image);
    write_gray(out_dir / (s.id + ".png"), sal);
    save_cams(out_dir / (s.id + ".cams"), sal.unsqueeze(0));
  }
}

AnchorStats anchoring_stats(Disentangler& model, const Dataset& dataset) {
  long signed_ok = 0, abs_ok = 0, counted = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto s = dataset.load(i, /*with_mask=*/true);
    if (!s.gt_mask.defined()) continue;
    auto sal = emit_saliency(model, s.image);
    auto fg = (s.gt_mask > 0).logical_and(s.gt_mask != 255);
    auto bg = s.gt_mask == 0;
    if (fg.sum().item<long>() == 0 || bg.sum().item<long>() == 0) continue;
    double mean_fg = sal.masked_select(fg).mean().item<double>();
    double mean_bg = sal.masked_select(bg).mean().item<double>();
    ++counted;
    if (mean_fg > mean_bg) ++signed_ok;
    if (std::abs(mean_fg - mean_bg) > 1e-4) ++abs_ok;
  }
  if (counted == 0) throw DataError("anchoring_stats: no usable GT masks");
  return AnchorStats{static_cast<double>(signed_ok) / counted,
                     static_cast<double>(abs_ok) / counted};
}

}  // namespace wsss
