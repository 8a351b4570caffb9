#include "wsss/trainer.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "wsss/cam_core.hpp"
#include "wsss/cams_io.hpp"
#include "wsss/errors.hpp"
#include "wsss/evalkit.hpp"

namespace wsss {

namespace fs = std::filesystem;

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::vanilla: return "vanilla";
    case TrainMode::puzzle: return "puzzle";
    case TrainMode::p_oc: return "p_oc";
    case TrainMode::p_noc: return "p_noc";
  }
  return "?";
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "vanilla") return TrainMode::vanilla;
  if (name == "puzzle") return TrainMode::puzzle;
  if (name == "p_oc") return TrainMode::p_oc;
  if (name == "p_noc") return TrainMode::p_noc;
  throw ConfigError("unknown train mode: " + name);
}

bool sgd_step(std::vector<torch::Tensor>& params,
              const std::vector<torch::Tensor>& grads, SgdState& state,
              double lr, double weight_decay, double momentum) {
  if (params.size() != grads.size())
    throw DataError("sgd_step: params/grads size mismatch");
  for (const auto& g : grads)
    if (g.defined() && !g.isfinite().all().item<bool>()) return false;
  torch::NoGradGuard no_grad;
  if (state.momentum.empty())
    for (const auto& p : params)
      state.momentum.push_back(torch::zeros_like(p));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].defined()) continue;
    auto update = grads[i] + weight_decay * params[i];
    state.momentum[i].mul_(momentum).add_(update);
    params[i].sub_(lr * state.momentum[i]);
  }
  return true;
}

long sample_class(const torch::Tensor& y, std::mt19937_64& rng) {
  std::vector<long> positives;
  auto acc = y.to(torch::kFloat32);
  for (long c = 0; c < y.size(0); ++c)
    if (acc[c].item<float>() > 0) positives.push_back(c);
  if (positives.empty())
    throw DataError("sample_class: label vector has no positive entry");
  return positives[rng() % positives.size()];
}

namespace {

void set_requires_grad(ToyCnn& model, bool value) {
  for (auto& p : model.parameters()) p.set_requires_grad(value);
}

void zero_grads(ToyCnn& model) {
  for (auto& p : model.parameters())
    if (p.grad().defined()) p.grad().zero_();
}

std::vector<torch::Tensor> collect_grads(ToyCnn& model) {
  std::vector<torch::Tensor> grads;
  for (auto& p : model.parameters()) grads.push_back(p.grad());
  return grads;
}

}  // namespace

StepResult pnoc_step(const torch::Tensor& x, const torch::Tensor& y, ToyCnn& f,
                     ToyCnn* erasing, const TrainConfig& cfg, long step,
                     std::mt19937_64& class_rng, SgdState& f_state,
                     SgdState* noc_state, int accum_phase) {
  if ((y.sum(1) < 1).any().item<bool>())
    throw DataError("pnoc_step: every sample needs at least one positive label");
  bool use_puzzle = cfg.mode != TrainMode::vanilla;
  bool use_cse = cfg.mode == TrainMode::p_oc || cfg.mode == TrainMode::p_noc;
  bool train_noc = cfg.mode == TrainMode::p_noc;
  if (use_cse && erasing == nullptr)
    throw ConfigError("pnoc_step: mode requires an erasing classifier");

  StepResult result;
  double lr = cfg.base_lr() * schedule_value(cfg.sched, "lr_decay", step);
  long batch = x.size(0);

  // --- phase (i): fix the erasing classifier, train f ---
  f.train();
  torch::Tensor a = f.forward(x);
  torch::Tensor psi_r;  // kept for the noc phase (detached there)
  torch::Tensor r;
  PocLossResult loss_f;
  if (!use_puzzle) {
    loss_f.components["cls"] =
        soft_margin_loss(gap_logits(a), y.to(a.dtype()), cfg.sched.smoothing_eps);
    loss_f.weights["cls"] = 1.0;
    loss_f.total = loss_f.components["cls"];
  } else {
    auto a_re = merge_batch(f.forward(tile_batch(x)));
    torch::Tensor a_oc;
    if (use_cse) {
      std::vector<long> rs;
      for (long b = 0; b < batch; ++b) rs.push_back(sample_class(y[b], class_rng));
      r = torch::tensor(rs, torch::kInt64);
      auto psi = normalize_cam(a);
      psi_r = psi.index({torch::arange(batch), r});  // [B,h,w]
      auto x_masked = cse_soft_mask(x, psi_r);
      erasing->eval();
      set_requires_grad(*erasing, false);
      a_oc = erasing->forward(x_masked);
    }
    loss_f = poc_loss(a, a_re, a_oc, y, r, step, cfg.sched,
                      cfg.re_restrict_to_present);
  }
  result.f_report = loss_f.report();

  auto scaled = loss_f.total / static_cast<double>(cfg.accumulation);
  scaled.backward();
  if (accum_phase == cfg.accumulation - 1) {
    auto params = f.trainable_parameters();
    auto grads = collect_grads(f);
    result.f_update_applied =
        sgd_step(params, grads, f_state, lr, cfg.weight_decay, cfg.momentum);
    zero_grads(f);
  }

  // --- phase (ii): fix f, train the not-so-ordinary classifier ---
  if (train_noc) {
    if (step % cfg.sched.k_noc == 0) {
      if (!psi_r.defined())
        throw StageError("pnoc_step: noc phase without a drawn class map");
      auto x_hard = noc_hard_mask(x, psi_r.detach(), cfg.sched.delta_noc);
      set_requires_grad(*erasing, true);
      erasing->train();
      zero_grads(*erasing);
      auto a_noc = erasing->forward(x_hard);
      auto loss_noc = noc_loss(a_noc, y, cfg.sched, step);
      loss_noc.backward();
      auto params = erasing->trainable_parameters();
      auto grads = collect_grads(*erasing);
      sgd_step(params, grads, *noc_state, lr, cfg.weight_decay, cfg.momentum);
      zero_grads(*erasing);
      LossReport rep;
      rep.total = loss_noc.item<double>();
      rep.components["noc"] = rep.total;
      rep.weights["noc"] = schedule_value(cfg.sched, "lambda_noc", step);
      result.noc_report = rep;
      result.noc_phase_ran = true;
    } else {
      result.noc_phase_skipped_schedule = true;
    }
  }
  return result;
}

uint64_t parameter_hash(const std::vector<torch::Tensor>& params) {
  uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (const auto& p : params) {
    auto t = p.detach().to(torch::kFloat32).contiguous();
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data_ptr());
    for (long i = 0; i < t.numel() * 4; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

void save_model_checkpoint(const fs::path& file, ToyCnn& f, ToyCnn* noc) {
  TensorArchive ar;
  for (const auto& item : f.named_parameters()) ar.add("f." + item.key(), item.value());
  for (const auto& item : f.named_buffers()) ar.add("f." + item.key(), item.value());
  if (noc) {
    for (const auto& item : noc->named_parameters())
      ar.add("noc." + item.key(), item.value());
    for (const auto& item : noc->named_buffers())
      ar.add("noc." + item.key(), item.value());
  }
  ar.save(file);
}

std::shared_ptr<ToyCnn> load_model_checkpoint(const fs::path& file,
                                              const ToyCnnConfig& cfg,
                                              const std::string& prefix) {
  auto ar = TensorArchive::load(file);
  auto model = std::make_shared<ToyCnn>(cfg);
  torch::NoGradGuard no_grad;
  for (const auto& item : model->named_parameters()) {
    auto key = prefix + "." + item.key();
    item.value().copy_(ar.get(key));
  }
  for (const auto& item : model->named_buffers()) {
    auto key = prefix + "." + item.key();
    if (ar.has(key)) item.value().copy_(ar.get(key).to(item.value().dtype()));
  }
  return model;
}

void emit_priors_for(ToyCnn& model, const Dataset& dataset,
                     const fs::path& out_dir, const std::vector<double>& scales,
                     bool flip) {
  fs::create_directories(out_dir);
  model.eval();
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto s = dataset.load(i);
    auto prior = tta_prior(model, s.image, scales, flip);
    // Channels of absent classes are zeroed: priors are proposals for the
    // image-level label set, the labels being the weak supervision.
    prior = prior * s.labels.unsqueeze(-1).unsqueeze(-1);
    save_cams(out_dir / (s.id + ".cams"), prior);
  }
}

namespace {

struct RngBundle {
  std::mt19937_64 data{0}, aug{0}, cls{0};
};

void save_rng(const fs::path& file, const RngBundle& rng, long epoch,
              long step) {
  std::ofstream out(file);
  out << epoch << " " << step << "\n"
      << rng.data << "\n"
      << rng.aug << "\n"
      << rng.cls << "\n";
}

void load_rng(const fs::path& file, RngBundle& rng, long& epoch, long& step) {
  std::ifstream in(file);
  if (!in) throw DataError("missing RNG sidecar " + file.string());
  in >> epoch >> step >> rng.data >> rng.aug >> rng.cls;
  if (!in) throw DataError("corrupt RNG sidecar " + file.string());
}

std::string format_report_line(long step, double lr, const StepResult& res) {
  std::ostringstream out;
  char buf[64];
  auto put = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), " %s=%.6f", key, v);
    out << buf;
  };
  out << "step=" << step;
  put("lr", lr);
  put("total", res.f_report.total);
  for (const auto& [k, v] : res.f_report.components) put(k.c_str(), v);
  for (const auto& [k, v] : res.f_report.weights)
    put(("w_" + k).c_str(), v);
  if (res.noc_report) {
    put("noc_total", res.noc_report->total);
    put("w_noc", res.noc_report->weights.at("noc"));
  } else if (res.noc_phase_skipped_schedule) {
    out << " noc_phase=skipped";
  }
  if (!res.f_update_applied) out << " f_update=deferred";
  return out.str();
}

void write_config_snapshot(const fs::path& file, const TrainConfig& cfg) {
  std::ofstream out(file);
  out << "mode = " << to_string(cfg.mode) << "\n"
      << "epochs = " << cfg.epochs << "\n"
      << "lr_scratch = " << cfg.lr_scratch << "\n"
      << "lr_pretrained = " << cfg.lr_pretrained << "\n"
      << "pretrained = " << (cfg.pretrained ? 1 : 0) << "\n"
      << "weight_decay = " << cfg.weight_decay << "\n"
      << "momentum = " << cfg.momentum << "\n"
      << "batch_size = " << cfg.batch_size << "\n"
      << "accumulation = " << cfg.accumulation << "\n"
      << "seed = " << cfg.seed << "\n"
      << "image_size = " << cfg.image_size << "\n"
      << "num_classes = " << cfg.model.num_classes << "\n"
      << "base_channels = " << cfg.model.base_channels << "\n"
      << "blocks = " << cfg.model.blocks << "\n"
      << "k_noc = " << cfg.sched.k_noc << "\n"
      << "delta_noc = " << cfg.sched.delta_noc << "\n"
      << "smoothing_eps = " << cfg.sched.smoothing_eps << "\n"
      << "total_steps = " << cfg.sched.total_steps << "\n"
      << "augment = "
      << (cfg.augment_policy == AugmentPolicy::color_jitter ? "color_jitter"
                                                            : "none")
      << "\n"
      << "oc_checkpoint = " << cfg.oc_checkpoint << "\n";
}

}  // namespace

TrainResult train(const Dataset& dataset, TrainConfig cfg, const fs::path& out,
                  const fs::path& resume_checkpoint) {
  if (dataset.size() == 0) throw DataError("train: empty dataset");
  if (cfg.batch_size < 1 || cfg.epochs < 1 || cfg.base_lr() <= 0)
    throw ConfigError("train: invalid batch size, epochs, or learning rate");
  if (cfg.accumulation < 1 || cfg.accumulation > 2)
    throw ConfigError("train: accumulation must be 1 or 2");
  long steps_per_epoch =
      static_cast<long>(dataset.size()) / cfg.batch_size;
  if (steps_per_epoch < 1)
    throw ConfigError("train: batch size larger than the dataset");
  cfg.sched.total_steps = steps_per_epoch * cfg.epochs;
  cfg.model.num_classes = dataset.num_classes;
  if (cfg.mode == TrainMode::p_noc && cfg.sched.k_noc < 1)
    throw ConfigError("train: p_noc requires k_noc >= 1");

  fs::create_directories(out / "checkpoints");

  // Model init consumes the torch RNG once; all later randomness comes
  // from the explicit streams below, which makes resume exact.
  torch::manual_seed(cfg.seed);
  auto f = std::make_shared<ToyCnn>(cfg.model);
  std::shared_ptr<ToyCnn> erasing;
  if (cfg.mode == TrainMode::p_oc || cfg.mode == TrainMode::p_noc) {
    if (cfg.oc_checkpoint.empty() || !fs::exists(cfg.oc_checkpoint))
      throw ConfigError(
          "train: " + to_string(cfg.mode) +
          " requires a pretrained ordinary-classifier checkpoint "
          "(train mode=vanilla first)");
    erasing = load_model_checkpoint(cfg.oc_checkpoint, cfg.model);
    // f also starts from the ordinary classifier: the stand-in for the
    // pretrained backbone these modes assume. From a random init the
    // reconstruction and erasing terms dominate the classification
    // signal and collapse the activation maps.
    f = load_model_checkpoint(cfg.oc_checkpoint, cfg.model);
    cfg.pretrained = true;
  }

  RngBundle rng;
  rng.data.seed(cfg.seed * 3 + 1);
  rng.aug.seed(cfg.seed * 3 + 2);
  rng.cls.seed(cfg.seed * 3 + 3);

  long start_epoch = 0, step = 0;
  if (!resume_checkpoint.empty()) {
    auto ar = TensorArchive::load(resume_checkpoint);
    torch::NoGradGuard no_grad;
    for (const auto& item : f->named_parameters())
      item.value().copy_(ar.get("f." + item.key()));
    for (const auto& item : f->named_buffers())
      if (ar.has("f." + item.key()))
        item.value().copy_(ar.get("f." + item.key()).to(item.value().dtype()));
    if (erasing) {
      for (const auto& item : erasing->named_parameters())
        item.value().copy_(ar.get("noc." + item.key()));
      for (const auto& item : erasing->named_buffers())
        if (ar.has("noc." + item.key()))
          item.value().copy_(
              ar.get("noc." + item.key()).to(item.value().dtype()));
    }
    load_rng(fs::path(resume_checkpoint).replace_extension(".rng"), rng,
             start_epoch, step);
  }

  write_config_snapshot(out / "config.snapshot", cfg);
  std::ofstream metrics(out / "metrics.log",
                        resume_checkpoint.empty() ? std::ios::trunc
                                                  : std::ios::app);

  SgdState f_state, noc_state;
  if (!resume_checkpoint.empty()) {
    auto ar = TensorArchive::load(resume_checkpoint);
    auto load_state = [&](const std::string& prefix, SgdState& st,
                          ToyCnn& model) {
      auto params = model.parameters();
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto key = prefix + std::to_string(i);
        if (ar.has(key)) st.momentum.push_back(ar.get(key).clone());
      }
    };
    load_state("opt.f.", f_state, *f);
    if (erasing) load_state("opt.noc.", noc_state, *erasing);
  }

  auto save_full_checkpoint = [&](long epoch) {
    auto file = out / "checkpoints" /
                ("step-" + std::to_string(step) + ".bin");
    TensorArchive ar;
    for (const auto& item : f->named_parameters())
      ar.add("f." + item.key(), item.value());
    for (const auto& item : f->named_buffers())
      ar.add("f." + item.key(), item.value());
    if (erasing) {
      for (const auto& item : erasing->named_parameters())
        ar.add("noc." + item.key(), item.value());
      for (const auto& item : erasing->named_buffers())
        ar.add("noc." + item.key(), item.value());
    }
    for (std::size_t i = 0; i < f_state.momentum.size(); ++i)
      ar.add("opt.f." + std::to_string(i), f_state.momentum[i]);
    for (std::size_t i = 0; i < noc_state.momentum.size(); ++i)
      ar.add("opt.noc." + std::to_string(i), noc_state.momentum[i]);
    ar.save(file);
    save_rng(fs::path(file).replace_extension(".rng"), rng, epoch, step);
  };

  std::vector<std::size_t> order(dataset.size());

  for (long epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    // Shuffle from the identity permutation so the epoch order depends
    // only on the RNG state — a resumed run reproduces it exactly.
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng.data);
    for (long b = 0; b < steps_per_epoch; ++b) {
      std::vector<torch::Tensor> images, labels;
      for (int k = 0; k < cfg.batch_size; ++k) {
        auto idx = order[b * cfg.batch_size + k];
        ImageSample s;
        try {
          s = dataset.load(idx);
        } catch (const DataError& e) {
          throw DataError("train: failed to load sample " +
                          dataset.ids[idx] + ": " + e.what());
        }
        auto aug = augment(s, cfg.augment_policy, cfg.image_size, rng.aug);
        images.push_back(aug.image);
        labels.push_back(aug.labels);
      }
      auto x = torch::stack(images);
      auto y = torch::stack(labels);
      int accum_phase = static_cast<int>(step % cfg.accumulation);
      auto res = pnoc_step(x, y, *f, erasing.get(), cfg, step, rng.cls,
                           f_state, &noc_state, accum_phase);
      double lr = cfg.base_lr() * schedule_value(cfg.sched, "lr_decay", step);
      metrics << format_report_line(step, lr, res) << "\n";
      ++step;
    }
    if (cfg.epoch_miou_estimate) {
      // Diagnostic only; requires GT masks and is never fed back.
      double est = estimate_epoch_miou(*f, dataset, cfg.image_size,
                                       cfg.estimate_delta_bg);
      char buf[96];
      std::snprintf(buf, sizeof(buf), "epoch=%ld miou_estimate=%.2f", epoch + 1,
                    est);
      metrics << buf << "\n";
    }
    save_full_checkpoint(epoch + 1);
  }
  metrics.flush();

  save_model_checkpoint(out / "checkpoints" / "final.bin", *f, erasing.get());
  if (cfg.emit_priors)
    emit_priors_for(*f, dataset, out / "priors", cfg.tta_scales, cfg.tta_flip);

  return TrainResult{out, cfg.sched.total_steps};
}

}  // namespace wsss
