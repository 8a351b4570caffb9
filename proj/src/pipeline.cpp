#include "wsss/pipeline.hpp"

#include <fstream>
#include <iostream>

#include "wsss/c2amh.hpp"
#include "wsss/cams_io.hpp"
#include "wsss/errors.hpp"
#include "wsss/refinement.hpp"
#include "wsss/trainer.hpp"

namespace fs = std::filesystem;

namespace wsss {

namespace {

void touch(const fs::path& file) {
  fs::create_directories(file.parent_path());
  std::ofstream out(file);
  out << "ok\n";
}

void require_artifact(Stage stage, const fs::path& path) {
  if (!fs::exists(path))
    throw StageError("stage " + to_string(stage) +
                     " requires missing artifact: " + path.string());
}

void write_text(const fs::path& file, const std::string& text) {
  fs::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw StageError("cannot write " + file.string());
  out << text;
}

}  // namespace

fs::path stage_artifact(const PipelineConfig& cfg, Stage stage) {
  PipelineLayout lay{cfg.out};
  switch (stage) {
    case Stage::generate: return cfg.eval_root / "labels.txt";
    case Stage::train_vanilla: return lay.run_vanilla() / "checkpoints" / "final.bin";
    case Stage::train_pnoc: return lay.run_pnoc() / "checkpoints" / "final.bin";
    case Stage::make_priors: return lay.priors_eval() / ".done";
    case Stage::train_c2amh: return lay.c2amh() / "model.bin";
    case Stage::make_saliency: return lay.saliency_eval() / ".done";
    case Stage::make_seeds: return lay.seeds() / ".done";
    case Stage::refine_rw: return lay.masks_rw() / ".done";
    case Stage::evaluate: return lay.report() / "metrics.txt";
    case Stage::report: return lay.report() / "summary.txt";
  }
  throw ConfigError("unknown stage");
}

GroupSpec synthetic_groups(long num_classes) {
  GroupSpec groups;
  if (num_classes >= 5) {
    groups["singleton"] = {1};
    groups["pair"] = {2, 3};
    groups["thin"] = {4};
    groups["ring"] = {5};
    for (int c = 6; c <= num_classes; ++c)
      groups["class-" + std::to_string(c)] = {c};
  } else {
    for (int c = 1; c <= num_classes; ++c)
      groups["class-" + std::to_string(c)] = {c};
  }
  return groups;
}

namespace {

struct StageRunner {
  const PipelineConfig& cfg;
  PipelineLayout lay;

  Dataset train_ds() const { return load_voc(cfg.data_root); }
  Dataset eval_ds() const { return load_voc(cfg.eval_root); }

  ToyCnnConfig model_cfg(long num_classes) const {
    ToyCnnConfig m = cfg.train.model;
    m.num_classes = num_classes;
    return m;
  }

  void generate() const {
    if (cfg.force || !fs::exists(cfg.data_root / "labels.txt")) {
      SyntheticSpec spec = cfg.synthetic_train;
      generate_synthetic(spec, cfg.data_root);
    }
    SyntheticSpec spec = cfg.synthetic_eval;
    generate_synthetic(spec, cfg.eval_root);
  }

  void train_mode(TrainMode mode, const fs::path& out) const {
    Dataset ds = train_ds();
    TrainConfig tcfg = cfg.train;
    tcfg.mode = mode;
    tcfg.model.num_classes = ds.num_classes;
    tcfg.emit_priors = false;  // make-priors owns prior emission
    if (mode == TrainMode::p_oc || mode == TrainMode::p_noc) {
      fs::path oc = lay.run_vanilla() / "checkpoints" / "final.bin";
      require_artifact(Stage::train_pnoc, oc);
      tcfg.oc_checkpoint = oc.string();
    }
    train(ds, tcfg, out);
  }

  void make_priors() const {
    fs::path ckpt = lay.run_pnoc() / "checkpoints" / "final.bin";
    require_artifact(Stage::make_priors, ckpt);
    Dataset tr = train_ds(), ev = eval_ds();
    auto model = load_model_checkpoint(ckpt, model_cfg(tr.num_classes));
    emit_priors_for(*model, tr, lay.priors_train(), cfg.train.tta_scales,
                    cfg.train.tta_flip);
    touch(lay.priors_train() / ".done");
    emit_priors_for(*model, ev, lay.priors_eval(), cfg.train.tta_scales,
                    cfg.train.tta_flip);
    touch(lay.priors_eval() / ".done");
  }

  void c2amh() const {
    require_artifact(Stage::train_c2amh, lay.priors_train() / ".done");
    Dataset ds = train_ds();
    auto c2am = cfg.c2am;
    if (c2am.backbone_checkpoint.empty())
      c2am.backbone_checkpoint =
          (lay.run_pnoc() / "checkpoints" / "final.bin").string();
    train_c2amh(ds, lay.priors_train(), c2am, lay.c2amh());
  }

  void saliency() const {
    fs::path model_file = lay.c2amh() / "model.bin";
    require_artifact(Stage::make_saliency, model_file);
    auto model = load_disentangler(model_file, cfg.c2am.feature_channels);
    Dataset tr = train_ds(), ev = eval_ds();
    make_saliency(*model, tr, lay.saliency_train());
    touch(lay.saliency_train() / ".done");
    make_saliency(*model, ev, lay.saliency_eval());
    touch(lay.saliency_eval() / ".done");
  }

  void seeds() const {
    require_artifact(Stage::make_seeds, lay.priors_eval() / ".done");
    require_artifact(Stage::make_seeds, lay.saliency_eval() / ".done");
    Dataset ev = eval_ds();
    fs::create_directories(lay.seeds());
    for (const auto& id : ev.ids) {
      auto prior = load_cams(lay.priors_eval() / (id + ".cams"));
      auto sal = load_cams(lay.saliency_eval() / (id + ".cams")).squeeze(0);
      auto seed = seeds_with_saliency(prior, sal, cfg.refine.delta_fg,
                                      cfg.refine.delta_sal);
      write_mask(lay.seeds() / (id + ".png"), seed.labels);
    }
    touch(lay.seeds() / ".done");
  }

  void refine() const {
    require_artifact(Stage::refine_rw, lay.priors_eval() / ".done");
    Dataset ev = eval_ds();
    fs::create_directories(lay.masks_rw());
    for (std::size_t i = 0; i < ev.size(); ++i) {
      auto sample = ev.load(i);
      auto prior = load_cams(lay.priors_eval() / (sample.id + ".cams"));
      auto graph =
          build_affinity(sample.image, cfg.refine.radius, cfg.refine.sigma);
      auto probs = random_walk(add_background_channel(prior), graph,
                               cfg.refine.beta, cfg.refine.t_iters);
      probs = crf_refine(sample.image, probs, cfg.refine.crf_plugin);
      write_mask(lay.masks_rw() / (sample.id + ".png"), probs.argmax(0));
    }
    touch(lay.masks_rw() / ".done");
  }

  void evaluate() const {
    require_artifact(Stage::evaluate, lay.priors_eval() / ".done");
    require_artifact(Stage::evaluate, lay.masks_rw() / ".done");
    Dataset ev = eval_ds();
    fs::path gt = cfg.eval_root / "masks";
    fs::create_directories(lay.report());

    auto prior_iou = evaluate_priors(lay.priors_eval(), gt, ev.num_classes,
                                     cfg.eval.delta_bg);
    auto rw_iou =
        evaluate_mask_dirs(lay.masks_rw(), gt, ev.num_classes,
                           lay.report() / "masks_rw_per_class.csv");
    threshold_sweep(lay.priors_eval(), gt, cfg.eval.sweep_deltas,
                    ev.num_classes, lay.report() / "sweep.csv",
                    lay.report() / "sweep.png");

    std::string text;
    text += "priors_miou = " + format_percent(prior_iou.mean) + "\n";
    text += "masks_rw_miou = " + format_percent(rw_iou.mean) + "\n";
    write_text(lay.report() / "metrics.txt", text);
  }

  void report() const {
    require_artifact(Stage::report, lay.masks_rw() / ".done");
    Dataset ev = eval_ds();
    fs::path gt = cfg.eval_root / "masks";
    auto rw_iou = evaluate_mask_dirs(lay.masks_rw(), gt, ev.num_classes);
    auto rows = group_report(rw_iou.per_class, synthetic_groups(ev.num_classes));

    std::string text;
    text += "masks_rw_miou = " + format_percent(rw_iou.mean) + "\n\n";
    text += render_group_table(rows);
    write_text(lay.report() / "summary.txt", text);
    std::cout << text;
  }

  void run(Stage stage) const {
    switch (stage) {
      case Stage::generate: generate(); break;
      case Stage::train_vanilla:
        train_mode(TrainMode::vanilla, lay.run_vanilla());
        break;
      case Stage::train_pnoc:
        train_mode(TrainMode::p_noc, lay.run_pnoc());
        break;
      case Stage::make_priors: make_priors(); break;
      case Stage::train_c2amh: c2amh(); break;
      case Stage::make_saliency: saliency(); break;
      case Stage::make_seeds: seeds(); break;
      case Stage::refine_rw: refine(); break;
      case Stage::evaluate: evaluate(); break;
      case Stage::report: report(); break;
    }
  }
};

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg) {
  if (cfg.out.empty()) throw ConfigError("pipeline: out directory not set");
  if (cfg.data_root.empty() || cfg.eval_root.empty())
    throw ConfigError("pipeline: data_root and eval_root must be set");

  PipelineResult result;
  result.layout = PipelineLayout{cfg.out};
  fs::create_directories(cfg.out);
  write_text(cfg.out / "config.snapshot", serialize_pipeline_config(cfg));

  StageRunner runner{cfg, result.layout};
  for (Stage stage : cfg.stages) {
    fs::path artifact = stage_artifact(cfg, stage);
    StageStatus status{stage, false};
    if (!cfg.force && fs::exists(artifact)) {
      status.skipped = true;
      std::cerr << "[pipeline] skip " << to_string(stage) << " (have "
                << artifact.string() << ")\n";
    } else {
      std::cerr << "[pipeline] run " << to_string(stage) << "\n";
      runner.run(stage);
    }
    result.stages.push_back(status);
  }
  return result;
}

}  // namespace wsss
