#include <torch/torch.h>

#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "wsss/c2amh.hpp"
#include "wsss/cams_io.hpp"
#include "wsss/config.hpp"
#include "wsss/errors.hpp"
#include "wsss/evalkit.hpp"
#include "wsss/pipeline.hpp"
#include "wsss/refinement.hpp"
#include "wsss/trainer.hpp"

namespace fs = std::filesystem;
using namespace wsss;

namespace {

// "name:1,2;other:3" -> GroupSpec
GroupSpec parse_groups(const std::string& text) {
  GroupSpec groups;
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, ';')) {
    auto colon = part.find(':');
    if (colon == std::string::npos)
      throw ConfigError("bad group spec '" + part + "', expected name:i,j,...");
    std::vector<int> members;
    std::istringstream mi(part.substr(colon + 1));
    std::string tok;
    while (std::getline(mi, tok, ',')) members.push_back(std::stoi(tok));
    groups[part.substr(0, colon)] = members;
  }
  return groups;
}

PipelineConfig load_or_default(const std::string& config_file) {
  return config_file.empty() ? default_pipeline_config()
                             : load_pipeline_config(config_file);
}

int dispatch(CLI::App& app, int argc, char** argv,
             const std::function<void()>& fallback_usage) {
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    if (code == 0) return 0;  // --help and friends
    (void)fallback_usage;
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const StageError& e) {
    std::cerr << "stage error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "stage error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  torch::set_num_interop_threads(1);

  CLI::App app{
      "Weakly-supervised segmentation prior toolkit: adversarial CAM "
      "training, hint-guided saliency, affinity refinement, evaluation."};
  app.require_subcommand(1);

  // ---- generate-synthetic ------------------------------------------------
  auto* gen = app.add_subcommand("generate-synthetic",
                                 "Generate the synthetic shapes dataset");
  SyntheticSpec spec;
  std::string gen_out;
  gen->add_option("--out", gen_out, "Output dataset directory")->required();
  gen->add_option("--n", spec.n_images, "Number of images");
  gen->add_option("--classes", spec.num_classes, "Number of shape classes");
  gen->add_option("--size", spec.image_size, "Image side length");
  gen->add_option("--min-shapes", spec.min_shapes, "Minimum shapes per image");
  gen->add_option("--max-shapes", spec.max_shapes, "Maximum shapes per image");
  gen->add_option("--co-occurrence", spec.co_occurrence,
                  "Probability of multi-class scenes");
  gen->add_option("--noise", spec.noise, "Pixel noise amplitude");
  gen->add_option("--seed", spec.seed, "RNG seed");
  gen->callback([&] { generate_synthetic(spec, gen_out); });

  // ---- train -------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "Train a CAM classifier");
  std::string tr_mode = "vanilla", tr_config, tr_data, tr_out, tr_oc,
              tr_resume;
  uint64_t tr_seed = 0;
  bool tr_have_seed = false;
  tr->add_option("--mode", tr_mode, "vanilla|puzzle|p_oc|p_noc");
  tr->add_option("--config", tr_config, "Pipeline config file");
  tr->add_option("--data", tr_data, "Dataset root")->required();
  tr->add_option("--out", tr_out, "Run directory")->required();
  tr->add_option("--seed", tr_seed, "RNG seed override")
      ->each([&](const std::string&) { tr_have_seed = true; });
  tr->add_option("--oc", tr_oc, "Ordinary-classifier checkpoint (p_oc/p_noc)");
  tr->add_option("--resume", tr_resume, "Checkpoint to resume from");
  tr->callback([&] {
    auto cfg = load_or_default(tr_config);
    TrainConfig tcfg = cfg.train;
    tcfg.mode = train_mode_from_string(tr_mode);
    if (tr_have_seed) tcfg.seed = tr_seed;
    if (!tr_oc.empty()) tcfg.oc_checkpoint = tr_oc;
    Dataset ds = load_voc(tr_data);
    tcfg.model.num_classes = ds.num_classes;
    train(ds, tcfg, tr_out, tr_resume);
  });

  // ---- make-priors -------------------------------------------------------
  auto* mp = app.add_subcommand("make-priors",
                                "Emit TTA-averaged priors for a dataset");
  std::string mp_model, mp_data, mp_out, mp_config;
  mp->add_option("--model", mp_model, "Classifier checkpoint")->required();
  mp->add_option("--data", mp_data, "Dataset root")->required();
  mp->add_option("--out", mp_out, "Priors output directory")->required();
  mp->add_option("--config", mp_config, "Pipeline config file");
  mp->callback([&] {
    auto cfg = load_or_default(mp_config);
    Dataset ds = load_voc(mp_data);
    ToyCnnConfig mcfg = cfg.train.model;
    mcfg.num_classes = ds.num_classes;
    auto model = load_model_checkpoint(mp_model, mcfg);
    emit_priors_for(*model, ds, mp_out, cfg.train.tta_scales,
                    cfg.train.tta_flip);
  });

  // ---- train-c2amh -------------------------------------------------------
  auto* tc = app.add_subcommand(
      "train-c2amh", "Train the fg/bg disentangler (hint-guided when "
                     "--hints-from is given)");
  std::string tc_data, tc_hints, tc_out, tc_config, tc_backbone;
  tc->add_option("--data", tc_data, "Dataset root")->required();
  tc->add_option("--hints-from", tc_hints,
                 "Priors directory supplying foreground hints");
  tc->add_option("--backbone", tc_backbone,
                 "CAM-classifier checkpoint seeding the trunk");
  tc->add_option("--out", tc_out, "Output directory")->required();
  tc->add_option("--config", tc_config, "Pipeline config file");
  tc->callback([&] {
    auto cfg = load_or_default(tc_config);
    Dataset ds = load_voc(tc_data);
    if (!tc_backbone.empty()) cfg.c2am.backbone_checkpoint = tc_backbone;
    train_c2amh(ds, tc_hints, cfg.c2am, tc_out);
  });

  // ---- make-saliency -----------------------------------------------------
  auto* ms = app.add_subcommand("make-saliency",
                                "Emit pseudo-saliency maps for a dataset");
  std::string ms_model, ms_data, ms_out, ms_config;
  ms->add_option("--model", ms_model, "Disentangler checkpoint")->required();
  ms->add_option("--data", ms_data, "Dataset root")->required();
  ms->add_option("--out", ms_out, "Saliency output directory")->required();
  ms->add_option("--config", ms_config, "Pipeline config file");
  ms->callback([&] {
    auto cfg = load_or_default(ms_config);
    Dataset ds = load_voc(ms_data);
    auto model = load_disentangler(ms_model, cfg.c2am.feature_channels);
    make_saliency(*model, ds, ms_out);
  });

  // ---- make-seeds --------------------------------------------------------
  auto* sk = app.add_subcommand("make-seeds",
                                "Derive affinity seed labels from priors");
  std::string sk_priors, sk_sal, sk_out, sk_config;
  sk->add_option("--priors", sk_priors, "Priors directory")->required();
  sk->add_option("--saliency", sk_sal,
                 "Saliency directory (omit for the priors-only rule)");
  sk->add_option("--out", sk_out, "Seed output directory")->required();
  sk->add_option("--config", sk_config, "Pipeline config file");
  sk->callback([&] {
    auto cfg = load_or_default(sk_config);
    fs::create_directories(sk_out);
    for (const auto& entry : fs::directory_iterator(sk_priors)) {
      if (entry.path().extension() != ".cams") continue;
      auto id = entry.path().stem().string();
      auto prior = load_cams(entry.path());
      SeedMap seed;
      if (sk_sal.empty()) {
        seed = seeds_from_priors(prior, cfg.refine.delta_bg,
                                 cfg.refine.delta_fg);
      } else {
        auto sal = load_cams(fs::path(sk_sal) / (id + ".cams")).squeeze(0);
        seed = seeds_with_saliency(prior, sal, cfg.refine.delta_fg,
                                   cfg.refine.delta_sal);
      }
      write_mask(fs::path(sk_out) / (id + ".png"), seed.labels);
    }
  });

  // ---- refine-rw ---------------------------------------------------------
  auto* rw = app.add_subcommand("refine-rw",
                                "Random-walk refinement of priors to masks");
  std::string rw_priors, rw_data, rw_out, rw_config;
  rw->add_option("--priors", rw_priors, "Priors directory")->required();
  rw->add_option("--data", rw_data, "Dataset root (affinity features)")
      ->required();
  rw->add_option("--out", rw_out, "Mask output directory")->required();
  rw->add_option("--config", rw_config, "Pipeline config file");
  rw->callback([&] {
    auto cfg = load_or_default(rw_config);
    Dataset ds = load_voc(rw_data);
    fs::create_directories(rw_out);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      auto sample = ds.load(i);
      auto prior = load_cams(fs::path(rw_priors) / (sample.id + ".cams"));
      auto graph =
          build_affinity(sample.image, cfg.refine.radius, cfg.refine.sigma);
      auto probs = random_walk(add_background_channel(prior), graph,
                               cfg.refine.beta, cfg.refine.t_iters);
      probs = crf_refine(sample.image, probs, cfg.refine.crf_plugin);
      write_mask(fs::path(rw_out) / (sample.id + ".png"), probs.argmax(0));
    }
  });

  // ---- evaluate ----------------------------------------------------------
  auto* ev = app.add_subcommand("evaluate",
                                "Score predicted masks against ground truth");
  std::string ev_pred, ev_gt, ev_csv;
  long ev_classes = 0;
  ev->add_option("--pred", ev_pred, "Predicted mask directory")->required();
  ev->add_option("--gt", ev_gt, "Ground-truth mask directory")->required();
  ev->add_option("--classes", ev_classes,
                 "Foreground class count (0 = infer from GT)");
  ev->add_option("--csv", ev_csv, "Optional per-class CSV output");
  ev->callback([&] {
    long c = ev_classes;
    if (c == 0) {
      for (const auto& entry : fs::directory_iterator(ev_gt)) {
        if (entry.path().extension() != ".png") continue;
        auto m = read_mask(entry.path());
        auto vals = std::get<0>(torch::_unique(m));
        for (long i = 0; i < vals.numel(); ++i) {
          long v = vals[i].item<long>();
          if (v != 255) c = std::max(c, v);
        }
      }
      if (c == 0) throw DataError("evaluate: could not infer class count");
    }
    auto report = evaluate_mask_dirs(ev_pred, ev_gt, c, ev_csv);
    for (std::size_t i = 0; i < report.per_class.size(); ++i)
      std::cout << "class " << i << " iou = "
                << format_percent(report.per_class[i]) << "\n";
    std::cout << "miou = " << format_percent(report.mean) << "\n";
  });

  // ---- sweep -------------------------------------------------------------
  auto* sw = app.add_subcommand(
      "sweep", "Background-threshold sweep over a prior directory");
  std::string sw_priors, sw_gt, sw_deltas = "0.05:0.95:0.05", sw_csv, sw_plot;
  long sw_classes = 0;
  sw->add_option("--priors", sw_priors, "Priors directory")->required();
  sw->add_option("--gt", sw_gt, "Ground-truth mask directory")->required();
  sw->add_option("--deltas", sw_deltas, "Threshold range lo:hi:step");
  sw->add_option("--classes", sw_classes, "Foreground class count")
      ->required();
  sw->add_option("--csv", sw_csv, "CSV output file")->required();
  sw->add_option("--plot", sw_plot, "Curve image output file");
  sw->callback([&] {
    if (sw_plot.empty())
      sw_plot = fs::path(sw_csv).replace_extension(".png").string();
    auto points = threshold_sweep(sw_priors, sw_gt, parse_delta_range(sw_deltas),
                                  sw_classes, sw_csv, sw_plot);
    for (const auto& p : points)
      std::cout << "delta " << p.delta << " miou = " << format_percent(p.miou)
                << "\n";
  });

  // ---- group-report ------------------------------------------------------
  auto* gr = app.add_subcommand("group-report",
                                "Class-group mean IoU table from mask scores");
  std::string gr_pred, gr_gt, gr_groups;
  long gr_classes = 0;
  gr->add_option("--pred", gr_pred, "Predicted mask directory")->required();
  gr->add_option("--gt", gr_gt, "Ground-truth mask directory")->required();
  gr->add_option("--classes", gr_classes, "Foreground class count")
      ->required();
  gr->add_option("--groups", gr_groups,
                 "Group spec name:i,j;... (default: synthetic class groups)");
  gr->callback([&] {
    auto report = evaluate_mask_dirs(gr_pred, gr_gt, gr_classes);
    GroupSpec groups = gr_groups.empty() ? synthetic_groups(gr_classes)
                                         : parse_groups(gr_groups);
    std::cout << render_group_table(group_report(report.per_class, groups));
  });

  // ---- run ---------------------------------------------------------------
  auto* run = app.add_subcommand("run", "Run the staged pipeline");
  std::string run_config, run_stages;
  bool run_force = false;
  run->add_option("--config", run_config, "Pipeline config file")->required();
  run->add_option("--stages", run_stages,
                  "Comma-separated stage subset (default: config list)");
  run->add_flag("--force", run_force, "Re-run stages with existing artifacts");
  run->callback([&] {
    auto cfg = load_pipeline_config(run_config);
    if (run_force) cfg.force = true;
    if (!run_stages.empty()) {
      cfg.stages.clear();
      std::istringstream in(run_stages);
      std::string tok;
      while (std::getline(in, tok, ','))
        cfg.stages.push_back(stage_from_string(tok));
    }
    run_pipeline(cfg);
  });

  return dispatch(app, argc, argv, [] {});
}
