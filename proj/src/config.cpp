#include "wsss/config.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "wsss/errors.hpp"

namespace wsss {

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::generate: return "generate";
    case Stage::train_vanilla: return "train-vanilla";
    case Stage::train_pnoc: return "train-pnoc";
    case Stage::make_priors: return "make-priors";
    case Stage::train_c2amh: return "train-c2amh";
    case Stage::make_saliency: return "make-saliency";
    case Stage::make_seeds: return "make-seeds";
    case Stage::refine_rw: return "refine-rw";
    case Stage::evaluate: return "evaluate";
    case Stage::report: return "report";
  }
  return "?";
}

Stage stage_from_string(const std::string& name) {
  for (Stage s : {Stage::generate, Stage::train_vanilla, Stage::train_pnoc,
                  Stage::make_priors, Stage::train_c2amh, Stage::make_saliency,
                  Stage::make_seeds, Stage::refine_rw, Stage::evaluate,
                  Stage::report})
    if (to_string(s) == name) return s;
  throw ConfigError("unknown stage: " + name);
}

std::vector<double> parse_delta_range(const std::string& spec) {
  double lo, hi, step;
  char c1, c2;
  std::istringstream in(spec);
  if (!(in >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':')
    throw ConfigError("bad delta range '" + spec + "', expected lo:hi:step");
  if (step <= 0 || lo > hi) throw ConfigError("bad delta range '" + spec + "'");
  std::vector<double> out;
  for (double v = lo; v <= hi + 1e-9; v += step) out.push_back(v);
  return out;
}

PipelineConfig default_pipeline_config() {
  PipelineConfig cfg;
  cfg.stages = {Stage::generate,    Stage::train_vanilla, Stage::train_pnoc,
                Stage::make_priors, Stage::train_c2amh,   Stage::make_saliency,
                Stage::make_seeds,  Stage::refine_rw,     Stage::evaluate,
                Stage::report};
  cfg.synthetic_train.n_images = 200;
  cfg.synthetic_eval.n_images = 50;
  cfg.eval.sweep_deltas = parse_delta_range("0.05:0.95:0.05");
  return cfg;
}

namespace {

// Minimal strict INI-style parser: "[section]" headers and "key = value"
// lines; '#' starts a comment.
struct KvFile {
  std::map<std::string, std::map<std::string, std::string>> values;
  std::set<std::pair<std::string, std::string>> consumed;

  static KvFile parse(const std::string& text) {
    KvFile kv;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ConfigError("config line " + std::to_string(line_no) +
                            ": malformed section header");
        section = line.substr(1, line.size() - 2);
        kv.values[section];
        continue;
      }
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": expected 'key = value'");
      auto key = trim(line.substr(0, eq));
      auto value = trim(line.substr(eq + 1));
      if (key.empty())
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": empty key");
      if (!kv.values[section].emplace(key, value).second)
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": duplicate key '" + key + "'");
    }
    return kv;
  }

  bool take(const std::string& section, const std::string& key,
            std::string& out) {
    auto sit = values.find(section);
    if (sit == values.end()) return false;
    auto kit = sit->second.find(key);
    if (kit == sit->second.end()) return false;
    out = kit->second;
    consumed.insert({section, key});
    return true;
  }

  template <typename T>
  void get(const std::string& section, const std::string& key, T& out) {
    std::string raw;
    if (!take(section, key, raw)) return;
    std::istringstream in(raw);
    T v;
    if (!(in >> v))
      throw ConfigError("config [" + section + "] " + key + ": bad value '" +
                        raw + "'");
    out = v;
  }

  void get(const std::string& section, const std::string& key,
           std::string& out) {
    take(section, key, out);
  }

  void get(const std::string& section, const std::string& key, bool& out) {
    std::string raw;
    if (!take(section, key, raw)) return;
    if (raw == "1" || raw == "true") out = true;
    else if (raw == "0" || raw == "false") out = false;
    else
      throw ConfigError("config [" + section + "] " + key +
                        ": expected 0/1/true/false");
  }

  void reject_unknown() const {
    for (const auto& [section, entries] : values)
      for (const auto& [key, value] : entries)
        if (!consumed.count({section, key}))
          throw ConfigError("unknown config key [" + section + "] " + key);
  }
};

std::vector<double> parse_double_list(const std::string& raw) {
  std::vector<double> out;
  std::istringstream in(raw);
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(std::stod(tok));
  return out;
}

std::string join_doubles(const std::vector<double>& v) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
  return out.str();
}

}  // namespace

PipelineConfig parse_pipeline_config(const std::string& text) {
  auto kv = KvFile::parse(text);
  PipelineConfig cfg = default_pipeline_config();

  std::string raw;
  if (kv.take("pipeline", "data_root", raw)) cfg.data_root = raw;
  if (kv.take("pipeline", "eval_root", raw)) cfg.eval_root = raw;
  if (kv.take("pipeline", "out", raw)) cfg.out = raw;
  kv.get("pipeline", "seed", cfg.seed);
  kv.get("pipeline", "force", cfg.force);
  if (kv.take("pipeline", "stages", raw)) {
    cfg.stages.clear();
    std::istringstream in(raw);
    std::string tok;
    while (std::getline(in, tok, ','))
      cfg.stages.push_back(stage_from_string(tok));
  }

  kv.get("synthetic", "n_train", cfg.synthetic_train.n_images);
  kv.get("synthetic", "n_eval", cfg.synthetic_eval.n_images);
  kv.get("synthetic", "num_classes", cfg.synthetic_train.num_classes);
  kv.get("synthetic", "image_size", cfg.synthetic_train.image_size);
  kv.get("synthetic", "min_shapes", cfg.synthetic_train.min_shapes);
  kv.get("synthetic", "max_shapes", cfg.synthetic_train.max_shapes);
  kv.get("synthetic", "co_occurrence", cfg.synthetic_train.co_occurrence);
  kv.get("synthetic", "noise", cfg.synthetic_train.noise);
  cfg.synthetic_eval.num_classes = cfg.synthetic_train.num_classes;
  cfg.synthetic_eval.image_size = cfg.synthetic_train.image_size;
  cfg.synthetic_eval.min_shapes = cfg.synthetic_train.min_shapes;
  cfg.synthetic_eval.max_shapes = cfg.synthetic_train.max_shapes;
  cfg.synthetic_eval.co_occurrence = cfg.synthetic_train.co_occurrence;
  cfg.synthetic_eval.noise = cfg.synthetic_train.noise;

  kv.get("train", "epochs", cfg.train.epochs);
  kv.get("train", "batch_size", cfg.train.batch_size);
  kv.get("train", "accumulation", cfg.train.accumulation);
  kv.get("train", "lr_scratch", cfg.train.lr_scratch);
  kv.get("train", "lr_pretrained", cfg.train.lr_pretrained);
  kv.get("train", "pretrained", cfg.train.pretrained);
  kv.get("train", "weight_decay", cfg.train.weight_decay);
  kv.get("train", "momentum", cfg.train.momentum);
  kv.get("train", "image_size", cfg.train.image_size);
  kv.get("train", "base_channels", cfg.train.model.base_channels);
  kv.get("train", "blocks", cfg.train.model.blocks);
  kv.get("train", "k_noc", cfg.train.sched.k_noc);
  kv.get("train", "delta_noc", cfg.train.sched.delta_noc);
  kv.get("train", "smoothing_eps", cfg.train.sched.smoothing_eps);
  kv.get("train", "epoch_miou_estimate", cfg.train.epoch_miou_estimate);
  if (kv.take("train", "augment", raw)) {
    if (raw == "none") cfg.train.augment_policy = AugmentPolicy::none;
    else if (raw == "color_jitter")
      cfg.train.augment_policy = AugmentPolicy::color_jitter;
    else
      throw ConfigError("config [train] augment: unknown policy '" + raw + "'");
  }
  if (kv.take("train", "tta_scales", raw))
    cfg.train.tta_scales = parse_double_list(raw);
  kv.get("train", "tta_flip", cfg.train.tta_flip);

  kv.get("c2am", "alpha", cfg.c2am.alpha);
  kv.get("c2am", "lambda_h", cfg.c2am.lambda_h);
  kv.get("c2am", "delta_fg", cfg.c2am.delta_fg);
  kv.get("c2am", "delta_bg", cfg.c2am.delta_bg);
  kv.get("c2am", "batch", cfg.c2am.batch);
  kv.get("c2am", "epochs", cfg.c2am.epochs);
  kv.get("c2am", "lr", cfg.c2am.lr);
  kv.get("c2am", "trunk_lr_scale", cfg.c2am.trunk_lr_scale);
  kv.get("c2am", "backbone_checkpoint", cfg.c2am.backbone_checkpoint);
  kv.get("c2am", "feature_channels", cfg.c2am.feature_channels);
  kv.get("c2am", "delta_sal", cfg.c2am.delta_sal);

  kv.get("refine", "radius", cfg.refine.radius);
  kv.get("refine", "sigma", cfg.refine.sigma);
  kv.get("refine", "beta", cfg.refine.beta);
  kv.get("refine", "t_iters", cfg.refine.t_iters);
  kv.get("refine", "crf_plugin", cfg.refine.crf_plugin);
  kv.get("refine", "delta_fg", cfg.refine.delta_fg);
  kv.get("refine", "delta_bg", cfg.refine.delta_bg);
  kv.get("refine", "delta_sal", cfg.refine.delta_sal);

  kv.get("eval", "delta_bg", cfg.eval.delta_bg);
  if (kv.take("eval", "sweep_deltas", raw)) {
    if (raw.rfind("list:", 0) == 0)
      cfg.eval.sweep_deltas = parse_double_list(raw.substr(5));
    else
      cfg.eval.sweep_deltas = parse_delta_range(raw);
  }

  kv.reject_unknown();

  cfg.synthetic_train.seed = cfg.seed;
  cfg.synthetic_eval.seed = cfg.seed + 1000;
  cfg.train.seed = cfg.seed;
  cfg.c2am.seed = cfg.seed;
  cfg.c2am.image_size = cfg.train.image_size;
  return cfg;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_pipeline_config(buf.str());
}

std::string serialize_pipeline_config(const PipelineConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  out << "[pipeline]\n";
  out << "data_root = " << cfg.data_root.string() << "\n";
  out << "eval_root = " << cfg.eval_root.string() << "\n";
  out << "out = " << cfg.out.string() << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "force = " << (cfg.force ? 1 : 0) << "\n";
  out << "stages = ";
  for (std::size_t i = 0; i < cfg.stages.size(); ++i)
    out << (i ? "," : "") << to_string(cfg.stages[i]);
  out << "\n\n[synthetic]\n";
  out << "n_train = " << cfg.synthetic_train.n_images << "\n";
  out << "n_eval = " << cfg.synthetic_eval.n_images << "\n";
  out << "num_classes = " << cfg.synthetic_train.num_classes << "\n";
  out << "image_size = " << cfg.synthetic_train.image_size << "\n";
  out << "min_shapes = " << cfg.synthetic_train.min_shapes << "\n";
  out << "max_shapes = " << cfg.synthetic_train.max_shapes << "\n";
  out << "co_occurrence = " << cfg.synthetic_train.co_occurrence << "\n";
  out << "noise = " << cfg.synthetic_train.noise << "\n";
  out << "\n[train]\n";
  out << "epochs = " << cfg.train.epochs << "\n";
  out << "batch_size = " << cfg.train.batch_size << "\n";
  out << "accumulation = " << cfg.train.accumulation << "\n";
  out << "lr_scratch = " << cfg.train.lr_scratch << "\n";
  out << "lr_pretrained = " << cfg.train.lr_pretrained << "\n";
  out << "pretrained = " << (cfg.train.pretrained ? 1 : 0) << "\n";
  out << "weight_decay = " << cfg.train.weight_decay << "\n";
  out << "momentum = " << cfg.train.momentum << "\n";
  out << "image_size = " << cfg.train.image_size << "\n";
  out << "base_channels = " << cfg.train.model.base_channels << "\n";
  out << "blocks = " << cfg.train.model.blocks << "\n";
  out << "k_noc = " << cfg.train.sched.k_noc << "\n";
  out << "delta_noc = " << cfg.train.sched.delta_noc << "\n";
  out << "smoothing_eps = " << cfg.train.sched.smoothing_eps << "\n";
  out << "epoch_miou_estimate = " << (cfg.train.epoch_miou_estimate ? 1 : 0)
      << "\n";
  out << "augment = "
      << (cfg.train.augment_policy == AugmentPolicy::color_jitter
              ? "color_jitter"
              : "none")
      << "\n";
  out << "tta_scales = " << join_doubles(cfg.train.tta_scales) << "\n";
  out << "tta_flip = " << (cfg.train.tta_flip ? 1 : 0) << "\n";
  out << "\n[c2am]\n";
  out << "alpha = " << cfg.c2am.alpha << "\n";
  out << "lambda_h = " << cfg.c2am.lambda_h << "\n";
  out << "delta_fg = " << cfg.c2am.delta_fg << "\n";
  out << "delta_bg = " << cfg.c2am.delta_bg << "\n";
  out << "batch = " << cfg.c2am.batch << "\n";
  out << "epochs = " << cfg.c2am.epochs << "\n";
  out << "lr = " << cfg.c2am.lr << "\n";
  out << "trunk_lr_scale = " << cfg.c2am.trunk_lr_scale << "\n";
  out << "backbone_checkpoint = " << cfg.c2am.backbone_checkpoint << "\n";
  out << "feature_channels = " << cfg.c2am.feature_channels << "\n";
  out << "delta_sal = " << cfg.c2am.delta_sal << "\n";
  out << "\n[refine]\n";
  out << "radius = " << cfg.refine.radius << "\n";
  out << "sigma = " << cfg.refine.sigma << "\n";
  out << "beta = " << cfg.refine.beta << "\n";
  out << "t_iters = " << cfg.refine.t_iters << "\n";
  out << "crf_plugin = " << cfg.refine.crf_plugin << "\n";
  out << "delta_fg = " << cfg.refine.delta_fg << "\n";
  out << "delta_bg = " << cfg.refine.delta_bg << "\n";
  out << "delta_sal = " << cfg.refine.delta_sal << "\n";
  out << "\n[eval]\n";
  out << "delta_bg = " << cfg.eval.delta_bg << "\n";
  out << "sweep_deltas = ";
  // Stored as an explicit list so the round-trip is lossless even for
  // hand-edited ranges.
  out << "list:" << join_doubles(cfg.eval.sweep_deltas) << "\n";
  return out.str();
}

}  // namespace wsss
