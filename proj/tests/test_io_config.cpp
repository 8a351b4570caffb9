#include "doctest.h"

#include <torch/torch.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "wsss/cams_io.hpp"
#include "wsss/config.hpp"
#include "wsss/dataset.hpp"
#include "wsss/errors.hpp"
#include "wsss/pipeline.hpp"

using namespace wsss;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto dir = fs::temp_directory_path() / ("wsss-io-" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_SUITE("io_config") {

TEST_CASE("cams round-trip is bit-exact") {
  torch::manual_seed(91);
  auto maps = torch::randn({4, 7, 9});
  auto file = temp_dir("cams") / "x.cams";
  save_cams(file, maps);
  auto loaded = load_cams(file);
  CHECK(loaded.sizes() == maps.sizes());
  CHECK(torch::equal(loaded, maps));
}

TEST_CASE("cams loader rejects garbage") {
  auto dir = temp_dir("cams-bad");
  std::ofstream(dir / "bad.cams", std::ios::binary) << "NOPE1234";
  CHECK_THROWS_AS(load_cams(dir / "bad.cams"), DataError);
  CHECK_THROWS_AS(load_cams(dir / "missing.cams"), DataError);
}

TEST_CASE("tensor archive round-trips names and values") {
  torch::manual_seed(93);
  TensorArchive ar;
  ar.add("w", torch::randn({3, 3}));
  ar.add("b", torch::randn({3}, torch::kFloat64));
  auto file = temp_dir("archive") / "a.bin";
  ar.save(file);
  auto back = TensorArchive::load(file);
  CHECK(torch::equal(back.get("w"), ar.get("w")));
  CHECK(torch::equal(back.get("b"), ar.get("b")));
  CHECK(back.has("w"));
  CHECK_FALSE(back.has("nope"));
  CHECK_THROWS_AS(back.get("nope"), DataError);
}

TEST_CASE("pipeline config round-trips losslessly") {
  auto cfg = default_pipeline_config();
  cfg.data_root = "data/train";
  cfg.eval_root = "data/eval";
  cfg.out = "out";
  cfg.seed = 42;
  auto text = serialize_pipeline_config(cfg);
  auto parsed = parse_pipeline_config(text);
  CHECK(serialize_pipeline_config(parsed) == text);
  CHECK(parsed.seed == 42);
  CHECK(parsed.train.epochs == cfg.train.epochs);
  CHECK(parsed.eval.sweep_deltas == cfg.eval.sweep_deltas);
  CHECK(parsed.stages == cfg.stages);
}

TEST_CASE("config parser rejects typos and malformed input") {
  CHECK_THROWS_WITH_AS(parse_pipeline_config("[train]\nepohcs = 3\n"),
                       doctest::Contains("epohcs"), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config("[train]\nepochs\n"), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config("[train\nepochs = 3\n"), ConfigError);
  CHECK_THROWS_AS(
      parse_pipeline_config("[train]\nepochs = 3\nepochs = 4\n"),
      ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config("[train]\nepochs = banana\n"),
                  ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config("[pipeline]\nstages = fly\n"),
                  ConfigError);

  auto ok = parse_pipeline_config(
      "[train]\nepochs = 3  # comment\n\n[eval]\ndelta_bg = 0.3\n");
  CHECK(ok.train.epochs == 3);
  CHECK(ok.eval.delta_bg == doctest::Approx(0.3));
}

TEST_CASE("parse_delta_range") {
  auto d = parse_delta_range("0.1:0.3:0.1");
  REQUIRE(d.size() == 3);
  CHECK(d[0] == doctest::Approx(0.1));
  CHECK(d[2] == doctest::Approx(0.3));
  CHECK_THROWS_AS(parse_delta_range("0.5:0.1:0.1"), ConfigError);
  CHECK_THROWS_AS(parse_delta_range("0.1:0.5:0"), ConfigError);
  CHECK_THROWS_AS(parse_delta_range("nope"), ConfigError);
}

TEST_CASE("stage names round-trip") {
  for (Stage s : default_pipeline_config().stages)
    CHECK(stage_from_string(to_string(s)) == s);
  CHECK_THROWS_AS(stage_from_string("warp"), ConfigError);
}

TEST_CASE("load_voc: malformed labels carry line numbers") {
  auto dir = temp_dir("voc-bad");
  fs::create_directories(dir / "images");
  std::ofstream(dir / "labels.txt") << "a 1\nb\n";
  write_image(dir / "images" / "a.png", torch::rand({3, 8, 8}));
  CHECK_THROWS_WITH_AS(load_voc(dir), doctest::Contains("line 2"), DataError);

  std::ofstream(dir / "labels.txt") << "a 0\n";
  CHECK_THROWS_WITH_AS(load_voc(dir), doctest::Contains("1-based"), DataError);

  std::ofstream(dir / "labels.txt") << "a 1,x\n";
  CHECK_THROWS_AS(load_voc(dir), DataError);

  std::ofstream(dir / "labels.txt") << "ghost 1\n";
  CHECK_THROWS_WITH_AS(load_voc(dir), doctest::Contains("ghost"), DataError);
}

TEST_CASE("load_voc infers C from the label universe") {
  auto dir = temp_dir("voc-c");
  fs::create_directories(dir / "images");
  write_image(dir / "images" / "a.png", torch::rand({3, 8, 8}));
  write_image(dir / "images" / "b.png", torch::rand({3, 8, 8}));
  std::ofstream(dir / "labels.txt") << "a 1,3\nb 2\n";
  auto ds = load_voc(dir);
  CHECK(ds.num_classes == 3);
  CHECK(ds.size() == 2);
  auto y = ds.label_vector("a");
  CHECK(torch::equal(y, torch::tensor({1.0f, 0.0f, 1.0f})));
}

TEST_CASE("synthetic generation is deterministic and label-consistent") {
  SyntheticSpec spec;
  spec.n_images = 6;
  spec.image_size = 32;
  spec.seed = 99;

  auto d1 = temp_dir("synth-1");
  auto d2 = temp_dir("synth-2");
  generate_synthetic(spec, d1);
  generate_synthetic(spec, d2);
  CHECK(slurp(d1 / "labels.txt") == slurp(d2 / "labels.txt"));
  for (int i = 0; i < 6; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "img_%05d", i);
    CHECK(slurp(d1 / "images" / (std::string(id) + ".png")) ==
          slurp(d2 / "images" / (std::string(id) + ".png")));
    CHECK(slurp(d1 / "masks" / (std::string(id) + ".png")) ==
          slurp(d2 / "masks" / (std::string(id) + ".png")));
  }

  // Class present in the labels <=> some pixel carries it in the mask.
  auto ds = load_voc(d1);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto s = ds.load(i, /*with_mask=*/true);
    REQUIRE(s.gt_mask.defined());
    std::set<long> in_mask;
    auto flat = s.gt_mask.flatten();
    for (long p = 0; p < flat.numel(); ++p) {
      long v = flat[p].item<long>();
      if (v != 0 && v != 255) in_mask.insert(v);
    }
    std::set<long> in_labels;
    for (int c : ds.labels.at(s.id)) in_labels.insert(c);
    CHECK(in_mask == in_labels);
  }
}

TEST_CASE("co_occurrence zero yields single-class scenes") {
  SyntheticSpec spec;
  spec.n_images = 10;
  spec.image_size = 32;
  spec.co_occurrence = 0.0;
  spec.seed = 101;
  auto dir = temp_dir("synth-single");
  generate_synthetic(spec, dir);
  auto ds = load_voc(dir);
  for (const auto& [id, classes] : ds.labels) CHECK(classes.size() == 1);
}

TEST_CASE("augment: determinism and mask alignment") {
  auto dir = temp_dir("augment");
  SyntheticSpec spec;
  spec.n_images = 2;
  spec.image_size = 32;
  spec.seed = 103;
  generate_synthetic(spec, dir);
  auto ds = load_voc(dir);
  auto s = ds.load(0, /*with_mask=*/true);

  std::mt19937_64 r1(7), r2(7);
  auto a1 = augment(s, AugmentPolicy::color_jitter, 32, r1);
  auto a2 = augment(s, AugmentPolicy::color_jitter, 32, r2);
  CHECK(torch::equal(a1.image, a2.image));
  CHECK(torch::equal(a1.gt_mask, a2.gt_mask));
  CHECK(a1.image.sizes() == torch::IntArrayRef({3, 32, 32}));
  CHECK(a1.gt_mask.sizes() == torch::IntArrayRef({32, 32}));

  // The mask travels with the image: no class appears that the original
  // scene did not contain.
  std::set<long> orig, after;
  auto of = s.gt_mask.flatten();
  for (long p = 0; p < of.numel(); ++p) orig.insert(of[p].item<long>());
  auto af = a1.gt_mask.flatten();
  for (long p = 0; p < af.numel(); ++p) after.insert(af[p].item<long>());
  for (long v : after) CHECK(orig.count(v) == 1);

  std::mt19937_64 r3(11);
  auto plain = augment(s, AugmentPolicy::none, 32, r3);
  CHECK(plain.image.min().item<double>() >= 0.0);
  CHECK(plain.image.max().item<double>() <= 1.0);
}

TEST_CASE("gray image I/O quantizes to 8 bits and back") {
  auto dir = temp_dir("gray");
  auto map = torch::rand({16, 16});
  write_gray(dir / "g.png", map);
  auto back = read_gray(dir / "g.png");
  CHECK((back - map).abs().max().item<double>() < 1.0 / 255.0 + 1e-6);
}

TEST_CASE("mask I/O preserves the 255 ignore value") {
  auto dir = temp_dir("mask");
  auto mask = torch::tensor({{0L, 3L}, {255L, 1L}});
  write_mask(dir / "m.png", mask);
  CHECK(torch::equal(read_mask(dir / "m.png"), mask));
}

}  // TEST_SUITE
