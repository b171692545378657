#include <doctest.h>

#include <filesystem>

#include "vptsurv/config.hpp"
#include "vptsurv/errors.hpp"

using namespace vptsurv;
namespace fs = std::filesystem;

TEST_CASE("serialised configs parse back to the same values") {
  for (const char* preset : {"desk", "paper-shape"}) {
    ExperimentConfig c = ExperimentConfig::from_preset(preset);
    c.train.learning_rate = 0.1 + 0.2;  // not exactly representable in short form
    c.synthetic.hazard_link = 1.0 / 3.0;
    const ExperimentConfig back = parse_config(serialize_config(c));
    CHECK(back.preset == c.preset);
    CHECK(back.synthetic == c.synthetic);
    CHECK(back.encoder == c.encoder);
    CHECK(back.decoder == c.decoder);
    CHECK(back.train.learning_rate == c.train.learning_rate);
    CHECK(back.train.mode == c.train.mode);
    CHECK(back.train.epochs == c.train.epochs);
    CHECK(back.data_dir == c.data_dir);
    CHECK(serialize_config(back) == serialize_config(c));
  }
}

TEST_CASE("absent keys keep the preset values") {
  const ExperimentConfig c = parse_config("preset = desk\n[train]\nepochs = 3\n# comment\n");
  CHECK(c.train.epochs == 3);
  CHECK(c.encoder == ExperimentConfig::desk().encoder);
  CHECK(c.synthetic == ExperimentConfig::desk().synthetic);

  const ExperimentConfig p = parse_config("preset = paper-shape\n");
  CHECK(p.encoder.dim == 768);
  CHECK(p.decoder.dim == 768);
}

TEST_CASE("malformed configs are rejected") {
  CHECK_THROWS_AS(parse_config("[train]\nepochs = 3\nepochs = 4\n"), InvalidArgument);
  CHECK_THROWS_AS(parse_config("[train]\nepoch = 3\n"), InvalidArgument);
  CHECK_THROWS_AS(parse_config("[optimizer]\nlr = 1\n"), InvalidArgument);
  CHECK_THROWS_AS(parse_config("[train]\nepochs = three\n"), InvalidArgument);
  CHECK_THROWS_AS(parse_config("[train\n"), InvalidArgument);
  CHECK_THROWS_AS(parse_config("[train]\njust words\n"), InvalidArgument);
  CHECK_THROWS_AS(parse_config("preset = laptop\n"), InvalidArgument);
  CHECK_THROWS_AS(parse_config("[synthetic]\ncensoring_rate = 1.5\n"), InvalidArgument);
  CHECK_THROWS_AS(parse_config("[decoder]\ndim = 32\n"), InvalidArgument);
  CHECK_THROWS_AS(parse_config("[encoder]\nprompt_sources = structure,prior\n"), InvalidArgument);
  CHECK_THROWS_AS(ExperimentConfig::from_preset("huge"), InvalidArgument);
}

TEST_CASE("presets and prompt lists") {
  const ExperimentConfig desk = ExperimentConfig::desk();
  CHECK_NOTHROW(desk.validate());
  CHECK(desk.encoder.prompt_sources == std::vector<PromptKind>{PromptKind::structure, PromptKind::scale});
  CHECK(desk.decoder.dim == desk.encoder.dim);
  CHECK(desk.synthetic.tile_size == desk.encoder.tile_size);

  const ExperimentConfig paper = ExperimentConfig::paper_shape();
  CHECK_NOTHROW(paper.validate());
  CHECK(paper.encoder.tile_size == 256);
  CHECK(paper.encoder.patch_size == 16);
  CHECK(paper.train.epochs == 15);
  CHECK(paper.train.batch_size == 4);
  CHECK(paper.train.learning_rate == 5e-5);
  CHECK(paper.train.train_tiles_per_wsi == 200);
  CHECK(paper.train.eval_tiles_per_wsi == 1000);

  CHECK(parse_prompt_list("").empty());
  CHECK(parse_prompt_list("scale, structure") == std::vector<PromptKind>{PromptKind::scale, PromptKind::structure});
  CHECK(format_prompt_list({PromptKind::structure, PromptKind::scale}) == "structure,scale");
  CHECK_THROWS_AS(parse_prompt_list("scale,prior"), InvalidArgument);
  CHECK_THROWS_AS(parse_config("[encoder]\nprompt_sources = scale,scale\n"), InvalidArgument);
}

TEST_CASE("configs round trip through a file") {
  const fs::path dir = fs::temp_directory_path() / "vptsurv_test_config";
  fs::remove_all(dir);
  fs::create_directories(dir);
  ExperimentConfig c = ExperimentConfig::desk();
  c.train.mode = TrainMode::two_stage;
  c.encoder.prompt_sources = {};
  save_config(c, dir / "exp.ini");
  const ExperimentConfig back = load_config(dir / "exp.ini");
  CHECK(back.train.mode == TrainMode::two_stage);
  CHECK(back.encoder.prompt_sources.empty());
  CHECK_THROWS(load_config(dir / "missing.ini"));
  fs::remove_all(dir);
}

TEST_CASE("shipped config files are the presets") {
  const fs::path dir = fs::path(VPTSURV_SOURCE_DIR) / "configs";
  for (const char* preset : {"desk", "paper-shape"}) {
    const ExperimentConfig shipped = load_config(dir / (std::string(preset) + ".ini"));
    CHECK(serialize_config(shipped) == serialize_config(ExperimentConfig::from_preset(preset)));
  }
}
