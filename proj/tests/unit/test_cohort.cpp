#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "vptsurv/cohort.hpp"
#include "vptsurv/errors.hpp"
#include "vptsurv/png_io.hpp"
#include "vptsurv/random.hpp"

using namespace vptsurv;
namespace fs = std::filesystem;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec spec;
  spec.n_patients = 30;
  spec.tiles_per_wsi = 6;
  return spec;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("vptsurv_test_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("synthesis is a pure function of the spec") {
  const Cohort a = synthesize_cohort(small_spec());
  const Cohort b = synthesize_cohort(small_spec());
  REQUIRE(a.slides.size() == 30);
  for (std::size_t i = 0; i < a.slides.size(); ++i) {
    CHECK(a.manifest.records[i].time_days == b.manifest.records[i].time_days);
    CHECK(a.manifest.records[i].censored == b.manifest.records[i].censored);
    CHECK(a.slides[i].tile_hash() == b.slides[i].tile_hash());
    CHECK(a.slides[i].structure == b.slides[i].structure);
    CHECK(a.slides[i].scale == b.slides[i].scale);
  }
  SyntheticSpec other = small_spec();
  other.seed += 1;
  CHECK(synthesize_cohort(other).slides[0].tile_hash() != a.slides[0].tile_hash());
}

TEST_CASE("synthetic cohort shape, splits and censoring") {
  const Cohort c = synthesize_cohort(small_spec());
  c.manifest.validate();
  const CohortSummary s = summarize(c);
  CHECK(s.patients == 30);
  CHECK(s.tiles_per_slide_min == 6);
  CHECK(s.tiles_per_slide_max == 6);
  CHECK(s.train == 18);
  CHECK(s.val == 6);
  CHECK(s.test == 6);
  for (const Slide& slide : c.slides) {
    CHECK(slide.tiles.size() == slide.coords.size());
    CHECK(slide.scale.size() == slide.tiles.size());
    CHECK(slide.structure.size() == slide.tiles.size());
    for (const Image& t : slide.tiles) {
      CHECK(t.height == 32);
      CHECK(t.width == 32);
    }
  }

  SyntheticSpec uncensored = small_spec();
  uncensored.censoring_rate = 0.0;
  for (const auto& r : synthesize_cohort(uncensored).manifest.records) CHECK_FALSE(r.censored);
}

TEST_CASE("invalid generator settings are rejected") {
  SyntheticSpec spec = small_spec();
  spec.censoring_rate = 1.5;
  CHECK_THROWS_AS(synthesize_cohort(spec), InvalidArgument);
  spec = small_spec();
  spec.n_patients = 0;
  CHECK_THROWS_AS(synthesize_cohort(spec), InvalidArgument);
  spec = small_spec();
  spec.tile_size = 30;
  CHECK_THROWS_AS(synthesize_cohort(spec), InvalidArgument);
  spec = small_spec();
  spec.nuisance_jitter = 1.5;
  CHECK_THROWS_AS(synthesize_cohort(spec), InvalidArgument);
}

TEST_CASE("tumour cell density rises with latent risk") {
  // With the nuisance textures switched off, high-frequency energy of the
  // tiles tracks the planted cell density.
  SyntheticSpec spec;
  spec.n_patients = 60;
  spec.tiles_per_wsi = 16;
  spec.stripe_amplitude = 0.0;
  spec.nuisance_jitter = 0.0;
  spec.pixel_noise = 0.01;
  const Cohort c = synthesize_cohort(spec);
  std::vector<double> energy, latent;
  for (std::size_t i = 0; i < c.slides.size(); ++i) {
    double e = 0.0;
    for (const Image& s : c.slides[i].structure) {
      for (float v : s.pixels) e += static_cast<double>(v) * v;
    }
    energy.push_back(e);
    latent.push_back(c.latent[i].latent_risk);
  }
  // Rank correlation via concordance on uncensored pseudo-labels.
  std::vector<SurvivalLabel> labels;
  for (double e : energy) labels.push_back({-e, false, 1});
  CHECK(oracle::concordance(latent, labels) > 0.6);
}

TEST_CASE("oracle CI of the default cohort is pinned") {
  const Cohort c = synthesize_cohort(SyntheticSpec{});
  const double ci = oracle_ci(c.manifest, c.latent);
  CHECK(ci >= 0.80);
  CHECK(ci == doctest::Approx(0.8303).epsilon(5e-5));

  // Shuffling the latent risks destroys the signal: the mean CI over many
  // shuffles sits at chance.
  std::vector<LatentRisk> shuffled = c.latent;
  std::vector<double> values;
  for (const auto& l : shuffled) values.push_back(l.latent_risk);
  Rng rng(77);
  double mean = 0.0;
  for (int k = 0; k < 20; ++k) {
    rng.shuffle(values);
    for (std::size_t i = 0; i < shuffled.size(); ++i) shuffled[i].latent_risk = values[i];
    mean += oracle_ci(c.manifest, shuffled) / 20.0;
  }
  CHECK(std::abs(mean - 0.5) < 0.02);
}

TEST_CASE("oracle CI: noiseless link and id mismatches") {
  CohortManifest m;
  std::vector<LatentRisk> latent;
  for (int i = 0; i < 10; ++i) {
    const std::string id = "P" + std::to_string(i);
    m.records.push_back({id, id + "_W0", "tiles/" + id, 100.0 - 5.0 * i, false, Split::train});
    latent.push_back({id, static_cast<double>(i)});
  }
  CHECK(oracle_ci(m, latent) == 1.0);
  latent.back().patient_id = "someone-else";
  CHECK_THROWS_AS(oracle_ci(m, latent), InvalidArgument);
}

TEST_CASE("manifest validation") {
  CohortManifest m;
  m.records.push_back({"P1", "W1", "t", 10.0, false, Split::train});
  m.records.push_back({"P1", "W2", "t", 10.0, false, Split::test});
  CHECK_THROWS_AS(m.validate(), InvalidArgument);
  m.records[1].split = Split::train;
  CHECK_NOTHROW(m.validate());
  m.records[1].wsi_id = "W1";
  CHECK_THROWS_AS(m.validate(), InvalidArgument);
  m.records[1].wsi_id = "W2";
  m.records[1].time_days = -1.0;
  CHECK_THROWS_AS(m.validate(), InvalidArgument);
  CHECK(split_from_string("val") == Split::val);
  CHECK_THROWS_AS(split_from_string("holdout"), InvalidArgument);
}

TEST_CASE("cohort survives a round trip through disk") {
  const fs::path dir = scratch_dir("cohort_roundtrip");
  const Cohort c = synthesize_cohort(small_spec());
  write_cohort(c, dir);
  CHECK(fs::exists(dir / "manifest.jsonl"));
  CHECK(fs::exists(dir / "latent.jsonl"));
  CHECK(fs::exists(dir / c.manifest.records[0].tiles / "r0_c0.png"));
  CHECK(fs::exists(dir / c.manifest.records[0].tiles / "r0_c0_structure.png"));
  CHECK(fs::exists(dir / c.manifest.records[0].tiles / "r0_c0_scale.png"));

  const Cohort back = load_cohort(dir);
  REQUIRE(back.slides.size() == c.slides.size());
  for (std::size_t i = 0; i < c.slides.size(); ++i) {
    CHECK(back.manifest.records[i].patient_id == c.manifest.records[i].patient_id);
    CHECK(back.manifest.records[i].time_days == c.manifest.records[i].time_days);
    CHECK(back.manifest.records[i].split == c.manifest.records[i].split);
    CHECK(back.slides[i].coords == c.slides[i].coords);
    CHECK(back.slides[i].tiles == c.slides[i].tiles);
    CHECK(back.slides[i].structure == c.slides[i].structure);
    CHECK(back.slides[i].scale == c.slides[i].scale);
  }
  CHECK(oracle_ci(back.manifest, back.latent) == oracle_ci(c.manifest, c.latent));
  fs::remove_all(dir);
}

TEST_CASE("manifest lines carry the documented fields") {
  const fs::path dir = scratch_dir("manifest_fields");
  write_cohort(synthesize_cohort(small_spec()), dir);
  std::ifstream in(dir / "manifest.jsonl");
  std::string line;
  std::getline(in, line);
  for (const char* key : {"\"patient_id\"", "\"wsi_id\"", "\"tiles\"", "\"time_days\"", "\"censored\"", "\"split\""}) {
    CHECK(line.find(key) != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("grayscale PNG round trip at 8 and 16 bits") {
  const fs::path dir = scratch_dir("png");
  fs::create_directories(dir);
  for (int depth : {8, 16}) {
    GrayPng png{3, 5, depth, {}};
    for (int i = 0; i < 15; ++i) png.codes.push_back(static_cast<std::uint16_t>(depth == 8 ? i * 17 : i * 4000));
    const fs::path p = dir / ("img" + std::to_string(depth) + ".png");
    write_gray_png(p, png);
    const GrayPng back = read_gray_png(p);
    CHECK(back.height == 3);
    CHECK(back.width == 5);
    CHECK(back.bit_depth == depth);
    CHECK(back.codes == png.codes);
  }
  std::ofstream(dir / "junk.png") << "not a png";
  CHECK_THROWS_AS(read_gray_png(dir / "junk.png"), FormatError);
  fs::remove_all(dir);
}
