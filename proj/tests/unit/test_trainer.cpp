#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "vptsurv/errors.hpp"
#include "vptsurv/random.hpp"
#include "vptsurv/trainer.hpp"

using namespace vptsurv;
namespace fs = std::filesystem;

namespace {

EncoderConfig prompted_encoder() {
  EncoderConfig c = EncoderConfig::desk();
  c.pixel_mean = 0.55;
  c.pixel_std = 0.1;
  c.prompt_sources = {PromptKind::structure, PromptKind::scale};
  return c;
}

const Cohort& tiny_cohort() {
  static const Cohort cohort = [] {
    SyntheticSpec spec;
    spec.n_patients = 20;
    spec.tiles_per_wsi = 6;
    return synthesize_cohort(spec);
  }();
  return cohort;
}

TrainConfig tiny_schedule(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.epochs = 2;
  c.batch_size = 4;
  c.train_tiles_per_wsi = 4;
  c.eval_tiles_per_wsi = 6;
  c.learning_rate = 1e-3;
  return c;
}

std::vector<SlideExample> examples(const EncoderConfig& enc, int slides, int tiles) {
  const Cohort& cohort = tiny_cohort();
  std::vector<SurvivalLabel> labels;
  for (const auto& r : cohort.manifest.records) labels.push_back(r.label());
  const Discretization bins = discretize_time(labels, 4);
  std::vector<std::size_t> idx(static_cast<std::size_t>(tiles));
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<SlideExample> out;
  for (int i = 0; i < slides; ++i) {
    SurvivalLabel label = labels[static_cast<std::size_t>(i)];
    label.bin = bins.bins[static_cast<std::size_t>(i)];
    out.push_back({make_tile_batch(cohort.slides[static_cast<std::size_t>(i)], enc, idx), label});
  }
  return out;
}

std::vector<Matrix> values_of(const ModelState& s, ParamGroup group) {
  std::vector<Matrix> out;
  s.visit(ConstParamVisitor([&](const std::string& name, const Param& p) {
    if (param_group(name) == group) out.push_back(p.value);
  }));
  return out;
}

}  // namespace

TEST_CASE("cosine schedule endpoints and midpoint") {
  CHECK(cosine_annealing_lr(1e-3, 0.0, 0, 10) == 1e-3);
  CHECK(cosine_annealing_lr(1e-3, 0.0, 5, 10) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(cosine_annealing_lr(1e-3, 1e-5, 10, 10) == doctest::Approx(1e-5).epsilon(1e-12));
  double prev = 1.0;
  for (int e = 0; e < 15; ++e) {
    const double lr = cosine_annealing_lr(5e-5, 0.0, e, 15);
    CHECK(lr < prev);
    prev = lr;
  }
}

TEST_CASE("AdamW step follows the decoupled update rule") {
  ModelState state = ModelState::initialize(EncoderConfig::desk(), DecoderConfig{}, 1);
  Param& bias = state.param("decoder.head.bias");
  const Matrix w0 = bias.value;
  state.zero_grad();
  Matrix g(1, 4);
  g << 0.5, -2.0, 1e-3, 0.0;
  bias.gradient() = g;

  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.1;
  AdamW opt(state, b1, b2, eps, wd);
  opt.step(state, lr);
  for (int t = 0; t < 4; ++t) {
    const double m = (1 - b1) * g(0, t) / (1 - b1);
    const double v = (1 - b2) * g(0, t) * g(0, t) / (1 - b2);
    const double expected = w0(0, t) * (1 - lr * wd) - lr * m / (std::sqrt(v) + eps);
    CHECK(bias.value(0, t) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("adaptors step at the scaled learning rate") {
  ModelState state = ModelState::initialize(prompted_encoder(), DecoderConfig{}, 1);
  state.zero_grad();
  Param& up = state.param("adaptors.0.up.bias");
  Param& head = state.param("decoder.head.bias");
  up.gradient().setConstant(1.0);
  head.gradient().setConstant(1.0);
  const Matrix head0 = head.value;
  AdamW opt(state, 0.9, 0.999, 1e-8, 0.0, 0.25);
  opt.step(state, 0.1);
  // First Adam step moves every coordinate by lr * sign(g).
  CHECK(up.value(0, 0) == doctest::Approx(-0.025).epsilon(1e-6));
  CHECK(head.value(0, 0) - head0(0, 0) == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("gradient check at desk scale") {
  ModelState state = ModelState::initialize(prompted_encoder(), DecoderConfig{}, 7);
  randomize_adaptor_up(state, 8, 0.05);
  const auto ex = examples(prompted_encoder(), 2, 4);
  const GradientCheckResult r = gradient_check(state, ex);
  CHECK(r.checked >= 200);
  CHECK(r.frozen_checked > 0);
  CHECK(r.frozen_gradients_zero);
  CHECK(r.max_relative_error < 1e-4);
  CHECK(r.passed);
  CHECK(r.per_group.count("adaptor") == 1);
  CHECK(r.per_group.count("decoder") == 1);
}

TEST_CASE("every trainable tensor receives gradient; frozen ones none") {
  // With a single query the self-attention softmax is constant, so its
  // query/key maps get exactly zero gradient; two queries exercise them.
  DecoderConfig dec;
  dec.queries = 2;
  ModelState state = ModelState::initialize(prompted_encoder(), dec, 3);
  randomize_adaptor_up(state, 4, 0.05);
  state.zero_grad();
  batch_loss_and_gradients(state, examples(prompted_encoder(), 3, 4));
  const ModelState& after = state;
  after.visit(ConstParamVisitor([](const std::string& name, const Param& p) {
    INFO(name);
    if (p.trainable) {
      REQUIRE(p.grad.size() == p.value.size());
      CHECK(p.grad.cwiseAbs().maxCoeff() > 0.0);
    } else {
      CHECK(p.grad.size() == 0);
    }
  }));
}

TEST_CASE("parameter audit at paper shape matches the closed form") {
  const ModelState s = ModelState::initialize(EncoderConfig::paper_shape(), [] {
    DecoderConfig d;
    d.dim = 768;
    d.heads = 12;
    return d;
  }(), 1);
  const std::int64_t d = 768, p = 16, depth = 12, r = 24, mlp = 4 * d;
  const std::int64_t linear = d * d + d;
  const std::int64_t attention = 4 * linear;
  const std::int64_t ffn = d * mlp + mlp + mlp * d + d;
  const std::int64_t norm = 2 * d;
  const std::int64_t encoder = (p * p * d + d) + depth * (attention + ffn + norm);
  const std::int64_t adaptor = depth * (2 * (d * r + r) + (r * d + d));
  const std::int64_t decoder_trainable = 2 * (3 * norm + 2 * attention + ffn) + 2 * norm;
  const std::int64_t head = d * 4 + 4;
  const ParameterAudit a = parameter_audit(s);
  CHECK(a.encoder == encoder);
  CHECK(a.adaptor == adaptor);
  CHECK(a.queries == d);
  CHECK(a.head == head);
  CHECK(a.decoder == decoder_trainable + 2 * d);  // + frozen input standardisation
  CHECK(a.trainable == adaptor + decoder_trainable + d + head);
  CHECK(a.frozen == encoder + 2 * d);
  CHECK(a.fraction < 0.20);
  CHECK(a.fraction == doctest::Approx(static_cast<double>(a.trainable) / (a.trainable + a.frozen)));
}

TEST_CASE("evaluation tile sample is clamped, sorted and reproducible") {
  const Slide& slide = tiny_cohort().slides[0];
  const auto all = eval_tile_indices(slide, 1000, 11);
  CHECK(all.size() == 6);
  for (std::size_t k = 0; k < all.size(); ++k) CHECK(all[k] == k);
  const auto some = eval_tile_indices(slide, 3, 11);
  CHECK(some.size() == 3);
  CHECK(std::is_sorted(some.begin(), some.end()));
  CHECK(eval_tile_indices(slide, 3, 11) == some);
  CHECK_THROWS_AS(eval_tile_indices(slide, 0, 11), InvalidArgument);
}

TEST_CASE("feature blobs detect stale encoders and tiles") {
  const fs::path dir = fs::temp_directory_path() / "vptsurv_test_blob";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Matrix m(3, 2);
  m << 1, 2, 3, 4, 5, 6;
  write_feature_blob(dir / "a.bin", 10, 20, m);
  CHECK(read_feature_blob(dir / "a.bin", 10, 20) == m);
  CHECK_THROWS_AS(read_feature_blob(dir / "a.bin", 11, 20), StaleCache);
  CHECK_THROWS_AS(read_feature_blob(dir / "a.bin", 10, 21), StaleCache);
  fs::remove_all(dir);
}

TEST_CASE("feature cache reuses blobs written by an earlier build") {
  const fs::path dir = fs::temp_directory_path() / "vptsurv_test_features";
  fs::remove_all(dir);
  const ModelState state = ModelState::initialize(prompted_encoder(), DecoderConfig{}, 2);
  const FeatureCache first = FeatureCache::build(state, tiny_cohort(), dir);
  CHECK(first.reused() == 0);
  const FeatureCache second = FeatureCache::build(state, tiny_cohort(), dir);
  CHECK(second.reused() == tiny_cohort().slides.size());
  for (std::size_t i = 0; i < second.size(); ++i) CHECK(second.features(i) == first.features(i));
  fs::remove_all(dir);
}

TEST_CASE("both modes start from the same loss") {
  const TrainResult e2e = train(tiny_cohort(), prompted_encoder(), DecoderConfig{}, tiny_schedule(TrainMode::end_to_end));
  const TrainResult two = train(tiny_cohort(), prompted_encoder(), DecoderConfig{}, tiny_schedule(TrainMode::two_stage));
  CHECK(e2e.report.step0_loss == doctest::Approx(two.report.step0_loss).epsilon(1e-10));
  CHECK(e2e.report.mode == "end-to-end");
  CHECK(two.report.mode == "two-stage");
}

TEST_CASE("tiny end-to-end run: deterministic, encoder untouched") {
  const ModelState init = ModelState::initialize(prompted_encoder(), DecoderConfig{}, TrainConfig{}.seed);
  const TrainResult a = train(tiny_cohort(), prompted_encoder(), DecoderConfig{}, tiny_schedule(TrainMode::end_to_end));
  const TrainResult b = train(tiny_cohort(), prompted_encoder(), DecoderConfig{}, tiny_schedule(TrainMode::end_to_end));
  CHECK(a.report.train_loss == b.report.train_loss);
  CHECK(a.report.val_ci == b.report.val_ci);
  CHECK(a.report.test_ci == b.report.test_ci);
  CHECK(a.report.train_loss.size() == 2);
  CHECK(a.report.selected_epoch >= 1);
  CHECK(a.report.selected_epoch <= 2);
  CHECK(a.state.encoder_fingerprint() == init.encoder_fingerprint());
  CHECK(values_of(a.state, ParamGroup::encoder) == values_of(init, ParamGroup::encoder));
  CHECK(values_of(a.state, ParamGroup::adaptor) != values_of(init, ParamGroup::adaptor));
  for (double l : a.report.train_loss) CHECK(std::isfinite(l));
}

TEST_CASE("tiny two-stage run leaves encoder and adaptors untouched") {
  const ModelState init = ModelState::initialize(prompted_encoder(), DecoderConfig{}, TrainConfig{}.seed);
  const TrainResult r = train(tiny_cohort(), prompted_encoder(), DecoderConfig{}, tiny_schedule(TrainMode::two_stage));
  CHECK(values_of(r.state, ParamGroup::encoder) == values_of(init, ParamGroup::encoder));
  CHECK(values_of(r.state, ParamGroup::adaptor) == values_of(init, ParamGroup::adaptor));
  CHECK(values_of(r.state, ParamGroup::head) != values_of(init, ParamGroup::head));
  CHECK(r.report.params.trainable > 0);
  CHECK(r.report.params.trainable == r.report.params.decoder - 2 * 64 + r.report.params.queries + r.report.params.head);
}

TEST_CASE("training rejects bad schedules") {
  TrainConfig c = tiny_schedule(TrainMode::end_to_end);
  c.epochs = 0;
  CHECK_THROWS_AS(train(tiny_cohort(), prompted_encoder(), DecoderConfig{}, c), InvalidArgument);
  c = tiny_schedule(TrainMode::end_to_end);
  c.learning_rate = -1.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  CHECK(train_mode_from_string("two_stage") == TrainMode::two_stage);
  CHECK_THROWS_AS(train_mode_from_string("joint"), InvalidArgument);
}
