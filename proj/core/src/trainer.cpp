#include "vptsurv/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "json_config.hpp"
#include "vptsurv/checkpoint.hpp"
#include "vptsurv/errors.hpp"
#include "vptsurv/random.hpp"

namespace vptsurv {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(TrainMode mode) {
  return mode == TrainMode::end_to_end ? "end_to_end" : "two_stage";
}

std::string_view display_name(TrainMode mode) {
  return mode == TrainMode::end_to_end ? "end-to-end" : "two-stage";
}

TrainMode train_mode_from_string(std::string_view name) {
  if (name == "end_to_end" || name == "end-to-end" || name == "e2e") return TrainMode::end_to_end;
  if (name == "two_stage" || name == "two-stage") return TrainMode::two_stage;
  throw InvalidArgument("unknown training mode '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw InvalidArgument(std::string("train config: ") + what);
  };
  require(train_tiles_per_wsi >= 1, "train_tiles_per_wsi must be >= 1");
  require(eval_tiles_per_wsi >= 1, "eval_tiles_per_wsi must be >= 1");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be > 0");
  require(adaptor_lr_scale >= 0.0 && std::isfinite(adaptor_lr_scale), "adaptor_lr_scale must be >= 0");
  require(min_learning_rate >= 0.0 && min_learning_rate <= learning_rate,
          "min_learning_rate must lie in [0, learning_rate]");
  require(epochs >= 1, "epochs must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
          "adam betas must lie in [0, 1)");
  require(adam_eps > 0.0, "adam_eps must be > 0");
  require(bins >= 1, "bins must be >= 1");
}

double cosine_annealing_lr(double eta_max, double eta_min, int epoch, int epochs) {
  return eta_min + 0.5 * (eta_max - eta_min) *
                       (1.0 + std::cos(M_PI * static_cast<double>(epoch) / static_cast<double>(epochs)));
}

AdamW::AdamW(const ModelState& state, double beta1, double beta2, double eps, double weight_decay,
             double adaptor_lr_scale)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay), adaptor_scale_(adaptor_lr_scale) {
  state.visit(ConstParamVisitor([this](const std::string&, const Param& p) {
    if (!p.trainable) return;
    m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  }));
}

void AdamW::step(ModelState& state, double learning_rate) {
  ++step_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  std::size_t k = 0;
  state.visit(ParamVisitor([&](const std::string& name, Param& p) {
    if (!p.trainable) return;
    const double lr = param_group(name) == ParamGroup::adaptor ? learning_rate * adaptor_scale_ : learning_rate;
    Matrix& m = m_[k];
    Matrix& v = v_[k];
    ++k;
    const Matrix& g = p.gradient();
    p.value *= 1.0 - lr * weight_decay_;
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    p.value.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps_);
  }));
}

TileBatch make_tile_batch(const Slide& slide, const EncoderConfig& config,
                          std::span<const std::size_t> indices) {
  TileBatch batch;
  batch.tiles.reserve(indices.size());
  for (std::size_t i : indices) batch.tiles.push_back(&slide.tiles.at(i));
  if (!config.prompt_sources.empty()) {
    batch.prompts.resize(indices.size());
    for (PromptKind kind : config.prompt_sources) {
      const auto& images = slide.prompts(kind);
      if (images.size() != slide.tiles.size()) {
        throw InvalidArgument("slide '" + slide.record.wsi_id + "' has no " +
                              std::string(to_string(kind)) + " prompt images");
      }
      for (std::size_t j = 0; j < indices.size(); ++j) batch.prompts[j].push_back(&images[indices[j]]);
    }
  }
  return batch;
}

namespace {

// Decoder forward/backward for one slide; returns the loss and writes
// d(loss * weight)/d(memory) into `dmemory`.
double decoder_step(ModelState& state, const Matrix& memory, const SurvivalLabel& label,
                    double weight, Matrix* dmemory) {
  SurvivalDecoder::Cache cache;
  const HazardPrediction pred = state.decoder.decode(memory, &cache);
  std::vector<double> dh;
  const double loss = nll_survival_loss(pred.hazards, label, &dh);
  for (double& g : dh) g *= weight;
  Matrix dm = state.decoder.backward(cache, dh);
  if (dmemory) *dmemory = std::move(dm);
  return loss;
}

}  // namespace

double batch_loss(const ModelState& state, std::span<const SlideExample> examples) {
  if (examples.empty()) throw InvalidArgument("batch_loss: empty batch");
  double total = 0.0;
  for (const auto& ex : examples) {
    const HazardPrediction pred = state.decoder.decode(encode_tiles(state, ex.batch));
    total += nll_survival_loss(pred, ex.label);
  }
  return total / static_cast<double>(examples.size());
}

double batch_loss_and_gradients(ModelState& state, std::span<const SlideExample> examples) {
  if (examples.empty()) throw InvalidArgument("batch_loss: empty batch");
  const double weight = 1.0 / static_cast<double>(examples.size());
  double total = 0.0;
  for (const auto& ex : examples) {
    std::vector<VptEncoder::TileCache> caches;
    const Matrix memory = encode_tiles(state, ex.batch, &caches);
    Matrix dmemory;
    total += decoder_step(state, memory, ex.label, weight, &dmemory);
    for (std::size_t j = 0; j < caches.size(); ++j) {
      state.encoder.backward_tile(caches[j], dmemory.row(static_cast<Eigen::Index>(j)));
    }
  }
  return total * weight;
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace

std::vector<std::size_t> eval_tile_indices(const Slide& slide, int n_tiles, std::uint64_t eval_seed) {
  if (slide.tiles.empty()) throw EmptySlide("slide '" + slide.record.wsi_id + "' has no tiles");
  if (n_tiles < 1) throw InvalidArgument("n_tiles must be >= 1");
  Rng rng = Rng::derive(eval_seed, fnv1a(slide.record.wsi_id));
  auto idx = rng.sample_without_replacement(slide.tiles.size(), static_cast<std::size_t>(n_tiles));
  std::sort(idx.begin(), idx.end());
  return idx;
}

RiskPrediction predict_risk(const Slide& slide, const ModelState& state, int n_tiles,
                            std::uint64_t eval_seed) {
  const auto idx = eval_tile_indices(slide, n_tiles, eval_seed);
  const TileBatch batch = make_tile_batch(slide, state.encoder_config(), idx);
  RiskPrediction out;
  out.hazards = state.decoder.decode(encode_tiles(state, batch));
  out.risk = out.hazards.risk();
  out.tiles_used = static_cast<int>(idx.size());
  return out;
}

Evaluation evaluate_predictions(const Cohort& cohort, std::vector<SlidePrediction> slides) {
  if (slides.empty()) throw InvalidArgument("evaluate: split is empty");
  std::map<std::string, SurvivalLabel> label_of;
  for (const auto& r : cohort.manifest.records) label_of.emplace(r.patient_id, r.label());

  Evaluation ev;
  std::map<std::string, std::size_t> slot;
  std::vector<int> counts;
  for (const auto& s : slides) {
    auto [it, inserted] = slot.emplace(s.patient_id, ev.patients.size());
    if (inserted) {
      PatientRisk p;
      p.patient_id = s.patient_id;
      p.label = label_of.at(s.patient_id);
      ev.patients.push_back(p);
      counts.push_back(0);
    }
    ev.patients[it->second].risk += s.prediction.risk;
    ++counts[it->second];
  }
  std::vector<double> risks;
  std::vector<SurvivalLabel> labels;
  for (std::size_t i = 0; i < ev.patients.size(); ++i) {
    ev.patients[i].risk /= counts[i];
    risks.push_back(ev.patients[i].risk);
    labels.push_back(ev.patients[i].label);
  }
  ev.ci = concordance_index(risks, labels);
  const auto groups = stratify_by_median_risk(risks);
  std::vector<SurvivalLabel> low, high;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    ev.patients[i].group = groups[i];
    (groups[i] == RiskGroup::high ? high : low).push_back(labels[i]);
  }
  if (!low.empty()) ev.km_low = kaplan_meier(low);
  if (!high.empty()) ev.km_high = kaplan_meier(high);
  ev.slides = std::move(slides);
  return ev;
}

Evaluation evaluate(const ModelState& state, const Cohort& cohort, Split split, int n_tiles,
                    std::uint64_t eval_seed) {
  std::vector<SlidePrediction> preds;
  for (std::size_t i : cohort.indices(split)) {
    const Slide& slide = cohort.slides[i];
    preds.push_back({slide.record.patient_id, slide.record.wsi_id,
                     predict_risk(slide, state, n_tiles, eval_seed)});
  }
  if (preds.empty()) {
    throw InvalidArgument("evaluate: split '" + std::string(to_string(split)) + "' is empty");
  }
  return evaluate_predictions(cohort, std::move(preds));
}

void write_feature_blob(const fs::path& path, std::uint64_t fingerprint, std::uint64_t tile_hash,
                        const Matrix& features) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write feature blob " + path.string());
  const std::uint64_t header[4] = {fingerprint, tile_hash, static_cast<std::uint64_t>(features.rows()),
                                   static_cast<std::uint64_t>(features.cols())};
  out.write("VPTSFEAT", 8);
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(features.data()),
            static_cast<std::streamsize>(static_cast<std::size_t>(features.size()) * sizeof(double)));
  if (!out) throw FormatError("failed writing feature blob " + path.string());
}

Matrix read_feature_blob(const fs::path& path, std::uint64_t fingerprint, std::uint64_t tile_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read feature blob " + path.string());
  char magic[8];
  std::uint64_t header[4];
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || std::memcmp(magic, "VPTSFEAT", 8) != 0) throw FormatError(path.string() + ": not a feature blob");
  if (header[0] != fingerprint) {
    throw StaleCache(path.string() + ": cached with encoder " + hex64(header[0]) + ", current encoder is " +
                     hex64(fingerprint));
  }
  if (header[1] != tile_hash) throw StaleCache(path.string() + ": tiles changed since caching");
  Matrix m(static_cast<Eigen::Index>(header[2]), static_cast<Eigen::Index>(header[3]));
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(static_cast<std::size_t>(m.size()) * sizeof(double)));
  if (!in) throw FormatError(path.string() + ": truncated feature blob");
  return m;
}

FeatureCache FeatureCache::build(const ModelState& state, const Cohort& cohort, const fs::path& dir) {
  FeatureCache cache;
  cache.fingerprint_ = state.encoder_fingerprint();
  const fs::path root = dir.empty() ? fs::path{} : dir / hex64(cache.fingerprint_);
  cache.features_.reserve(cohort.slides.size());
  for (const Slide& slide : cohort.slides) {
    if (slide.tiles.empty()) throw EmptySlide("slide '" + slide.record.wsi_id + "' has no tiles");
    const std::uint64_t tile_hash = slide.tile_hash();
    if (!root.empty()) {
      const fs::path blob = root / (slide.record.wsi_id + ".bin");
      if (fs::exists(blob)) {
        Matrix m = read_feature_blob(blob, cache.fingerprint_, tile_hash);
        if (m.rows() != static_cast<Eigen::Index>(slide.tiles.size()) || m.cols() != state.encoder_config().dim) {
          throw StaleCache(blob.string() + ": cached feature shape does not match the slide");
        }
        cache.features_.push_back(std::move(m));
        ++cache.reused_;
        continue;
      }
    }
    std::vector<std::size_t> all(slide.tiles.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    TileBatch batch;
    for (std::size_t i : all) batch.tiles.push_back(&slide.tiles[i]);
    Matrix m = encode_tiles_frozen(state, batch);
    if (!root.empty()) write_feature_blob(root / (slide.record.wsi_id + ".bin"), cache.fingerprint_, tile_hash, m);
    cache.features_.push_back(std::move(m));
  }
  return cache;
}

namespace {

struct PreparedData {
  TimeBinning binning;
  std::vector<SurvivalLabel> labels;  // per slide, binned
  std::vector<std::size_t> train, val, test;
};

PreparedData prepare(const Cohort& cohort, const TrainConfig& config) {
  cohort.manifest.validate();
  if (cohort.slides.size() != cohort.manifest.records.size()) {
    throw InvalidArgument("cohort slides and manifest records differ in count");
  }
  PreparedData d;
  d.train = cohort.indices(Split::train);
  d.val = cohort.indices(Split::val);
  d.test = cohort.indices(Split::test);
  if (d.train.empty()) throw InvalidArgument("training split is empty");
  if (d.val.empty()) throw InvalidArgument("validation split is empty");
  std::vector<SurvivalLabel> train_labels;
  for (std::size_t i : d.train) train_labels.push_back(cohort.manifest.records[i].label());
  d.binning = discretize_time(train_labels, config.bins).binning;
  for (const auto& r : cohort.manifest.records) {
    SurvivalLabel l = r.label();
    l.bin = d.binning.bin_of(l.time);
    d.labels.push_back(l);
  }
  return d;
}

struct PlannedSlide {
  std::size_t slide;
  std::vector<std::size_t> tiles;
};

// Shuffled training order and fresh tile samples for one epoch. Shared by
// both modes so equal seeds see equal batches.
std::vector<PlannedSlide> plan_epoch(const Cohort& cohort, const std::vector<std::size_t>& train,
                                     const TrainConfig& config, int epoch) {
  Rng rng = Rng::derive(config.seed, 0x7000 + static_cast<std::uint64_t>(epoch));
  std::vector<std::size_t> order = train;
  rng.shuffle(order);
  std::vector<PlannedSlide> plan;
  plan.reserve(order.size());
  for (std::size_t i : order) {
    const std::size_t available = cohort.slides[i].tiles.size();
    if (available == 0) throw EmptySlide("slide '" + cohort.slides[i].record.wsi_id + "' has no tiles");
    auto tiles = rng.sample_without_replacement(available, static_cast<std::size_t>(config.train_tiles_per_wsi));
    std::sort(tiles.begin(), tiles.end());
    plan.push_back({i, std::move(tiles)});
  }
  return plan;
}

// Frozen features of a fixed tile sample per training slide; both modes fit
// the decoder's input standardisation on exactly these rows.
template <typename FeaturesFn>
void fit_standardization(ModelState& state, const Cohort& cohort, const PreparedData& data,
                         const TrainConfig& config, FeaturesFn&& features_of) {
  std::vector<Matrix> blocks;
  Eigen::Index rows = 0;
  for (std::size_t i : data.train) {
    const auto idx = eval_tile_indices(cohort.slides[i], config.train_tiles_per_wsi, config.seed);
    blocks.push_back(features_of(i, idx));
    rows += blocks.back().rows();
  }
  Matrix all(rows, state.decoder_config().dim);
  Eigen::Index at = 0;
  for (const Matrix& b : blocks) {
    all.middleRows(at, b.rows()) = b;
    at += b.rows();
  }
  state.decoder.fit_input_standardization(all);
}

void check_finite(ModelState& state, double loss, int epoch, std::size_t step) {
  const std::string where = "epoch " + std::to_string(epoch) + ", step " + std::to_string(step);
  if (!std::isfinite(loss)) throw TrainingDiverged("non-finite loss at " + where);
  state.visit(ParamVisitor([&](const std::string& name, Param& p) {
    if (p.trainable && p.grad.size() > 0 && !p.grad.allFinite()) {
      throw TrainingDiverged("non-finite gradient in '" + name + "' at " + where);
    }
  }));
}

std::vector<Matrix> snapshot_trainable(const ModelState& state) {
  std::vector<Matrix> out;
  state.visit(ConstParamVisitor([&](const std::string&, const Param& p) {
    if (p.trainable) out.push_back(p.value);
  }));
  return out;
}

void restore_trainable(ModelState& state, const std::vector<Matrix>& values) {
  std::size_t k = 0;
  state.visit(ParamVisitor([&](const std::string&, Param& p) {
    if (p.trainable) p.value = values.at(k++);
  }));
}

// Runs the shared epoch loop. `step` computes the mean loss of a batch and
// accumulates gradients; `validate` returns the validation CI.
template <typename StepFn, typename ValidateFn>
TrainResult run_training(const Cohort& cohort, ModelState state, const TrainConfig& config,
                         const PreparedData& data, StepFn&& step, ValidateFn&& validate) {
  const auto started = std::chrono::steady_clock::now();
  TrainResult result;
  result.binning = data.binning;
  RunReport& report = result.report;
  report.mode = std::string(display_name(config.mode));
  for (PromptKind k : state.encoder_config().prompt_sources) report.prompt_sources.emplace_back(to_string(k));
  report.train_tiles_per_wsi = config.train_tiles_per_wsi;
  report.eval_tiles_per_wsi = config.eval_tiles_per_wsi;
  report.seed = config.seed;
  report.bin_edges = data.binning.edges;

  AdamW optimizer(state, config.adam_beta1, config.adam_beta2, config.adam_eps, config.weight_decay,
                  config.adaptor_lr_scale);
  std::vector<Matrix> best = snapshot_trainable(state);
  double best_ci = -1.0;
  bool first_step = true;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const double lr = cosine_annealing_lr(config.learning_rate, config.min_learning_rate, epoch, config.epochs);
    const auto plan = plan_epoch(cohort, data.train, config, epoch);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < plan.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(plan.size(), start + static_cast<std::size_t>(config.batch_size));
      state.zero_grad();
      const double loss = step(state, std::span<const PlannedSlide>(plan.data() + start, end - start));
      check_finite(state, loss, epoch + 1, batches);
      if (first_step) {
        report.step0_loss = loss;
        first_step = false;
      }
      optimizer.step(state, lr);
      loss_sum += loss;
      ++batches;
    }
    const double val_ci = validate(state);
    report.train_loss.push_back(loss_sum / static_cast<double>(batches));
    report.val_ci.push_back(val_ci);
    if (val_ci > best_ci) {
      best_ci = val_ci;
      best = snapshot_trainable(state);
      report.selected_epoch = epoch + 1;
    }
    if (config.on_epoch) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
      config.on_epoch({epoch + 1, lr, report.train_loss.back(), val_ci, secs});
    }
  }
  restore_trainable(state, best);
  state.zero_grad();
  report.params = parameter_audit(state);
  result.state = std::move(state);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

void finish(TrainResult& result, const Cohort& cohort, const TrainConfig& config,
            const std::vector<std::size_t>& test, double test_ci_override = -1.0) {
  if (test_ci_override >= 0.0) {
    result.report.test_ci = test_ci_override;
  } else if (!test.empty()) {
    result.report.test_ci = evaluate(result.state, cohort, Split::test, config.eval_tiles_per_wsi, config.eval_seed).ci;
  }
  if (!config.checkpoint_path.empty()) {
    save_checkpoint(config.checkpoint_path, result.state,
                    {std::string(to_string(config.mode)), result.binning.edges, config.seed});
  }
}

}  // namespace

TrainResult train_end_to_end(const Cohort& cohort, const EncoderConfig& encoder,
                             const DecoderConfig& decoder, const TrainConfig& config_in) {
  TrainConfig config = config_in;
  config.mode = TrainMode::end_to_end;
  config.validate();
  DecoderConfig dec = decoder;
  dec.bins = config.bins;
  const PreparedData data = prepare(cohort, config);
  ModelState state = ModelState::initialize(encoder, dec, config.seed);
  fit_standardization(state, cohort, data, config, [&](std::size_t slide, const std::vector<std::size_t>& idx) {
    TileBatch batch;
    for (std::size_t t : idx) batch.tiles.push_back(&cohort.slides[slide].tiles[t]);
    return encode_tiles_frozen(state, batch);
  });

  auto step = [&](ModelState& s, std::span<const PlannedSlide> batch) {
    std::vector<SlideExample> examples;
    examples.reserve(batch.size());
    for (const auto& p : batch) {
      examples.push_back({make_tile_batch(cohort.slides[p.slide], s.encoder_config(), p.tiles), data.labels[p.slide]});
    }
    return batch_loss_and_gradients(s, examples);
  };
  auto validate = [&](const ModelState& s) {
    return evaluate(s, cohort, Split::val, config.eval_tiles_per_wsi, config.eval_seed).ci;
  };
  TrainResult result = run_training(cohort, std::move(state), config, data, step, validate);
  finish(result, cohort, config, data.test);
  return result;
}

TrainResult train_two_stage(const Cohort& cohort, const EncoderConfig& encoder,
                            const DecoderConfig& decoder, const TrainConfig& config_in) {
  TrainConfig config = config_in;
  config.mode = TrainMode::two_stage;
  config.validate();
  EncoderConfig enc = encoder;
  enc.prompt_sources.clear();
  DecoderConfig dec = decoder;
  dec.bins = config.bins;
  const PreparedData data = prepare(cohort, config);
  ModelState state = ModelState::initialize(enc, dec, config.seed);
  // Adaptors take no part in this mode; freezing them also keeps weight
  // decay from moving them.
  state.visit(ParamVisitor([](const std::string& name, Param& p) {
    if (param_group(name) == ParamGroup::adaptor) {
      p.trainable = false;
      p.grad = Matrix();
    }
  }));
  const FeatureCache features = FeatureCache::build(state, cohort, config.feature_cache_dir);

  auto gather = [&](std::size_t slide, const std::vector<std::size_t>& tiles) {
    const Matrix& all = features.features(slide);
    Matrix m(static_cast<Eigen::Index>(tiles.size()), all.cols());
    for (std::size_t j = 0; j < tiles.size(); ++j) m.row(static_cast<Eigen::Index>(j)) = all.row(static_cast<Eigen::Index>(tiles[j]));
    return m;
  };
  fit_standardization(state, cohort, data, config, gather);
  auto step = [&](ModelState& s, std::span<const PlannedSlide> batch) {
    const double weight = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const auto& p : batch) total += decoder_step(s, gather(p.slide, p.tiles), data.labels[p.slide], weight, nullptr);
    return total * weight;
  };
  auto cached_eval = [&](const ModelState& s, Split split) {
    std::vector<SlidePrediction> preds;
    for (std::size_t i : cohort.indices(split)) {
      const Slide& slide = cohort.slides[i];
      const auto idx = eval_tile_indices(slide, config.eval_tiles_per_wsi, config.eval_seed);
      RiskPrediction rp;
      rp.hazards = s.decoder.decode(gather(i, idx));
      rp.risk = rp.hazards.risk();
      rp.tiles_used = static_cast<int>(idx.size());
      preds.push_back({slide.record.patient_id, slide.record.wsi_id, std::move(rp)});
    }
    return evaluate_predictions(cohort, std::move(preds)).ci;
  };
  auto validate = [&](const ModelState& s) { return cached_eval(s, Split::val); };
  TrainResult result = run_training(cohort, std::move(state), config, data, step, validate);
  finish(result, cohort, config, data.test, data.test.empty() ? -1.0 : cached_eval(result.state, Split::test));
  return result;
}

TrainResult train(const Cohort& cohort, const EncoderConfig& encoder, const DecoderConfig& decoder,
                  const TrainConfig& config) {
  return config.mode == TrainMode::end_to_end ? train_end_to_end(cohort, encoder, decoder, config)
                                              : train_two_stage(cohort, encoder, decoder, config);
}

void write_run_report(const RunReport& r, const fs::path& path) {
  json j = {{"mode", r.mode},
            {"prompt_sources", r.prompt_sources},
            {"train_loss", r.train_loss},
            {"val_ci", r.val_ci},
            {"selected_epoch", r.selected_epoch},
            {"test_ci", r.test_ci},
            {"step0_loss", r.step0_loss},
            {"parameters",
             {{"trainable", r.params.trainable},
              {"frozen", r.params.frozen},
              {"fraction", r.params.fraction},
              {"encoder", r.params.encoder},
              {"adaptor", r.params.adaptor},
              {"decoder", r.params.decoder},
              {"queries", r.params.queries},
              {"head", r.params.head}}},
            {"wall_seconds", r.wall_seconds},
            {"train_tiles_per_wsi", r.train_tiles_per_wsi},
            {"eval_tiles_per_wsi", r.eval_tiles_per_wsi},
            {"seed", r.seed},
            {"bin_edges", r.bin_edges}};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write report " + path.string());
  out << j.dump(2) << '\n';
}

RunReport read_run_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read report " + path.string());
  try {
    const json j = json::parse(in);
    RunReport r;
    r.mode = j.at("mode").get<std::string>();
    r.prompt_sources = j.at("prompt_sources").get<std::vector<std::string>>();
    r.train_loss = j.at("train_loss").get<std::vector<double>>();
    r.val_ci = j.at("val_ci").get<std::vector<double>>();
    r.selected_epoch = j.at("selected_epoch").get<int>();
    r.test_ci = j.at("test_ci").get<double>();
    r.step0_loss = j.at("step0_loss").get<double>();
    const json& p = j.at("parameters");
    r.params.trainable = p.at("trainable").get<std::int64_t>();
    r.params.frozen = p.at("frozen").get<std::int64_t>();
    r.params.fraction = p.at("fraction").get<double>();
    r.params.encoder = p.at("encoder").get<std::int64_t>();
    r.params.adaptor = p.at("adaptor").get<std::int64_t>();
    r.params.decoder = p.at("decoder").get<std::int64_t>();
    r.params.queries = p.at("queries").get<std::int64_t>();
    r.params.head = p.at("head").get<std::int64_t>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    r.train_tiles_per_wsi = j.at("train_tiles_per_wsi").get<int>();
    r.eval_tiles_per_wsi = j.at("eval_tiles_per_wsi").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.bin_edges = j.at("bin_edges").get<std::vector<double>>();
    return r;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void randomize_adaptor_up(ModelState& state, std::uint64_t seed, double scale) {
  Rng rng = Rng::derive(seed, 0xADA);
  for (auto& a : state.encoder.adaptors) {
    for (Param* p : {&a.up.weight, &a.up.bias}) {
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = rng.uniform(-scale, scale);
    }
  }
}

GradientCheckResult gradient_check(ModelState& state, std::span<const SlideExample> examples,
                                   const GradientCheckOptions& options) {
  struct Coord {
    Param* param;
    std::string name;
    Eigen::Index index;
  };
  std::map<ParamGroup, std::vector<Coord>> pool;
  std::vector<Coord> frozen_pool;
  state.visit(ParamVisitor([&](const std::string& name, Param& p) {
    const ParamGroup g = param_group(name);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      (p.trainable ? pool[g] : frozen_pool).push_back({&p, name, i});
    }
  }));

  GradientCheckResult result;
  state.zero_grad();
  result.loss = batch_loss_and_gradients(state, examples);
  double norm_sq = 0.0;
  state.visit(ParamVisitor([&](const std::string&, Param& p) {
    if (p.trainable && p.grad.size() > 0) norm_sq += p.grad.squaredNorm();
  }));
  result.gradient_norm = std::sqrt(norm_sq);

  Rng rng = Rng::derive(options.seed, 0x6C);
  const std::vector<ParamGroup> groups = {ParamGroup::adaptor, ParamGroup::decoder, ParamGroup::queries,
                                          ParamGroup::head};
  std::vector<Coord> chosen;
  int present = 0;
  for (ParamGroup g : groups) present += pool[g].empty() ? 0 : 1;
  for (ParamGroup g : groups) {
    const auto& candidates = pool[g];
    if (candidates.empty()) continue;
    const std::size_t want = static_cast<std::size_t>((options.coordinates + present - 1) / present);
    for (std::size_t k : rng.sample_without_replacement(candidates.size(), want)) chosen.push_back(candidates[k]);
  }

  for (const Coord& c : chosen) {
    const double analytic = c.param->grad.size() > 0 ? c.param->grad.data()[c.index] : 0.0;
    double& v = c.param->value.data()[c.index];
    const double original = v;
    v = original + options.step;
    const double plus = batch_loss(state, examples);
    v = original - options.step;
    const double minus = batch_loss(state, examples);
    v = original;
    const double numeric = (plus - minus) / (2.0 * options.step);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), options.gradient_floor});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > result.max_relative_error || result.worst_parameter.empty()) {
      result.max_relative_error = std::max(rel, result.max_relative_error);
      if (rel >= result.max_relative_error) result.worst_parameter = c.name;
    }
    ++result.checked;
    ++result.per_group[std::string(to_string(param_group(c.name)))];
  }

  if (!frozen_pool.empty()) {
    for (std::size_t k : rng.sample_without_replacement(frozen_pool.size(),
                                                        static_cast<std::size_t>(options.frozen_coordinates))) {
      const Coord& c = frozen_pool[k];
      const double analytic = c.param->grad.size() > 0 ? c.param->grad.data()[c.index] : 0.0;
      if (analytic != 0.0) result.frozen_gradients_zero = false;
      ++result.frozen_checked;
    }
  }
  result.passed = result.max_relative_error < options.tolerance && result.frozen_gradients_zero;
  return result;
}

}  // namespace vptsurv
