#include "vptsurv/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vptsurv/errors.hpp"
#include "vptsurv/png_io.hpp"
#include "vptsurv/random.hpp"

namespace vptsurv {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw InvalidArgument("unknown split '" + std::string(name) + "'");
}

void CohortManifest::validate() const {
  std::set<std::string> wsi_ids;
  std::map<std::string, Split> patient_split;
  for (const auto& r : records) {
    if (r.patient_id.empty() || r.wsi_id.empty()) throw InvalidArgument("manifest: empty id");
    if (!wsi_ids.insert(r.wsi_id).second) {
      throw InvalidArgument("manifest: duplicate wsi_id '" + r.wsi_id + "'");
    }
    if (!(r.time_days >= 0.0) || !std::isfinite(r.time_days)) {
      throw InvalidArgument("manifest: negative or non-finite time for '" + r.wsi_id + "'");
    }
    auto [it, inserted] = patient_split.emplace(r.patient_id, r.split);
    if (!inserted && it->second != r.split) {
      throw InvalidArgument("manifest: patient '" + r.patient_id + "' spans several splits");
    }
  }
}

std::vector<std::size_t> CohortManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == split) out.push_back(i);
  }
  return out;
}

void SyntheticSpec::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw InvalidArgument(std::string("synthetic spec: ") + what);
  };
  require(n_patients >= 10, "n_patients must be >= 10");
  require(tiles_per_wsi >= 1, "tiles_per_wsi must be >= 1");
  require(patch_size >= 1 && tile_size >= 8 && tile_size % patch_size == 0,
          "tile_size must be >= 8 and a multiple of patch_size");
  require(risk_std >= 0.0, "risk_std must be >= 0");
  require(baseline_hazard > 0.0, "baseline_hazard must be > 0");
  require(interval_days > 0.0, "interval_days must be > 0");
  require(censoring_rate >= 0.0 && censoring_rate < 1.0, "censoring_rate must lie in [0, 1)");
  require(tumor_fraction_min >= 0.0 && tumor_fraction_min <= tumor_fraction_max &&
              tumor_fraction_max <= 1.0,
          "tumour fractions must satisfy 0 <= min <= max <= 1");
  require(cell_rate >= 0.0 && stroma_cell_rate >= 0.0, "cell rates must be >= 0");
  require(cell_radius > 0.0, "cell_radius must be > 0");
  require(pixel_noise >= 0.0 && background_jitter >= 0.0 && stain_amplitude >= 0.0 &&
              stripe_amplitude >= 0.0 && nuisance_jitter >= 0.0 && nuisance_jitter <= 1.0,
          "amplitudes must be >= 0");
  require(structure_cutoff > 0.0 && structure_cutoff < 1.0, "structure_cutoff must lie in (0, 1)");
  require(train_fraction > 0.0 && val_fraction > 0.0 && train_fraction + val_fraction < 1.0,
          "split fractions must be positive and leave room for a test split");
}

std::uint64_t Slide::tile_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    mix(&coords[i].row, sizeof(int));
    mix(&coords[i].col, sizeof(int));
    mix(tiles[i].pixels.data(), tiles[i].pixels.size() * sizeof(float));
  }
  return h;
}

Image quantize_tile(const Image& image) {
  Image out = image;
  for (float& v : out.pixels) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  return out;
}

namespace {

constexpr double kScaleCodes = 1020.0;       // 4 * 255: exact for 2x2 averages
constexpr double kStructureScale = 16384.0;  // 16-bit signed offset coding
constexpr double kStructureOffset = 32768.0;

std::uint16_t encode_prompt(PromptKind kind, float v) {
  double code = kind == PromptKind::scale ? std::clamp(static_cast<double>(v), 0.0, 1.0) * kScaleCodes
                                          : static_cast<double>(v) * kStructureScale + kStructureOffset;
  return static_cast<std::uint16_t>(std::lround(std::clamp(code, 0.0, 65535.0)));
}

float decode_prompt(PromptKind kind, std::uint16_t code) {
  return kind == PromptKind::scale
             ? static_cast<float>(code / kScaleCodes)
             : static_cast<float>((static_cast<double>(code) - kStructureOffset) / kStructureScale);
}

std::uint16_t encode_tile(float v) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

float decode_tile(std::uint16_t code) { return static_cast<float>(code) / 255.0f; }

void add_blob(Image& img, double cy, double cx, double amplitude, double radius) {
  const int reach = static_cast<int>(std::ceil(3.0 * radius));
  const double inv = 1.0 / (2.0 * radius * radius);
  for (int r = static_cast<int>(cy) - reach; r <= static_cast<int>(cy) + reach; ++r) {
    if (r < 0 || r >= img.height) continue;
    for (int c = static_cast<int>(cx) - reach; c <= static_cast<int>(cx) + reach; ++c) {
      if (c < 0 || c >= img.width) continue;
      const double d2 = (r - cy) * (r - cy) + (c - cx) * (c - cx);
      img(r, c) += static_cast<float>(amplitude * std::exp(-d2 * inv));
    }
  }
}

struct PatientDraw {
  double latent = 0.0;
  double time = 0.0;
  bool censored = false;
};

PatientDraw draw_outcome(const SyntheticSpec& spec, Rng& rng) {
  PatientDraw d;
  d.latent = rng.normal(spec.risk_mean, spec.risk_std);
  const double h = 1.0 - std::exp(-spec.baseline_hazard * std::exp(spec.hazard_link * d.latent));
  int interval = 1;
  while (rng.uniform() >= h && interval < 100000) ++interval;
  d.time = spec.interval_days * (interval - 1 + rng.uniform());
  if (rng.uniform() < spec.censoring_rate) {
    d.censored = true;
    d.time *= rng.uniform();
  }
  return d;
}

Image render_slide(const SyntheticSpec& spec, double latent, int rows, int cols, Rng& rng) {
  const int t = spec.tile_size;
  const int h = rows * t;
  const int w = cols * t;
  Image img(h, w);

  const double base = spec.background_mean + spec.background_jitter * rng.uniform(-1.0, 1.0);
  struct Wave {
    double fy, fx, phase;
  };
  std::vector<Wave> waves(3);
  for (auto& wv : waves) wv = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(0.0, 2.0 * M_PI)};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double v = base;
      for (const auto& wv : waves) {
        v += spec.stain_amplitude / 3.0 *
             std::cos(2.0 * M_PI * (wv.fy * r / h + wv.fx * c / w) + wv.phase);
      }
      img(r, c) = static_cast<float>(v);
    }
  }

  const double tumor_fraction = rng.uniform(spec.tumor_fraction_min, spec.tumor_fraction_max);
  const double noise_level = spec.pixel_noise * rng.uniform(1.0 - spec.nuisance_jitter, 1.0 + spec.nuisance_jitter);
  const double stripe_level =
      spec.stripe_amplitude * rng.uniform(1.0 - spec.nuisance_jitter, 1.0 + spec.nuisance_jitter);
  const double tumor_rate = spec.cell_rate * std::exp(spec.cell_risk_gain * latent);
  for (int tr = 0; tr < rows; ++tr) {
    for (int tc = 0; tc < cols; ++tc) {
      const double oy = tr * t;
      const double ox = tc * t;
      const bool tumor = rng.uniform() < tumor_fraction;
      if (!tumor && stripe_level > 0.0) {
        const double theta = rng.uniform(0.0, M_PI);
        const double freq = rng.uniform(0.15, 0.3);
        const double phase = rng.uniform(0.0, 2.0 * M_PI);
        const double ct = std::cos(theta), st = std::sin(theta);
        for (int r = 0; r < t; ++r) {
          for (int c = 0; c < t; ++c) {
            img(tr * t + r, tc * t + c) += static_cast<float>(
                stripe_level * std::sin(2.0 * M_PI * freq * (c * ct + r * st) + phase));
          }
        }
      }
      const int cells = rng.poisson(tumor ? tumor_rate : spec.stroma_cell_rate);
      for (int k = 0; k < cells; ++k) {
        const double cy = oy + rng.uniform(0.0, t);
        const double cx = ox + rng.uniform(0.0, t);
        const double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
        add_blob(img, cy, cx, sign * spec.cell_amplitude, spec.cell_radius);
      }
    }
  }
  for (float& v : img.pixels) v += static_cast<float>(noise_level * rng.normal());
  return quantize_tile(img);
}

std::string patient_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "P%04d", i);
  return buf;
}

std::string tile_stem(TileCoord c) {
  return "r" + std::to_string(c.row) + "_c" + std::to_string(c.col);
}

}  // namespace

Image quantize_prompt(PromptKind kind, const Image& image) {
  Image out = image;
  for (float& v : out.pixels) v = decode_prompt(kind, encode_prompt(kind, v));
  return out;
}

Cohort synthesize_cohort(const SyntheticSpec& spec) {
  spec.validate();
  Cohort cohort;
  const int n = spec.n_patients;

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng split_rng = Rng::derive(spec.seed, 0xC0FFEE);
  split_rng.shuffle(order);
  const int n_train = static_cast<int>(std::lround(spec.train_fraction * n));
  const int n_val = static_cast<int>(std::lround(spec.val_fraction * n));
  std::vector<Split> split(n, Split::test);
  for (int k = 0; k < n; ++k) {
    split[order[k]] = k < n_train ? Split::train : (k < n_train + n_val ? Split::val : Split::test);
  }

  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(spec.tiles_per_wsi))));
  const int rows = (spec.tiles_per_wsi + cols - 1) / cols;

  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::derive(spec.seed, static_cast<std::uint64_t>(i) + 1);
    const PatientDraw draw = draw_outcome(spec, rng);
    const Image slide_image = render_slide(spec, draw.latent, rows, cols, rng);
    const TileGrid grid = tile_image(slide_image, spec.tile_size, spec.patch_size);
    const PromptSource scale = make_scale_source(grid);
    const PromptSource structure = make_structure_source(grid, spec.structure_cutoff);

    Slide slide;
    slide.record.patient_id = patient_name(i);
    slide.record.wsi_id = slide.record.patient_id + "_W0";
    slide.record.tiles = "tiles/" + slide.record.wsi_id;
    slide.record.time_days = draw.time;
    slide.record.censored = draw.censored;
    slide.record.split = split[i];
    slide.grid_rows = grid.rows;
    slide.grid_cols = grid.cols;
    for (int k = 0; k < spec.tiles_per_wsi; ++k) {
      slide.coords.push_back(grid.tiles[k].coord);
      slide.tiles.push_back(grid.tiles[k].image);
      slide.scale.push_back(quantize_prompt(PromptKind::scale, scale.images[k]));
      slide.structure.push_back(quantize_prompt(PromptKind::structure, structure.images[k]));
    }
    cohort.manifest.records.push_back(slide.record);
    cohort.slides.push_back(std::move(slide));
    cohort.latent.push_back({patient_name(i), draw.latent});
  }
  return cohort;
}

void write_manifest(const CohortManifest& manifest, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& r : manifest.records) {
    json line = {{"patient_id", r.patient_id}, {"wsi_id", r.wsi_id},
                 {"tiles", r.tiles},           {"time_days", r.time_days},
                 {"censored", r.censored ? 1 : 0}, {"split", std::string(to_string(r.split))}};
    out << line.dump() << '\n';
  }
}

CohortManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read manifest " + path.string());
  CohortManifest manifest;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ManifestRecord r;
      r.patient_id = j.at("patient_id").get<std::string>();
      r.wsi_id = j.at("wsi_id").get<std::string>();
      r.tiles = j.at("tiles").get<std::string>();
      r.time_days = j.at("time_days").get<double>();
      const int c = j.at("censored").get<int>();
      if (c != 0 && c != 1) throw InvalidArgument("censored must be 0 or 1");
      r.censored = c == 1;
      r.split = split_from_string(j.at("split").get<std::string>());
      manifest.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const InvalidArgument& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  manifest.validate();
  return manifest;
}

void write_latent_sidecar(std::span<const LatentRisk> latent, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& l : latent) {
    out << json{{"patient_id", l.patient_id}, {"latent_risk", l.latent_risk}}.dump() << '\n';
  }
}

std::vector<LatentRisk> read_latent_sidecar(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read latent sidecar " + path.string());
  std::vector<LatentRisk> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("patient_id").get<std::string>(), j.at("latent_risk").get<double>()});
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }
  return out;
}

void write_cohort(const Cohort& cohort, const fs::path& dir) {
  fs::create_directories(dir);
  write_manifest(cohort.manifest, dir / "manifest.jsonl");
  if (!cohort.latent.empty()) write_latent_sidecar(cohort.latent, dir / "latent.jsonl");
  for (const Slide& s : cohort.slides) {
    const fs::path archive = dir / s.record.tiles;
    fs::create_directories(archive);
    for (std::size_t k = 0; k < s.tiles.size(); ++k) {
      const std::string stem = tile_stem(s.coords[k]);
      const Image& tile = s.tiles[k];
      GrayPng png{tile.height, tile.width, 8, {}};
      png.codes.reserve(tile.size());
      for (float v : tile.pixels) png.codes.push_back(encode_tile(v));
      write_gray_png(archive / (stem + ".png"), png);
      for (PromptKind kind : {PromptKind::scale, PromptKind::structure}) {
        const auto& images = s.prompts(kind);
        if (images.empty()) continue;
        const Image& p = images[k];
        GrayPng ppng{p.height, p.width, 16, {}};
        ppng.codes.reserve(p.size());
        for (float v : p.pixels) ppng.codes.push_back(encode_prompt(kind, v));
        write_gray_png(archive / (stem + "_" + std::string(to_string(kind)) + ".png"), ppng);
      }
    }
  }
}

namespace {

std::optional<TileCoord> parse_tile_stem(const std::string& name) {
  int row = 0, col = 0;
  char tail = 0;
  // Plain tiles are exactly r{row}_c{col}.png.
  if (std::sscanf(name.c_str(), "r%d_c%d.pn%c", &row, &col, &tail) == 3 && tail == 'g' &&
      name == tile_stem({row, col}) + ".png") {
    return TileCoord{row, col};
  }
  return std::nullopt;
}

Image read_image(const fs::path& path, std::optional<PromptKind> kind) {
  const GrayPng png = read_gray_png(path);
  Image img(png.height, png.width);
  for (std::size_t i = 0; i < png.codes.size(); ++i) {
    img.pixels[i] = kind ? decode_prompt(*kind, png.codes[i]) : decode_tile(png.codes[i]);
  }
  return img;
}

}  // namespace

Cohort load_cohort(const fs::path& dir) {
  Cohort cohort;
  cohort.manifest = read_manifest(dir / "manifest.jsonl");
  if (fs::exists(dir / "latent.jsonl")) cohort.latent = read_latent_sidecar(dir / "latent.jsonl");

  for (const auto& record : cohort.manifest.records) {
    Slide s;
    s.record = record;
    const fs::path archive = dir / record.tiles;
    if (!fs::is_directory(archive)) throw FormatError("missing tile archive " + archive.string());
    for (const auto& entry : fs::directory_iterator(archive)) {
      if (auto c = parse_tile_stem(entry.path().filename().string())) s.coords.push_back(*c);
    }
    if (s.coords.empty()) throw EmptySlide("tile archive " + archive.string() + " has no tiles");
    std::sort(s.coords.begin(), s.coords.end());
    bool have_scale = true, have_structure = true;
    for (const TileCoord& c : s.coords) {
      const std::string stem = tile_stem(c);
      s.tiles.push_back(read_image(archive / (stem + ".png"), std::nullopt));
      s.grid_rows = std::max(s.grid_rows, c.row + 1);
      s.grid_cols = std::max(s.grid_cols, c.col + 1);
      have_scale = have_scale && fs::exists(archive / (stem + "_scale.png"));
      have_structure = have_structure && fs::exists(archive / (stem + "_structure.png"));
    }
    const int tile_size = s.tiles.front().height;
    for (const Image& t : s.tiles) {
      if (t.height != tile_size || t.width != tile_size) {
        throw FormatError("tile archive " + archive.string() + " mixes tile sizes");
      }
    }
    if (have_scale && have_structure) {
      for (const TileCoord& c : s.coords) {
        const std::string stem = tile_stem(c);
        s.scale.push_back(read_image(archive / (stem + "_scale.png"), PromptKind::scale));
        s.structure.push_back(read_image(archive / (stem + "_structure.png"), PromptKind::structure));
      }
    } else {
      // Rebuild prompts on the full grid; absent cells are background.
      TileGrid grid;
      grid.tile_size = tile_size;
      grid.rows = s.grid_rows;
      grid.cols = s.grid_cols;
      for (int r = 0; r < grid.rows; ++r) {
        for (int c = 0; c < grid.cols; ++c) grid.tiles.push_back({{r, c}, Image(tile_size, tile_size)});
      }
      for (std::size_t k = 0; k < s.coords.size(); ++k) {
        grid.tiles[static_cast<std::size_t>(s.coords[k].row) * grid.cols + s.coords[k].col].image = s.tiles[k];
      }
      const PromptSource structure = make_structure_source(grid, kDefaultStructureCutoff);
      for (const TileCoord& c : s.coords) {
        s.scale.push_back(build_scale_prompt(grid, c));
        s.structure.push_back(structure.images[static_cast<std::size_t>(c.row) * grid.cols + c.col]);
      }
    }
    cohort.slides.push_back(std::move(s));
  }
  return cohort;
}

double oracle_ci(const CohortManifest& manifest, std::span<const LatentRisk> latent) {
  std::map<std::string, double> by_patient;
  for (const auto& l : latent) {
    if (!by_patient.emplace(l.patient_id, l.latent_risk).second) {
      throw InvalidArgument("oracle_ci: duplicate patient '" + l.patient_id + "' in sidecar");
    }
  }
  std::set<std::string> seen;
  std::vector<double> risks;
  std::vector<SurvivalLabel> labels;
  for (const auto& r : manifest.records) {
    auto it = by_patient.find(r.patient_id);
    if (it == by_patient.end()) {
      throw InvalidArgument("oracle_ci: patient '" + r.patient_id + "' missing from sidecar");
    }
    if (!seen.insert(r.patient_id).second) continue;
    risks.push_back(it->second);
    labels.push_back(r.label());
  }
  if (seen.size() != by_patient.size()) {
    throw InvalidArgument("oracle_ci: sidecar has patients absent from the manifest");
  }
  return concordance_index(risks, labels);
}

CohortSummary summarize(const Cohort& cohort) {
  CohortSummary s;
  std::set<std::string> patients;
  int censored = 0;
  s.tiles_per_slide_min = cohort.slides.empty() ? 0 : static_cast<int>(cohort.slides.front().tiles.size());
  for (const Slide& slide : cohort.slides) {
    patients.insert(slide.record.patient_id);
    const int n = static_cast<int>(slide.tiles.size());
    s.tiles_per_slide_min = std::min(s.tiles_per_slide_min, n);
    s.tiles_per_slide_max = std::max(s.tiles_per_slide_max, n);
    censored += slide.record.censored ? 1 : 0;
    switch (slide.record.split) {
      case Split::train: ++s.train; break;
      case Split::val: ++s.val; break;
      case Split::test: ++s.test; break;
    }
  }
  s.patients = static_cast<int>(patients.size());
  s.slides = static_cast<int>(cohort.slides.size());
  s.censored_fraction = s.slides ? static_cast<double>(censored) / s.slides : 0.0;
  return s;
}

}  // namespace vptsurv
