#include "vptsurv/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "vptsurv/errors.hpp"

namespace vptsurv {

namespace {

// Desk-scale training uses a larger step than the paper-shape preset: with
// 64-wide tokens and ~30 batches per epoch, 5e-5 barely moves the decoder
// within 15 epochs.
constexpr double kDeskLearningRate = 1e-3;
// Typical pixel spread of the synthetic slides; centres the encoder input.
constexpr double kPixelStd = 0.1;

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::string format_double(double v) {
  // Shortest text that parses back to exactly `v`.
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename T>
T parse_number(std::string_view text, std::string_view key) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw InvalidArgument("config: '" + std::string(key) + "' expects a number, got '" + std::string(text) + "'");
  }
  return value;
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

// Field binders over a member pointer inside one of the sections.
template <typename Section, typename T>
Field bind_field(std::string section, std::string key, Section ExperimentConfig::*group, T Section::*member) {
  Field f{section, key, nullptr, nullptr};
  f.get = [group, member](const ExperimentConfig& c) -> std::string {
    const T& v = c.*group.*member;
    if constexpr (std::is_floating_point_v<T>) {
      return format_double(v);
    } else {
      return std::to_string(v);
    }
  };
  f.set = [group, member, key](ExperimentConfig& c, std::string_view text) {
    c.*group.*member = parse_number<T>(text, key);
  };
  return f;
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> table = [] {
    std::vector<Field> t;
    t.push_back({"", "preset", [](const C& c) { return c.preset; },
                 [](C& c, std::string_view v) { c.preset = std::string(v); }});

    const std::string s = "synthetic";
    t.push_back(bind_field(s, "seed", &C::synthetic, &SyntheticSpec::seed));
    t.push_back(bind_field(s, "n_patients", &C::synthetic, &SyntheticSpec::n_patients));
    t.push_back(bind_field(s, "tiles_per_wsi", &C::synthetic, &SyntheticSpec::tiles_per_wsi));
    t.push_back(bind_field(s, "tile_size", &C::synthetic, &SyntheticSpec::tile_size));
    t.push_back(bind_field(s, "patch_size", &C::synthetic, &SyntheticSpec::patch_size));
    t.push_back(bind_field(s, "risk_mean", &C::synthetic, &SyntheticSpec::risk_mean));
    t.push_back(bind_field(s, "risk_std", &C::synthetic, &SyntheticSpec::risk_std));
    t.push_back(bind_field(s, "baseline_hazard", &C::synthetic, &SyntheticSpec::baseline_hazard));
    t.push_back(bind_field(s, "hazard_link", &C::synthetic, &SyntheticSpec::hazard_link));
    t.push_back(bind_field(s, "interval_days", &C::synthetic, &SyntheticSpec::interval_days));
    t.push_back(bind_field(s, "censoring_rate", &C::synthetic, &SyntheticSpec::censoring_rate));
    t.push_back(bind_field(s, "background_mean", &C::synthetic, &SyntheticSpec::background_mean));
    t.push_back(bind_field(s, "background_jitter", &C::synthetic, &SyntheticSpec::background_jitter));
    t.push_back(bind_field(s, "stain_amplitude", &C::synthetic, &SyntheticSpec::stain_amplitude));
    t.push_back(bind_field(s, "pixel_noise", &C::synthetic, &SyntheticSpec::pixel_noise));
    t.push_back(bind_field(s, "tumor_fraction_min", &C::synthetic, &SyntheticSpec::tumor_fraction_min));
    t.push_back(bind_field(s, "tumor_fraction_max", &C::synthetic, &SyntheticSpec::tumor_fraction_max));
    t.push_back(bind_field(s, "cell_rate", &C::synthetic, &SyntheticSpec::cell_rate));
    t.push_back(bind_field(s, "cell_risk_gain", &C::synthetic, &SyntheticSpec::cell_risk_gain));
    t.push_back(bind_field(s, "cell_amplitude", &C::synthetic, &SyntheticSpec::cell_amplitude));
    t.push_back(bind_field(s, "cell_radius", &C::synthetic, &SyntheticSpec::cell_radius));
    t.push_back(bind_field(s, "stroma_cell_rate", &C::synthetic, &SyntheticSpec::stroma_cell_rate));
    t.push_back(bind_field(s, "stripe_amplitude", &C::synthetic, &SyntheticSpec::stripe_amplitude));
    t.push_back(bind_field(s, "nuisance_jitter", &C::synthetic, &SyntheticSpec::nuisance_jitter));
    t.push_back(bind_field(s, "structure_cutoff", &C::synthetic, &SyntheticSpec::structure_cutoff));
    t.push_back(bind_field(s, "train_fraction", &C::synthetic, &SyntheticSpec::train_fraction));
    t.push_back(bind_field(s, "val_fraction", &C::synthetic, &SyntheticSpec::val_fraction));

    const std::string e = "encoder";
    t.push_back(bind_field(e, "depth", &C::encoder, &EncoderConfig::depth));
    t.push_back(bind_field(e, "dim", &C::encoder, &EncoderConfig::dim));
    t.push_back(bind_field(e, "heads", &C::encoder, &EncoderConfig::heads));
    t.push_back(bind_field(e, "patch_size", &C::encoder, &EncoderConfig::patch_size));
    t.push_back(bind_field(e, "tile_size", &C::encoder, &EncoderConfig::tile_size));
    t.push_back(bind_field(e, "down_dim", &C::encoder, &EncoderConfig::down_dim));
    t.push_back(bind_field(e, "mlp_ratio", &C::encoder, &EncoderConfig::mlp_ratio));
    t.push_back(bind_field(e, "pixel_mean", &C::encoder, &EncoderConfig::pixel_mean));
    t.push_back(bind_field(e, "pixel_std", &C::encoder, &EncoderConfig::pixel_std));
    t.push_back({e, "layer_form", [](const C& c) { return std::string(to_string(c.encoder.layer_form)); },
                 [](C& c, std::string_view v) { c.encoder.layer_form = layer_form_from_string(v); }});
    t.push_back({e, "prompt_sources", [](const C& c) { return format_prompt_list(c.encoder.prompt_sources); },
                 [](C& c, std::string_view v) { c.encoder.prompt_sources = parse_prompt_list(v); }});

    const std::string d = "decoder";
    t.push_back(bind_field(d, "layers", &C::decoder, &DecoderConfig::layers));
    t.push_back(bind_field(d, "dim", &C::decoder, &DecoderConfig::dim));
    t.push_back(bind_field(d, "heads", &C::decoder, &DecoderConfig::heads));
    t.push_back(bind_field(d, "queries", &C::decoder, &DecoderConfig::queries));
    t.push_back(bind_field(d, "bins", &C::decoder, &DecoderConfig::bins));
    t.push_back(bind_field(d, "mlp_ratio", &C::decoder, &DecoderConfig::mlp_ratio));

    const std::string r = "train";
    t.push_back({r, "mode", [](const C& c) { return std::string(to_string(c.train.mode)); },
                 [](C& c, std::string_view v) { c.train.mode = train_mode_from_string(v); }});
    t.push_back(bind_field(r, "train_tiles_per_wsi", &C::train, &TrainConfig::train_tiles_per_wsi));
    t.push_back(bind_field(r, "eval_tiles_per_wsi", &C::train, &TrainConfig::eval_tiles_per_wsi));
    t.push_back(bind_field(r, "learning_rate", &C::train, &TrainConfig::learning_rate));
    t.push_back(bind_field(r, "adaptor_lr_scale", &C::train, &TrainConfig::adaptor_lr_scale));
    t.push_back(bind_field(r, "min_learning_rate", &C::train, &TrainConfig::min_learning_rate));
    t.push_back(bind_field(r, "epochs", &C::train, &TrainConfig::epochs));
    t.push_back(bind_field(r, "batch_size", &C::train, &TrainConfig::batch_size));
    t.push_back(bind_field(r, "weight_decay", &C::train, &TrainConfig::weight_decay));
    t.push_back(bind_field(r, "adam_beta1", &C::train, &TrainConfig::adam_beta1));
    t.push_back(bind_field(r, "adam_beta2", &C::train, &TrainConfig::adam_beta2));
    t.push_back(bind_field(r, "adam_eps", &C::train, &TrainConfig::adam_eps));
    t.push_back(bind_field(r, "seed", &C::train, &TrainConfig::seed));
    t.push_back(bind_field(r, "eval_seed", &C::train, &TrainConfig::eval_seed));
    t.push_back(bind_field(r, "bins", &C::train, &TrainConfig::bins));

    const std::string p = "paths";
    t.push_back({p, "data_dir", [](const C& c) { return c.data_dir.string(); },
                 [](C& c, std::string_view v) { c.data_dir = std::string(v); }});
    t.push_back({p, "output_dir", [](const C& c) { return c.output_dir.string(); },
                 [](C& c, std::string_view v) { c.output_dir = std::string(v); }});
    return t;
  }();
  return table;
}

struct Entry {
  std::string section, key, value;
  int line;
};

std::vector<Entry> tokenize(std::string_view text) {
  std::vector<Entry> entries;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw InvalidArgument(where + "unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidArgument(where + "expected 'key = value'");
    entries.push_back({section, trim(std::string_view(line).substr(0, eq)),
                       trim(std::string_view(line).substr(eq + 1)), line_no});
  }
  return entries;
}

}  // namespace

std::vector<PromptKind> parse_prompt_list(std::string_view text) {
  std::vector<PromptKind> out;
  std::string_view rest = text;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const std::string item = trim(rest.substr(0, comma));
    if (!item.empty()) out.push_back(prompt_kind_from_string(item));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

std::string format_prompt_list(const std::vector<PromptKind>& sources) {
  std::string out;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (i) out += ',';
    out += to_string(sources[i]);
  }
  return out;
}

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.preset = "desk";
  c.encoder = EncoderConfig::desk();
  c.encoder.pixel_mean = c.synthetic.background_mean;
  c.encoder.pixel_std = kPixelStd;
  c.encoder.prompt_sources = {PromptKind::structure, PromptKind::scale};
  c.decoder.dim = c.encoder.dim;
  c.decoder.heads = c.encoder.heads;
  c.train.learning_rate = kDeskLearningRate;
  return c;
}

ExperimentConfig ExperimentConfig::paper_shape() {
  ExperimentConfig c;
  c.preset = "paper-shape";
  c.encoder = EncoderConfig::paper_shape();
  c.synthetic.tile_size = c.encoder.tile_size;
  c.synthetic.patch_size = c.encoder.patch_size;
  c.encoder.pixel_mean = c.synthetic.background_mean;
  c.encoder.pixel_std = kPixelStd;
  c.encoder.prompt_sources = {PromptKind::structure, PromptKind::scale};
  c.decoder.dim = c.encoder.dim;
  c.decoder.heads = c.encoder.heads;
  return c;
}

ExperimentConfig ExperimentConfig::from_preset(std::string_view name) {
  if (name == "desk") return desk();
  if (name == "paper-shape") return paper_shape();
  throw InvalidArgument("unknown preset '" + std::string(name) + "' (expected desk or paper-shape)");
}

void ExperimentConfig::validate() const {
  from_preset(preset);
  synthetic.validate();
  encoder.validate();
  decoder.validate();
  train.validate();
  if (synthetic.tile_size != encoder.tile_size || synthetic.patch_size != encoder.patch_size) {
    throw InvalidArgument("config: synthetic tile/patch size must match the encoder");
  }
  if (decoder.dim != encoder.dim) throw InvalidArgument("config: decoder.dim must equal encoder.dim");
  if (decoder.bins != train.bins) throw InvalidArgument("config: decoder.bins must equal train.bins");
}

std::string serialize_config(const ExperimentConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const Field& f : fields()) {
    if (f.section != section) {
      section = f.section;
      out << "\n[" << section << "]\n";
    }
    out << f.key << " = " << f.get(config) << '\n';
  }
  return out.str();
}

ExperimentConfig parse_config(std::string_view text) {
  const auto entries = tokenize(text);
  std::string preset = "desk";
  for (const auto& e : entries) {
    if (e.section.empty() && e.key == "preset") preset = e.value;
  }
  ExperimentConfig config = ExperimentConfig::from_preset(preset);
  std::vector<std::pair<std::string, std::string>> seen;
  for (const auto& e : entries) {
    const std::string where = "config line " + std::to_string(e.line) + ": ";
    const Field* match = nullptr;
    for (const Field& f : fields()) {
      if (f.section == e.section && f.key == e.key) match = &f;
    }
    if (!match) {
      throw InvalidArgument(where + "unknown key '" + (e.section.empty() ? "" : e.section + ".") + e.key + "'");
    }
    for (const auto& s : seen) {
      if (s.first == e.section && s.second == e.key) throw InvalidArgument(where + "duplicate key '" + e.key + "'");
    }
    seen.emplace_back(e.section, e.key);
    try {
      match->set(config, e.value);
    } catch (const InvalidArgument& err) {
      throw InvalidArgument(where + err.what());
    }
  }
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

void save_config(const ExperimentConfig& config, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write config " + path.string());
  out << serialize_config(config);
}

}  // namespace vptsurv
