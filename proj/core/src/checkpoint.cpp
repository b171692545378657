#include "vptsurv/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "vptsurv/errors.hpp"
#include "json_config.hpp"

namespace vptsurv {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'V', 'P', 'T', 'S', 'C', 'K', 'P', 'T'};

struct Archive {
  json header;
  std::vector<double> payload;
};

Archive read_archive(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw FormatError(path.string() + ": not a checkpoint");
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw FormatError(path.string() + ": truncated header");
  Archive a;
  try {
    a.header = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
  std::uint64_t values = 0;
  for (const auto& t : a.header.at("tensors")) {
    values = std::max<std::uint64_t>(values, t.at("offset").get<std::uint64_t>() +
                                                 t.at("rows").get<std::uint64_t>() *
                                                     t.at("cols").get<std::uint64_t>());
  }
  a.payload.resize(values);
  in.read(reinterpret_cast<char*>(a.payload.data()),
          static_cast<std::streamsize>(values * sizeof(double)));
  if (!in) throw FormatError(path.string() + ": truncated payload");
  return a;
}

void copy_tensor(const Archive& a, const json& t, Param& p, const std::string& name) {
  const auto rows = t.at("rows").get<Eigen::Index>();
  const auto cols = t.at("cols").get<Eigen::Index>();
  if (rows != p.value.rows() || cols != p.value.cols()) {
    throw FormatError("checkpoint tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                      std::to_string(cols) + ", expected " + std::to_string(p.value.rows()) + "x" +
                      std::to_string(p.value.cols()));
  }
  const auto offset = t.at("offset").get<std::size_t>();
  std::memcpy(p.value.data(), a.payload.data() + offset, static_cast<std::size_t>(p.size()) * sizeof(double));
}

}  // namespace

void save_checkpoint(const fs::path& path, const ModelState& state, const CheckpointMeta& meta) {
  json tensors = json::array();
  std::uint64_t offset = 0;
  std::vector<const Param*> order;
  state.visit(ConstParamVisitor([&](const std::string& name, const Param& p) {
    tensors.push_back({{"name", name},
                       {"rows", p.value.rows()},
                       {"cols", p.value.cols()},
                       {"trainable", p.trainable},
                       {"offset", offset}});
    offset += static_cast<std::uint64_t>(p.size());
    order.push_back(&p);
  }));
  json header = {{"format_version", kCheckpointVersion},
                 {"encoder", to_json(state.encoder_config())},
                 {"decoder", to_json(state.decoder_config())},
                 {"meta", {{"mode", meta.mode}, {"bin_edges", meta.bin_edges}, {"seed", meta.seed}}},
                 {"tensors", tensors}};
  const std::string text = header.dump();
  const std::uint64_t header_len = text.size();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof(kCheckpointVersion));
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Param* p : order) {
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(static_cast<std::size_t>(p->size()) * sizeof(double)));
  }
  if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  const Archive a = read_archive(path);
  Checkpoint ck;
  try {
    const EncoderConfig enc = encoder_config_from_json(a.header.at("encoder"));
    const DecoderConfig dec = decoder_config_from_json(a.header.at("decoder"));
    ck.state = ModelState::initialize(enc, dec, 0);
    const json& meta = a.header.at("meta");
    ck.meta.mode = meta.at("mode").get<std::string>();
    ck.meta.bin_edges = meta.at("bin_edges").get<std::vector<double>>();
    ck.meta.seed = meta.at("seed").get<std::uint64_t>();

    std::map<std::string, const json*> by_name;
    for (const auto& t : a.header.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;
    std::size_t used = 0;
    ck.state.visit(ParamVisitor([&](const std::string& name, Param& p) {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw FormatError("checkpoint is missing tensor '" + name + "'");
      copy_tensor(a, *it->second, p, name);
      p.trainable = it->second->at("trainable").get<bool>();
      if (!p.trainable) p.grad = Matrix();
      ++used;
    }));
    if (used != by_name.size()) throw FormatError("checkpoint has tensors the model does not know");
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return ck;
}

void import_encoder_weights(ModelState& state, const fs::path& path) {
  const Archive a = read_archive(path);
  std::map<std::string, const json*> by_name;
  try {
    for (const auto& t : a.header.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  state.encoder.visit("encoder", [&](const std::string& name, Param& p) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("weight file is missing tensor '" + name + "'");
    copy_tensor(a, *it->second, p, name);
  });
}

}  // namespace vptsurv
