#include "psconv/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "psconv/raw_io.hpp"

namespace psconv {

namespace {

struct Entry {
  std::string name;
  std::string kind;
  const Tensor* tensor;
};

nlohmann::json shape_json(const Shape& s) { return s.dims(); }

}  // namespace

void checkpoint_save(const std::filesystem::path& path, Model<float>& model, const OptimizerState& state,
                     const CheckpointMeta& meta) {
  const auto params = model.params();
  if (state.momentum.size() != params.size()) throw ShapeError("optimizer state does not match model");

  std::vector<Entry> entries;
  for (const auto& p : params) entries.push_back({p.name, "param", &p.param->value});
  for (const auto& b : model.buffers()) entries.push_back({b.name, "buffer", b.tensor});
  for (std::size_t i = 0; i < params.size(); ++i) entries.push_back({params[i].name, "momentum", &state.momentum[i]});

  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["arch"] = to_json(model.spec());
  header["config"] = to_json(meta.config);
  header["epoch"] = meta.epoch;
  header["optimizer_step"] = state.step;
  header["rng"] = {{"generator", "mt19937_64"}, {"seed", meta.config.seed}, {"stream", "per-epoch derived"}};
  if (meta.normalization) {
    header["normalization"] = {{"mean", meta.normalization->mean}, {"std", meta.normalization->stddev}};
  }
  header["extra"] = meta.extra;

  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    dir.push_back({{"name", e.name}, {"kind", e.kind}, {"shape", shape_json(e.tensor->shape())}, {"offset", offset}});
    offset += e.tensor->numel() * sizeof(float);
  }
  header["tensors"] = dir;
  header["payload_bytes"] = offset;

  std::vector<std::string> mask_docs;
  nlohmann::json masks = nlohmann::json::array();
  std::uint64_t mask_offset = 0;
  for (const auto& c : model.convs()) {
    if (!c.layer->mask) continue;
    mask_docs.push_back(mask_serialize(*c.layer->mask));
    masks.push_back({{"name", c.name}, {"offset", mask_offset}, {"length", mask_docs.back().size()}});
    mask_offset += mask_docs.back().size();
  }
  header["masks"] = masks;

  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  le::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : entries) le::put_f32s(out, e.tensor->values());
  for (const auto& doc : mask_docs) out.write(doc.data(), static_cast<std::streamsize>(doc.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

LoadedCheckpoint checkpoint_load(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw FormatError(path.string() + ": not a PSCCKPT1 checkpoint (bad magic)");
  }
  std::uint32_t header_len = 0;
  for (int b = 3; b >= 0; --b) header_len = header_len << 8 | bytes[8 + static_cast<std::size_t>(b)];
  if (12 + static_cast<std::size_t>(header_len) > bytes.size()) throw FormatError("checkpoint header truncated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is corrupt: ") + e.what());
  }

  try {
    const int version = header.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    }
    const ArchSpec arch = arch_from_json(header.at("arch"));
    LoadedCheckpoint ck{Model<float>(arch), OptimizerState{}, CheckpointMeta{}};
    ck.meta.epoch = header.at("epoch").get<int>();
    ck.meta.config = train_config_from_json(header.at("config"));
    ck.meta.extra = header.value("extra", nlohmann::json::object());
    if (header.contains("normalization")) {
      ck.meta.normalization = ChannelStats{header["normalization"].at("mean").get<std::vector<double>>(),
                                           header["normalization"].at("std").get<std::vector<double>>()};
    }

    const std::size_t payload_start = 12 + header_len;
    const std::size_t payload_bytes = header.at("payload_bytes").get<std::size_t>();
    if (payload_start + payload_bytes > bytes.size()) throw FormatError("checkpoint tensor section truncated");

    std::map<std::pair<std::string, std::string>, std::pair<Shape, std::size_t>> directory;
    for (const auto& t : header.at("tensors")) {
      const Shape shape(t.at("shape").get<std::vector<std::size_t>>());
      const std::size_t offset = t.at("offset").get<std::size_t>();
      if (offset + shape.numel() * sizeof(float) > payload_bytes) {
        throw FormatError("tensor " + t.at("name").get<std::string>() + " extends past payload");
      }
      directory[{t.at("kind").get<std::string>(), t.at("name").get<std::string>()}] = {shape, offset};
    }

    const auto restore = [&](const std::string& kind, const std::string& name, Tensor& dst) {
      const auto it = directory.find({kind, name});
      if (it == directory.end()) throw FormatError("checkpoint is missing " + kind + " " + name);
      if (it->second.first != dst.shape()) {
        throw FormatError(kind + " " + name + ": shape " + it->second.first.to_string() + " does not match model " +
                          dst.shape().to_string());
      }
      std::istringstream in(std::string(reinterpret_cast<const char*>(bytes.data() + payload_start + it->second.second),
                                        dst.numel() * sizeof(float)));
      le::get_f32s(in, dst.values());
    };

    const auto params = ck.model.params();
    ck.state = OptimizerState::for_params(params);
    ck.state.step = header.value("optimizer_step", std::int64_t{0});
    for (std::size_t i = 0; i < params.size(); ++i) {
      restore("param", params[i].name, params[i].param->value);
      restore("momentum", params[i].name, ck.state.momentum[i]);
    }
    for (auto& b : ck.model.buffers()) restore("buffer", b.name, *b.tensor);

    const std::size_t mask_start = payload_start + payload_bytes;
    std::map<std::string, std::pair<std::size_t, std::size_t>> mask_dir;
    for (const auto& m : header.at("masks")) {
      const std::size_t off = m.at("offset").get<std::size_t>(), len = m.at("length").get<std::size_t>();
      if (mask_start + off + len > bytes.size()) throw FormatError("checkpoint mask section truncated");
      mask_dir[m.at("name").get<std::string>()] = {off, len};
    }
    for (auto& c : ck.model.convs()) {
      if (!c.layer->mask) continue;
      const auto it = mask_dir.find(c.name);
      if (it == mask_dir.end()) throw FormatError("checkpoint is missing the mask for " + c.name);
      const std::string_view doc(reinterpret_cast<const char*>(bytes.data() + mask_start + it->second.first),
                                 it->second.second);
      KernelSupportMask mask = mask_deserialize(doc);
      if (mask.shape() != c.layer->weight.value.shape() || mask.kss() != c.layer->mask->kss()) {
        throw FormatError("mask for " + c.name + " does not match its weights");
      }
      c.layer->attach_mask(std::move(mask));
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is malformed: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint header is invalid: ") + e.what());
  }
}

}  // namespace psconv
