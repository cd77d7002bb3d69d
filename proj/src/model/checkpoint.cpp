#include "pairrank/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace pairrank::model {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

using nlohmann::json;

json config_to_json(const BackboneConfig& c) {
  return json{{"preset", c.preset},
              {"input_channels", c.input_channels},
              {"input_size", c.input_size},
              {"stem_width", c.stem_width},
              {"stage_widths", c.stage_widths},
              {"blocks_per_stage", c.blocks_per_stage},
              {"feature_dim", c.feature_dim}};
}

BackboneConfig config_from_json(const json& j) {
  BackboneConfig c = BackboneConfig::from_preset(j.value("preset", std::string("lite")));
  c.input_channels = j.value("input_channels", c.input_channels);
  c.input_size = j.value("input_size", c.input_size);
  c.stem_width = j.value("stem_width", c.stem_width);
  if (j.contains("stage_widths")) c.stage_widths = j.at("stage_widths").get<std::vector<int>>();
  if (j.contains("blocks_per_stage")) c.blocks_per_stage = j.at("blocks_per_stage").get<std::vector<int>>();
  c.feature_dim = j.value("feature_dim", c.stage_widths.empty() ? c.stem_width : c.stage_widths.back());
  c.validate();
  return c;
}

void save_checkpoint(const ModelState& model, const std::filesystem::path& path, const json& metadata) {
  json tensors = json::array();
  json stats = json::array();
  std::vector<double> payload;
  for (const auto& [name, tensor] : model.named_parameters()) {
    tensors.push_back({{"name", name}, {"shape", tensor.shape()}, {"offset", payload.size()}});
    payload.insert(payload.end(), tensor.data().begin(), tensor.data().end());
  }
  for (const auto& [name, s] : model.running_stats()) {
    stats.push_back({{"name", name}, {"channels", s->mean.size()}, {"offset", payload.size()}});
    payload.insert(payload.end(), s->mean.begin(), s->mean.end());
    payload.insert(payload.end(), s->var.begin(), s->var.end());
  }
  const json header{{"config", config_to_json(model.config())},
                    {"csr_head", model.csr_head().has_value()},
                    {"backbone_frozen", model.backbone_frozen()},
                    {"target_scale", model.target_scale},
                    {"tensors", tensors},
                    {"running_stats", stats},
                    {"payload_values", payload.size()},
                    {"metadata", metadata}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  out << kCheckpointMagic << '\n' << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(double)));
  if (!out) throw CheckpointError("failed writing checkpoint: " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  std::string magic, header_line;
  std::getline(in, magic);
  if (magic != kCheckpointMagic) {
    throw CheckpointError(path.string() + " is not a " + std::string(kCheckpointMagic) + " checkpoint");
  }
  std::getline(in, header_line);
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  const auto count = header.at("payload_values").get<std::size_t>();
  std::vector<double> payload(count);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
    throw CheckpointError("truncated checkpoint payload in " + path.string());
  }

  const auto config = config_from_json(header.at("config"));
  ModelState model = ModelState::init(config, 0, header.at("csr_head").get<bool>());
  auto params = model.named_parameters();
  const auto& table = header.at("tensors");
  if (table.size() != params.size()) throw CheckpointError("checkpoint tensor table does not match its config");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = table[i];
    auto& tensor = params[i].tensor;
    if (entry.at("name").get<std::string>() != params[i].name ||
        entry.at("shape").get<ad::Shape>() != tensor.shape()) {
      throw CheckpointError("checkpoint tensor '" + entry.at("name").get<std::string>() + "' does not match model");
    }
    const auto offset = entry.at("offset").get<std::size_t>();
    if (offset + tensor.numel() > count) throw CheckpointError("checkpoint tensor exceeds payload");
    std::memcpy(tensor.mutable_data().data(), payload.data() + offset, tensor.numel() * sizeof(double));
  }
  auto stats = model.running_stats();
  const auto& stat_table = header.at("running_stats");
  if (stat_table.size() != stats.size()) throw CheckpointError("checkpoint running-stat table does not match");
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const auto channels = stat_table[i].at("channels").get<std::size_t>();
    const auto offset = stat_table[i].at("offset").get<std::size_t>();
    if (channels != stats[i].stats->mean.size() || offset + 2 * channels > count) {
      throw CheckpointError("checkpoint running stats '" + stats[i].name + "' do not match model");
    }
    std::memcpy(stats[i].stats->mean.data(), payload.data() + offset, channels * sizeof(double));
    std::memcpy(stats[i].stats->var.data(), payload.data() + offset + channels, channels * sizeof(double));
  }
  if (header.value("backbone_frozen", false)) model.freeze_backbone();
  model.target_scale = header.value("target_scale", 1.0);
  return {std::move(model), header.value("metadata", json::object())};
}

}  // namespace pairrank::model
